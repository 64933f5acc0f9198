import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from voxfcm.homogenization import shared_cache
from voxfcm.mesh import build_mesh
from voxfcm.preintegration import assemble_cell
from voxfcm.solver import (ConstraintError, ConvergenceError, GlobalSystem, SolverOptions, apply_dirichlet,
                           apply_periodic, assemble_global, jacobi_preconditioner, pcg, reduce_system,
                           resolve_constraints, schwarz_preconditioner, solve, solve_many, with_load,
                           write_matrix_market)


def _system(cells, p, vpc=(1, 1, 1), alpha=None):
    dims = tuple(c * v for c, v in zip(cells, vpc))
    mesh = build_mesh(dims, (1.0, 1.0, 1.0), vpc, p)
    alpha = np.ones(dims) if alpha is None else alpha
    return mesh, assemble_global(mesh, alpha, shared_cache(mesh), 1.0, 1.0)


def test_single_cell_scatter():
    mesh, sys = _system((1, 1, 1), 1)
    K_c = assemble_cell(shared_cache(mesh), np.ones(1), 1.0, 1.0)
    np.testing.assert_allclose(sys.K.toarray(), K_c, atol=1e-14)


def test_two_cell_scatter():
    mesh, sys = _system((2, 1, 1), 2)
    K_c = assemble_cell(shared_cache(mesh), np.ones(1), 1.0, 1.0)
    dense = np.zeros((mesh.n_dofs, mesh.n_dofs))
    for c in range(2):
        dm = mesh.dof_map[c]
        dense[np.ix_(dm, dm)] += K_c
    np.testing.assert_allclose(sys.K.toarray(), dense, atol=1e-13)


def test_void_field_scaling():
    _, solid = _system((2, 2, 1), 1)
    _, void = _system((2, 2, 1), 1, alpha=np.full((2, 2, 1), 1e-9))
    np.testing.assert_allclose(void.K.toarray(), 1e-9 * solid.K.toarray(), rtol=1e-13, atol=1e-25)


def test_fix_all():
    mesh, sys = _system((1, 1, 1), 1)
    s = apply_dirichlet(sys, (np.arange(sys.n), np.zeros(sys.n)))
    u, rep = solve(s)
    assert np.all(u == 0) and rep.iterations == 0


def _affine(mesh):
    A = np.array([[1e-3, 2e-4, 0.0], [5e-4, -2e-3, 1e-4], [0.0, 3e-4, 1e-3]])
    b = np.array([0.1, -0.2, 0.3])
    vs = mesh.vertex_scalars
    u = np.zeros((mesh.n_scalar, 3))
    u[vs] = mesh.vertex_coordinates() @ A.T + b
    return u.ravel()


def test_affine_interior_residual_zero():
    mesh, sys = _system((3, 2, 2), 2)
    r = (sys.K @ _affine(mesh)).reshape(-1, 3)
    inner = ~mesh.on_boundary()
    assert np.abs(r[inner]).max() < 1e-12 * np.abs(r).max()


def test_scalar_elimination():
    K = sp.csr_matrix(np.array([[2.0, -1.0], [-1.0, 2.0]]))
    s = apply_dirichlet(GlobalSystem(K, np.array([0.0, 1.0])), [(0, 1.0)])
    u, _ = solve(s)
    # 2 u1 - 1 = 1
    np.testing.assert_allclose(u, [1.0, 1.0])


def test_periodic_zero_jump_zero_solution():
    mesh, sys = _system((1, 1, 1), 1)
    x0 = mesh.scalar_index(0, 0, 0)
    x1 = mesh.scalar_index(1, 0, 0)
    s = apply_periodic(apply_dirichlet(sys, [(3 * x0 + k, 0.0) for k in range(3)]),
                       [(3 * x0 + k, 3 * x1 + k, 0.0) for k in range(3)])
    s = apply_dirichlet(s, [(d, 0.0) for d in range(s.n) if d // 3 not in (x0, x1)])
    u, _ = solve(s)
    assert np.all(u == 0)


def test_chain_resolves_to_single_master():
    # 4 vertices of one face edge-chained: 0 -> 1 -> 3 and 0 -> 2 -> 3 with consistent jumps
    cm = resolve_constraints(4, periodic=[(np.array([0, 1, 0, 2]), np.array([1, 3, 2, 3]),
                                           np.array([1.0, 2.0, 0.5, 2.5]))])
    assert cm.n_free == 1
    assert np.all(cm.column == 0)
    np.testing.assert_allclose(cm.g, [0.0, 1.0, 0.5, 3.0])
    with pytest.raises(ConstraintError):
        resolve_constraints(4, periodic=[(np.array([0, 1, 0, 2]), np.array([1, 3, 2, 3]),
                                          np.array([1.0, 2.0, 0.5, 9.0]))])


def test_dirichlet_conflict():
    with pytest.raises(ConstraintError):
        resolve_constraints(3, dirichlet=[(np.array([0, 1]), np.array([0.0, 1.0]))],
                            periodic=[(np.array([0]), np.array([1]), np.array([0.0]))])
    with pytest.raises(ConstraintError):
        resolve_constraints(2, periodic=[(np.array([1]), np.array([1]), np.array([0.0]))])


@given(st.integers(2, 30), st.randoms(use_true_random=False))
def test_union_find_random_forest(n, rnd):
    # random tree of couplings with random jumps: every DOF resolves to the root plus the path sum
    parent = [None] + [rnd.randrange(0, i) for i in range(1, n)]
    jumps = [0.0] + [rnd.uniform(-1, 1) for _ in range(1, n)]
    pos = [0.0] * n
    for i in range(1, n):
        pos[i] = pos[parent[i]] + jumps[i]
    order = list(range(1, n))
    rnd.shuffle(order)
    cm = resolve_constraints(n, dirichlet=[(np.array([0]), np.array([2.0]))],
                             periodic=[(np.array([parent[i] for i in order]), np.array(order),
                                        np.array([jumps[i] for i in order]))])
    assert cm.n_free == 0
    np.testing.assert_allclose(cm.g, 2.0 + np.array(pos), atol=1e-12)


def test_random_spd_direct_and_cg():
    rng = np.random.default_rng(5)
    A = rng.normal(size=(50, 50))
    A = A @ A.T + 50 * np.eye(50)
    b = rng.normal(size=50)
    ref = np.linalg.solve(A, b)
    sys = GlobalSystem(sp.csr_matrix(A), b)
    for method in ("direct", "cg"):
        u, rep = solve(sys, options=SolverOptions(tol=1e-12, method=method))
        assert np.linalg.norm(A @ u - b) / np.linalg.norm(b) <= 1e-12
        np.testing.assert_allclose(u, ref, rtol=1e-9)
        assert rep.method == method


def test_pcg_failure_reports_tail():
    A = sp.diags(np.logspace(0, 10, 200)).tocsr()
    b = np.ones(200)
    with pytest.raises(ConvergenceError) as exc:
        pcg(A, b, None, tol=1e-14, max_iter=5)
    assert len(exc.value.residual_tail) > 0


def test_schwarz_preconditioner_exact_when_single_block():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(20, 20))
    A = sp.csr_matrix(A @ A.T + 20 * np.eye(20))
    M = schwarz_preconditioner(A, [np.arange(20)])
    x, its, _ = pcg(A, np.ones(20), M, tol=1e-12)
    assert its <= 2
    Mj = jacobi_preconditioner(A)
    assert np.allclose(Mj @ np.ones(20), 1 / A.diagonal())


def test_uniaxial_bar_linear_profile():
    mesh, sys = _system((4, 1, 1), 2)
    L = mesh.box[0]
    fixed = []
    for s in range(mesh.n_scalar):
        i = mesh.scalar_1d_indices[s]
        if i[0] == 0:
            fixed.append((3 * s, 0.0))
        elif i[0] == 4 and mesh.scalar_kind[s] == 0:
            fixed.append((3 * s, 1e-3 * L))
        elif i[0] == 4:
            fixed.append((3 * s, 0.0))
    o = mesh.scalar_index(0, 0, 0)
    y = mesh.scalar_index(0, 1, 0)
    fixed += [(3 * o + 1, 0.0), (3 * o + 2, 0.0), (3 * y + 2, 0.0)]
    u, _ = solve(apply_dirichlet(sys, fixed))
    U = u.reshape(-1, 3)
    vs = mesh.vertex_scalars
    x = mesh.vertex_coordinates()
    np.testing.assert_allclose(U[vs, 0], 1e-3 * x[:, 0], atol=1e-9 * 1e-3 * L)


def test_f_zero_particular_solution_only():
    mesh, sys = _system((1, 1, 1), 1)
    vs = mesh.vertex_scalars
    dofs = (3 * vs[:, None] + np.arange(3)).ravel()
    vals = np.full(dofs.size, 0.25)
    u, _ = solve(apply_dirichlet(with_load(sys, np.zeros(sys.n)), (dofs, vals)))
    np.testing.assert_allclose(u, 0.25)


def test_solve_many_shares_factorization():
    mesh, sys = _system((2, 2, 2), 1)
    fixed = (np.arange(9), np.zeros(9))
    loads = [np.zeros(sys.n), np.ones(sys.n), -np.ones(sys.n)]
    cons = [((fixed,), ())] * 3
    U, reps = solve_many(sys, loads, cons)
    np.testing.assert_allclose(U[:, 1], -U[:, 2])
    K_r, f_r, cm = reduce_system(apply_dirichlet(with_load(sys, np.ones(sys.n)), fixed))
    assert K_r.shape == (cm.n_free, cm.n_free)


def test_matrix_market(tmp_path):
    _, sys = _system((1, 1, 1), 1)
    write_matrix_market(tmp_path / "K.mtx", sys.K)
    import scipy.io
    K = scipy.io.mmread(str(tmp_path / "K.mtx"))
    np.testing.assert_allclose(K.toarray(), sys.K.toarray())
