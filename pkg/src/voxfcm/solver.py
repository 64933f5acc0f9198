"""Global assembly, affine constraint elimination and linear solution.

Constraints are stored as an affine map ``u_all = T @ u_free + g``. Dirichlet
values and periodic couplings ``u_slave = u_master + jump`` are resolved with a
weighted union-find, so chains of couplings collapse onto one master.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import CellMesh
from .preintegration import VoxelStiffnessCache, assemble_cells, cell_slot_view

log = logging.getLogger(__name__)

# sparse LU fill of p>=2 hexahedral systems exhausts a few GB beyond this size
DIRECT_LIMIT = 50_000


class ConstraintError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residuals):
        super().__init__(message)
        self.residual_tail = list(residuals)[-10:]


@dataclass
class SolveReport:
    iterations: int
    relative_residual: float
    wall_time: float
    method: str


@dataclass(frozen=True, eq=False)
class GlobalSystem:
    """Stiffness, load and accumulated constraints over all DOFs."""

    K: sp.csr_matrix
    f: np.ndarray
    dirichlet: tuple = ()
    periodic: tuple = ()

    @property
    def n(self) -> int:
        return self.K.shape[0]


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def assemble_global(mesh: CellMesh, alpha: np.ndarray, cache: VoxelStiffnessCache,
                    lam, mu) -> GlobalSystem:
    """Scatter indicator-weighted cell matrices into a CSR matrix.

    ``lam`` and ``mu`` are scalars or voxel arrays of the field shape.
    """
    alpha = np.asarray(alpha, float)
    if alpha.shape != tuple(mesh.voxel_dims):
        raise ValueError(f"indicator dims {alpha.shape} do not match mesh tiling {mesh.voxel_dims}")
    if not cache.matches(mesh):
        raise ValueError("stiffness cache was built for a different mesh configuration")
    lam = np.broadcast_to(np.asarray(lam, float), alpha.shape)
    mu = np.broadcast_to(np.asarray(mu, float), alpha.shape)
    w_lam = cell_slot_view(alpha * lam, mesh)
    w_mu = cell_slot_view(alpha * mu, mesh)
    dof_map = mesh.dof_map
    d = dof_map.shape[1]
    n = mesh.n_dofs
    K = None
    for start, block in assemble_cells(cache, w_lam, w_mu):
        dm = dof_map[start:start + block.shape[0]]
        rows = np.repeat(dm, d, axis=1).ravel()
        cols = np.tile(dm, (1, d)).ravel()
        part = sp.csr_matrix((block.ravel(), (rows, cols)), shape=(n, n))
        K = part if K is None else K + part
    K.sum_duplicates()
    K.sort_indices()
    return GlobalSystem(K, np.zeros(n))


# ---------------------------------------------------------------------------
# constraints
# ---------------------------------------------------------------------------

def apply_dirichlet(sys: GlobalSystem, fixed) -> GlobalSystem:
    """Append ``(dof, value)`` prescriptions (list of pairs or a pair of arrays)."""
    dofs, values = _as_arrays(fixed, 2)
    if dofs.size and (dofs.min() < 0 or dofs.max() >= sys.n):
        raise ConstraintError("Dirichlet DOF index out of range")
    return replace(sys, dirichlet=sys.dirichlet + ((dofs, values),))


def apply_periodic(sys: GlobalSystem, pairs) -> GlobalSystem:
    """Append ``(master, slave, jump)`` couplings meaning ``u_slave = u_master + jump``."""
    masters, slaves, jumps = _as_arrays(pairs, 3)
    for a in (masters, slaves):
        if a.size and (a.min() < 0 or a.max() >= sys.n):
            raise ConstraintError("periodic DOF index out of range")
    return replace(sys, periodic=sys.periodic + ((masters, slaves, jumps),))


def with_load(sys: GlobalSystem, f) -> GlobalSystem:
    return replace(sys, f=np.asarray(f, float))


def _as_arrays(items, width):
    if isinstance(items, tuple) and len(items) == width and all(isinstance(a, np.ndarray) for a in items):
        arrs = items
    else:
        items = list(items)
        arrs = [np.array([it[k] for it in items]) for k in range(width)]
    out = [np.asarray(a, dtype=np.int64).ravel() for a in arrs[:-1]]
    out.append(np.asarray(arrs[-1], dtype=float).ravel())
    if len({a.size for a in out}) != 1:
        raise ConstraintError("constraint arrays differ in length")
    return out


@dataclass(frozen=True, eq=False)
class ConstraintMap:
    """Resolved affine map ``u = T @ u_free + g``.

    ``column[i]`` is the free column of DOF ``i`` or -1 if fully prescribed.
    """

    column: np.ndarray
    g: np.ndarray
    n_free: int

    @property
    def T(self) -> sp.csr_matrix:
        rows = np.flatnonzero(self.column >= 0)
        return sp.csr_matrix((np.ones(rows.size), (rows, self.column[rows])),
                             shape=(self.column.size, self.n_free))

    @property
    def pattern_key(self) -> bytes:
        return self.column.tobytes()


def resolve_constraints(n: int, dirichlet=(), periodic=(), tol: float = 1e-12) -> ConstraintMap:
    parent = np.arange(n)
    offset = np.zeros(n)

    def find(x):
        path = []
        while parent[x] != x:
            path.append(x)
            x = parent[x]
        root = x
        acc = 0.0
        for node in reversed(path):
            acc += offset[node]
            offset[node] = acc
            parent[node] = root
        return root

    for masters, slaves, jumps in periodic:
        for m, s, j in zip(masters.tolist(), slaves.tolist(), jumps.tolist()):
            if m == s:
                raise ConstraintError(f"DOF {m} coupled to itself")
            rm, rs = find(m), find(s)
            om, os_ = offset[m] if m != rm else 0.0, offset[s] if s != rs else 0.0
            if rm == rs:
                if abs(os_ - om - j) > tol * max(1.0, abs(j), abs(os_), abs(om)):
                    raise ConstraintError(f"contradictory periodic couplings between DOFs {m} and {s}")
                continue
            parent[rs] = rm
            offset[rs] = om + j - os_

    # pointer doubling flattens every chain onto its root
    roots = parent.copy()
    while True:
        nxt = roots[roots]
        if np.array_equal(nxt, roots):
            break
        offset = offset + offset[roots]
        roots = nxt

    root_value = np.full(n, np.nan)
    for dofs, values in dirichlet:
        r = roots[dofs]
        rv = values - offset[dofs]
        order = np.argsort(r, kind="stable")
        r, rv = r[order], rv[order]
        known = ~np.isnan(root_value[r])
        clash = known & (np.abs(root_value[r] - rv) > tol * np.maximum(1.0, np.abs(rv)))
        if clash.any():
            raise ConstraintError(f"conflicting Dirichlet values at DOF group {r[clash][0]}")
        # duplicates inside this batch
        same = r[1:] == r[:-1]
        if np.any(same & (np.abs(rv[1:] - rv[:-1]) > tol * np.maximum(1.0, np.abs(rv[1:])))):
            raise ConstraintError("conflicting duplicate Dirichlet prescriptions")
        root_value[r] = rv

    is_root = roots == np.arange(n)
    free_roots = np.flatnonzero(is_root & np.isnan(root_value))
    col_of_root = np.full(n, -1)
    col_of_root[free_roots] = np.arange(free_roots.size)
    column = col_of_root[roots]
    g = offset + np.nan_to_num(root_value[roots], nan=0.0)
    return ConstraintMap(column, g, int(free_roots.size))


def reduce_system(sys: GlobalSystem, cmap: ConstraintMap | None = None):
    """Return ``(K_r, f_r, cmap)`` of the eliminated system."""
    if cmap is None:
        cmap = resolve_constraints(sys.n, sys.dirichlet, sys.periodic)
    T = cmap.T
    K_r = (T.T @ sys.K @ T).tocsr()
    f_r = T.T @ (sys.f - sys.K @ cmap.g)
    return K_r, f_r, cmap


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------

class Factorization:
    """Sparse LU of a reduced matrix, reusable for many right-hand sides."""

    def __init__(self, K_r: sp.spmatrix):
        self.K = K_r.tocsc()
        self.lu = spla.splu(self.K, permc_spec="MMD_AT_PLUS_A",
                            options={"SymmetricMode": True}, diag_pivot_thresh=0.0)

    def solve(self, F: np.ndarray, tol: float, refine: int = 3) -> tuple[np.ndarray, np.ndarray]:
        F = np.asarray(F, float)
        X = self.lu.solve(F)
        res = _rel_residual(self.K, X, F)
        for _ in range(refine):
            if np.all(res <= tol):
                break
            X = X + self.lu.solve(F - self.K @ X)
            res = _rel_residual(self.K, X, F)
        return X, res


def _rel_residual(K, X, F):
    R = F - K @ X
    nf = np.linalg.norm(F, axis=0)
    nr = np.linalg.norm(R, axis=0)
    return np.where(nf > 0, nr / np.where(nf > 0, nf, 1.0), nr)


def jacobi_preconditioner(K_r: sp.spmatrix) -> spla.LinearOperator:
    d = K_r.diagonal().copy()
    d[d == 0] = 1.0
    inv = 1.0 / d
    return spla.LinearOperator(K_r.shape, matvec=lambda r: inv * r, dtype=float)


def schwarz_preconditioner(K_r: sp.spmatrix, blocks) -> spla.LinearOperator:
    """Additive Schwarz with dense block solves; Jacobi on uncovered DOFs."""
    K_r = K_r.tocsr()
    d = K_r.diagonal().copy()
    d[d == 0] = 1.0
    covered = np.zeros(K_r.shape[0], dtype=bool)
    factors = []
    for b in blocks:
        b = np.unique(np.asarray(b))
        b = b[b >= 0]
        if b.size == 0:
            continue
        A = K_r[b][:, b].toarray()
        factors.append((b, np.linalg.pinv(A, hermitian=True)))
        covered[b] = True
    inv_d = np.where(covered, 0.0, 1.0 / d)

    def apply(r):
        z = inv_d * r
        for b, Ainv in factors:
            z[b] += Ainv @ r[b]
        return z

    return spla.LinearOperator(K_r.shape, matvec=apply, dtype=float)


def pcg(A, b, M=None, tol=1e-10, max_iter=None, x0=None):
    """Preconditioned conjugate gradients; returns ``(x, iterations, residual history)``."""
    n = b.size
    max_iter = max_iter or int(20 * np.sqrt(max(n, 1)))
    x = np.zeros(n) if x0 is None else np.array(x0, float)
    r = b - A @ x
    nb = np.linalg.norm(b)
    if nb == 0:
        return np.zeros(n), 0, [0.0]
    z = M @ r if M is not None else r.copy()
    p = z.copy()
    rz = r @ z
    hist = [np.linalg.norm(r) / nb]
    for it in range(1, max_iter + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        hist.append(np.linalg.norm(r) / nb)
        if hist[-1] <= tol:
            return x, it, hist
        z = M @ r if M is not None else r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(f"CG did not reach {tol:g} in {max_iter} iterations "
                           f"(last residual {hist[-1]:.3e})", hist)


@dataclass
class SolverOptions:
    tol: float = 1e-10
    max_iter: int | None = None
    method: str = "auto"  # auto | direct | cg
    preconditioner: str = "jacobi"  # jacobi | schwarz
    threads: int = 1


@dataclass
class SolverCache:
    """Factorizations keyed by (stiffness identity, constraint pattern)."""

    entries: dict = field(default_factory=dict)

    def get(self, K, cmap: ConstraintMap):
        return self.entries.get((id(K), cmap.pattern_key))

    def put(self, K, cmap: ConstraintMap, value):
        self.entries[(id(K), cmap.pattern_key)] = value


def solve(sys: GlobalSystem, tol: float = 1e-10, max_iter: int | None = None,
          options: SolverOptions | None = None, cache: SolverCache | None = None,
          blocks=None):
    """Solve the constrained system; returns the full displacement vector and a report."""
    u, reports = solve_many(sys, [sys.f], [None], tol=tol, max_iter=max_iter,
                            options=options, cache=cache, blocks=blocks)
    return u[:, 0], reports[0]


def solve_many(sys: GlobalSystem, loads, constraint_sets, tol: float = 1e-10,
               max_iter: int | None = None, options: SolverOptions | None = None,
               cache: SolverCache | None = None, blocks=None):
    """Solve several load cases sharing ``sys.K``.

    ``constraint_sets[i]`` is ``(dirichlet, periodic)`` tuples for case ``i`` or
    ``None`` to use the constraints stored on ``sys``. Cases with the same
    constraint pattern share one factorization.
    """
    opts = options or SolverOptions(tol=tol, max_iter=max_iter)
    tol = opts.tol if options is not None else tol
    max_iter = opts.max_iter if options is not None else max_iter
    cache = cache if cache is not None else SolverCache()
    out = np.empty((sys.n, len(loads)))
    reports = []
    groups: dict = {}
    cmaps = []
    for i, (f, cons) in enumerate(zip(loads, constraint_sets)):
        dirichlet, periodic = (sys.dirichlet, sys.periodic) if cons is None else cons
        cmap = resolve_constraints(sys.n, dirichlet, periodic)
        cmaps.append(cmap)
        groups.setdefault(cmap.pattern_key, []).append(i)

    for key, idx in groups.items():
        cmap0 = cmaps[idx[0]]
        t0 = time.perf_counter()
        T = cmap0.T
        K_r = cached = cache.get(sys.K, cmap0)
        if cached is None:
            K_r = (T.T @ sys.K @ T).tocsr()
        else:
            K_r = cached[0]
        F = np.column_stack([T.T @ (np.asarray(loads[i], float) - sys.K @ cmaps[i].g) for i in idx])
        method = opts.method
        if method == "auto":
            method = "direct" if cmap0.n_free <= DIRECT_LIMIT else "cg"
        if cmap0.n_free == 0:
            X = np.zeros((0, len(idx)))
            res = np.zeros(len(idx))
            its = [0] * len(idx)
        elif method == "direct":
            fac = cached[1] if cached is not None and cached[1] is not None else Factorization(K_r)
            cache.put(sys.K, cmap0, (K_r, fac))
            X, res = fac.solve(F, tol)
            its = [1] * len(idx)
            if np.any(res > tol):
                raise ConvergenceError(f"direct solve residual {res.max():.3e} exceeds {tol:g}", res)
        elif method == "cg":
            cache.put(sys.K, cmap0, (K_r, None))
            if opts.preconditioner == "schwarz" and blocks is not None:
                M = schwarz_preconditioner(K_r, [cmap0.column[b] for b in blocks])
            else:
                M = jacobi_preconditioner(K_r)
            cols = []
            res = []
            its = []
            for k in range(F.shape[1]):
                x, it, hist = pcg(K_r, F[:, k], M, tol=tol, max_iter=max_iter)
                cols.append(x)
                res.append(hist[-1])
                its.append(it)
            X = np.column_stack(cols)
            res = np.asarray(res)
        else:
            raise ValueError(f"unknown solver method {method!r}")
        wall = time.perf_counter() - t0
        for k, i in enumerate(idx):
            cm = cmaps[i]
            out[:, i] = cm.g
            mask = cm.column >= 0
            out[mask, i] += X[cm.column[mask], k]
            reports.append((i, SolveReport(int(its[k]), float(res[k]), wall / len(idx), method)))
        log.debug("solved %d case(s) with %d free DOFs by %s in %.2fs", len(idx), cmap0.n_free, method, wall)
    reports.sort(key=lambda t: t[0])
    return out, [r for _, r in reports]


def write_matrix_market(path, K) -> None:
    """Debug dump of a sparse matrix in Matrix Market coordinate format."""
    from scipy.io import mmwrite
    mmwrite(str(path), sp.coo_matrix(K))
