"""Acceptance criteria, each run at its stated tolerance.

Every test appends one ``PASS``/``FAIL`` line that is printed in the terminal
summary (and immediately, when run with ``-s``).
"""
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import composed_cell_stiffness, full_cell_stiffness
from voxfcm import boundary as bc
from voxfcm.homogenization import (FCMModel, compute_tensor, tensile_test,
                                   window_sweep)
from voxfcm.material import engineering_constants, hashin_shtrikman_upper, isotropic_tensor, voigt_bound
from voxfcm.mesh import build_mesh
from voxfcm.preintegration import build_cache
from voxfcm.solver import apply_dirichlet, assemble_global, solve
from voxfcm.validation import (CUBIC_VOID_MATERIAL, scenario_cubic_void, scenario_table1,
                               scenario_unit_cell_count)
from voxfcm.voxel_model import IndicatorField, make_cubic_void_cell

MAT = CUBIC_VOID_MATERIAL
C_MAT = isotropic_tensor(MAT)

# every solved homogenization case of criteria 3-6: (label, hill residual, averaging mismatch)
SOLVED_CASES: list[tuple[str, float, float]] = []


def report(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def _record(label, result):
    for j, s in enumerate(result.states):
        SOLVED_CASES.append((f"{label}/{result.bc_kind}/case{j}", s.hill_residual, s.averaging_mismatch))


def _rel(a, b):
    return float(np.abs(a - b).max() / np.abs(b).max())


# ---------------------------------------------------------------------------
# shared runs
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def homogeneous_runs():
    t0 = time.perf_counter()
    field = IndicatorField(np.ones((6, 6, 6)), (0.5, 0.5, 0.5))
    model = FCMModel.from_material(field, MAT, (2, 2, 2), 2)
    tensors = {k: compute_tensor(model, k) for k in (bc.KUBC, bc.PBC, bc.SUBC)}
    for r in tensors.values():
        _record("homogeneous", r)
    moduli = {ax: tensile_test(model, ax, 1e-3).modulus for ax in "xyz"}
    return tensors, moduli, time.perf_counter() - t0


@pytest.fixture(scope="session")
def table1_run():
    t0 = time.perf_counter()
    res = scenario_table1(resolution=96, p=2, voxels_per_cell=12)
    return res, time.perf_counter() - t0


@pytest.fixture(scope="session")
def cubic_void_rows():
    t0 = time.perf_counter()
    rows = scenario_cubic_void(void_edges=tuple(float(v) for v in range(1, 10)), resolution=60, p=2,
                               voxels_per_cell=6)
    return rows, time.perf_counter() - t0


@pytest.fixture(scope="session")
def cell_count_rows():
    t0 = time.perf_counter()
    rows = scenario_unit_cell_count(counts=(1, 2, 3), void_edge=9.0, resolution=20, p=2, voxels_per_cell=10)
    return rows, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------

def test_criterion_01_patch_test():
    t0 = time.perf_counter()
    A = np.array([[1e-3, 4e-4, -2e-4], [1e-4, -5e-4, 3e-4], [2e-4, 0.0, 8e-4]])
    b = np.array([1e-2, -2e-2, 5e-3])
    worst = 0.0
    for p in (1, 2, 3, 4):
        for n in (1, 2, 3, 4):
            mesh = build_mesh((n, n, n), (0.5, 0.5, 0.5), (1, 1, 1), p)
            sys = assemble_global(mesh, np.ones((n, n, n)), build_cache(mesh), 1.0, 0.7)
            exact = np.zeros((mesh.n_scalar, 3))
            exact[mesh.vertex_scalars] = mesh.vertex_coordinates() @ A.T + b
            exact = exact.ravel()
            bnd = np.flatnonzero(mesh.on_boundary())
            dofs = (3 * bnd[:, None] + np.arange(3)).ravel()
            u, _ = solve(apply_dirichlet(sys, (dofs, exact[dofs])), tol=1e-13)
            inner = np.flatnonzero(~mesh.on_boundary())
            if inner.size:
                idof = (3 * inner[:, None] + np.arange(3)).ravel()
                worst = max(worst, np.abs(u[idof] - exact[idof]).max() / np.abs(exact).max())
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and dt < 10
    report(1, ok, f"patch test p=1..4, up to 4^3 cells: max rel error {worst:.2e} (tol 1e-9), {dt:.1f}s")
    assert ok


def test_criterion_02_preintegration_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_comp = worst_full = 0.0
    lam, mu = MAT.lame
    for trial in range(50):
        p = 1 + trial % 3
        mesh = build_mesh((4, 4, 4), (0.25, 0.25, 0.25), (2, 2, 2), p)
        cache = build_cache(mesh)
        alpha = np.where(rng.random((4, 4, 4)) < 0.5, 1.0, 1e-9)
        K = assemble_global(mesh, alpha, cache, lam, mu).K.toarray()
        ref = np.zeros_like(K)
        for c in range(mesh.n_cells):
            cx, cy, cz = np.unravel_index(c, mesh.cells, order="F")
            a = alpha[2 * cx:2 * cx + 2, 2 * cy:2 * cy + 2, 2 * cz:2 * cz + 2]
            dm = mesh.dof_map[c]
            ref[np.ix_(dm, dm)] += composed_cell_stiffness(p, mesh.cell_size, (2, 2, 2), a, lam, mu)
        worst_comp = max(worst_comp, _rel(K, ref))
        K1 = assemble_global(mesh, np.ones((4, 4, 4)), cache, lam, mu).K.toarray()
        ref1 = np.zeros_like(K1)
        Kc = full_cell_stiffness(p, mesh.cell_size, lam, mu)
        for c in range(mesh.n_cells):
            dm = mesh.dof_map[c]
            ref1[np.ix_(dm, dm)] += Kc
        worst_full = max(worst_full, _rel(K1, ref1))
    dt = time.perf_counter() - t0
    ok = worst_comp <= 1e-12 and worst_full <= 1e-10 and dt < 30
    report(2, ok, f"50 random fields: vs composed {worst_comp:.2e} (tol 1e-12), "
                  f"vs single-pass {worst_full:.2e} (tol 1e-10), {dt:.1f}s")
    assert ok


def test_criterion_03_homogeneous_exactness(homogeneous_runs):
    tensors, moduli, dt = homogeneous_runs
    errs = {k: _rel(r.C, C_MAT) for k, r in tensors.items()}
    e_errs = {ax: abs(E / MAT.E - 1) for ax, E in moduli.items()}
    ok = max(errs.values()) <= 1e-8 and max(e_errs.values()) <= 1e-8 and dt < 30
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    report(3, ok, f"C* vs C_matrix: {detail}; tensile E max rel {max(e_errs.values()):.1e} (tol 1e-8), {dt:.1f}s")
    assert ok


def test_criterion_04_table1(table1_run):
    res, dt = table1_run
    if res.confirmed:
        ok = abs(res.deviations["C1111"]) <= 0.03 and abs(res.deviations["C2211"]) <= 0.03
        detail = "quantitative"
    else:
        ok = res.isotropy_dev <= 1e-4 and res.asymmetry <= 1e-6
        detail = "internal-consistency (constituents unconfirmed)"
    ok = ok and dt < 15 * 60
    report(4, ok, f"{detail}: C2222/C3333 rel {res.isotropy_dev:.1e} (tol 1e-4), symmetry {res.asymmetry:.1e} "
                  f"(tol 1e-6); C1111 {res.entries['C1111']:.3f} GPa ({100 * res.deviations['C1111']:+.1f}% vs 7.851), "
                  f"C2211 {res.entries['C2211']:.3f} GPa ({100 * res.deviations['C2211']:+.1f}% vs 3.321), {dt:.0f}s")
    assert ok


def test_criterion_05_order_relations(cubic_void_rows):
    rows, dt = cubic_void_rows
    for r in rows:
        for kind in (bc.KUBC, bc.PBC, bc.SUBC):
            # the scenario keeps the per-case residuals on the tensors it returns
            SOLVED_CASES.append((f"cubic_void/{r.void_edge}/{kind}", r.hill_max, r.averaging_max))
    worst = min(min(r.verdict.min_eig_kubc_pbc, r.verdict.min_eig_pbc_subc) / np.linalg.norm(r.tensors[bc.KUBC])
                for r in rows)
    ok = all(r.verdict.passed for r in rows) and dt < 20 * 60
    report(5, ok, f"9 porosities at 60^3, p=2: all rows SUBC<=PBC<=KUBC, worst min eig/||C_KUBC|| "
                  f"{worst:.2e} (tol -1e-6), {dt:.0f}s")
    assert ok


def test_criterion_06_cell_count(cell_count_rows):
    rows, dt = cell_count_rows
    gaps = [r.gap for r in rows]
    pbc = [r.c1313[bc.PBC] for r in rows]
    spread = (max(pbc) - min(pbc)) / abs(pbc[0])
    ok = all(b < a for a, b in zip(gaps, gaps[1:])) and spread <= 1e-4 and dt < 30 * 60
    report(6, ok, f"KUBC-SUBC gap {', '.join(f'{g:.0f}' for g in gaps)} MPa; PBC spread {spread:.1e} "
                  f"(tol 1e-4), {dt:.0f}s")
    assert ok


def test_criterion_07_hill(homogeneous_runs, table1_run, cubic_void_rows, cell_count_rows):
    res, _ = table1_run
    SOLVED_CASES.append(("table1/PBC", res.hill_max, res.averaging_max))
    worst = max(h for _, h, _ in SOLVED_CASES)
    ok = worst <= 1e-8
    report(7, ok, f"Hill residual max {worst:.2e} over {len(SOLVED_CASES)} recorded cases (tol 1e-8)")
    assert ok


def test_criterion_08_averaging_identity(homogeneous_runs, table1_run, cubic_void_rows, cell_count_rows):
    worst = max(m for _, _, m in SOLVED_CASES)
    ok = worst <= 1e-8
    report(8, ok, f"nodal vs volume stress average max rel {worst:.2e} (tol 1e-8)")
    assert ok


def test_criterion_09_dns_vs_pbc():
    t0 = time.perf_counter()
    unit = make_cubic_void_cell(10.0, 5.0, 20)
    one = FCMModel.from_material(unit, MAT, (10, 10, 10), 2)
    pbc = compute_tensor(one, bc.PBC)
    _record("dns_unit", pbc)
    e_pbc = engineering_constants(pbc.C).E_zz
    block = FCMModel.from_material(unit.tile((3, 3, 3)), MAT, (10, 10, 10), 2)
    e_dns = tensile_test(block, "z", 1e-3).modulus
    dev = abs(e_dns / e_pbc - 1)
    dt = time.perf_counter() - t0
    ok = dev <= 0.10 and dt < 20 * 60
    report(9, ok, f"E_zz tensile {e_dns:.0f} vs PBC {e_pbc:.0f} MPa: deviation {100 * dev:.2f}% (tol 10%), {dt:.0f}s")
    assert ok


def test_criterion_10_window_sweep():
    solid = IndicatorField(np.ones((8, 8, 8)), (1, 1, 1))
    rep_h = window_sweep(solid, (4, 4, 4), 2, bc.PBC, MAT, voxels_per_cell=(2, 2, 2), p=2)
    periodic = make_cubic_void_cell(10.0, 5.0, 8).tile((2, 2, 2))
    rep_p = window_sweep(periodic, (8, 8, 8), 4, bc.PBC, MAT, voxels_per_cell=(4, 4, 4), p=2)
    ok = rep_h.cv == 0.0 and rep_p.cv <= 1e-6 and rep_h.failures == rep_p.failures == 0
    report(10, ok, f"homogeneous CV {rep_h.cv:.1e} over {len(rep_h.windows)} windows (must be 0); periodic CV "
                   f"{rep_p.cv:.1e} over {len(rep_p.windows)} windows (tol 1e-6)")
    assert ok


def test_criterion_11_bounds(cubic_void_rows):
    rows, _ = cubic_void_rows
    inside = all(0 <= v <= r.voigt_c1313 for r in rows for v in r.c1313.values())
    worst = np.inf
    for r in rows:
        V = voigt_bound(MAT, r.porosity)
        H = hashin_shtrikman_upper(MAT, r.porosity)[2]
        worst = min(worst, np.linalg.eigvalsh(V - H).min() / np.linalg.norm(V))
    ok = inside and worst >= -1e-8
    report(11, ok, f"all C1313 in [0, Voigt]: {inside}; min eig(C_Voigt - C_HS+)/||C_Voigt|| {worst:.2e} (tol -1e-8)")
    assert ok
