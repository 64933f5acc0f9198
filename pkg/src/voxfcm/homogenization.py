"""Volume averaging, effective tensors, order relations and moving-window sweeps."""
from __future__ import annotations

import csv
import io
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import boundary as bc
from .material import (IsotropicMaterial, engineering_constants, symmetrize,
                       voigt_strain, voigt_stress, strain_from_voigt, stress_from_voigt, VOIGT_PAIRS)
from .mesh import CellMesh, build_mesh, gauss_1d
from .preintegration import (D_LAMBDA, D_MU, VoxelStiffnessCache, build_cache,
                             cell_slot_view)
from .solver import (ConvergenceError, GlobalSystem, SolverCache, SolverOptions,
                     assemble_global, solve_many)
from .voxel_model import IndicatorField

log = logging.getLogger(__name__)

HILL_TOL = 1e-8
ORDER_TOL = 1e-6


class HomogenizationError(RuntimeError):
    def __init__(self, message: str, case: int | None = None):
        super().__init__(message)
        self.case = case


class EquilibriumWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# model: mesh + geometry + material + assembled stiffness
# ---------------------------------------------------------------------------

_CACHE_POOL: dict = {}


def shared_cache(mesh: CellMesh) -> VoxelStiffnessCache:
    """Stiffness cache shared by all meshes with the same ``(p, layout, spacing)``."""
    key = (mesh.p, tuple(mesh.voxels_per_cell), tuple(np.round(mesh.spacing, 15)))
    cache = _CACHE_POOL.get(key)
    if cache is None:
        cache = _CACHE_POOL[key] = build_cache(mesh)
    return cache


class FCMModel:
    """A finite-cell discretization of one indicator field with assembled stiffness.

    ``lam`` and ``mu`` are scalars (single material) or voxel arrays.
    """

    def __init__(self, field: IndicatorField, voxels_per_cell, p: int, lam, mu,
                 options: SolverOptions | None = None, cache: VoxelStiffnessCache | None = None):
        self.field = field
        self.mesh = build_mesh(field.dims, field.spacing, voxels_per_cell, p)
        self.cache = cache if cache is not None else shared_cache(self.mesh)
        self.lam = np.broadcast_to(np.asarray(lam, float), field.dims)
        self.mu = np.broadcast_to(np.asarray(mu, float), field.dims)
        self.system = assemble_global(self.mesh, field.alpha, self.cache, self.lam, self.mu)
        self.options = options or SolverOptions()
        self.solver_cache = SolverCache()

    @classmethod
    def from_material(cls, field: IndicatorField, mat: IsotropicMaterial, voxels_per_cell, p: int, **kw):
        lam, mu = mat.lame
        return cls(field, voxels_per_cell, p, lam, mu, **kw)

    @property
    def volume(self) -> float:
        return self.mesh.volume

    # -- solving -----------------------------------------------------------
    def solve_cases(self, cases):
        loads = [c.load if c.load is not None else np.zeros(self.system.n) for c in cases]
        blocks = cut_cell_blocks(self.mesh, self.field) if self.options.preconditioner == "schwarz" else None
        U, reports = solve_many(self.system, loads, [c.constraints for c in cases],
                                options=self.options, cache=self.solver_cache, blocks=blocks)
        return U, reports

    # -- voxel-level integrals -----------------------------------------------
    def voxel_strain_integrals(self, u: np.ndarray) -> np.ndarray:
        """``(n_cells, n_slots, 6)`` integrals of the Voigt strain over each voxel."""
        uc = u[self.mesh.dof_map]
        return np.einsum("sid,cd->csi", self.cache.strain_ops, uc, optimize=True)

    def material_slots(self):
        a = cell_slot_view(self.field.alpha, self.mesh)
        return a, cell_slot_view(self.lam, self.mesh), cell_slot_view(self.mu, self.mesh)


def cut_cell_blocks(mesh: CellMesh, field: IndicatorField):
    """DOF index blocks of cells containing both material and void voxels."""
    solid = cell_slot_view(field.solid, mesh)
    cut = solid.any(axis=1) & ~solid.all(axis=1)
    return [mesh.dof_map[c] for c in np.flatnonzero(cut)]


# ---------------------------------------------------------------------------
# averages
# ---------------------------------------------------------------------------

def _as_tensor_strain(v) -> np.ndarray:
    return strain_from_voigt(v)


def average_strain(u: np.ndarray, model: FCMModel) -> np.ndarray:
    """Volume average of the strain over the whole embedding box, void included."""
    E = model.voxel_strain_integrals(u).sum(axis=(0, 1))
    return _as_tensor_strain(E / model.volume)


def average_strain_surface(u: np.ndarray, mesh: CellMesh) -> np.ndarray:
    """Boundary form ``1/V oint sym(u (x) n) dA`` evaluated face by face."""
    from .mesh import shape_1d
    p = mesh.p
    x, w = gauss_1d(p + 1)
    N, _ = shape_1d(p, x)
    i1d = N @ w  # integral of each 1D mode over [-1, 1]
    modes = mesh.basis.mode_indices
    h = mesh.cell_size
    total = np.zeros((3, 3))
    cidx = np.unravel_index(np.arange(mesh.n_cells), mesh.cells, order="F")
    U = u[mesh.dof_map].reshape(mesh.n_cells, -1, 3)
    for axis in range(3):
        a, b = [k for k in range(3) if k != axis]
        for side in (0, 1):
            n = np.zeros(3)
            n[axis] = -1.0 if side == 0 else 1.0
            layer = 0 if side == 0 else mesh.cells[axis] - 1
            cells = np.flatnonzero(cidx[axis] == layer)
            on = modes[:, axis] == side
            wts = np.where(on, i1d[modes[:, a]] * i1d[modes[:, b]], 0.0) * (h[a] * h[b] / 4)
            ubar = np.einsum("m,cmk->k", wts, U[cells])
            total += np.outer(ubar, n)
    total = 0.5 * (total + total.T)
    return total / mesh.volume


def average_stress_volume(u: np.ndarray, model: FCMModel) -> np.ndarray:
    """Volume average of ``alpha C eps(u)``."""
    E = model.voxel_strain_integrals(u)
    a, lam, mu = model.material_slots()
    wl = (a * lam)[..., None]
    wm = (a * mu)[..., None]
    S = (wl * (E @ D_LAMBDA.T) + wm * (E @ D_MU.T)).sum(axis=(0, 1))
    return stress_from_voigt(S / model.volume)


def average_stress_nodal(u: np.ndarray, system: GlobalSystem, mesh: CellMesh,
                         residual_tol: float = 1e-6) -> np.ndarray:
    """Stress average from nodal reaction forces ``K u`` on boundary vertices.

    Only vertex modes enter the moment sum: an affine test field has zero
    coefficients on every higher mode, so their forces do no work on it.
    """
    r = (system.K @ u).reshape(-1, 3)
    vs = mesh.vertex_scalars
    bnd = mesh.on_boundary()
    bv = vs[bnd[vs]]
    x = mesh.vertex_coordinates()[bnd[vs]]
    sig = r[bv].T @ x / mesh.volume
    interior = np.ones(mesh.n_scalar, dtype=bool)
    interior[bnd] = False
    ri = np.linalg.norm(r[interior])
    scale = np.linalg.norm(r)
    if scale > 0 and ri > residual_tol * scale:
        warnings.warn(f"interior nodal residual {ri / scale:.2e} relative; stress average may be inaccurate",
                      EquilibriumWarning, stacklevel=2)
    return 0.5 * (sig + sig.T)


def cavity_strain(u: np.ndarray, model: FCMModel) -> np.ndarray:
    """Strain contribution of the void: ``<eps> - c_m <eps>_m``."""
    E = model.voxel_strain_integrals(u)
    void = ~cell_slot_view(model.field.solid, model.mesh)
    return _as_tensor_strain(E[void].sum(axis=0) / model.volume)


def matrix_strain(u: np.ndarray, model: FCMModel) -> tuple[np.ndarray, float]:
    """Average strain over solid voxels only and the solid volume fraction."""
    E = model.voxel_strain_integrals(u)
    solid = cell_slot_view(model.field.solid, model.mesh)
    c_m = float(solid.mean())
    if c_m == 0:
        return np.zeros((3, 3)), 0.0
    vm = model.volume * c_m
    return _as_tensor_strain(E[solid].sum(axis=0) / vm), c_m


def energy_density(u: np.ndarray, system: GlobalSystem, volume: float) -> float:
    """``<sigma : eps>`` from the assembled stiffness."""
    return float(u @ (system.K @ u)) / volume


@dataclass
class AveragedState:
    sigma_M: np.ndarray
    eps_M: np.ndarray
    energy_density: float
    cavity_strain: np.ndarray
    matrix_fraction: float
    sigma_volume: np.ndarray
    hill_residual: float
    averaging_mismatch: float


def averaged_state(u: np.ndarray, model: FCMModel) -> AveragedState:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EquilibriumWarning)
        sig = average_stress_nodal(u, model.system, model.mesh)
    sig_v = average_stress_volume(u, model)
    eps = average_strain(u, model)
    w = energy_density(u, model.system, model.volume)
    ec = cavity_strain(u, model)
    _, c_m = matrix_strain(u, model)
    macro = float(voigt_stress(sig) @ voigt_strain(eps))
    hill = abs(w - macro) / abs(w) if w != 0 else abs(macro)
    ns = np.linalg.norm(sig_v)
    mismatch = np.linalg.norm(sig - sig_v) / ns if ns > 0 else float(np.linalg.norm(sig))
    return AveragedState(sig, eps, 0.5 * w, ec, c_m, sig_v, float(hill), float(mismatch))


# ---------------------------------------------------------------------------
# effective tensors
# ---------------------------------------------------------------------------

@dataclass
class EffectiveResult:
    C: np.ndarray
    bc_kind: str
    asymmetry: float
    states: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    degenerate: bool = False

    @property
    def hill_residuals(self) -> list[float]:
        return [s.hill_residual for s in self.states]

    @property
    def averaging_mismatches(self) -> list[float]:
        return [s.averaging_mismatch for s in self.states]


def _solve_or_raise(model: FCMModel, cases):
    try:
        return model.solve_cases(cases)
    except ConvergenceError as exc:
        # cases sharing a factorization fail together; report the first
        raise HomogenizationError(f"solver failure in load case 0: {exc}", case=0) from exc


def effective_tensor(model: FCMModel, bc_kind: str = bc.PBC) -> EffectiveResult:
    """Six unit macro-strain cases; column j is the Voigt average stress for ``e_j``."""
    gen = {bc.KUBC: bc.kubc, bc.PBC: bc.pbc}.get(bc_kind.upper())
    if gen is None:
        raise ValueError(f"strain-driven boundary condition must be KUBC or PBC, got {bc_kind!r}")
    cases = [gen(model.mesh, bc.unit_strain(j)) for j in range(6)]
    U, reports = _solve_or_raise(model, cases)
    states = [averaged_state(U[:, j], model) for j in range(6)]
    C = np.column_stack([voigt_stress(s.sigma_M) for s in states])
    Cs, asym = symmetrize(C)
    degenerate = not np.any(model.field.solid)
    return EffectiveResult(Cs, bc_kind.upper(), asym, states, reports, degenerate)


def effective_tensor_subc(model: FCMModel) -> EffectiveResult:
    """Six unit macro-stress cases; the compliance is inverted and symmetrized."""
    cases = [bc.subc(model.mesh, model.field, bc.unit_stress(j)) for j in range(6)]
    U, reports = _solve_or_raise(model, cases)
    states = [averaged_state(U[:, j], model) for j in range(6)]
    S = np.column_stack([voigt_strain(s.eps_M) for s in states])
    S, _ = symmetrize(S)
    if np.linalg.cond(S) > 1e14:
        raise HomogenizationError("SUBC compliance is singular")
    C, asym = symmetrize(np.linalg.inv(S))
    return EffectiveResult(C, bc.SUBC, asym, states, reports)


def compute_tensor(model: FCMModel, bc_kind: str) -> EffectiveResult:
    if bc_kind.upper() == bc.SUBC:
        return effective_tensor_subc(model)
    return effective_tensor(model, bc_kind)


@dataclass
class OrderVerdict:
    passed: bool
    min_eig_kubc_pbc: float
    min_eig_pbc_subc: float
    tolerance: float
    minors_kubc_pbc_nonneg: bool
    minors_pbc_subc_nonneg: bool

    def as_dict(self) -> dict:
        return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v))
                for k, v in self.__dict__.items()}


def _leading_minors_nonneg(A: np.ndarray, tol: float) -> bool:
    return all(np.linalg.det(A[:k, :k]) >= -tol ** k for k in range(1, A.shape[0] + 1))


def order_relation_check(C_subc, C_pbc, C_kubc, rel_tol: float = ORDER_TOL) -> OrderVerdict:
    """Check ``C_SUBC <= C_PBC <= C_KUBC`` in the positive-semidefinite sense."""
    C_subc, C_pbc, C_kubc = (0.5 * (np.asarray(a) + np.asarray(a).T) for a in (C_subc, C_pbc, C_kubc))
    tol = rel_tol * np.linalg.norm(C_kubc)
    e1 = float(np.linalg.eigvalsh(C_kubc - C_pbc).min())
    e2 = float(np.linalg.eigvalsh(C_pbc - C_subc).min())
    return OrderVerdict(bool(e1 >= -tol and e2 >= -tol), e1, e2, float(tol),
                        bool(_leading_minors_nonneg(C_kubc - C_pbc, tol)),
                        bool(_leading_minors_nonneg(C_pbc - C_subc, tol)))


# ---------------------------------------------------------------------------
# quantities and window sweeps
# ---------------------------------------------------------------------------

def tensor_entry(C: np.ndarray, name: str) -> float:
    """``C1313`` style (tensor indices) or ``C55`` style (1-based Voigt) entry."""
    digits = name[1:]
    if len(digits) == 4:
        pairs = {tuple(sorted(p)): k for k, p in enumerate(VOIGT_PAIRS)}
        i = pairs[tuple(sorted((int(digits[0]) - 1, int(digits[1]) - 1)))]
        j = pairs[tuple(sorted((int(digits[2]) - 1, int(digits[3]) - 1)))]
    elif len(digits) == 2:
        i, j = int(digits[0]) - 1, int(digits[1]) - 1
    else:
        raise KeyError(f"cannot parse tensor entry {name!r}")
    return float(C[i, j])


def quantity(C: np.ndarray, name: str) -> float:
    if name.startswith("C"):
        return tensor_entry(C, name)
    return engineering_constants(C).get(name)


@dataclass
class WindowResult:
    index: tuple[int, int, int]
    origin: tuple[int, int, int]
    C: np.ndarray | None
    value: float | None
    hill_residual_max: float | None
    error: str | None = None


@dataclass
class HomogenizationReport:
    bc_kind: str
    quantity: str
    windows: list
    mean: float
    std: float
    cv: float
    failures: int

    def as_dict(self) -> dict:
        return {"bc": self.bc_kind, "quantity": self.quantity, "mean": self.mean, "std": self.std,
                "cv": self.cv, "windows": len(self.windows), "failures": self.failures}

    def windows_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        iu = np.triu_indices(6)
        head = ["ix", "iy", "iz", "ox", "oy", "oz"]
        head += [f"C{i + 1}{j + 1}" for i, j in zip(*iu)]
        head += ["E_xx", "E_yy", "E_zz", "hill_residual_max"]
        w.writerow(head)
        for r in self.windows:
            if r.C is None:
                continue
            ec = engineering_constants(r.C)
            w.writerow(list(r.index) + list(r.origin) + [repr(float(x)) for x in r.C[iu]]
                       + [repr(ec.E_xx), repr(ec.E_yy), repr(ec.E_zz), repr(r.hill_residual_max)])
        return buf.getvalue()


def cv_stats(values) -> tuple[float, float, float]:
    """Mean, population standard deviation and coefficient of variation."""
    v = np.asarray(values, float)
    if v.size == 0:
        return float("nan"), float("nan"), float("nan")
    # moments of the offsets from the first value, so identical samples give exactly zero spread
    d = v - v[0]
    mean = float(v[0] + d.mean())
    std = float(d.std())
    return mean, std, (std / abs(mean) if mean != 0 else float("nan"))


def window_origins(dims, window, stride):
    if any(w > d for w, d in zip(window, dims)):
        raise ValueError(f"window {tuple(window)} larger than field {tuple(dims)}")
    stride = (stride,) * 3 if np.isscalar(stride) else tuple(stride)
    if any(s < 1 for s in stride):
        raise ValueError("stride must be at least 1")
    ranges = [range(0, d - w + 1, s) for d, w, s in zip(dims, window, stride)]
    out = []
    for kz, oz in enumerate(ranges[2]):
        for ky, oy in enumerate(ranges[1]):
            for kx, ox in enumerate(ranges[0]):
                out.append(((kx, ky, kz), (ox, oy, oz)))
    return out


def window_sweep(field: IndicatorField, window, stride, bc_kind: str, mat: IsotropicMaterial,
                 quantity_name: str = "E_zz", voxels_per_cell=None, p: int = 1,
                 options: SolverOptions | None = None, threads: int = 1) -> HomogenizationReport:
    """Homogenize every window position and collect statistics of one quantity."""
    window = tuple(int(w) for w in window)
    vpc = tuple(voxels_per_cell) if voxels_per_cell is not None else window
    positions = window_origins(field.dims, window, stride)

    def run(pos):
        index, origin = pos
        sub = field.crop(origin, window)
        try:
            model = FCMModel.from_material(sub, mat, vpc, p, options=options)
            res = compute_tensor(model, bc_kind)
            return WindowResult(index, origin, res.C, quantity(res.C, quantity_name),
                                max(res.hill_residuals))
        except (HomogenizationError, ConvergenceError, bc.SUBCInapplicableError, np.linalg.LinAlgError) as exc:
            log.warning("window %s failed: %s", origin, exc)
            return WindowResult(index, origin, None, None, None, str(exc))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, positions))
    else:
        results = [run(pos) for pos in positions]
    ok = [r.value for r in results if r.value is not None]
    mean, std, cv = cv_stats(ok)
    return HomogenizationReport(bc_kind.upper(), quantity_name, results, mean, std, cv,
                                sum(r.value is None for r in results))


# ---------------------------------------------------------------------------
# embedded tensile experiment
# ---------------------------------------------------------------------------

@dataclass
class TensileResult:
    axis: int
    strain: float
    force: float
    area: float
    modulus: float
    poisson: dict
    mean_strain: np.ndarray
    report: object = None

    @property
    def stress(self) -> float:
        return self.force / self.area

    def as_dict(self) -> dict:
        return {"axis": "xyz"[self.axis], "strain": self.strain, "force": self.force,
                "area": self.area, "stress": self.stress, "modulus": self.modulus,
                "poisson": dict(self.poisson), "mean_strain": self.mean_strain.tolist()}

    def curve_csv(self, steps: int = 10) -> str:
        """Two-column (strain, stress) path from zero to the applied strain; the response is linear."""
        lines = ["strain,stress_mpa"]
        for k in range(steps + 1):
            t = k / steps
            lines.append(f"{t * self.strain!r},{t * self.stress!r}")
        return "\n".join(lines) + "\n"


def tensile_test(model: FCMModel, axis="z", strain: float = 1e-3) -> TensileResult:
    """Stretch between frictionless grips; modulus from the plus-face reaction over the gross area."""
    case = bc.tensile(model.mesh, axis, strain)
    ax = case.info["axis"]
    U, reports = _solve_or_raise(model, [case])
    u = U[:, 0]
    r = (model.system.K @ u).reshape(-1, 3)
    plus = model.mesh.boundary_scalars()[(ax, 1)]
    plus = plus[model.mesh.scalar_kind[plus] == 0]
    force = float(r[plus, ax].sum())
    box = model.mesh.box
    area = float(np.prod([box[k] for k in range(3) if k != ax]))
    eps = average_strain(u, model)
    poisson = {f"nu_{'xyz'[ax]}{'xyz'[k]}": float(-eps[k, k] / eps[ax, ax])
               for k in range(3) if k != ax}
    return TensileResult(ax, float(strain), force, area, force / area / strain, poisson, eps, reports[0])
