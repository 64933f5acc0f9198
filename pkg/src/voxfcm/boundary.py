"""Homogenization and tensile-test boundary conditions on the embedding box.

Affine macroscopic fields live entirely in the vertex modes of the tensor
product basis, so prescribed linear displacements and periodic jumps only
touch vertex DOFs; higher boundary modes get zero values or zero jumps.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .mesh import VERTEX, CellMesh, gauss_1d, shape_1d
from .voxel_model import IndicatorField

KUBC, SUBC, PBC, TENSILE = "KUBC", "SUBC", "PBC", "TENSILE"
AXES = {"x": 0, "y": 1, "z": 2}


class SUBCInapplicableError(ValueError):
    """A box face carries no material, so uniform tractions cannot be applied."""


def _sym(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.shape != (3, 3):
        raise ValueError("macro tensors must be 3x3")
    return 0.5 * (a + a.T)


@dataclass(frozen=True, eq=False)
class LoadCase:
    kind: str
    macro: np.ndarray
    dirichlet: tuple = ()
    periodic: tuple = ()
    load: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def constraints(self):
        return self.dirichlet, self.periodic

    def summary(self) -> dict:
        n_dir = int(sum(d.size for d, _ in self.dirichlet))
        n_per = int(sum(m.size for m, _, _ in self.periodic))
        out = {"kind": self.kind, "macro": self.macro.tolist(),
               "dirichlet_count": n_dir, "periodic_count": n_per,
               "load_norm": float(np.linalg.norm(self.load)) if self.load is not None else 0.0}
        out.update(self.info)
        return out

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


def _vertex_mask(mesh: CellMesh, scalars: np.ndarray) -> np.ndarray:
    return mesh.scalar_kind[scalars] == VERTEX


def _coords(mesh: CellMesh, scalars: np.ndarray) -> np.ndarray:
    """Physical position of vertex scalars (garbage for non-vertex entries)."""
    idx = mesh.scalar_1d_indices[scalars]
    return np.minimum(idx, np.array(mesh.cells)) * mesh.cell_size


def _all_components(scalars: np.ndarray) -> np.ndarray:
    return (3 * scalars[:, None] + np.arange(3)).ravel()


def kubc(mesh: CellMesh, eps) -> LoadCase:
    """Linear displacements ``u = eps x`` on the whole box surface."""
    eps = _sym(eps)
    bnd = np.flatnonzero(mesh.on_boundary())
    vals = np.zeros((bnd.size, 3))
    vert = _vertex_mask(mesh, bnd)
    vals[vert] = _coords(mesh, bnd[vert]) @ eps.T
    dofs = _all_components(bnd)
    return LoadCase(KUBC, eps, dirichlet=((dofs, vals.ravel()),))


def pbc(mesh: CellMesh, eps) -> LoadCase:
    """Periodic fluctuations with macroscopic jumps ``eps dx`` between opposite faces.

    Every plus-side boundary mode is coupled to its image with all plus-side
    end vertices wrapped to the minus side, so no chains arise. The origin
    vertex is fixed to remove rigid translations.
    """
    eps = _sym(eps)
    idx = mesh.scalar_1d_indices
    n = np.array(mesh.cells)
    plus = idx == n
    slaves = np.flatnonzero(plus.any(axis=1))
    img = idx[slaves].copy()
    img[plus[slaves]] = 0
    masters = mesh.scalar_index(img[:, 0], img[:, 1], img[:, 2])
    jumps = np.zeros((slaves.size, 3))
    vert = _vertex_mask(mesh, slaves)
    dx = (_coords(mesh, slaves[vert]) - _coords(mesh, masters[vert]))
    jumps[vert] = dx @ eps.T
    origin = int(mesh.scalar_index(0, 0, 0))
    fixed = _all_components(np.array([origin]))
    return LoadCase(
        PBC, eps,
        dirichlet=((fixed, np.zeros(3)),),
        periodic=((_all_components(masters), _all_components(slaves), jumps.ravel()),),
    )


def face_alpha(field: IndicatorField, axis: int, side: int) -> np.ndarray:
    """Indicator of the voxel layer touching a box face, as a 2D array."""
    sl = [slice(None)] * 3
    sl[axis] = 0 if side == 0 else -1
    return field.alpha[tuple(sl)]


def traction_loads(mesh: CellMesh, field: IndicatorField, sig) -> np.ndarray:
    """Consistent nodal loads of the traction ``sig n`` on all six faces.

    Each face voxel contributes with its own indicator value, integrated with a
    ``(p+1)^2`` Gauss rule on the voxel footprint.
    """
    sig = _sym(sig)
    p = mesh.p
    n1 = p + 1
    f = np.zeros(mesh.n_dofs)
    dof_map = mesh.dof_map
    modes = mesh.basis.mode_indices
    h = mesh.cell_size
    vpc = mesh.voxels_per_cell
    # per axis: (v, p+1) integrals of each 1D mode over each sub-interval, physical length
    sub = []
    for ax in range(3):
        edges = np.linspace(-1.0, 1.0, vpc[ax] + 1)
        rows = []
        for s in range(vpc[ax]):
            x, w = gauss_1d(p + 1, edges[s], edges[s + 1])
            N, _ = shape_1d(p, x)
            rows.append(N @ w * h[ax] / 2)
        sub.append(np.array(rows))
    cx, cy, cz = np.unravel_index(np.arange(mesh.n_cells), mesh.cells, order="F")
    cidx = (cx, cy, cz)
    for axis in range(3):
        a, b = [ax for ax in range(3) if ax != axis]
        for side in (0, 1):
            normal = np.zeros(3)
            normal[axis] = -1.0 if side == 0 else 1.0
            t = sig @ normal
            if not np.any(t):
                continue
            alpha2d = face_alpha(field, axis, side)
            layer = 0 if side == 0 else mesh.cells[axis] - 1
            cells = np.flatnonzero(cidx[axis] == layer)
            # the 1D mode equal to one on this face
            on_face = modes[:, axis] == side
            for c in cells:
                ia, ib = cidx[a][c], cidx[b][c]
                va, vb = vpc[a], vpc[b]
                A = alpha2d[ia * va:(ia + 1) * va, ib * vb:(ib + 1) * vb]
                # sum_{voxels} alpha * int N_a * int N_b
                W = sub[a].T @ A @ sub[b]  # (p+1, p+1)
                m = np.flatnonzero(on_face)
                vals = W[modes[m, a], modes[m, b]]
                dofs = dof_map[c].reshape(-1, 3)[m]
                np.add.at(f, dofs, vals[:, None] * t[None, :])
    return f


def _three_two_one(mesh: CellMesh):
    lx, ly, _ = mesh.cells
    a = int(mesh.scalar_index(0, 0, 0))
    b = int(mesh.scalar_index(lx, 0, 0))
    c = int(mesh.scalar_index(0, ly, 0))
    dofs = np.array([3 * a, 3 * a + 1, 3 * a + 2, 3 * b + 1, 3 * b + 2, 3 * c + 2])
    return dofs


def equilibrium_residual(mesh: CellMesh, f: np.ndarray) -> tuple[float, float]:
    """Relative net force and net moment of a nodal load vector (vertex DOFs)."""
    vs = mesh.vertex_scalars
    F = f.reshape(-1, 3)[vs]
    x = _coords(mesh, vs)
    norm1 = np.abs(f).sum()
    if norm1 == 0:
        return 0.0, 0.0
    net = np.abs(F.sum(axis=0)).max() / norm1
    moment = np.abs(np.cross(x, F).sum(axis=0)).max() / (norm1 * float(np.max(mesh.box)))
    return float(net), float(moment)


def subc(mesh: CellMesh, field: IndicatorField, sig) -> LoadCase:
    """Uniform tractions ``sig n`` with 3-2-1 support against rigid motion."""
    sig = _sym(sig)
    for axis in range(3):
        for side in (0, 1):
            if not np.any(face_alpha(field, axis, side) == 1.0):
                raise SUBCInapplicableError(
                    f"SUBC inapplicable: box face axis={axis} side={side} is entirely void")
    f = traction_loads(mesh, field, sig)
    fixed = _three_two_one(mesh)
    net, moment = equilibrium_residual(mesh, f)
    return LoadCase(SUBC, sig, dirichlet=((fixed, np.zeros(fixed.size)),), load=f,
                    info={"net_force_residual": net, "net_moment_residual": moment})


def tensile(mesh: CellMesh, axis, strain: float) -> LoadCase:
    """Uniaxial stretch between frictionless grips on the two faces normal to ``axis``."""
    if strain == 0:
        raise ValueError("tensile strain must be non-zero")
    ax = AXES[axis] if isinstance(axis, str) else int(axis)
    faces = mesh.boundary_scalars()
    minus, plus = faces[(ax, 0)], faces[(ax, 1)]
    L = float(mesh.box[ax])
    plus_vals = np.where(_vertex_mask(mesh, plus), strain * L, 0.0)
    b, c = [k for k in range(3) if k != ax]
    origin = int(mesh.scalar_index(0, 0, 0))
    idx_b = [0, 0, 0]
    idx_b[b] = mesh.cells[b]
    corner_b = int(mesh.scalar_index(*idx_b))
    pins = np.array([3 * origin + b, 3 * origin + c, 3 * corner_b + c])
    dofs = np.concatenate([3 * minus + ax, 3 * plus + ax, pins])
    vals = np.concatenate([np.zeros(minus.size), plus_vals, np.zeros(3)])
    eps = np.zeros((3, 3))
    eps[ax, ax] = strain
    return LoadCase(TENSILE, eps, dirichlet=((dofs, vals),),
                    info={"axis": ax, "strain": float(strain)})


def unit_strain(j: int) -> np.ndarray:
    """3x3 strain whose Voigt vector (engineering shear) is the unit vector ``e_j``."""
    from .material import strain_from_voigt
    e = np.zeros(6)
    e[j] = 1.0
    return strain_from_voigt(e)


def unit_stress(j: int) -> np.ndarray:
    from .material import stress_from_voigt
    e = np.zeros(6)
    e[j] = 1.0
    return stress_from_voigt(e)
