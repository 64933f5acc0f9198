"""Voxel-level pre-integration of finite-cell stiffness matrices.

For isotropic material the voxel stiffness is ``lam * K_lam + mu * K_mu``; both
matrices are integrated once per voxel slot of the cell layout with a
``(p+1)``-point Gauss rule per direction on the voxel's sub-interval. A cell
matrix is then the indicator- and material-weighted sum over its slots.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import CellMesh, gauss_1d, shape_1d, strain_operator

DEFAULT_MEMORY_CAP = 2 * 1024 ** 3

# d(C)/d(lambda) and d(C)/d(mu) in Voigt form (engineering shear)
D_LAMBDA = np.zeros((6, 6))
D_LAMBDA[:3, :3] = 1.0
D_MU = np.diag([2.0, 2.0, 2.0, 1.0, 1.0, 1.0])


class CacheMemoryError(MemoryError):
    def __init__(self, required: int, cap: int):
        super().__init__(f"voxel stiffness cache needs {required} bytes, cap is {cap} bytes")
        self.required = required
        self.cap = cap


def cache_bytes(mesh: CellMesh) -> int:
    d = mesh.basis.n_dofs
    return int(np.prod(mesh.voxels_per_cell)) * 2 * d * d * 8


def _subinterval_integrals(p: int, v: int):
    """1D integrals of mode products over each of ``v`` equal sub-intervals of [-1, 1].

    Returns arrays indexed ``[slot, a, b]``: ``m00 = int N_a N_b``,
    ``m10 = int N_a' N_b``, ``m11 = int N_a' N_b'`` and vectors ``i0 = int N_a``,
    ``i1 = int N_a'``.
    """
    n1 = p + 1
    m00 = np.empty((v, n1, n1))
    m10 = np.empty((v, n1, n1))
    m11 = np.empty((v, n1, n1))
    i0 = np.empty((v, n1))
    i1 = np.empty((v, n1))
    edges = np.linspace(-1.0, 1.0, v + 1)
    for s in range(v):
        x, w = gauss_1d(p + 1, edges[s], edges[s + 1])
        N, dN = shape_1d(p, x)
        m = (N * w) @ N.T
        m00[s] = 0.5 * (m + m.T)
        m10[s] = (dN * w) @ N.T
        m = (dN * w) @ dN.T
        m11[s] = 0.5 * (m + m.T)
        i0[s] = N @ w
        i1[s] = dN @ w
    return m00, m10, m11, i0, i1


@dataclass(frozen=True, eq=False)
class VoxelStiffnessCache:
    """Pre-integrated per-slot matrices for one ``(p, voxels_per_cell, spacing)``.

    Slots are numbered x-fastest inside the cell. ``K_lam`` and ``K_mu`` have
    shape ``(n_slots, d, d)``; ``strain_ops`` has shape ``(n_slots, 6, d)`` and
    holds the slot integrals of the strain operator (used for averaging).
    """

    p: int
    voxels_per_cell: tuple[int, int, int]
    spacing: tuple[float, float, float]
    K_lam: np.ndarray
    K_mu: np.ndarray
    strain_ops: np.ndarray
    voxel_volume: float

    @property
    def n_slots(self) -> int:
        return self.K_lam.shape[0]

    @property
    def n_dofs(self) -> int:
        return self.K_lam.shape[1]

    def matches(self, mesh: CellMesh) -> bool:
        return (self.p == mesh.p and tuple(self.voxels_per_cell) == tuple(mesh.voxels_per_cell)
                and np.allclose(self.spacing, mesh.spacing, rtol=1e-14, atol=0))


def build_cache(mesh: CellMesh, memory_cap: int = DEFAULT_MEMORY_CAP) -> VoxelStiffnessCache:
    required = cache_bytes(mesh)
    if required > memory_cap:
        raise CacheMemoryError(required, memory_cap)
    p = mesh.p
    n1 = p + 1
    vx, vy, vz = mesh.voxels_per_cell
    h = mesh.cell_size
    scale = 2.0 / h  # d(xi)/dx per axis
    det_j = mesh.det_j
    ints = [_subinterval_integrals(p, v) for v in (vx, vy, vz)]

    nm = n1 ** 3
    d = 3 * nm
    n_slots = vx * vy * vz
    K_lam = np.empty((n_slots, d, d))
    K_mu = np.empty((n_slots, d, d))
    strain_ops = np.empty((n_slots, 6, d))

    for k in range(vz):
        for j in range(vy):
            for i in range(vx):
                s = i + vx * (j + vy * k)
                per_axis = [(ints[0], i), (ints[1], j), (ints[2], k)]
                # 1D factor for (derivative on first?, derivative on second?)
                fac = []
                vec = []
                for ax, (it, idx) in enumerate(per_axis):
                    m00, m10, m11, i0, i1 = (a[idx] for a in it)
                    c = scale[ax]
                    fac.append({(0, 0): m00, (1, 0): c * m10, (0, 1): c * m10.T, (1, 1): c * c * m11})
                    vec.append({0: i0, 1: c * i1})
                G = np.empty((3, 3, nm, nm))
                for kk in range(3):
                    for ll in range(3):
                        f = [fac[ax][(int(ax == kk), int(ax == ll))] for ax in range(3)]
                        G[kk, ll] = np.kron(f[2], np.kron(f[1], f[0]))
                G *= det_j
                lap = G[0, 0] + G[1, 1] + G[2, 2]
                Kl = np.zeros((nm, 3, nm, 3))
                Km = np.zeros((nm, 3, nm, 3))
                for ii in range(3):
                    for jj in range(3):
                        Kl[:, ii, :, jj] = G[ii, jj]
                        Km[:, ii, :, jj] = G[jj, ii]
                    Km[:, ii, :, ii] += lap
                K_lam[s] = Kl.reshape(d, d)
                K_mu[s] = Km.reshape(d, d)
                grad_int = np.empty((nm, 3))
                for kk in range(3):
                    g = [vec[ax][int(ax == kk)] for ax in range(3)]
                    grad_int[:, kk] = np.kron(g[2], np.kron(g[1], g[0]))
                strain_ops[s] = strain_operator(grad_int * det_j)
    return VoxelStiffnessCache(p, tuple(mesh.voxels_per_cell), tuple(mesh.spacing),
                               K_lam, K_mu, strain_ops, float(np.prod(mesh.spacing)))


def assemble_cell(cache: VoxelStiffnessCache, alphas, lam, mu) -> np.ndarray:
    """Cell stiffness ``sum_s alpha_s (lam_s K_lam_s + mu_s K_mu_s)``.

    ``lam`` and ``mu`` may be scalars or per-slot arrays.
    """
    alphas = np.asarray(alphas, dtype=float).ravel()
    if alphas.size != cache.n_slots:
        raise ValueError(f"expected {cache.n_slots} indicator values, got {alphas.size}")
    wl = alphas * np.broadcast_to(np.asarray(lam, float).ravel(), alphas.shape)
    wm = alphas * np.broadcast_to(np.asarray(mu, float).ravel(), alphas.shape)
    return np.tensordot(wl, cache.K_lam, axes=1) + np.tensordot(wm, cache.K_mu, axes=1)


def assemble_cells(cache: VoxelStiffnessCache, w_lam: np.ndarray, w_mu: np.ndarray,
                   chunk: int = 256):
    """Yield ``(start, K_block)`` with cell matrices for rows of the weight arrays.

    ``w_lam`` and ``w_mu`` have shape ``(n_cells, n_slots)`` and already include
    the indicator factor.
    """
    d = cache.n_dofs
    Kl = cache.K_lam.reshape(cache.n_slots, d * d)
    Km = cache.K_mu.reshape(cache.n_slots, d * d)
    for start in range(0, w_lam.shape[0], chunk):
        sl = slice(start, start + chunk)
        block = w_lam[sl] @ Kl + w_mu[sl] @ Km
        yield start, block.reshape(-1, d, d)


def cell_slot_view(array3d: np.ndarray, mesh: CellMesh) -> np.ndarray:
    """Rearrange a voxel array into ``(n_cells, n_slots)`` in mesh ordering."""
    nx, ny, nz = mesh.cells
    vx, vy, vz = mesh.voxels_per_cell
    a = np.asarray(array3d).reshape(nx, vx, ny, vy, nz, vz)
    return a.transpose(4, 2, 0, 5, 3, 1).reshape(nx * ny * nz, vx * vy * vz)
