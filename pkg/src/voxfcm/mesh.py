"""Cartesian finite-cell mesh with hierarchic integrated-Legendre shape functions.

The global approximation space is the full tensor product of a 1D hierarchic
space per axis: vertex hat functions plus integrated Legendre bubbles on each
cell interval. Every 3D global mode is therefore a product of three 1D global
modes, which makes the DOF bookkeeping a pure index computation.

Local mode layout inside a cell: ``m = a + (p+1)*(b + (p+1)*c)`` where each of
``a, b, c`` is 0 (vertex at -1), 1 (vertex at +1) or ``k >= 2`` (bubble
``phi_k``). Local DOF ``3*m + comp`` with ``comp`` the displacement component.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial import legendre as npleg

MAX_ORDER = 4

VERTEX, EDGE, FACE, VOLUME = 0, 1, 2, 3


class MeshError(ValueError):
    """Raised when a mesh cannot be built from the requested tiling."""


# ---------------------------------------------------------------------------
# 1D hierarchic basis
# ---------------------------------------------------------------------------

def _legendre_coeffs(n: int) -> np.ndarray:
    c = np.zeros(n + 1)
    c[n] = 1.0
    return c


def shape_1d(p: int, xi) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of the ``p+1`` 1D modes at points ``xi``.

    Returns two arrays of shape ``(p+1, len(xi))``. Modes 0 and 1 are the
    linear vertex functions, mode ``k >= 2`` is
    ``(P_k - P_{k-2}) / sqrt(2(2k-1))``, which vanishes at both ends.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    vals = np.empty((p + 1, xi.size))
    ders = np.empty((p + 1, xi.size))
    vals[0] = 0.5 * (1.0 - xi)
    vals[1] = 0.5 * (1.0 + xi)
    ders[0] = -0.5
    ders[1] = 0.5
    for k in range(2, p + 1):
        c = (_legendre_coeffs(k) - np.pad(_legendre_coeffs(k - 2), (0, 2))) / np.sqrt(2.0 * (2 * k - 1))
        vals[k] = npleg.legval(xi, c)
        ders[k] = npleg.legval(xi, npleg.legder(c))
    return vals, ders


def gauss_1d(n: int, a: float = -1.0, b: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule with ``n`` points mapped to ``[a, b]``."""
    x, w = npleg.leggauss(n)
    half = 0.5 * (b - a)
    return 0.5 * (a + b) + half * x, half * w


# ---------------------------------------------------------------------------
# 3D basis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShapeBasis:
    """Tensor-product hierarchic basis of order ``p`` on the reference cube."""

    p: int

    def __post_init__(self):
        if not 1 <= self.p <= MAX_ORDER:
            raise MeshError(f"polynomial order must be in [1, {MAX_ORDER}], got {self.p}")

    @property
    def n1d(self) -> int:
        return self.p + 1

    @property
    def n_modes(self) -> int:
        return self.n1d ** 3

    @property
    def n_dofs(self) -> int:
        return 3 * self.n_modes

    @cached_property
    def mode_indices(self) -> np.ndarray:
        """``(n_modes, 3)`` array of 1D mode indices ``(a, b, c)`` per local mode."""
        r = np.arange(self.n1d)
        c, b, a = np.meshgrid(r, r, r, indexing="ij")
        return np.stack([a.ravel(), b.ravel(), c.ravel()], axis=1)

    @cached_property
    def mode_entity(self) -> np.ndarray:
        """Entity type of each local mode: number of bubble factors (0..3)."""
        return (self.mode_indices >= 2).sum(axis=1)

    def evaluate(self, points, jacobian_diag=None) -> tuple[np.ndarray, np.ndarray]:
        """Evaluate all modes at reference points.

        Args:
            points: ``(n, 3)`` reference coordinates in ``[-1, 1]^3``.
            jacobian_diag: optional ``(hx/2, hy/2, hz/2)``; when given the
                gradients are returned with respect to physical coordinates.

        Returns:
            ``values`` of shape ``(n, n_modes)`` and ``grads`` of shape
            ``(n, n_modes, 3)``.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        v = []
        d = []
        for axis in range(3):
            va, da = shape_1d(self.p, pts[:, axis])
            v.append(va.T)
            d.append(da.T)
        a, b, c = self.mode_indices.T
        vx, vy, vz = v[0][:, a], v[1][:, b], v[2][:, c]
        dx, dy, dz = d[0][:, a], d[1][:, b], d[2][:, c]
        values = vx * vy * vz
        grads = np.stack([dx * vy * vz, vx * dy * vz, vx * vy * dz], axis=-1)
        if jacobian_diag is not None:
            grads = grads / np.asarray(jacobian_diag, dtype=float)
        return values, grads


def strain_operator(grads: np.ndarray) -> np.ndarray:
    """Voigt strain-displacement matrices from physical mode gradients.

    ``grads`` has shape ``(..., n_modes, 3)``; the result has shape
    ``(..., 6, 3*n_modes)`` with rows ordered (11, 22, 33, 12, 23, 13) and
    engineering shear strains.
    """
    shp = grads.shape[:-2]
    nm = grads.shape[-2]
    B = np.zeros(shp + (6, nm, 3))
    gx, gy, gz = grads[..., 0], grads[..., 1], grads[..., 2]
    B[..., 0, :, 0] = gx
    B[..., 1, :, 1] = gy
    B[..., 2, :, 2] = gz
    B[..., 3, :, 0] = gy
    B[..., 3, :, 1] = gx
    B[..., 4, :, 1] = gz
    B[..., 4, :, 2] = gy
    B[..., 5, :, 0] = gz
    B[..., 5, :, 2] = gx
    return B.reshape(shp + (6, 3 * nm))


# ---------------------------------------------------------------------------
# Mesh
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CellMesh:
    """Axis-aligned Cartesian grid of finite cells tiling a voxel grid.

    The box starts at the origin and spans ``cells[i] * voxels_per_cell[i] *
    spacing[i]`` along each axis.
    """

    cells: tuple[int, int, int]
    voxels_per_cell: tuple[int, int, int]
    spacing: tuple[float, float, float]
    p: int
    basis: ShapeBasis = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "basis", ShapeBasis(self.p))
        if any(n < 1 for n in self.cells) or any(v < 1 for v in self.voxels_per_cell):
            raise MeshError("cell and voxel counts must be positive")
        if any(s <= 0 for s in self.spacing):
            raise MeshError("voxel spacing must be positive")

    # geometry ---------------------------------------------------------------
    @property
    def voxel_dims(self) -> tuple[int, int, int]:
        return tuple(n * v for n, v in zip(self.cells, self.voxels_per_cell))

    @property
    def cell_size(self) -> np.ndarray:
        return np.array(self.voxels_per_cell, float) * np.array(self.spacing, float)

    @property
    def box(self) -> np.ndarray:
        return np.array(self.cells) * self.cell_size

    @property
    def volume(self) -> float:
        return float(np.prod(self.box))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    @property
    def det_j(self) -> float:
        return float(np.prod(self.cell_size) / 8.0)

    def cell_origin(self, cell) -> np.ndarray:
        """Lower corner of a cell given its linear index (x-fastest)."""
        ix, iy, iz = np.unravel_index(cell, self.cells, order="F")
        return np.array([ix, iy, iz]) * self.cell_size

    # 1D global DOF layout --------------------------------------------------
    def _n1d(self, axis: int) -> int:
        return self.cells[axis] * self.p + 1

    def _local_to_global_1d(self, axis: int) -> np.ndarray:
        """``(n_cells_axis, p+1)`` map from local 1D mode to global 1D mode.

        Global 1D ordering: vertices ``0..n`` then bubbles cell-major.
        """
        n = self.cells[axis]
        out = np.empty((n, self.p + 1), dtype=np.int64)
        i = np.arange(n)
        out[:, 0] = i
        out[:, 1] = i + 1
        for k in range(2, self.p + 1):
            out[:, k] = n + 1 + i * (self.p - 1) + (k - 2)
        return out

    @cached_property
    def _scalar_permutation(self) -> np.ndarray:
        """Map from lexicographic tensor index to entity-ordered scalar index."""
        n1 = [self._n1d(a) for a in range(3)]
        is_bubble = [np.arange(n1[a]) > self.cells[a] for a in range(3)]
        bx, by, bz = np.meshgrid(*is_bubble, indexing="ij")
        kind = (bx.astype(int) + by + bz).ravel(order="F")
        order = np.argsort(kind, kind="stable")
        perm = np.empty_like(order)
        perm[order] = np.arange(order.size)
        return perm

    @property
    def n_scalar(self) -> int:
        return int(np.prod([self._n1d(a) for a in range(3)]))

    @property
    def n_dofs(self) -> int:
        return 3 * self.n_scalar

    @cached_property
    def scalar_kind(self) -> np.ndarray:
        """Entity type (VERTEX..VOLUME) of each global scalar mode."""
        n1 = [self._n1d(a) for a in range(3)]
        is_bubble = [np.arange(n1[a]) > self.cells[a] for a in range(3)]
        bx, by, bz = np.meshgrid(*is_bubble, indexing="ij")
        kind = (bx.astype(int) + by + bz).ravel(order="F")
        out = np.empty_like(kind)
        out[self._scalar_permutation] = kind
        return out

    def scalar_index(self, ix, iy, iz) -> np.ndarray:
        """Global scalar index from per-axis global 1D indices."""
        n1 = [self._n1d(a) for a in range(3)]
        lex = np.asarray(ix) + n1[0] * (np.asarray(iy) + n1[1] * np.asarray(iz))
        return self._scalar_permutation[lex]

    @cached_property
    def scalar_1d_indices(self) -> np.ndarray:
        """``(n_scalar, 3)`` per-axis global 1D indices of each scalar mode."""
        n1 = [self._n1d(a) for a in range(3)]
        ix, iy, iz = np.meshgrid(*[np.arange(n) for n in n1], indexing="ij")
        lex = np.stack([ix.ravel(order="F"), iy.ravel(order="F"), iz.ravel(order="F")], axis=1)
        out = np.empty_like(lex)
        out[self._scalar_permutation] = lex
        return out

    @cached_property
    def dof_map(self) -> np.ndarray:
        """``(n_cells, 3*(p+1)^3)`` global DOF indices per cell, local layout order."""
        l2g = [self._local_to_global_1d(a) for a in range(3)]
        a, b, c = self.basis.mode_indices.T
        cx, cy, cz = np.meshgrid(*[np.arange(n) for n in self.cells], indexing="ij")
        cx, cy, cz = cx.ravel(order="F"), cy.ravel(order="F"), cz.ravel(order="F")
        gx = l2g[0][cx][:, a]
        gy = l2g[1][cy][:, b]
        gz = l2g[2][cz][:, c]
        scal = self.scalar_index(gx, gy, gz)
        return (3 * scal[:, :, None] + np.arange(3)).reshape(self.n_cells, -1)

    # vertices ---------------------------------------------------------------
    @cached_property
    def vertex_scalars(self) -> np.ndarray:
        """Scalar indices of all vertex modes (they are numbered first)."""
        return np.flatnonzero(self.scalar_kind == VERTEX)

    def vertex_coordinates(self) -> np.ndarray:
        """Physical coordinates of vertex modes, indexed by scalar index."""
        idx = self.scalar_1d_indices[self.vertex_scalars]
        return idx * self.cell_size

    def boundary_scalars(self) -> dict[tuple[int, int], np.ndarray]:
        """Scalar modes whose support touches each box face.

        Keys are ``(axis, side)`` with side 0 for the minus face. A 1D mode
        lives on the face if it is the end vertex on that side.
        """
        idx = self.scalar_1d_indices
        out = {}
        for axis in range(3):
            n = self.cells[axis]
            out[(axis, 0)] = np.flatnonzero(idx[:, axis] == 0)
            out[(axis, 1)] = np.flatnonzero(idx[:, axis] == n)
        return out

    def on_boundary(self) -> np.ndarray:
        """Boolean mask over scalar modes that are nonzero somewhere on the box surface."""
        mask = np.zeros(self.n_scalar, dtype=bool)
        for s in self.boundary_scalars().values():
            mask[s] = True
        return mask

    def summary(self) -> dict:
        return {
            "cells": list(self.cells),
            "voxels_per_cell": list(self.voxels_per_cell),
            "p": self.p,
            "box_mm": [float(x) for x in self.box],
            "dofs": self.n_dofs,
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


def build_mesh(field_dims, spacing, voxels_per_cell, p: int) -> CellMesh:
    """Tile a voxel grid with finite cells of ``voxels_per_cell`` voxels each."""
    dims = tuple(int(d) for d in field_dims)
    vpc = tuple(int(v) for v in voxels_per_cell)
    if len(dims) != 3 or len(vpc) != 3:
        raise MeshError("dims and voxels_per_cell must have three entries")
    for d, v in zip(dims, vpc):
        if v < 1 or d % v:
            raise MeshError(f"voxel dims {dims} are not divisible by voxels_per_cell {vpc}")
    cells = tuple(d // v for d, v in zip(dims, vpc))
    return CellMesh(cells, vpc, tuple(float(s) for s in spacing), int(p))


def dof_count(mesh: CellMesh) -> int:
    """Number of displacement DOFs of the tensor-product space."""
    nx, ny, nz = mesh.cells
    q = mesh.p - 1
    vertices = (nx + 1) * (ny + 1) * (nz + 1)
    edges = nx * (ny + 1) * (nz + 1) + ny * (nx + 1) * (nz + 1) + nz * (nx + 1) * (ny + 1)
    faces = nx * ny * (nz + 1) + ny * nz * (nx + 1) + nx * nz * (ny + 1)
    return 3 * (vertices + edges * q + faces * q ** 2 + nx * ny * nz * q ** 3)


def evaluate_basis(basis: ShapeBasis, local, jacobian_diag=None):
    """Mode values and gradients at reference points; see :meth:`ShapeBasis.evaluate`."""
    return basis.evaluate(local, jacobian_diag)
