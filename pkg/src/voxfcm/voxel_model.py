"""Voxel images, threshold segmentation, connectivity cleaning and synthetic unit cells.

All 3D arrays are indexed ``[ix, iy, iz]``; on disk data is stored x-fastest
(Fortran order), so ``array.ravel(order="F")`` gives the file layout.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

DEFAULT_ALPHA_VOID = 1e-9

DTYPES = {"u8": "<u1", "u16": "<u2", "f32": "<f4", "f64": "<f8"}

MATRIX, PARTICLE = 0, 1


class VoxelFormatError(ValueError):
    """Raw voxel file and its metadata disagree or are unsupported."""


class EmptyGeometryError(ValueError):
    """A segmentation contains no solid voxels."""


def _check_dims_spacing(dims, spacing):
    if len(dims) != 3 or any(int(d) < 1 for d in dims):
        raise ValueError(f"dims must be three positive integers, got {dims}")
    if len(spacing) != 3 or any(float(s) <= 0 for s in spacing):
        raise ValueError(f"spacing must be three positive numbers, got {spacing}")


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Scalar intensity image with physical voxel spacing in mm."""

    data: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError("voxel data must be three-dimensional")
        _check_dims_spacing(data.shape, self.spacing)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)


@dataclass(frozen=True, eq=False)
class IndicatorField:
    """Per-voxel indicator: 1.0 inside material, ``alpha_void`` in void."""

    alpha: np.ndarray
    spacing: tuple[float, float, float]
    alpha_void: float = DEFAULT_ALPHA_VOID

    def __post_init__(self):
        if not 0.0 < self.alpha_void <= 1e-6:
            raise ValueError(f"alpha_void must lie in (0, 1e-6], got {self.alpha_void}")
        alpha = np.asarray(self.alpha, dtype=np.float64)
        if alpha.ndim != 3:
            raise ValueError("indicator must be three-dimensional")
        _check_dims_spacing(alpha.shape, self.spacing)
        if not np.all((alpha == 1.0) | (alpha == self.alpha_void)):
            raise ValueError("indicator entries must be exactly 1.0 or alpha_void")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @classmethod
    def from_mask(cls, solid, spacing, alpha_void: float = DEFAULT_ALPHA_VOID) -> "IndicatorField":
        solid = np.asarray(solid, dtype=bool)
        return cls(np.where(solid, 1.0, alpha_void), spacing, alpha_void)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.alpha.shape)

    @property
    def solid(self) -> np.ndarray:
        return self.alpha == 1.0

    @property
    def volume(self) -> float:
        return float(np.prod(self.dims) * np.prod(self.spacing))

    def tile(self, reps) -> "IndicatorField":
        return IndicatorField(np.tile(self.alpha, reps), self.spacing, self.alpha_void)

    def crop(self, origin, size) -> "IndicatorField":
        sl = tuple(slice(o, o + s) for o, s in zip(origin, size))
        return IndicatorField(self.alpha[sl], self.spacing, self.alpha_void)


# ---------------------------------------------------------------------------
# raw I/O
# ---------------------------------------------------------------------------

def read_sidecar(path) -> dict:
    meta = json.loads(Path(path).read_text())
    for key in ("dims", "spacing_mm", "dtype"):
        if key not in meta:
            raise VoxelFormatError(f"metadata is missing {key!r}")
    if meta.get("order", "x-fastest") != "x-fastest":
        raise VoxelFormatError(f"unsupported voxel order {meta['order']!r}")
    if meta["dtype"] not in DTYPES:
        raise VoxelFormatError(f"unsupported element type {meta['dtype']!r}")
    return meta


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def load_voxel_grid(path, meta: dict | None = None) -> VoxelGrid:
    """Read a raw little-endian voxel file.

    ``meta`` defaults to the JSON sidecar ``<path>.json``.
    """
    path = Path(path)
    if meta is None:
        meta = read_sidecar(sidecar_path(path))
    dtype_key = meta.get("dtype")
    if dtype_key not in DTYPES:
        raise VoxelFormatError(f"unsupported element type {dtype_key!r}")
    dtype = np.dtype(DTYPES[dtype_key])
    dims = tuple(int(d) for d in meta["dims"])
    spacing = tuple(float(s) for s in meta["spacing_mm"])
    _check_dims_spacing(dims, spacing)
    nbytes = path.stat().st_size
    expected = int(np.prod(dims)) * dtype.itemsize
    if nbytes != expected:
        raise VoxelFormatError(
            f"{path}: file holds {nbytes} bytes, dims {dims} of {dtype_key} need {expected}")
    raw = np.fromfile(path, dtype=dtype)
    return VoxelGrid(raw.reshape(dims, order="F").astype(np.float64), spacing)


def write_raw(path, array: np.ndarray, spacing, dtype: str) -> None:
    """Write ``array`` plus sidecar in the raw x-fastest layout."""
    if dtype not in DTYPES:
        raise VoxelFormatError(f"unsupported element type {dtype!r}")
    path = Path(path)
    arr = np.asarray(array)
    arr.astype(DTYPES[dtype]).ravel(order="F").tofile(path)
    meta = {"dims": list(arr.shape), "spacing_mm": [float(s) for s in spacing],
            "dtype": dtype, "order": "x-fastest"}
    sidecar_path(path).write_text(json.dumps(meta))


def write_mask(path, field: IndicatorField) -> None:
    """Export an indicator as a u8 mask (1 solid, 0 void)."""
    write_raw(path, field.solid.astype(np.uint8), field.spacing, "u8")


# ---------------------------------------------------------------------------
# segmentation
# ---------------------------------------------------------------------------

def segment_threshold(grid: VoxelGrid, hu_thresh: float, alpha_void: float = DEFAULT_ALPHA_VOID) -> IndicatorField:
    """Voxels with intensity at or above ``hu_thresh`` become material."""
    return IndicatorField.from_mask(grid.data >= hu_thresh, grid.spacing, alpha_void)


_STRUCTURES = {
    6: ndimage.generate_binary_structure(3, 1),
    26: ndimage.generate_binary_structure(3, 3),
}


def flood_fill_clean(field: IndicatorField, connectivity: int = 6) -> IndicatorField:
    """Keep only the largest connected solid component.

    Ties between equally large components go to the one containing the
    lowest x-fastest linear voxel index.
    """
    if connectivity not in _STRUCTURES:
        raise ValueError("connectivity must be 6 or 26")
    solid = field.solid
    if not solid.any():
        raise EmptyGeometryError("empty geometry: segmentation contains no solid voxels")
    labels, n = ndimage.label(solid, structure=_STRUCTURES[connectivity])
    flat = labels.ravel(order="F")
    sizes = np.bincount(flat, minlength=n + 1)
    sizes[0] = 0
    # first linear index at which each label appears
    nz = np.flatnonzero(flat)
    seeds = np.full(n + 1, flat.size)
    np.minimum.at(seeds, flat[nz], nz)
    best = max(range(1, n + 1), key=lambda k: (sizes[k], -seeds[k]))
    return IndicatorField.from_mask(labels == best, field.spacing, field.alpha_void)


def porosity(field: IndicatorField) -> float:
    """Fraction of void voxels."""
    return float(np.count_nonzero(~field.solid)) / field.alpha.size


# ---------------------------------------------------------------------------
# synthetic cells
# ---------------------------------------------------------------------------

def _centers(edge: float, resolution: int) -> np.ndarray:
    h = edge / resolution
    return (np.arange(resolution) + 0.5) * h


def make_cubic_void_cell(edge: float, void_edge: float, resolution: int,
                         alpha_void: float = DEFAULT_ALPHA_VOID) -> IndicatorField:
    """Cube of side ``edge`` with a centred cubic hole, voxel-centre rasterized."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    if not 0 <= void_edge < edge:
        raise ValueError(f"void edge {void_edge} must lie in [0, {edge})")
    x = _centers(edge, resolution)
    inside = np.abs(x - edge / 2) < void_edge / 2
    void = inside[:, None, None] & inside[None, :, None] & inside[None, None, :]
    h = edge / resolution
    return IndicatorField.from_mask(~void, (h, h, h), alpha_void)


def sphere_radius(edge: float, particle_volume_fraction: float) -> float:
    return edge * (3.0 * particle_volume_fraction / (4.0 * np.pi)) ** (1.0 / 3.0)


def make_sphere_cell(edge: float, particle_volume_fraction: float, resolution: int) -> np.ndarray:
    """Phase map (MATRIX / PARTICLE) of a cube with a centred spherical particle."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    if not 0 <= particle_volume_fraction < np.pi / 6:
        raise ValueError(f"particle volume fraction must lie in [0, pi/6), got {particle_volume_fraction}")
    r = sphere_radius(edge, particle_volume_fraction)
    x = _centers(edge, resolution) - edge / 2
    d2 = x[:, None, None] ** 2 + x[None, :, None] ** 2 + x[None, None, :] ** 2
    return np.where(d2 < r * r, PARTICLE, MATRIX).astype(np.int8)


def phase_fractions(phases: np.ndarray) -> dict[int, float]:
    ids, counts = np.unique(phases, return_counts=True)
    return {int(i): c / phases.size for i, c in zip(ids, counts)}
