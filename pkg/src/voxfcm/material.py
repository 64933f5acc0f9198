"""Isotropic elasticity in Voigt notation and analytical bounds for porous media.

Voigt ordering is (11, 22, 33, 12, 23, 13) with engineering shear strains, so
``sigma = C @ eps`` holds with the textbook isotropic matrix.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

VOIGT_LABELS = ("11", "22", "33", "12", "23", "13")
VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2))


class MaterialError(ValueError):
    pass


@dataclass(frozen=True)
class IsotropicMaterial:
    E: float
    nu: float

    def __post_init__(self):
        if not self.E > 0:
            raise MaterialError(f"Young's modulus must be positive, got {self.E}")
        if not -1.0 < self.nu < 0.5:
            raise MaterialError(f"Poisson's ratio must lie in (-1, 0.5), got {self.nu}")

    @property
    def lame(self) -> tuple[float, float]:
        E, nu = self.E, self.nu
        return E * nu / ((1 + nu) * (1 - 2 * nu)), E / (2 * (1 + nu))

    @property
    def bulk(self) -> float:
        return self.E / (3 * (1 - 2 * self.nu))

    @property
    def shear(self) -> float:
        return self.lame[1]


@dataclass(frozen=True)
class EngineeringConstants:
    E_xx: float
    E_yy: float
    E_zz: float
    nu_xy: float
    nu_yz: float
    nu_xz: float
    G_xy: float
    G_yz: float
    G_xz: float

    def as_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}

    def get(self, name: str) -> float:
        try:
            return float(getattr(self, name))
        except AttributeError:
            raise KeyError(f"unknown engineering constant {name!r}") from None


def lame_tensor(lam: float, mu: float) -> np.ndarray:
    C = np.zeros((6, 6))
    C[:3, :3] = lam
    C[[0, 1, 2], [0, 1, 2]] = lam + 2 * mu
    C[[3, 4, 5], [3, 4, 5]] = mu
    return C


def isotropic_tensor(mat: IsotropicMaterial) -> np.ndarray:
    """6x6 stiffness of an isotropic material."""
    return lame_tensor(*mat.lame)


def tensor_from_bulk_shear(K: float, G: float) -> np.ndarray:
    return lame_tensor(K - 2.0 * G / 3.0, G)


def symmetrize(C: np.ndarray) -> tuple[np.ndarray, float]:
    """Return ``(C + C^T)/2`` and the relative asymmetry ``|C - C^T| / (2|C|)``."""
    C = np.asarray(C, dtype=float)
    norm = np.linalg.norm(C)
    asym = np.linalg.norm(C - C.T) / (2 * norm) if norm > 0 else 0.0
    return 0.5 * (C + C.T), float(asym)


def engineering_constants(C: np.ndarray) -> EngineeringConstants:
    """Directional moduli, Poisson ratios and shear moduli from the compliance."""
    C = np.asarray(C, dtype=float)
    if np.linalg.cond(C) > 1e15:
        raise MaterialError("stiffness tensor is singular")
    S = np.linalg.inv(C)
    return EngineeringConstants(
        E_xx=1 / S[0, 0], E_yy=1 / S[1, 1], E_zz=1 / S[2, 2],
        nu_xy=-S[0, 1] / S[0, 0], nu_yz=-S[1, 2] / S[1, 1], nu_xz=-S[0, 2] / S[0, 0],
        G_xy=1 / S[3, 3], G_yz=1 / S[4, 4], G_xz=1 / S[5, 5],
    )


def _check_porosity(porosity: float, upper_open: bool = False):
    if not 0.0 <= porosity <= 1.0 or (upper_open and porosity >= 1.0):
        raise MaterialError(f"porosity out of range: {porosity}")


def voigt_bound(mat: IsotropicMaterial, porosity: float) -> np.ndarray:
    _check_porosity(porosity)
    return (1.0 - porosity) * isotropic_tensor(mat)


def reuss_bound(mat: IsotropicMaterial, porosity: float) -> np.ndarray:
    """Reuss bound; an empty phase with zero stiffness collapses it to zero."""
    _check_porosity(porosity)
    if porosity > 0:
        return np.zeros((6, 6))
    return isotropic_tensor(mat)


def hashin_shtrikman_upper(mat: IsotropicMaterial, porosity: float) -> tuple[float, float, np.ndarray]:
    """Upper Hashin-Shtrikman bound for a matrix containing empty pores.

    Returns ``(K_plus, G_plus, C_plus)``.
    """
    _check_porosity(porosity, upper_open=True)
    Km, Gm = mat.bulk, mat.shear
    c = porosity
    if c == 0:
        return Km, Gm, tensor_from_bulk_shear(Km, Gm)
    K = Km + c / (-1.0 / Km + 3 * (1 - c) / (3 * Km + 4 * Gm))
    G = Gm + c / (-1.0 / Gm + 6 * (1 - c) * (Km + 2 * Gm) / (5 * Gm * (3 * Km + 4 * Gm)))
    return K, G, tensor_from_bulk_shear(K, G)


def tensor_to_csv(C: np.ndarray) -> str:
    """Row-major 6x6 block with a Voigt-ordering header line."""
    buf = io.StringIO()
    buf.write("# voigt_order=" + ",".join(VOIGT_LABELS) + "\n")
    for row in np.asarray(C):
        buf.write(",".join(repr(float(x)) for x in row) + "\n")
    return buf.getvalue()


def tensor_from_csv(text: str) -> np.ndarray:
    rows = [line for line in text.splitlines() if line.strip() and not line.startswith("#")]
    C = np.array([[float(x) for x in r.split(",")] for r in rows])
    if C.shape != (6, 6):
        raise MaterialError(f"expected a 6x6 block, got shape {C.shape}")
    return C


def voigt_strain(eps: np.ndarray) -> np.ndarray:
    """3x3 strain -> Voigt 6-vector with engineering shear."""
    e = np.asarray(eps)
    return np.array([e[0, 0], e[1, 1], e[2, 2], 2 * e[0, 1], 2 * e[1, 2], 2 * e[0, 2]])


def voigt_stress(sig: np.ndarray) -> np.ndarray:
    s = np.asarray(sig)
    return np.array([s[0, 0], s[1, 1], s[2, 2], s[0, 1], s[1, 2], s[0, 2]])


def strain_from_voigt(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.array([[v[0], v[3] / 2, v[5] / 2],
                     [v[3] / 2, v[1], v[4] / 2],
                     [v[5] / 2, v[4] / 2, v[2]]])


def stress_from_voigt(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.array([[v[0], v[3], v[5]],
                     [v[3], v[1], v[4]],
                     [v[5], v[4], v[2]]])
