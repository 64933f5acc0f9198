import numpy as np
import pytest
from hypothesis import given, strategies as st

from voxfcm.material import (IsotropicMaterial, MaterialError, engineering_constants, hashin_shtrikman_upper,
                             isotropic_tensor, reuss_bound, strain_from_voigt, stress_from_voigt, symmetrize,
                             tensor_from_csv, tensor_to_csv, voigt_bound, voigt_strain, voigt_stress)

STEEL = IsotropicMaterial(200000.0, 0.25)


def test_isotropic_tensor_values():
    C = isotropic_tensor(STEEL)
    assert C[0, 0] == pytest.approx(240000.0)
    assert C[0, 1] == pytest.approx(80000.0)
    assert C[3, 3] == pytest.approx(80000.0)
    C = isotropic_tensor(IsotropicMaterial(1.0, 0.0))
    np.testing.assert_allclose(C, np.diag([1, 1, 1, 0.5, 0.5, 0.5]), atol=1e-15)


def test_inconel_base():
    m = IsotropicMaterial(190000.0, 0.294)
    ec = engineering_constants(isotropic_tensor(m))
    assert ec.E_zz == pytest.approx(190000.0, rel=1e-12)


@pytest.mark.parametrize("E,nu", [(0.0, 0.3), (-1.0, 0.3), (1.0, 0.5), (1.0, -1.0)])
def test_invalid_material(E, nu):
    with pytest.raises(MaterialError):
        IsotropicMaterial(E, nu)


@given(st.floats(1.0, 1e6), st.floats(-0.9, 0.49), st.floats(0.1, 10.0))
def test_engineering_round_trip(E, nu, scale):
    C = isotropic_tensor(IsotropicMaterial(E, nu))
    ec = engineering_constants(C)
    for k in ("E_xx", "E_yy", "E_zz"):
        assert ec.get(k) == pytest.approx(E, rel=1e-9)
    for k in ("nu_xy", "nu_yz", "nu_xz"):
        assert ec.get(k) == pytest.approx(nu, rel=1e-9, abs=1e-12)
    G = E / (2 * (1 + nu))
    assert ec.G_xy == pytest.approx(G, rel=1e-9)
    ec2 = engineering_constants(scale * C)
    assert ec2.E_xx == pytest.approx(scale * E, rel=1e-9)
    assert ec2.nu_yz == pytest.approx(nu, rel=1e-9, abs=1e-12)


def test_orthotropic_against_inverse():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(6, 6))
    C = A @ A.T + 6 * np.eye(6)
    S = np.linalg.inv(C)
    ec = engineering_constants(C)
    assert ec.E_xx == pytest.approx(1 / S[0, 0])
    assert ec.E_zz == pytest.approx(1 / S[2, 2])
    assert ec.nu_xy == pytest.approx(-S[0, 1] / S[0, 0])
    assert ec.G_yz == pytest.approx(1 / S[4, 4])


def test_voigt_reuss():
    C = isotropic_tensor(STEEL)
    np.testing.assert_array_equal(voigt_bound(STEEL, 0.0), C)
    np.testing.assert_array_equal(voigt_bound(STEEL, 1.0), np.zeros((6, 6)))
    assert voigt_bound(STEEL, 0.729)[5, 5] == pytest.approx(0.271 * 80000.0)
    np.testing.assert_array_equal(reuss_bound(STEEL, 0.1), np.zeros((6, 6)))
    np.testing.assert_allclose(reuss_bound(STEEL, 0.0), C)
    np.testing.assert_array_equal(reuss_bound(STEEL, 1.0), np.zeros((6, 6)))


def test_hashin_shtrikman():
    K, G, C = hashin_shtrikman_upper(STEEL, 0.0)
    assert K == pytest.approx(STEEL.bulk) and G == pytest.approx(STEEL.shear)
    Km, Gm = STEEL.bulk, STEEL.shear
    c = 1e-7
    K, _, _ = hashin_shtrikman_upper(STEEL, c)
    assert K == pytest.approx(Km - c * Km * (3 * Km + 4 * Gm) / (4 * Gm), rel=1e-12)


@given(st.floats(0.0, 0.99), st.floats(-0.5, 0.49))
def test_hs_below_voigt(phi, nu):
    mat = IsotropicMaterial(1000.0, nu)
    V = voigt_bound(mat, phi)
    H = hashin_shtrikman_upper(mat, phi)[2]
    assert np.linalg.eigvalsh(V - H).min() >= -1e-8 * np.linalg.norm(V)


def test_bounds_monotone():
    grid = np.linspace(0, 0.9, 10)
    v = [voigt_bound(STEEL, p)[5, 5] for p in grid]
    h = [hashin_shtrikman_upper(STEEL, p)[2][5, 5] for p in grid]
    assert np.all(np.diff(v) < 0) and np.all(np.diff(h) < 0)


def test_csv_round_trip():
    C = isotropic_tensor(STEEL) + np.arange(36).reshape(6, 6) * 1e-3
    text = tensor_to_csv(C)
    assert text.splitlines()[0] == "# voigt_order=11,22,33,12,23,13"
    np.testing.assert_array_equal(tensor_from_csv(text), C)


def test_symmetrize():
    C = np.eye(6)
    C[0, 1] = 1.0
    Cs, asym = symmetrize(C)
    np.testing.assert_array_equal(Cs, Cs.T)
    assert asym > 0


@given(st.lists(st.floats(-1, 1), min_size=6, max_size=6))
def test_voigt_round_trip(v):
    v = np.array(v)
    np.testing.assert_allclose(voigt_strain(strain_from_voigt(v)), v, atol=1e-15)
    np.testing.assert_allclose(voigt_stress(stress_from_voigt(v)), v, atol=1e-15)
    # engineering shear: sigma:eps equals the Voigt dot product
    eps, sig = strain_from_voigt(v), stress_from_voigt(v[::-1])
    assert np.sum(sig * eps) == pytest.approx(voigt_stress(sig) @ voigt_strain(eps), abs=1e-12)
