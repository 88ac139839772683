import numpy as np
import pytest
from hypothesis import given, strategies as st

from bandloop.spectral import boundary_m, ell_of_z, flow_to_z, stieltjes_semicircle, z_to_flow


def _root_oracle(z):
    r = np.roots([1, z, 1])
    return r[np.argmax(r.imag)]


def test_stieltjes_examples():
    # positive-imaginary roots of m^2 + z m + 1 = 0
    assert abs(stieltjes_semicircle(2j) - 0.41421356237309515j) < 1e-14
    assert abs(stieltjes_semicircle(1.5j) - 0.5j) < 1e-14
    assert abs(stieltjes_semicircle(1e-12j) - 1j) < 1e-9
    with pytest.raises(ValueError):
        stieltjes_semicircle(1.0)


@given(st.floats(-3, 3), st.floats(1e-6, 5))
def test_stieltjes_herglotz_and_residual(x, y):
    z = complex(x, y)
    m = stieltjes_semicircle(z)
    assert m.imag > 0
    assert abs(m * (m + z) + 1) < 1e-12 * max(1, abs(z) ** 2)


def test_stieltjes_against_roots():
    for E in np.linspace(-1.9, 1.9, 10):
        for eta in np.linspace(0.01, 1, 10):
            z = complex(E, eta)
            assert abs(stieltjes_semicircle(z) - _root_oracle(z)) < 1e-12


def test_boundary_m():
    assert boundary_m(0) == 1j
    m1 = boundary_m(1.0)
    assert abs(m1 - complex(-0.5, np.sqrt(3) / 2)) < 1e-15
    assert abs(abs(m1) - 1) < 1e-15
    assert abs(boundary_m(-1.0) - complex(0.5, np.sqrt(3) / 2)) < 1e-15
    for bad in (2.0, -2.5):
        with pytest.raises(ValueError):
            boundary_m(bad)


@given(st.floats(-1.99, 1.99))
def test_boundary_m_invariants(E):
    m = boundary_m(E)
    assert abs(abs(m) - 1) < 1e-14 and m.imag > 0
    assert abs(m * (m + E) + 1) < 1e-12
    assert abs(boundary_m(-E) + m.conjugate()) < 1e-15


def test_flow_to_z_examples():
    p = flow_to_z(0.0, 0.5, 16)
    assert abs(p.z_t - 0.5j) < 1e-15 and abs(p.eta_t - 0.5) < 1e-15
    assert abs(p.ell_t - np.sqrt(2)) < 1e-14
    assert abs(flow_to_z(0.0, 0.25, 16).z_t - 0.75j) < 1e-15
    assert flow_to_z(0.0, 1 - 1e-4, 16).ell_t == 16
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            flow_to_z(0.0, bad, 16)


def test_eta_and_ell_monotone():
    ts = np.linspace(0.01, 0.99, 99)
    for E in (-1.5, 0.0, 0.8):
        eta = [flow_to_z(E, t, 16).eta_t for t in ts]
        ell = [flow_to_z(E, t, 16).ell_t for t in ts]
        assert np.all(np.diff(eta) < 0)
        assert np.all(np.diff(ell) >= 0)
        for t in ts:
            p = flow_to_z(E, t, 16)
            assert p.eta_t == (1 - t) * p.m.imag


def test_z_to_flow_examples():
    E, t, p = z_to_flow(1.5j, 16)
    assert abs(E) < 1e-15 and abs(t - 0.25) < 1e-14
    assert abs(2 * p.z_t - 1.5j) < 1e-14
    E, t, _ = z_to_flow(complex(0.7, 1e-9), 16)
    assert abs(t - 1) < 1e-6 and abs(E - 0.7) < 1e-6
    with pytest.raises(ValueError):
        z_to_flow(complex(1.95, 0.1), 16)
    with pytest.raises(ValueError):
        z_to_flow(complex(0.0, -0.5), 16)


def test_round_trip():
    for E in (-1.5, 0.0, 1.5):
        for t in (0.3, 0.6, 0.9):
            p = flow_to_z(E, t, 16)
            z = p.z_t / np.sqrt(t)
            E2, t2, _ = z_to_flow(z, 16, kappa=0.05)
            assert abs(E2 - E) < 1e-10 and abs(t2 - t) < 1e-10


@given(st.floats(-1.85, 1.85), st.floats(0.01, 1.0))
def test_scaling_relation(x, y):
    z = complex(x, y)
    try:
        E, t, p = z_to_flow(z, 16, kappa=0.1)
    except ValueError:
        return  # t outside (0,1) or E outside the bulk near the strip edge
    assert abs(z - p.z_t / np.sqrt(t)) < 1e-12
    assert abs(stieltjes_semicircle(z) - np.sqrt(t) * p.m) < 1e-12


def test_ell_of_z():
    assert ell_of_z(0.25, 16) == 3.0
    assert ell_of_z(1e-6, 16) == 17.0
