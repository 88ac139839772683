import math

import numpy as np
import pytest

from bandloop.diagnostics import (EmptyWindowError, diffusion_matrix, diffusion_prediction, eigenvector_stats,
                                  local_law_residuals, loglog_fit, loop_error_sample, map_samples,
                                  que_variance, resolvent_ward_residual, summarize, sum_zero_scan,
                                  ward_residual, ward_residual_k, ward_residual_loop)
from bandloop.loops import eigendecompose
from bandloop.model import build_model, sample_hamiltonian
from bandloop.spectral import flow_to_z, stieltjes_semicircle


@pytest.fixture(scope="module")
def cache():
    model = build_model(6, 5)
    return eigendecompose(sample_hamiltonian(model, 11, 0))


def test_summarize_and_fit():
    s = summarize([1.0, 2.0, 3.0, 10.0])
    assert s["mean"] == 4.0 and s["max"] == 10.0 and s["median"] == 2.5 and s["samples"] == 4
    assert abs(s["stderr"] - np.std([1, 2, 3, 10], ddof=1) / 2) < 1e-15
    assert summarize([])["samples"] == 0 and math.isnan(summarize([])["mean"])
    x = np.array([2.0, 4.0, 8.0, 16.0])
    slope, icpt, rms = loglog_fit(x, 3 * x ** -1.5)
    assert abs(slope + 1.5) < 1e-12 and abs(icpt - np.log(3)) < 1e-12 and rms < 1e-12


@pytest.mark.parametrize("sigma,a", [("+-", (0,)), ("++-", (1, 3)), ("+--", (2, 2)), ("+-+-", (0, 1, 4))])
def test_loop_ward_exact(cache, sigma, a):
    pt = flow_to_z(0.3, 0.7, 5)
    assert ward_residual_loop(cache.scaled(0.7), pt, sigma, a) < 1e-10
    assert ward_residual(cache.scaled(0.7), 0.7, sigma, a, point=pt) < 1e-10


@pytest.mark.parametrize("sigma,a", [("+-", (0,)), ("++-", (1, 3)), ("+-+-", (0, 1, 4))])
def test_k_ward_exact(sigma, a):
    model = build_model(6, 5)
    assert ward_residual_k(model, 0.8, sigma, a, 0.3) < 1e-10
    assert ward_residual(model, 0.8, sigma, a, E=0.3) < 1e-10


def test_ward_rejects_bad_words(cache):
    with pytest.raises(ValueError):
        ward_residual_k(build_model(2, 4), 0.5, "++", (0,))
    with pytest.raises(ValueError):
        ward_residual_k(build_model(2, 4), 0.5, "+-", (0, 1))


def test_resolvent_ward(cache):
    for z in (0.3 + 0.01j, -1.2 + 0.5j):
        assert resolvent_ward_residual(cache, z) < 1e-10


def test_sum_zero_scan_values():
    rows, C = sum_zero_scan([0.0, 0.5, 0.9], 16, 0.0)
    assert rows[0][1] == 1.0
    # E = 0: m^2 = -1, closed value (1 - t^2) / (1 + t)^2 = (1 - t) / (1 + t)
    assert abs(rows[2][1] - 0.19 / 3.61) < 1e-12
    assert abs(rows[1][2] - 1 / 3) < 1e-12
    assert C <= 2.0
    with pytest.raises(ValueError):
        sum_zero_scan([0.5], 16, n=6)


@pytest.mark.parametrize("z", [1j, 0.5 + 0.8j])
def test_local_law_at_zero_matrix(z):
    model = build_model(3, 4)
    c = eigendecompose(np.zeros((12, 12)), model)
    r = local_law_residuals(c, z)
    exp = abs(-1 / z - stieltjes_semicircle(z))
    assert abs(r["entry_max"] - exp) < 1e-14 and abs(r["partial_max"] - exp) < 1e-14
    assert r["partial_scale"] == pytest.approx(r["entry_scale"] ** 2, rel=1e-14)


def test_loop_error_zero_for_exact_loops(cache):
    pt = flow_to_z(0.0, 0.5, 5)
    ct = cache.scaled(0.5)
    G = ct.resolvent(pt.z_t)
    err1 = loop_error_sample(cache, pt, "+")
    assert abs(err1 - np.abs(np.diagonal(G).reshape(5, 6).mean(1) - pt.m).max()) < 1e-14
    M = diffusion_matrix(ct, pt.z_t)
    assert loop_error_sample(cache, pt, "+-", K=M) < 1e-14
    with pytest.raises(ValueError):
        loop_error_sample(cache, pt, "+-+")


def test_diffusion_prediction_row_sum():
    # row sums of x Theta(x) / W are x / (W (1 - x))
    z = 0.2 + 0.05j
    m = stieltjes_semicircle(z)
    P = diffusion_prediction(z, 8, 4)
    x = abs(m) ** 2
    assert np.allclose(P.sum(axis=1), x / (1 - x) / 4, rtol=1e-12)


def test_eigenvector_stats(cache):
    st_ = eigenvector_stats(cache, 0.1, 0.0)
    np.testing.assert_allclose(st_.block_mass.sum(axis=1), 1.0, atol=1e-12)
    assert (st_.sup_norm >= 1 - 1e-12).all()
    assert st_.window.size >= 5
    # sum_a L E_a = L I, so the block observables sum to zero
    np.testing.assert_allclose(st_.que.sum(axis=0), 0.0, atol=1e-10)
    assert que_variance(st_, cache.model.L) >= 0
    with pytest.raises(EmptyWindowError):
        eigenvector_stats(cache, kappa=1.99)


def test_map_samples_order_and_threads():
    model = build_model(3, 4)
    f = lambda c, i: (i, float(c.eigenvalues[0]))
    r1, f1 = map_samples(f, model, 5, 6, threads=1)
    r3, f3 = map_samples(f, model, 5, 6, threads=3)
    assert r1 == r3 and [r[0] for r in r1] == list(range(6)) and not f1 and not f3


def test_map_samples_quarantines_failures():
    model = build_model(3, 4)

    def f(c, i):
        if i == 2:
            raise ArithmeticError("boom")
        return i

    res, fails = map_samples(f, model, 5, 4)
    assert res == [0, 1, 3] and len(fails) == 1 and fails[0].index == 2
