from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bandloop.loops import (LoopSpec, cut_glue, eigendecompose, g_chain_entry, g_loop, parse_sigma,
                            resolvent_block, two_loop_matrix)
from bandloop.model import build_model, sample_hamiltonian, scale_to_time
from bandloop.spectral import flow_to_z


@pytest.fixture(scope="module")
def small():
    model = build_model(4, 6)
    pt = flow_to_z(0.4, 0.6, model.L)
    cache = eigendecompose(scale_to_time(sample_hamiltonian(model, 2024), pt.t))
    return model, pt, cache


def _dense_loop(cache, pt, spec):
    """Oracle: explicit N x N operator product with diagonal E_a."""
    model = cache.model
    H = cache.H
    G = np.linalg.inv(H - pt.z_t * np.eye(model.N))
    out = np.eye(model.N, dtype=complex)
    for s, a in zip(spec.sigma, spec.a):
        Gs = G if s > 0 else G.conj().T
        out = out @ Gs @ np.diag(model.block_projector(a))
    return np.trace(out)


def test_eigendecompose_trivial():
    model = build_model(2, 3)
    c = eigendecompose(np.zeros((6, 6)), model)
    assert np.all(c.eigenvalues == 0)
    d = np.array([3.0, 1.0, 2.0, 6.0, 5.0, 4.0])
    c = eigendecompose(np.diag(d), model)
    np.testing.assert_array_equal(c.eigenvalues, np.sort(d))
    with pytest.raises(ValueError):
        eigendecompose(np.zeros((6, 6)))


def test_eigendecompose_reconstruct():
    model = build_model(8, 8)
    s = sample_hamiltonian(model, 1)
    c = eigendecompose(s)
    U, lam = c.eigenvectors, c.eigenvalues
    assert np.abs(U.conj().T @ U - np.eye(64)).max() < 1e-10 * 64
    assert np.abs((U * lam) @ U.conj().T - s.H).max() < 1e-9 * np.abs(s.H).max()
    assert np.all(np.diff(lam) >= 0)


def test_resolvent_block_zero_hamiltonian():
    model = build_model(3, 4)
    c = eigendecompose(np.zeros((12, 12)), model)
    np.testing.assert_allclose(resolvent_block(c, 1j, 1, 1), 1j * np.eye(3), atol=1e-15)
    np.testing.assert_allclose(resolvent_block(c, 1j, 1, 2), 0, atol=1e-15)
    with pytest.raises(ValueError):
        resolvent_block(c, 0.5, 0, 0)


def test_resolvent_ward_and_duality():
    model = build_model(8, 8)
    c = eigendecompose(sample_hamiltonian(model, 5))
    z = 0.3 + 0.05j
    G = c.resolvent(z)
    assert np.abs(G @ G.conj().T - (G - G.conj().T) / (2j * z.imag)).max() < 1e-9
    for a, b in [(0, 0), (1, 2), (7, 0)]:
        np.testing.assert_allclose(resolvent_block(c, np.conj(z), a, b), resolvent_block(c, z, b, a).conj().T,
                                   atol=1e-12)
        np.testing.assert_allclose(resolvent_block(c, z, a, b), G[model.block_slice(a), model.block_slice(b)],
                                   atol=1e-12)


def test_resolvent_identity_large():
    model = build_model(64, 8)
    pt = flow_to_z(0.0, 0.8, model.L)
    s = scale_to_time(sample_hamiltonian(model, 3), pt.t)
    c = eigendecompose(s)
    G = c.resolvent(pt.z_t)
    assert np.abs((s.H - pt.z_t * np.eye(model.N)) @ G - np.eye(model.N)).max() < 1e-9


def test_cache_eviction():
    model = build_model(2, 3)
    c = eigendecompose(sample_hamiltonian(model, 0), max_cached=2)
    for z in (1j, 2j, 3j):
        c.resolvent(z)
    assert list(c._g) == [2j, 3j]
    np.testing.assert_allclose(c.resolvent(-3j), c.resolvent(3j).conj().T)


def test_g_loop_zero_hamiltonian():
    model = build_model(3, 4)
    c = eigendecompose(np.zeros((12, 12)), model)
    pt = flow_to_z(0.5, 0.4, 4)
    assert abs(g_loop(c, pt, LoopSpec("+", (2,))) - (-1 / pt.z_t)) < 1e-14
    assert abs(g_loop(c, pt, LoopSpec("-", (2,))) - (-1 / np.conj(pt.z_t))) < 1e-14


def test_g_loop_against_dense(small):
    model, pt, cache = small
    for sigma, a in [("+", (1,)), ("+-", (0, 3)), ("++-", (1, 1, 5)), ("+--+", (2, 0, 0, 1))]:
        spec = LoopSpec(sigma, a)
        assert abs(g_loop(cache, pt, spec) - _dense_loop(cache, pt, spec)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("+-"), st.integers(0, 5)), min_size=1, max_size=5), st.integers(0, 4))
def test_cyclic_and_conjugation(small, word, r):
    model, pt, cache = small
    spec = LoopSpec("".join(w[0] for w in word), tuple(w[1] for w in word))
    v = g_loop(cache, pt, spec)
    scale = max(abs(v), 1e-3)
    assert abs(g_loop(cache, pt, spec.rotate(r)) - v) < 1e-12 * scale
    assert abs(g_loop(cache, pt, spec.adjoint()) - np.conj(v)) < 1e-12 * scale


def test_partial_trace(small):
    model, pt, cache = small
    G = cache.resolvent(pt.z_t)
    for a in range(model.L):
        sl = model.block_slice(a)
        assert abs(g_loop(cache, pt, LoopSpec("+", (a,))) - np.trace(G[sl, sl]) / model.W) < 1e-14


def test_loop_ward_per_sample(small):
    model, pt, cache = small
    eta = pt.z_t.imag
    for n in (2, 3, 4):
        for mid in product((1, -1), repeat=n - 2):
            sigma = (1,) + mid + (-1,)
            sp, sm = (1,) + mid, (-1,) + mid
            for pre in [(0,) * (n - 1), tuple(range(n - 1)), (5,) * (n - 1)]:
                lhs = sum(g_loop(cache, pt, LoopSpec(sigma, pre + (b,))) for b in range(model.L))
                rhs = (g_loop(cache, pt, LoopSpec(sp, pre)) - g_loop(cache, pt, LoopSpec(sm, pre))) / (
                    2j * model.W * eta)
                assert abs(lhs - rhs) < 1e-9 * abs(lhs)


def test_two_loop_matrix(small):
    model, pt, cache = small
    for sigma in ("+-", "++", "-+"):
        M = two_loop_matrix(cache, pt.z_t, sigma)
        for a, b in [(0, 0), (1, 4), (5, 2)]:
            assert abs(M[a, b] - g_loop(cache, pt, LoopSpec(sigma, (a, b)))) < 1e-14


def test_chain_entries(small):
    model, pt, cache = small
    G = cache.resolvent(pt.z_t)
    assert g_chain_entry(cache, pt, LoopSpec("+", (), chain=True), 3, 7) == G[3, 7]
    chain = LoopSpec("+-+", (1, 2), chain=True)
    for b in (0, 2):
        sl = model.block_slice(b)
        tr = sum(g_chain_entry(cache, pt, chain, i, i) for i in range(sl.start, sl.stop)) / model.W
        assert abs(tr - g_loop(cache, pt, LoopSpec("+-+", (1, 2, b)))) < 1e-12
    # reversed, charge-flipped chain gives the adjoint
    rev = LoopSpec("-+-", (2, 1), chain=True)
    for i, j in [(0, 5), (11, 2)]:
        assert abs(g_chain_entry(cache, pt, rev, i, j) - np.conj(g_chain_entry(cache, pt, chain, j, i))) < 1e-12
    with pytest.raises(ValueError):
        g_chain_entry(cache, pt, LoopSpec("+-", (1, 2)), 0, 0)
    with pytest.raises(IndexError):
        g_chain_entry(cache, pt, chain, 0, model.N)


def test_cut_glue_examples():
    s4 = LoopSpec("+-+-", (10, 11, 12, 13))
    r = cut_glue(s4, "first", 2, b=7)
    assert r.sigma == parse_sigma("+--+-") and r.a == (10, 7, 11, 12, 13)
    s5 = LoopSpec("+-++-", (10, 11, 12, 13, 14))
    left = cut_glue(s5, "left", 3, 5, b=7)
    assert left.sigma == parse_sigma("+-+-") and left.a == (10, 11, 7, 14)
    right = cut_glue(s5, "right", 3, 5, b=7)
    assert right.sigma == parse_sigma("++-") and right.a == (12, 13, 7)
    for bad in [("first", 0, None), ("first", 5, None), ("left", 3, 3), ("right", 0, 2), ("right", 2, 5)]:
        with pytest.raises(ValueError):
            cut_glue(s4, bad[0], bad[1], bad[2])
    with pytest.raises(ValueError):
        cut_glue(s4, "middle", 1, 2)


@given(st.integers(2, 8), st.data())
def test_cut_glue_lengths(n, data):
    spec = LoopSpec((1,) * n, tuple(range(n)))
    k = data.draw(st.integers(1, n - 1))
    l = data.draw(st.integers(k + 1, n))
    left, right = cut_glue(spec, "left", k, l, b=99), cut_glue(spec, "right", k, l, b=99)
    assert left.n == k + n - l + 1 and right.n == l - k + 1
    assert left.n >= 2 and right.n >= 2
    assert left.a[-1] == n - 1 or l == n and left.a[-1] == n - 1
    assert right.a[-1] == 99
    assert cut_glue(spec, "first", k, b=99).n == n + 1


def test_loopspec_validation():
    with pytest.raises(ValueError):
        LoopSpec("+-", (1,))
    with pytest.raises(ValueError):
        LoopSpec("+x", (1, 2))
    with pytest.raises(ValueError):
        LoopSpec("+-", (1, 9)).validate(6)
