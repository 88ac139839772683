"""Identity checkers and Monte-Carlo observables.

Exact identities (Ward, sum-zero, loop/chain consistency) return residuals.
Statistical observables are computed per sample and reduced in sample-index
order, so the worker count never changes a result.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
import math

import numpy as np
from threadpoolctl import threadpool_limits

from .loops import (DecompositionError, LoopSpec, ResolventCache, eigendecompose, g_loop,
                    parse_sigma, two_loop_matrix)
from .model import BandModel, build_model, sample_hamiltonian
from .primitive import k_loop, k_tensor, sum_zero_value
from .propagator import theta_kernel
from .spectral import DEFAULT_KAPPA, boundary_m, flow_to_z, stieltjes_semicircle, z_to_flow

__all__ = [
    "SampleFailure",
    "ErrorScalingRecord",
    "EigenvectorStats",
    "map_samples",
    "summarize",
    "loglog_fit",
    "ward_residual",
    "ward_residual_k",
    "ward_residual_loop",
    "resolvent_ward_residual",
    "sum_zero_scan",
    "loop_error_sample",
    "loop_vs_k_stats",
    "diffusion_prediction",
    "diffusion_matrix",
    "flow_point",
    "quantum_diffusion_residual",
    "local_law_residuals",
    "eigenvector_stats",
    "que_variance",
]


# ---------------------------------------------------------------- Monte-Carlo plumbing

@dataclass
class SampleFailure:
    index: int
    error: str


def map_samples(fn, model: BandModel, seed: int, n_samples: int, threads: int = 1):
    """Run ``fn(cache, index)`` on samples ``0..n_samples-1``.

    Each sample is drawn from its own ``(seed, index)`` stream and BLAS is pinned
    to one thread, so results do not depend on ``threads``.

    Returns
    -------
    (results, failures): results ordered by index (failed samples omitted).
    """

    def one(i):
        try:
            with threadpool_limits(limits=1):
                cache = eigendecompose(sample_hamiltonian(model, seed, i))
                return i, fn(cache, i), None
        except (DecompositionError, FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
            return i, None, SampleFailure(i, f"{type(exc).__name__}: {exc}")

    idx = range(int(n_samples))
    if threads <= 1:
        out = [one(i) for i in idx]
    else:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            out = list(pool.map(one, idx))
    out.sort(key=lambda r: r[0])
    results = [r for _, r, f in out if f is None]
    failures = [f for _, _, f in out if f is not None]
    return results, failures


def summarize(values) -> dict:
    """Mean, max, standard error and count of a list of reals."""
    v = np.asarray(values, dtype=float)
    k = v.size
    if k == 0:
        return {"mean": math.nan, "max": math.nan, "stderr": math.nan, "median": math.nan, "samples": 0}
    se = float(v.std(ddof=1) / np.sqrt(k)) if k > 1 else math.nan
    return {"mean": float(v.mean()), "max": float(v.max()), "stderr": se,
            "median": float(np.median(v)), "samples": int(k)}


def loglog_fit(x, y):
    """Least-squares slope of ``log y`` against ``log x``; returns (slope, intercept, rms residual)."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    coef, res, *_ = np.polyfit(lx, ly, 1, full=True)
    rms = float(np.sqrt(res[0] / lx.size)) if res.size else 0.0
    return float(coef[0]), float(coef[1]), rms


# ---------------------------------------------------------------- exact identities

def _ward_words(sigma, a_prefix):
    sigma = parse_sigma(sigma)
    if len(sigma) < 2 or sigma[0] != 1 or sigma[-1] != -1:
        raise ValueError("Ward identity needs sigma_1 = + and sigma_n = -")
    if len(a_prefix) != len(sigma) - 1:
        raise ValueError("a-prefix must have length n - 1")
    sp = (1,) + sigma[1:-1]
    sm = (-1,) + sigma[1:-1]
    return sigma, tuple(a_prefix), sp, sm


def _rel(lhs, rhs):
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)


def ward_residual_k(model: BandModel, t: float, sigma, a_prefix, E: float = 0.0) -> float:
    """Relative residual of ``sum_{a_n} K = (K^{s+} - K^{s-}) / (2 i W eta_t)``."""
    sigma, a, sp, sm = _ward_words(sigma, a_prefix)
    pt = flow_to_z(E, t, model.L)
    lhs = sum(k_loop(model, t, sigma, a + (b,), E) for b in range(model.L))
    rhs = (k_loop(model, t, sp, a, E) - k_loop(model, t, sm, a, E)) / (2j * model.W * pt.eta_t)
    return _rel(lhs, rhs)


def ward_residual_loop(cache: ResolventCache, point, sigma, a_prefix) -> float:
    """Same identity for G-loops of one sample at ``point.z_t``."""
    sigma, a, sp, sm = _ward_words(sigma, a_prefix)
    model = cache.model
    eta = point.z_t.imag
    lhs = sum(g_loop(cache, point, LoopSpec(sigma, a + (b,))) for b in range(model.L))
    rhs = (g_loop(cache, point, LoopSpec(sp, a)) - g_loop(cache, point, LoopSpec(sm, a))) / (2j * model.W * eta)
    return _rel(lhs, rhs)


def ward_residual(target, t, sigma, a_prefix, point=None, E: float = 0.0) -> float:
    """Dispatch on ``target``: a ``ResolventCache`` (loop) or a ``BandModel`` (primitive K)."""
    if isinstance(target, ResolventCache):
        if point is None:
            point = flow_to_z(E, t, target.model.L)
        return ward_residual_loop(target, point, sigma, a_prefix)
    return ward_residual_k(target, t, sigma, a_prefix, E)


def resolvent_ward_residual(cache: ResolventCache, z: complex) -> float:
    """``max |G G^dagger - (G - G^dagger)/(2 i eta)|`` relative to ``max |G G^dagger|``."""
    G = cache.resolvent(z)
    lhs = G @ G.conj().T
    rhs = (G - G.conj().T) / (2j * complex(z).imag)
    return float(np.abs(lhs - rhs).max() / np.abs(lhs).max())


def sum_zero_scan(t_grid, L: int, E: float = 0.0, n: int = 4):
    """``L^{-1} sum_d Sigma_empty`` for alternating charges, per ``t``.

    Returns
    -------
    (rows, C): rows of ``(t, value, closed)`` and the fitted constant
    ``C = max |value| / (1 - t)``.
    """
    if n != 4:
        raise ValueError("the closed sum-zero value is implemented for n = 4")
    sigma = (1, -1, 1, -1)
    m2 = boundary_m(E) ** 2
    rows = []
    for t in t_grid:
        v = sum_zero_value(t, sigma, L, E) if t > 0 else 1.0 + 0j
        closed = (1 - t * t) / abs(1 - t * m2) ** 2
        rows.append((float(t), complex(v), float(closed)))
    C = max(abs(v) / (1 - t) for t, v, _ in rows)
    return rows, float(C)


# ---------------------------------------------------------------- loop vs K

@dataclass
class ErrorScalingRecord:
    sigma: str
    points: list = field(default_factory=list)
    slope: float = math.nan
    intercept: float = math.nan
    fit_residual: float = math.nan

    def to_dict(self):
        return asdict(self)


def flow_point(z: complex, L: int, kappa: float = DEFAULT_KAPPA):
    """``(E', t, SpectralPoint)`` for a spectral parameter ``z``."""
    return z_to_flow(z, L, kappa)


def loop_error_sample(cache: ResolventCache, point, sigma, K=None) -> float:
    """``max_a |L - K|`` for one sample (n = 1 or 2), loops of ``sqrt(t) H`` at ``z_t``."""
    sigma = parse_sigma(sigma)
    model = cache.model
    ct = cache.scaled(point.t) if cache.t == 1.0 else cache
    if len(sigma) == 1:
        W, L = model.W, model.L
        G = ct.resolvent(point.z_of(sigma[0]))
        pt = np.diagonal(G).reshape(L, W).mean(axis=1)
        return float(np.abs(pt - point.m_of(sigma[0])).max())
    if len(sigma) == 2:
        if K is None:
            K = k_tensor(model, point.t, sigma, point.E)
        M = two_loop_matrix(ct, point.z_t, sigma)
        return float(np.abs(M - K).max())
    raise ValueError("Monte-Carlo loop errors are implemented for n <= 2")


def loop_vs_k_stats(Ws, L: int, z: complex, sigma, n_samples: int, seed: int, threads: int = 1,
                    kappa: float = DEFAULT_KAPPA) -> ErrorScalingRecord:
    """Mean of ``max_a |L - K|`` against ``(W ell_t eta_t)^{-n}`` over a W grid."""
    sigma = parse_sigma(sigma)
    n = len(sigma)
    E, t, point = flow_point(z, L, kappa)
    rec = ErrorScalingRecord(sigma="".join("+" if s > 0 else "-" for s in sigma))
    xs, ys = [], []
    for W in Ws:
        model = build_model(W, L)
        K = k_tensor(model, t, sigma, E) if n == 2 else None
        vals, fails = map_samples(lambda c, i: loop_error_sample(c, point, sigma, K), model, seed, n_samples, threads)
        s = summarize(vals)
        x = W * point.ell_t * point.eta_t
        scale = x ** (-n)
        rec.points.append({
            "W": W, "L": L, "E": float(z.real), "eta": float(z.imag), "t": t, "E_flow": E,
            "eta_t": point.eta_t, "ell": point.ell_t, "ell_z": point.ell_z, "scale": scale,
            "mean_err": s["mean"], "max_err": s["max"], "stderr": s["stderr"], "samples": s["samples"],
            "ratio": s["mean"] / scale, "seed": seed, "failed": [asdict(f) for f in fails],
        })
        xs.append(x)
        ys.append(s["mean"])
    if len(xs) >= 2:
        rec.slope, rec.intercept, rec.fit_residual = loglog_fit(xs, ys)
    return rec


# ---------------------------------------------------------------- Monte-Carlo observables

def diffusion_prediction(z: complex, L: int, W: int, kind: str = "adjoint") -> np.ndarray:
    """``W^{-1} [x / (1 - x S_B)]`` with ``x = |m|^2`` (adjoint) or ``m^2``."""
    m = stieltjes_semicircle(z)
    x = abs(m) ** 2 if kind == "adjoint" else m * m
    return (x * theta_kernel(x, L).dense()) / W


def diffusion_matrix(cache: ResolventCache, z: complex, kind: str = "adjoint") -> np.ndarray:
    """``D[a, b] = tr(G E_a G^# E_b)`` with ``G^# = G^dagger`` or ``G``."""
    sigma = (1, -1) if kind == "adjoint" else (1, 1)
    return two_loop_matrix(cache, z, sigma)


def quantum_diffusion_residual(cache: ResolventCache, z: complex, model: BandModel | None = None,
                               kind: str = "adjoint"):
    """Residual of the 2-loop against its diffusion prediction; returns (max, matrix)."""
    model = model or cache.model
    R = diffusion_matrix(cache, z, kind) - diffusion_prediction(z, model.L, model.W, kind)
    return float(np.abs(R).max()), R


def local_law_residuals(cache: ResolventCache, z: complex, kappa: float = DEFAULT_KAPPA) -> dict:
    """Entrywise ``max |G - m|`` and block partial-trace deviations, with their scales."""
    model = cache.model
    G = cache.resolvent(z)
    m = stieltjes_semicircle(z)
    D = G - m * np.eye(model.N)
    entry = float(np.abs(D).max())
    partial = np.diagonal(G).reshape(model.L, model.W).mean(axis=1) - m
    _, _, pt = z_to_flow(z, model.L, kappa)
    x = model.W * pt.ell_t * complex(z).imag
    return {"entry_max": entry, "partial": partial, "partial_max": float(np.abs(partial).max()),
            "entry_scale": x ** -0.5, "partial_scale": 1.0 / x, "ell": pt.ell_t, "ell_z": pt.ell_z}


@dataclass
class EigenvectorStats:
    eigenvalues: np.ndarray
    sup_norm: np.ndarray        # N |psi_k|_inf^2, every k
    bulk: np.ndarray            # mask |lambda_k| <= 2 - kappa
    block_mass: np.ndarray      # (N, L): sum_{x in I_a} |psi_k(x)|^2
    window: np.ndarray          # eigenvalue indices in the QUE window
    widen: float                # factor the window was widened by
    que: np.ndarray             # (L, |window|, |window|): N psi_i^* (E_a - 1/N) psi_j


class EmptyWindowError(ValueError):
    pass


def eigenvector_stats(cache: ResolventCache, kappa: float = DEFAULT_KAPPA, E: float = 0.0,
                      c: float = 1.0, min_count: int = 5) -> EigenvectorStats:
    model = cache.model
    N, W, L = model.N, model.W, model.L
    lam, U = cache.eigenvalues, cache.eigenvectors
    P = np.abs(U) ** 2
    sup = N * P.max(axis=0)
    bulk = np.abs(lam) <= 2 - kappa
    if not bulk.any():
        raise EmptyWindowError("no eigenvalue in the bulk")
    mass = P.reshape(L, W, N).sum(axis=1).T
    width = c * (W * W / N) ** (1.0 / 3.0) / N
    widen = 1.0
    win = np.flatnonzero(np.abs(lam - E) <= width)
    while win.size < min_count:
        widen *= 2.0
        win = np.flatnonzero(np.abs(lam - E) <= width * widen)
    Uw = U[:, win]
    que = np.empty((L, win.size, win.size), dtype=np.complex128)
    for a in range(L):
        sl = model.block_slice(a)
        que[a] = (N / W) * (Uw[sl].conj().T @ Uw[sl]) - np.eye(win.size)
    return EigenvectorStats(eigenvalues=lam, sup_norm=sup, bulk=bulk, block_mass=mass,
                            window=win, widen=widen, que=que)


def que_variance(stats: EigenvectorStats, L: int) -> float:
    """Variance over bulk ``k`` of ``L * mass_a(k) - 1``, averaged over blocks ``a``."""
    obs = L * stats.block_mass[stats.bulk] - 1.0
    return float(obs.var(axis=0).mean())
