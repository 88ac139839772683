"""Circulant kernel algebra on Z_L.

Every kernel here is a function of ``S_B`` alone, so all of them are
diagonalized by the discrete Fourier transform.  The eigenvalues of ``S_B`` are
``s_k = (1 + 2 cos(2 pi k / L)) / 3``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "CirculantKernel",
    "SumZeroTensor",
    "profile_symbol",
    "profile_kernel",
    "identity_kernel",
    "theta_kernel",
    "evolution_factor",
    "apply_leg",
    "apply_evolution",
    "vartheta",
    "vartheta_tensor",
    "zero_mode",
    "remove_zero_mode",
    "XI_MARGIN",
]

# closest approach of |xi| to 1 that theta_kernel accepts
XI_MARGIN = 1e-8


@lru_cache(maxsize=64)
def _symbol_cached(L: int) -> np.ndarray:
    k = np.arange(L)
    s = (1.0 + 2.0 * np.cos(2.0 * np.pi * k / L)) / 3.0
    s.setflags(write=False)
    return s


def profile_symbol(L: int) -> np.ndarray:
    """Eigenvalues ``s_k`` of ``S_B`` in FFT order."""
    if L < 3:
        raise ValueError("L must be >= 3")
    return _symbol_cached(int(L))


@dataclass(frozen=True)
class CirculantKernel:
    """Translation-invariant kernel ``M[x, y] = k((x - y) mod L)``.

    ``symbol`` holds the Fourier multipliers (``symbol = fft(k)``) and
    ``realization`` the displacement values ``k``.
    """

    L: int
    symbol: np.ndarray
    realization: np.ndarray

    @classmethod
    def from_symbol(cls, symbol) -> "CirculantKernel":
        symbol = np.asarray(symbol, dtype=np.complex128)
        return cls(L=symbol.size, symbol=symbol, realization=np.fft.ifft(symbol))

    @classmethod
    def from_realization(cls, k) -> "CirculantKernel":
        k = np.asarray(k, dtype=np.complex128)
        return cls(L=k.size, symbol=np.fft.fft(k), realization=k)

    def dense(self) -> np.ndarray:
        idx = np.arange(self.L)
        return self.realization[(idx[:, None] - idx[None, :]) % self.L]

    def row_sum(self) -> complex:
        return complex(self.symbol[0])

    def __matmul__(self, other: "CirculantKernel") -> "CirculantKernel":
        if self.L != other.L:
            raise ValueError("size mismatch")
        return CirculantKernel.from_symbol(self.symbol * other.symbol)

    def __sub__(self, other: "CirculantKernel") -> "CirculantKernel":
        return CirculantKernel.from_symbol(self.symbol - other.symbol)

    def __add__(self, other: "CirculantKernel") -> "CirculantKernel":
        return CirculantKernel.from_symbol(self.symbol + other.symbol)

    def scale(self, c: complex) -> "CirculantKernel":
        return CirculantKernel.from_symbol(c * self.symbol)


def identity_kernel(L: int) -> CirculantKernel:
    return CirculantKernel.from_symbol(np.ones(L))


def profile_kernel(L: int) -> CirculantKernel:
    """``S_B`` itself as a circulant."""
    return CirculantKernel.from_symbol(profile_symbol(L))


def _check_xi(xi: complex):
    if abs(xi) >= 1.0 - XI_MARGIN:
        raise ValueError(f"|xi| must be < 1 - {XI_MARGIN:g}, got |xi|={abs(xi)}")


def theta_kernel(xi: complex, L: int) -> CirculantKernel:
    """Propagator ``(1 - xi S_B)^{-1}``."""
    _check_xi(xi)
    return CirculantKernel.from_symbol(1.0 / (1.0 - xi * profile_symbol(L)))


def evolution_factor(s: float, t: float, xi: complex, L: int) -> CirculantKernel:
    """Kernel of ``(1 - s xi S_B)(1 - t xi S_B)^{-1}``."""
    if t >= 1.0:
        raise ValueError(f"t must be < 1, got {t}")
    if not (0.0 <= s <= t):
        raise ValueError(f"need 0 <= s <= t, got s={s}, t={t}")
    if abs(xi) > 1.0 + 1e-12:
        raise ValueError(f"|xi| must be <= 1, got {abs(xi)}")
    _check_xi(t * xi)
    sk = profile_symbol(L)
    return CirculantKernel.from_symbol((1.0 - s * xi * sk) / (1.0 - t * xi * sk))


def apply_leg(kernel: CirculantKernel, A: np.ndarray, axis: int) -> np.ndarray:
    """Contract ``kernel`` into leg ``axis`` of ``A``: ``sum_b M[a, b] A[..., b, ...]``."""
    M = kernel.dense()
    out = np.tensordot(M, A, axes=([1], [axis]))
    return np.moveaxis(out, 0, axis)


def _leg_xis(sigma, m: complex) -> list:
    ms = [m if s > 0 else np.conj(m) for s in sigma]
    n = len(ms)
    return [ms[i] * ms[(i + 1) % n] for i in range(n)]


def apply_evolution(s: float, t: float, sigma, A: np.ndarray, m: complex) -> np.ndarray:
    """Apply ``U_{s,t,sigma}``: leg ``i`` gets the factor with ``xi_i = m_i m_{i+1}``.

    ``m`` is the boundary value ``m^(E)``; charge -1 uses its conjugate.
    """
    A = np.asarray(A)
    if A.ndim != len(sigma):
        raise ValueError(f"tensor has {A.ndim} legs but sigma has length {len(sigma)}")
    L = A.shape[0]
    out = A.astype(np.complex128)
    for i, xi in enumerate(_leg_xis(sigma, m)):
        out = apply_leg(evolution_factor(s, t, xi, L), out, i)
    return out


def vartheta(t: float, n: int, L: int, a) -> complex:
    """``(1 - t)^{n-1} prod_{i >= 2} Theta_t[a_1, a_i]``."""
    if n < 2 or len(a) != n:
        raise ValueError("need n >= 2 and len(a) == n")
    k = theta_kernel(t, L).realization
    val = (1.0 - t) ** (n - 1)
    for ai in a[1:]:
        val *= k[(a[0] - ai) % L]
    return complex(val)


def vartheta_tensor(t: float, n: int, L: int) -> np.ndarray:
    """Full ``vartheta`` tensor over ``Z_L^n``."""
    T = theta_kernel(t, L).dense() * (1.0 - t)
    out = np.ones((L,), dtype=np.complex128)
    for _ in range(n - 1):
        out = out[..., None] * T.reshape((L,) + (1,) * (out.ndim - 1) + (L,))
    return out


def zero_mode(A: np.ndarray) -> np.ndarray:
    """``(P o A)_{a_1} = sum_{a_2..a_n} A_a``."""
    return A.reshape(A.shape[0], -1).sum(axis=1)


@dataclass(frozen=True)
class SumZeroTensor:
    n: int
    values: np.ndarray
    verified: bool


def remove_zero_mode(t: float, A: np.ndarray, tol: float = 1e-10) -> SumZeroTensor:
    """``Q_t A = A - (P o A) vartheta``, flagged once the zero mode is gone."""
    A = np.asarray(A, dtype=np.complex128)
    n, L = A.ndim, A.shape[0]
    if n < 2:
        raise ValueError("need at least two legs")
    th = vartheta_tensor(t, n, L)
    P = zero_mode(A)
    Q = A - P.reshape((L,) + (1,) * (n - 1)) * th
    scale = max(np.abs(A).max(), np.finfo(float).tiny)
    ok = bool(np.abs(zero_mode(Q)).max() <= tol * scale)
    return SumZeroTensor(n=n, values=Q, verified=ok)
