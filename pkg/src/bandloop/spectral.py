"""Semicircle Stieltjes transform and the (E, t) <-> z change of variables."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SpectralPoint",
    "stieltjes_semicircle",
    "boundary_m",
    "flow_to_z",
    "z_to_flow",
    "ell_of_z",
    "DEFAULT_KAPPA",
]

DEFAULT_KAPPA = 0.1


def stieltjes_semicircle(z: complex) -> complex:
    """Root of ``m (m + z) = -1`` with ``Im m > 0``."""
    z = complex(z)
    if not z.imag > 0:
        raise ValueError(f"Im z must be positive, got {z}")
    r = np.sqrt(complex(z * z - 4.0))
    m = (-z + r) / 2.0
    # pick the Herglotz root regardless of which branch sqrt returned
    if m.imag <= 0:
        m = (-z - r) / 2.0
    return complex(m)


def boundary_m(E: float) -> complex:
    """``m^(E) = (-E + i sqrt(4 - E^2)) / 2``, the boundary value on the bulk."""
    E = float(E)
    if abs(E) >= 2.0:
        raise ValueError(f"|E| must be < 2, got {E}")
    return complex(-E / 2.0, np.sqrt(4.0 - E * E) / 2.0)


def ell_of_z(eta: float, L: int) -> float:
    """Diffusion length ``min(eta^{-1/2}, L) + 1``."""
    return min(eta ** -0.5, L) + 1.0


@dataclass(frozen=True)
class SpectralPoint:
    E: float
    t: float
    L: int
    m: complex  # m^(E), |m| = 1
    z_t: complex

    @property
    def eta_t(self) -> float:
        return (1.0 - self.t) * self.m.imag

    @property
    def ell_t(self) -> float:
        return min(abs(1.0 - self.t) ** -0.5, float(self.L))

    @property
    def ell_z(self) -> float:
        return ell_of_z(self.eta_t, self.L)

    def m_of(self, sigma) -> complex:
        """``m`` for charge +1 and its conjugate for charge -1."""
        return self.m if sigma > 0 else self.m.conjugate()

    def z_of(self, sigma) -> complex:
        return self.z_t if sigma > 0 else self.z_t.conjugate()


def flow_to_z(E: float, t: float, L: int) -> SpectralPoint:
    """``z_t = E + (1 - t) m^(E)``."""
    if not (0.0 < t < 1.0):
        raise ValueError(f"t must lie in (0, 1), got {t}")
    m = boundary_m(E)
    return SpectralPoint(E=float(E), t=float(t), L=int(L), m=m, z_t=complex(E + (1.0 - t) * m))


def z_to_flow(z: complex, L: int, kappa: float = DEFAULT_KAPPA, check: bool = True):
    """Invert the flow: find ``(E, t)`` with ``z = t^{-1/2} z_t``.

    Uses ``sqrt(t) = |m_sc(z)|`` and ``E = -2 Re m_sc(z) / |m_sc(z)|``.

    Returns
    -------
    (E, t, SpectralPoint)
    """
    z = complex(z)
    if not z.imag > 0.0 or abs(z.real) > 2.0 - kappa:
        raise ValueError(f"z={z} outside the bulk strip (kappa={kappa})")
    msc = stieltjes_semicircle(z)
    r = abs(msc)
    t = r * r
    if not (0.0 < t < 1.0):
        raise ValueError(f"z={z} maps to t={t} outside (0, 1)")
    E = -2.0 * msc.real / r
    pt = flow_to_z(E, t, L)
    if check:
        if abs(z - pt.z_t / np.sqrt(t)) > 1e-12 * max(1.0, abs(z)):
            raise ArithmeticError("flow inversion failed to reproduce z")
        if abs(msc - np.sqrt(t) * pt.m) > 1e-12:
            raise ArithmeticError("m_sc(z) != sqrt(t) m^(E)")
    return E, t, pt
