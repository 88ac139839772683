"""Band-block geometry, variance profile and Gaussian sampling.

The Hamiltonian lives on Z_N with N = W*L, cut into L blocks of size W.
Entry variances are ``S = S_B (x) S_W`` with ``S_B[a, b] = 1/3`` for blocks at
cyclic distance <= 1 and ``S_W = 1/W`` everywhere, so every row of S sums to 1.

Blocks are 0-based here: block ``a`` covers indices ``a*W, ..., (a+1)*W - 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BandModel",
    "HermitianSample",
    "build_model",
    "variance_entry",
    "sample_rng",
    "sample_hamiltonian",
    "scale_to_time",
]


@dataclass(frozen=True)
class BandModel:
    W: int
    L: int
    N: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "N", self.W * self.L)

    @property
    def small_ring(self) -> bool:
        """True for L in {3, 4}, where neighbour wraparound makes every block close."""
        return self.L <= 4

    def block_of(self, i):
        return np.asarray(i) // self.W

    def block_slice(self, a: int) -> slice:
        a = int(a) % self.L
        return slice(a * self.W, (a + 1) * self.W)

    def block_distance(self, a, b):
        d = np.abs(np.asarray(a) - np.asarray(b)) % self.L
        return np.minimum(d, self.L - d)

    def block_profile(self) -> np.ndarray:
        """Dense ``S_B`` (L x L)."""
        idx = np.arange(self.L)
        near = self.block_distance(idx[:, None], idx[None, :]) <= 1
        return near / 3.0

    def block_profile_row(self) -> np.ndarray:
        """First row of the circulant ``S_B``."""
        return self.block_profile()[0]

    def block_projector(self, a: int) -> np.ndarray:
        """Diagonal of ``E_a``: ``1/W`` on block ``a``, zero elsewhere."""
        e = np.zeros(self.N)
        e[self.block_slice(a)] = 1.0 / self.W
        return e

    def variance_matrix(self) -> np.ndarray:
        """Dense N x N variance profile. Only meant for small models."""
        return np.kron(self.block_profile(), np.full((self.W, self.W), 1.0 / self.W))


def build_model(W: int, L: int) -> BandModel:
    if int(W) != W or W < 1:
        raise ValueError(f"W must be a positive integer, got {W!r}")
    if int(L) != L or L < 3:
        raise ValueError(f"L must be an integer >= 3, got {L!r}")
    return BandModel(int(W), int(L))


def variance_entry(model: BandModel, i: int, j: int) -> float:
    """``S_ij = 1/(3W)`` if the blocks of i and j are equal or adjacent mod L."""
    N = model.N
    if not (0 <= i < N and 0 <= j < N):
        raise IndexError(f"indices ({i}, {j}) out of range for N={N}")
    near = model.block_distance(i // model.W, j // model.W) <= 1
    return 1.0 / (3.0 * model.W) if near else 0.0


@dataclass(frozen=True)
class HermitianSample:
    H: np.ndarray
    seed: int
    index: int
    model: BandModel
    t: float = 1.0


def sample_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Independent Philox stream for sample ``index`` of master ``seed``.

    The stream depends only on the pair, never on how many samples were drawn
    before it, so samples can be produced in any order or in parallel.
    """
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def sample_hamiltonian(model: BandModel, seed: int, index: int = 0) -> HermitianSample:
    """Draw ``H`` with ``E|H_ij|^2 = S_ij``, ``E H_ij^2 = 0`` off the diagonal.

    Off-diagonal ``H_ij = sqrt(S_ij / 2) (X + iY)`` for ``i < j``; the diagonal is
    real with variance ``S_ii``.
    """
    rng = sample_rng(seed, index)
    W, N = model.W, model.N
    x = rng.standard_normal((N, N))
    y = rng.standard_normal((N, N))

    std_b = np.sqrt(model.block_profile() / W)  # per block pair, sqrt(S_ij)
    iu = np.triu_indices(N, k=1)
    std_u = std_b[iu[0] // W, iu[1] // W]

    H = np.zeros((N, N), dtype=np.complex128)
    upper = std_u * np.sqrt(0.5) * (x[iu] + 1j * y[iu])
    H[iu] = upper
    H[iu[1], iu[0]] = upper.conj()
    d = np.arange(N)
    H[d, d] = std_b[d // W, d // W] * x[d, d]
    return HermitianSample(H=H, seed=int(seed), index=int(index), model=model)


def scale_to_time(sample: HermitianSample, t: float) -> HermitianSample:
    """Fixed-time marginal of the matrix Brownian motion: ``H_t ~ sqrt(t) H``."""
    if not (0.0 < t <= 1.0):
        raise ValueError(f"t must lie in (0, 1], got {t}")
    if t == 1.0:
        return sample
    return HermitianSample(
        H=np.sqrt(t) * sample.H, seed=sample.seed, index=sample.index, model=sample.model, t=t * sample.t
    )
