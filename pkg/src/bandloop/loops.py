"""Resolvents, G-loops, G-chains and the cut-and-glue index algebra.

Charges are stored as +1 / -1.  Charge +1 means ``G(z)``, charge -1 means
``G(conj z) = G(z)^dagger``.  Block indices are 0-based.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
import threading

import numpy as np

from .model import BandModel, HermitianSample

__all__ = [
    "LoopSpec",
    "ResolventCache",
    "DecompositionError",
    "parse_sigma",
    "format_sigma",
    "eigendecompose",
    "resolvent_block",
    "g_loop",
    "g_chain_entry",
    "two_loop_matrix",
    "cut_glue",
]


class DecompositionError(RuntimeError):
    """Raised when the Hermitian eigensolver fails."""


def parse_sigma(s) -> tuple:
    """Accept ``"+-+"``, ``["+", "-"]`` or ``(1, -1)`` and return a tuple of +/-1."""
    out = []
    for c in s:
        if c in ("+", 1, "1", "+1"):
            out.append(1)
        elif c in ("-", -1, "-1"):
            out.append(-1)
        else:
            raise ValueError(f"bad charge {c!r}")
    return tuple(out)


def format_sigma(sigma) -> str:
    return "".join("+" if s > 0 else "-" for s in sigma)


@dataclass(frozen=True)
class LoopSpec:
    sigma: tuple
    a: tuple
    chain: bool = False

    def __post_init__(self):
        object.__setattr__(self, "sigma", parse_sigma(self.sigma))
        object.__setattr__(self, "a", tuple(int(x) for x in self.a))
        n = len(self.sigma)
        if n < 1:
            raise ValueError("empty charge word")
        want = n - 1 if self.chain else n
        if len(self.a) != want:
            raise ValueError(f"block word has length {len(self.a)}, expected {want}")
        if any(x < 0 for x in self.a):
            raise ValueError("block indices must be nonnegative")

    @property
    def n(self) -> int:
        return len(self.sigma)

    def validate(self, L: int) -> "LoopSpec":
        if any(x >= L for x in self.a):
            raise ValueError(f"block index out of range for L={L}: {self.a}")
        return self

    def rotate(self, r: int = 1) -> "LoopSpec":
        r %= self.n
        return LoopSpec(self.sigma[r:] + self.sigma[:r], self.a[r:] + self.a[:r])

    def adjoint(self) -> "LoopSpec":
        """Charges flipped, orientation reversed: the loop of the adjoint product."""
        # tr(G1 E1 ... Gn En)^* = tr(En Gn^* ... E1 G1^*) = tr(G'_n E_{n-1} ... G'_1 E_n)
        n = self.n
        sig = tuple(-self.sigma[n - 1 - k] for k in range(n))
        a = tuple(self.a[(n - 2 - k) % n] for k in range(n))
        return LoopSpec(sig, a)


class ResolventCache:
    """Eigendecomposition of one Hamiltonian, giving ``G(z)`` at any ``z``.

    Assembled ``G(z)`` matrices are kept in a small LRU keyed by ``z``.
    """

    def __init__(self, eigenvalues, eigenvectors, model: BandModel, t: float = 1.0,
                 H: np.ndarray | None = None, max_cached: int = 4):
        self.eigenvalues = eigenvalues
        self.eigenvectors = eigenvectors
        self.model = model
        self.t = t
        self.H = H
        self.max_cached = max_cached
        self._g = OrderedDict()
        self._lock = threading.Lock()

    def scaled(self, t: float) -> "ResolventCache":
        """Cache for ``sqrt(t) H``, reusing the eigenvectors."""
        H = None if self.H is None else np.sqrt(t) * self.H
        return ResolventCache(np.sqrt(t) * self.eigenvalues, self.eigenvectors, self.model,
                              t=self.t * t, H=H, max_cached=self.max_cached)

    def resolvent(self, z: complex) -> np.ndarray:
        z = complex(z)
        if z.imag == 0:
            raise ValueError("resolvent needs Im z != 0")
        with self._lock:
            if z in self._g:
                self._g.move_to_end(z)
                return self._g[z]
            zc = z.conjugate()
            if zc in self._g:
                G = self._g[zc].conj().T
                self._store(z, G)
                return G
        U = self.eigenvectors
        G = (U / (self.eigenvalues - z)) @ U.conj().T
        with self._lock:
            self._store(z, G)
        return G

    def _store(self, z, G):
        self._g[z] = G
        while len(self._g) > self.max_cached:
            self._g.popitem(last=False)

    def clear(self):
        with self._lock:
            self._g.clear()


def eigendecompose(sample: HermitianSample | np.ndarray, model: BandModel | None = None,
                   max_cached: int = 4) -> ResolventCache:
    """Full Hermitian eigendecomposition, ascending eigenvalues (stable order)."""
    if isinstance(sample, HermitianSample):
        H, model, t = sample.H, sample.model, sample.t
    else:
        H, t = np.asarray(sample), 1.0
        if model is None:
            raise ValueError("model is required when passing a bare matrix")
    try:
        lam, U = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(str(exc)) from exc
    if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(U))):
        raise DecompositionError("non-finite eigendecomposition")
    order = np.argsort(lam, kind="stable")
    return ResolventCache(lam[order], U[:, order], model, t=t, H=H, max_cached=max_cached)


def resolvent_block(cache: ResolventCache, z: complex, a: int, b: int) -> np.ndarray:
    """``G(z)[I_a, I_b]`` without assembling the full resolvent."""
    z = complex(z)
    if z.imag == 0:
        raise ValueError("resolvent needs Im z != 0")
    m = cache.model
    U = cache.eigenvectors
    Ua, Ub = U[m.block_slice(a)], U[m.block_slice(b)]
    return (Ua / (cache.eigenvalues - z)) @ Ub.conj().T


def _charged(cache, z, sigma):
    G = cache.resolvent(z)
    return G if sigma > 0 else G.conj().T


def g_loop(cache: ResolventCache, point, spec: LoopSpec) -> complex:
    """``tr(G(s_1) E_{a_1} ... G(s_n) E_{a_n})``.

    ``point`` may be a ``SpectralPoint`` (its ``z_t`` is used) or a complex ``z``.
    """
    z = getattr(point, "z_t", point)
    model = cache.model
    spec.validate(model.L)
    if spec.chain:
        raise ValueError("g_loop needs a closed loop spec")
    n, W = spec.n, model.W
    G = {s: _charged(cache, z, s) for s in set(spec.sigma)}
    sl = [model.block_slice(a) for a in spec.a]
    prod = None
    for k in range(n):
        B = G[spec.sigma[k]][sl[k - 1], sl[k]]
        prod = B if prod is None else prod @ B
    return complex(np.trace(prod)) / W ** n


def g_chain_entry(cache: ResolventCache, point, spec: LoopSpec, i: int, j: int) -> complex:
    """Entry ``(i, j)`` of ``G(s_1) E_{a_1} G(s_2) ... E_{a_{n-1}} G(s_n)``."""
    z = getattr(point, "z_t", point)
    model = cache.model
    if not spec.chain:
        raise ValueError("g_chain_entry needs a chain spec (|a| = n - 1)")
    spec.validate(model.L)
    N, W = model.N, model.W
    if not (0 <= i < N and 0 <= j < N):
        raise IndexError("chain entry index out of range")
    G = {s: _charged(cache, z, s) for s in set(spec.sigma)}
    if spec.n == 1:
        return complex(G[spec.sigma[0]][i, j])
    sl = [model.block_slice(a) for a in spec.a]
    row = G[spec.sigma[0]][i, sl[0]] / W
    for k in range(1, spec.n - 1):
        row = row @ G[spec.sigma[k]][sl[k - 1], sl[k]] / W
    return complex(row @ G[spec.sigma[-1]][sl[-1], j])


def two_loop_matrix(cache: ResolventCache, point, sigma=(1, -1)) -> np.ndarray:
    """All 2-loops at once: ``M[a, b] = tr(G(s_1) E_a G(s_2) E_b)``."""
    z = getattr(point, "z_t", point)
    sigma = parse_sigma(sigma)
    model = cache.model
    W, L = model.W, model.L
    G1 = _charged(cache, z, sigma[0])
    G2 = _charged(cache, z, sigma[1])
    # tr(G1 E_a G2 E_b) = W^-2 sum_{i in I_b, j in I_a} G1_ij G2_ji
    R = (G1 * G2.T).reshape(L, W, L, W).sum(axis=(1, 3))
    return R.T / W ** 2


def cut_glue(spec: LoopSpec, kind: str, k: int, l: int | None = None, b: int = 0) -> LoopSpec:
    """Cut-and-glue index transforms, with 1-based edge numbers ``k, l``.

    ``first``: one unit longer, charge ``s_k`` doubled and ``b`` inserted before ``a_k``.
    ``left``: keeps ``s_1..s_k, s_l..s_n`` and ``a_1..a_{k-1}, b, a_l..a_n``.
    ``right``: keeps ``s_k..s_l`` and ``a_k..a_{l-1}, b``.
    """
    s, a, n = spec.sigma, spec.a, spec.n
    if kind == "first":
        if not (1 <= k <= n):
            raise ValueError(f"first: need 1 <= k <= n, got k={k}, n={n}")
        return LoopSpec(s[:k] + (s[k - 1],) + s[k:], a[:k - 1] + (b,) + a[k - 1:])
    if l is None or not (1 <= k < l <= n):
        raise ValueError(f"{kind}: need 1 <= k < l <= n, got k={k}, l={l}, n={n}")
    if kind == "left":
        return LoopSpec(s[:k] + s[l - 1:], a[:k - 1] + (b,) + a[l - 1:])
    if kind == "right":
        return LoopSpec(s[k - 1:l], a[k - 1:l - 1] + (b,))
    raise ValueError(f"unknown cut kind {kind!r}")
