"""Primitive loops: non-crossing chords, tree contraction and an ODE oracle.

Polygon vertices and chord endpoints are 1-based (vertex ``k`` carries
``(sigma_k, a_k)``); block values are 0-based.  A chord ``(i, j)`` with
``i < j`` joins the midpoints of polygon edges ``e_i`` and ``e_j`` and so cuts
off the vertices ``i, ..., j-1``.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, product

import numpy as np

from .loops import LoopSpec, cut_glue, parse_sigma
from .model import BandModel
from .propagator import theta_kernel
from .spectral import boundary_m

__all__ = [
    "NonCrossingChordSet",
    "PartitionTree",
    "OracleConvergenceError",
    "admissible_chords",
    "chords_cross",
    "enumerate_noncrossing",
    "build_partition_tree",
    "tree_weight",
    "tree_tensor",
    "k_loop",
    "k_tensor",
    "k_loop_pi",
    "long_chords",
    "self_energy_empty",
    "self_energy_empty_tensor",
    "sum_zero_value",
    "primitive_ode_solve",
    "SELF_ENERGY_MAX_N",
]

SELF_ENERGY_MAX_N = 6


# ---------------------------------------------------------------- chords

def admissible_chords(n: int) -> list:
    """Pairs ``(i, j)``, ``i < j``, not adjacent on the n-cycle."""
    return [(i, j) for i in range(1, n + 1) for j in range(i + 2, n + 1) if not (i == 1 and j == n)]


def chords_cross(c1, c2) -> bool:
    (i, j), (k, l) = sorted(c1), sorted(c2)
    return i < k < j < l or k < i < l < j


@dataclass(frozen=True)
class NonCrossingChordSet:
    n: int
    chords: tuple

    def __post_init__(self):
        chords = tuple(sorted(tuple(sorted(c)) for c in self.chords))
        allowed = set(admissible_chords(self.n))
        for c in chords:
            if c not in allowed:
                raise ValueError(f"chord {c} is not admissible for n={self.n}")
        if len(set(chords)) != len(chords):
            raise ValueError("repeated chord")
        for c1, c2 in combinations(chords, 2):
            if chords_cross(c1, c2):
                raise ValueError(f"chords {c1} and {c2} cross")
        object.__setattr__(self, "chords", chords)

    def __len__(self):
        return len(self.chords)


def enumerate_noncrossing(n: int) -> list:
    """All non-crossing sets of admissible chords, empty set first, lexicographic."""
    if n < 2:
        raise ValueError("n must be >= 2")
    cands = admissible_chords(n)
    found = []

    def grow(start, chosen):
        found.append(tuple(chosen))
        for idx in range(start, len(cands)):
            c = cands[idx]
            if all(not chords_cross(c, d) for d in chosen):
                grow(idx + 1, chosen + [c])

    grow(0, [])
    found.sort()
    return [NonCrossingChordSet(n, c) for c in found]


# ---------------------------------------------------------------- trees

@dataclass(frozen=True)
class PartitionTree:
    """Faces of a chord arrangement and the tree joining them.

    Face 0 is the root face (it holds vertex ``n``); face ``c + 1`` belongs to
    chord ``chords[c]``.  A face can be empty once chords nest tightly.
    """

    n: int
    chords: tuple
    faces: tuple          # tuple of vertex tuples
    representatives: tuple  # minimal vertex per face, None for empty faces
    vertex_face: tuple    # vertex_face[k - 1] = face of vertex k
    parent: tuple         # parent[f] for f >= 1; parent[0] = -1
    order: tuple          # chord faces, children before parents

    @property
    def boundary_edges(self):
        """``(vertex k, face, (k, k+1))``: kernel ``Theta_{t m_k m_{k+1}}``."""
        return [(k, self.vertex_face[k - 1], (k, k % self.n + 1)) for k in range(1, self.n + 1)]

    @property
    def internal_edges(self):
        """``(face, parent face, chord)``: kernel ``Theta_{t m_i m_j} - 1``."""
        return [(f, self.parent[f], self.chords[f - 1]) for f in range(1, len(self.faces))]

    @property
    def face_count(self) -> int:
        return len(self.faces)

    @property
    def edge_count(self) -> int:
        return self.n + len(self.chords)


def build_partition_tree(n: int, chords) -> PartitionTree:
    if not isinstance(chords, NonCrossingChordSet):
        chords = NonCrossingChordSet(n, tuple(chords))
    if chords.n != n:
        raise ValueError("chord set built for a different n")
    cs = chords.chords
    inside = [set(range(i, j)) for i, j in cs]
    # parent of a chord: the smallest chord strictly containing it, else the root
    parent = [-1]
    for c, s in enumerate(inside):
        best = 0
        for d, s2 in enumerate(inside):
            if d != c and s < s2 and (best == 0 or len(s2) < len(inside[best - 1])):
                best = d + 1
        parent.append(best)
    vertex_face = []
    for v in range(1, n + 1):
        best = 0
        for c, s in enumerate(inside):
            if v in s and (best == 0 or len(s) < len(inside[best - 1])):
                best = c + 1
        vertex_face.append(best)
    faces = tuple(tuple(v for v in range(1, n + 1) if vertex_face[v - 1] == f) for f in range(len(cs) + 1))
    reps = tuple(f[0] if f else None for f in faces)
    order = tuple(sorted(range(1, len(cs) + 1), key=lambda f: (len(inside[f - 1]), f)))
    return PartitionTree(n=n, chords=cs, faces=faces, representatives=reps,
                         vertex_face=tuple(vertex_face), parent=tuple(parent), order=order)


# ---------------------------------------------------------------- kernels

def _ms(sigma, m):
    return [m if s > 0 else np.conj(m) for s in sigma]


class _Kernels:
    """Memoized ``Theta_{t xi}`` dense matrices for one (t, m, L)."""

    def __init__(self, t, m, L):
        self.t, self.m, self.L = t, m, L
        self._th = {}

    def theta(self, x, y) -> np.ndarray:
        xi = complex(self.t * x * y)
        key = (round(xi.real, 15), round(xi.imag, 15))
        if key not in self._th:
            self._th[key] = theta_kernel(xi, self.L).dense()
        return self._th[key]

    def theta_minus_one(self, x, y) -> np.ndarray:
        return self.theta(x, y) - np.eye(self.L)


def _leg_matrices(tree: PartitionTree, ms, ker: _Kernels, boundary: str):
    n = tree.n
    if boundary == "identity":
        return [np.eye(ker.L)] * n
    return [ker.theta(ms[k - 1], ms[k % n]) for k in range(1, n + 1)]


def tree_weight(tree: PartitionTree, t: float, sigma, a, L: int, E: float = 0.0,
                boundary: str = "theta") -> complex:
    """Sum over face blocks of the product of all edge kernels.

    Leaf-elimination message passing toward the root face.  With
    ``boundary="identity"`` the boundary kernels are replaced by deltas.
    """
    sigma = parse_sigma(sigma)
    n = tree.n
    if len(sigma) != n or len(a) != n:
        raise ValueError("sigma and a must both have length n")
    ms = _ms(sigma, boundary_m(E))
    ker = _Kernels(t, boundary_m(E), L)
    legs = _leg_matrices(tree, ms, ker, boundary)
    if n == 2:
        # a single edge between the two external vertices
        return complex(legs[0][a[0], a[1]]) if boundary == "theta" else complex(a[0] == a[1])
    local = [np.ones(L, dtype=np.complex128) for _ in tree.faces]
    for k in range(1, n + 1):
        local[tree.vertex_face[k - 1]] = local[tree.vertex_face[k - 1]] * legs[k - 1][a[k - 1], :]
    for f in tree.order:
        i, j = tree.chords[f - 1]
        msg = ker.theta_minus_one(ms[i - 1], ms[j - 1]) @ local[f]
        local[tree.parent[f]] = local[tree.parent[f]] * msg
    return complex(local[0].sum())


def tree_tensor(tree: PartitionTree, t: float, sigma, L: int, E: float = 0.0,
                boundary: str = "theta") -> np.ndarray:
    """Tree weight for every block word at once, by one einsum."""
    sigma = parse_sigma(sigma)
    n = tree.n
    ms = _ms(sigma, boundary_m(E))
    ker = _Kernels(t, boundary_m(E), L)
    legs = _leg_matrices(tree, ms, ker, boundary)
    if n == 2:
        return legs[0].astype(np.complex128).copy()
    ops = []
    for k in range(1, n + 1):
        ops += [legs[k - 1], [k - 1, n + tree.vertex_face[k - 1]]]
    for f, p, (i, j) in tree.internal_edges:
        ops += [ker.theta_minus_one(ms[i - 1], ms[j - 1]), [n + f, n + p]]
    return np.einsum(*ops, list(range(n)), optimize=True)


def long_chords(chords, sigma) -> tuple:
    """Chords joining opposite charges."""
    sigma = parse_sigma(sigma)
    return tuple(c for c in chords if sigma[c[0] - 1] != sigma[c[1] - 1])


def _prefactor(sigma, m, W):
    return np.prod(_ms(sigma, m)) * float(W) ** (-(len(sigma) - 1))


def k_loop(model: BandModel, t: float, sigma, a, E: float = 0.0, method: str = "auto") -> complex:
    """Primitive loop ``K_{t, sigma, a}`` at energy ``E``.

    ``method``: ``"closed"`` (n <= 3), ``"tree"`` (n >= 2) or ``"auto"``.
    """
    if not (0.0 <= t < 1.0):
        raise ValueError(f"t must lie in [0, 1), got {t}")
    sigma = parse_sigma(sigma)
    a = tuple(int(x) % model.L for x in a)
    n, L, W = len(sigma), model.L, model.W
    if len(a) != n:
        raise ValueError("sigma and a must have the same length")
    m = boundary_m(E)
    ms = _ms(sigma, m)
    if n == 1:
        return complex(ms[0])
    if method == "auto":
        method = "closed" if n <= 3 else "tree"
    pre = _prefactor(sigma, m, W)
    if method == "closed":
        ker = _Kernels(t, m, L)
        if n == 2:
            return complex(pre * ker.theta(ms[0], ms[1])[a[0], a[1]])
        if n == 3:
            T12, T23, T31 = ker.theta(ms[0], ms[1]), ker.theta(ms[1], ms[2]), ker.theta(ms[2], ms[0])
            return complex(pre * np.sum(T12[a[0]] * T23[a[1]] * T31[a[2]]))
        raise ValueError("closed form only for n <= 3")
    total = sum(tree_weight(build_partition_tree(n, c), t, sigma, a, L, E) for c in enumerate_noncrossing(n))
    return complex(pre * total)


def k_tensor(model: BandModel, t: float, sigma, E: float = 0.0) -> np.ndarray:
    """Full ``K`` tensor over ``Z_L^n`` from the tree sum (n >= 2)."""
    sigma = parse_sigma(sigma)
    n = len(sigma)
    if n < 2:
        raise ValueError("k_tensor needs n >= 2")
    pre = _prefactor(sigma, boundary_m(E), model.W)
    out = sum(tree_tensor(build_partition_tree(n, c), t, sigma, model.L, E) for c in enumerate_noncrossing(n))
    return pre * out


def k_loop_pi(model: BandModel, t: float, sigma, a, pi, E: float = 0.0) -> complex:
    """Sum of tree weights whose long-chord set equals ``pi`` (no prefactor)."""
    sigma = parse_sigma(sigma)
    n = len(sigma)
    if n < 2:
        raise ValueError("n must be >= 2")
    if not isinstance(pi, NonCrossingChordSet):
        pi = NonCrossingChordSet(n, tuple(pi))
    target = pi.chords
    total = 0j
    for c in enumerate_noncrossing(n):
        if long_chords(c.chords, sigma) == target:
            total += tree_weight(build_partition_tree(n, c), t, sigma, a, model.L, E)
    return complex(total)


def _no_long_trees(sigma, n):
    return [build_partition_tree(n, c) for c in enumerate_noncrossing(n) if not long_chords(c.chords, sigma)]


def self_energy_empty(t: float, sigma, d, L: int, E: float = 0.0, max_n: int = SELF_ENERGY_MAX_N) -> complex:
    """Self-energy with no long chord, at block word ``d``.

    Face deltas times internal kernels, summed over trees without long chords.
    For ``n = 2`` the single edge has no face structure; the value is then
    ``(1 - t m_1 m_2 S_B)[d_1, d_2]`` so that contracting with the two
    boundary propagators gives back the 2-loop tree weight.
    """
    sigma = parse_sigma(sigma)
    n = len(sigma)
    if n < 2 or n > max_n:
        raise ValueError(f"self_energy_empty supports 2 <= n <= {max_n}, got {n}")
    if len(d) != n:
        raise ValueError("d must have length n")
    if n == 2:
        return complex(_self_energy_two(t, sigma, L, E)[d[0] % L, d[1] % L])
    return complex(sum(tree_weight(tr, t, sigma, d, L, E, boundary="identity") for tr in _no_long_trees(sigma, n)))


def _self_energy_two(t, sigma, L, E):
    ms = _ms(sigma, boundary_m(E))
    return np.linalg.inv(theta_kernel(t * ms[0] * ms[1], L).dense())


def self_energy_empty_tensor(t: float, sigma, L: int, E: float = 0.0, max_n: int = SELF_ENERGY_MAX_N) -> np.ndarray:
    sigma = parse_sigma(sigma)
    n = len(sigma)
    if n < 2 or n > max_n:
        raise ValueError(f"self_energy_empty supports 2 <= n <= {max_n}, got {n}")
    if n == 2:
        return _self_energy_two(t, sigma, L, E)
    return sum(tree_tensor(tr, t, sigma, L, E, boundary="identity") for tr in _no_long_trees(sigma, n))


def sum_zero_value(t: float, sigma, L: int, E: float = 0.0) -> complex:
    """``L^{-1} sum_d Sigma_empty(t, sigma, d)``."""
    return complex(self_energy_empty_tensor(t, sigma, L, E).sum() / L)


# ---------------------------------------------------------------- ODE oracle

class OracleConvergenceError(RuntimeError):
    pass


def _words(n_max):
    return [s for n in range(2, n_max + 1) for s in product((1, -1), repeat=n)]


def _rhs_plan(n_max):
    """For each word, the list of (left word, right word, left axes) contractions."""
    plan = {}
    for sigma in _words(n_max):
        n = len(sigma)
        spec = LoopSpec(sigma, tuple(range(n)))
        terms = []
        for k in range(1, n + 1):
            for l in range(k + 1, n + 1):
                # block placeholders: axis labels 0..n-1, glue label n
                left = cut_glue(spec, "left", k, l, b=n)
                right = cut_glue(spec, "right", k, l, b=n + 1)
                if left.n < 2 or right.n < 2:
                    raise AssertionError("a length-1 piece appeared in the hierarchy")
                terms.append((left.sigma, list(left.a), right.sigma, list(right.a)))
        plan[sigma] = terms
    return plan


def _rhs(state, plan, S, W):
    out = {}
    for sigma, terms in plan.items():
        n = len(sigma)
        acc = None
        for ls, la, rs, ra in terms:
            # right piece glued through S_B: sum_b S[a', b] K_R[..., b]
            R = np.tensordot(state[rs], S, axes=([-1], [1]))  # last axis now a' (label n)
            ra2 = ra[:-1] + [n]
            term = np.einsum(state[ls], la, R, ra2, list(range(n)), optimize=False)
            acc = term if acc is None else acc + term
        out[sigma] = W * acc
    return out


def _initial(n_max, L, W, m):
    state = {}
    for sigma in _words(n_max):
        n = len(sigma)
        T = np.zeros((L,) * n, dtype=np.complex128)
        idx = np.arange(L)
        T[(idx,) * n] = np.prod(_ms(sigma, m)) * float(W) ** (-(n - 1))
        state[sigma] = T
    return state


def _rk4(n_max, L, W, m, t_final, h, record=()):
    S = _sb(L)
    plan = _rhs_plan(n_max)
    y = _initial(n_max, L, W, m)
    steps = int(round(t_final / h))
    if abs(steps * h - t_final) > 1e-9:
        raise ValueError(f"t_final={t_final} is not a multiple of step={h}")
    rec_steps = {int(round(r / h)): r for r in record}
    snaps = {}

    def axpy(a, x, c):
        return {k: a[k] + c * x[k] for k in a}

    for s in range(1, steps + 1):
        k1 = _rhs(y, plan, S, W)
        k2 = _rhs(axpy(y, k1, h / 2), plan, S, W)
        k3 = _rhs(axpy(y, k2, h / 2), plan, S, W)
        k4 = _rhs(axpy(y, k3, h), plan, S, W)
        y = {k: y[k] + (h / 6) * (k1[k] + 2 * k2[k] + 2 * k3[k] + k4[k]) for k in y}
        if s in rec_steps:
            snaps[rec_steps[s]] = y
    snaps[t_final] = y
    return snaps


def _sb(L):
    idx = np.arange(L)
    d = np.abs(idx[:, None] - idx[None, :]) % L
    return (np.minimum(d, L - d) <= 1) / 3.0


def primitive_ode_solve(model: BandModel, t_final: float, n_max: int = 4, step: float = 1e-3,
                        E: float = 0.0, tol: float = 1e-6, record=(), check: bool = True):
    """Integrate the primitive hierarchy for all words of length 2..n_max.

    Classical RK4 with fixed step, repeated at half the step; the two runs
    must agree to ``tol`` relative or ``OracleConvergenceError`` is raised.

    Returns
    -------
    dict mapping charge tuples to K tensors at ``t_final``; if ``record`` is
    given, a dict ``{t: that mapping}`` for each recorded time and ``t_final``.
    """
    if not (0.0 < t_final <= 1.0 - 1e-3):
        raise ValueError(f"t_final must lie in (0, 1 - 1e-3], got {t_final}")
    if n_max < 2:
        raise ValueError("n_max must be >= 2")
    L, W = model.L, model.W
    m = boundary_m(E)
    fine = _rk4(n_max, L, W, m, t_final, step / 2, record)
    if check:
        coarse = _rk4(n_max, L, W, m, t_final, step, record)
        for tt in fine:
            for sig in fine[tt]:
                a, b = fine[tt][sig], coarse[tt][sig]
                rel = np.abs(a - b).max() / max(np.abs(a).max(), 1e-300)
                if not rel < tol:
                    raise OracleConvergenceError(
                        f"step halving changed K{sig} at t={tt} by {rel:.3e} (tol {tol:g})")
    if record:
        return fine
    return fine[t_final]
