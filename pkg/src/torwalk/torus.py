"""Points of the torus T^d, linear walks on them, and empirical Fourier coefficients.

A point is a vector of integer numerators over a common modulus M: exact mode
keeps the true denominator, fixed mode uses M = 2^128. The action g·x mod 1 is
then integer arithmetic mod M in both modes, so walks are exact in exact mode
and carry a rigorous error bound in fixed mode.
"""

from __future__ import annotations

import cmath
import itertools
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from ._parallel import map_chunks
from .errors import BudgetExceeded, ConfigError
from .linalg import IntMatrix
from .measure import FiniteMeasure, iter_steps

FIXED_BITS = 128
FIXED_SCALE = 1 << FIXED_BITS
_LIMB = 32
_LIMB_MASK = (1 << _LIMB) - 1
_NLIMBS = FIXED_BITS // _LIMB
# exact-mode residues are kept in one int64 while M stays below this
_SMALL_MODULUS = 1 << 56


@dataclass(frozen=True)
class TorusPoint:
    nums: tuple[int, ...]
    denom: int
    mode: str = "exact"
    err: float = 0.0

    def __post_init__(self):
        if self.mode not in ("exact", "fixed"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "fixed" and self.denom != FIXED_SCALE:
            raise ValueError("fixed mode uses denominator 2^128")
        if self.denom < 1:
            raise ValueError("denominator must be positive")
        object.__setattr__(self, "nums", tuple(int(v) % self.denom for v in self.nums))

    @classmethod
    def exact(cls, coords: Iterable) -> "TorusPoint":
        fr = [Fraction(c) % 1 for c in coords]
        m = math.lcm(*(f.denominator for f in fr)) if fr else 1
        return cls(tuple(f.numerator * (m // f.denominator) for f in fr), m, "exact", 0.0)

    @classmethod
    def fixed(cls, coords: Iterable, err: float | None = None) -> "TorusPoint":
        """Round real coordinates to 128-bit fractions (error 2^-129 unless exact)."""
        nums = []
        exact = True
        for c in coords:
            f = Fraction(c) % 1
            scaled = f * FIXED_SCALE
            r = math.floor(scaled + Fraction(1, 2))
            exact = exact and scaled == r
            nums.append(r)
        bound = 0.0 if exact else 2.0 ** -(FIXED_BITS + 1)
        return cls(tuple(nums), FIXED_SCALE, "fixed", bound if err is None else err)

    @classmethod
    def zero(cls, d: int) -> "TorusPoint":
        return cls((0,) * d, 1, "exact", 0.0)

    @property
    def dim(self) -> int:
        return len(self.nums)

    @property
    def coords(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(v, self.denom) for v in self.nums)

    def to_float(self) -> np.ndarray:
        return np.array([v / self.denom for v in self.nums])

    def reduced_denominator(self) -> int:
        """Least common denominator of the coordinates."""
        return math.lcm(*(Fraction(v, self.denom).denominator for v in self.nums)) if self.nums else 1

    def to_fixed(self) -> "TorusPoint":
        if self.mode == "fixed":
            return self
        return TorusPoint.fixed(self.coords)


def step(g: IntMatrix, x: TorusPoint) -> TorusPoint:
    """g·x mod 1. Fixed-mode error bound grows by the max row sum of |g|."""
    if g.dim != x.dim:
        raise ValueError("dimension mismatch")
    nums = tuple(sum(gij * v for gij, v in zip(row, x.nums)) for row in g.entries)
    growth = max(sum(abs(v) for v in row) for row in g.entries)
    return TorusPoint(nums, x.denom, x.mode, x.err * growth)


def torus_distance(x: TorusPoint, y: TorusPoint) -> float:
    """Sup metric: max over coordinates of distance to the nearest integer."""
    return float(torus_distance_exact(x, y))


def torus_distance_exact(x: TorusPoint, y: TorusPoint) -> Fraction:
    best = Fraction(0)
    for a, b in zip(x.coords, y.coords):
        f = (a - b) % 1
        best = max(best, min(f, 1 - f))
    return best


_NAMED = {
    "phi-1": lambda: (math.isqrt(5 << (2 * FIXED_BITS)) - FIXED_SCALE) // 2,
    "sqrt2-1": lambda: math.isqrt(2 << (2 * FIXED_BITS)) - FIXED_SCALE,
    "sqrt3-1": lambda: math.isqrt(3 << (2 * FIXED_BITS)) - FIXED_SCALE,
}
_TERM = re.compile(r"^\s*(?:(2)\^(-?\d+)|([-+]?\d+(?:/\d+)?)|([-+]?\d*\.\d+(?:[eE][-+]?\d+)?))\s*$")


def _parse_coord(text: str):
    """Returns a Fraction, or ('fixed', numerator) for a named irrational."""
    text = text.strip()
    if text in _NAMED:
        return ("fixed", _NAMED[text]())
    total = Fraction(0)
    for term in re.split(r"\+(?![^(]*\))", text):
        m = _TERM.match(term)
        if not m:
            raise ConfigError(f"cannot parse torus coordinate {text!r}")
        if m.group(1):
            total += Fraction(2) ** int(m.group(2))
        elif m.group(3):
            total += Fraction(m.group(3))
        else:
            total += Fraction(m.group(4))
    return total


def parse_point(text: str) -> TorusPoint:
    """Comma-separated coordinates: 'p/q', '2^-40', decimals, sums of these, or phi-1, sqrt2-1, sqrt3-1."""
    parts = [_parse_coord(c) for c in text.split(",")]
    if all(isinstance(p, Fraction) for p in parts):
        return TorusPoint.exact(parts)
    nums = []
    for p in parts:
        if isinstance(p, Fraction):
            nums.append(math.floor(p % 1 * FIXED_SCALE + Fraction(1, 2)))
        else:
            nums.append(p[1])
    return TorusPoint(tuple(nums), FIXED_SCALE, "fixed", 2.0 ** -FIXED_BITS)


def format_point(x: TorusPoint) -> str:
    if x.mode == "exact":
        return ",".join(str(c) for c in x.coords)
    return ",".join(repr(float(c)) for c in x.to_float())


# ---------------------------------------------------------------------------
# vectorised walks


class _WalkState:
    """Batch of walk endpoints as integer residues mod the point's modulus."""

    def __init__(self, x0: TorusPoint, size: int):
        self.d = x0.dim
        self.mode = x0.mode
        self.size = size
        if x0.mode == "exact" and x0.denom < _SMALL_MODULUS:
            self.kind = "small"
            self.modulus = x0.denom
            self.res = np.broadcast_to(np.array(x0.nums, dtype=np.int64), (size, self.d)).copy()
        else:
            if x0.mode == "exact":
                raise BudgetExceeded("exact denominators >= 2^56 are not supported; use fixed mode")
            self.kind = "limbs"
            self.modulus = FIXED_SCALE
            limbs = [[(v >> (_LIMB * l)) & _LIMB_MASK for l in range(_NLIMBS)] for v in x0.nums]
            self.res = np.broadcast_to(np.array(limbs, dtype=np.int64), (size, self.d, _NLIMBS)).copy()

    def apply(self, g: np.ndarray) -> None:
        """x <- g x (mod M) for per-walk integer matrices g of shape (size, d, d)."""
        if self.kind == "small":
            self.res = np.einsum("sij,sj->si", g, self.res) % self.modulus
        else:
            acc = np.einsum("sij,sjl->sil", g, self.res)
            self.res = _carry(acc)

    def pairing(self, a: Sequence[int]) -> np.ndarray:
        """Phase <a, x> mod 1 in [-1/2, 1/2), computed from the exact residue."""
        a = np.asarray(a, dtype=np.int64)
        if self.kind == "small":
            r = (self.res @ a) % self.modulus
            r = np.where(2 * r >= self.modulus, r - self.modulus, r)
            return r / self.modulus
        limbs = _carry(np.einsum("j,sjl->sl", a, self.res)[:, None, :])[:, 0, :]
        top = limbs[:, _NLIMBS - 1]
        signed = np.where(top >= (1 << (_LIMB - 1)), top - (1 << _LIMB), top).astype(float)
        frac = signed
        for l in range(_NLIMBS - 2, -1, -1):
            frac = frac + limbs[:, l].astype(float) * 2.0 ** (_LIMB * (l - _NLIMBS + 1))
        return frac / 2.0 ** _LIMB

    def as_float(self) -> np.ndarray:
        if self.kind == "small":
            return self.res / self.modulus
        out = np.zeros((self.size, self.d))
        for l in range(_NLIMBS):
            out += self.res[:, :, l].astype(float) * 2.0 ** (_LIMB * (l - _NLIMBS))
        return out

    def as_ints(self) -> list[tuple[int, ...]]:
        if self.kind == "small":
            return [tuple(int(v) for v in row) for row in self.res]
        out = []
        for row in self.res:
            out.append(tuple(sum(int(row[j, l]) << (_LIMB * l) for l in range(_NLIMBS)) for j in range(self.d)))
        return out


def _carry(acc: np.ndarray) -> np.ndarray:
    """Normalise signed limb sums to base-2^32 digits mod 2^128."""
    out = np.empty_like(acc)
    carry = np.zeros(acc.shape[:-1], dtype=np.int64)
    for l in range(_NLIMBS):
        v = acc[..., l] + carry
        out[..., l] = v & _LIMB_MASK
        carry = v >> _LIMB
    return out


def _walk_atoms(mu: FiniteMeasure) -> tuple[np.ndarray, float]:
    if not mu.is_integral():
        raise TypeError("torus walks need integer matrices")
    amax = max(p.max_abs() for p in mu.support)
    if amax * mu.dim >= (1 << 26):
        raise BudgetExceeded("atom entries too large for vectorised torus walks")
    mats = np.array([[list(r) for r in p.entries] for p in mu.support], dtype=np.int64)
    growth = max(max(sum(abs(v) for v in r) for r in p.entries) for p in mu.support)
    return mats, float(growth)


def _run_walk(mu: FiniteMeasure, n: int, x0: TorusPoint, size: int, rng, checkpoints=None):
    mats, _ = _walk_atoms(mu)
    state = _WalkState(x0, size)
    want = set(checkpoints or ())
    snaps = {}
    if 0 in want:
        snaps[0] = state.res.copy()
    for t, idx in enumerate(iter_steps(mu, n, size, rng), 1):
        state.apply(mats[idx])
        if t in want:
            snaps[t] = state.res.copy()
    return state, snaps


def walk_error_bound(mu: FiniteMeasure, n: int, x0: TorusPoint) -> float:
    """Worst-case fixed-point error after n steps (exact mode: 0)."""
    if x0.mode == "exact" or x0.err == 0.0:
        return 0.0
    _, growth = _walk_atoms(mu)
    return x0.err * growth ** n


def sample_endpoints(mu: FiniteMeasure, n: int, x0: TorusPoint, samples: int, rng_seed: int) -> np.ndarray:
    """Float coordinates in [0, 1) of `samples` walk endpoints x_n."""
    chunks = map_chunks(lambda rng, size, _c: _run_walk(mu, n, x0, size, rng)[0].as_float(), samples, rng_seed)
    return np.concatenate(chunks)


def sample_endpoint_points(mu: FiniteMeasure, n: int, x0: TorusPoint, samples: int, rng_seed: int) -> list[TorusPoint]:
    err = walk_error_bound(mu, n, x0)
    chunks = map_chunks(lambda rng, size, _c: _run_walk(mu, n, x0, size, rng)[0].as_ints(), samples, rng_seed)
    denom = x0.denom
    return [TorusPoint(t, denom, x0.mode, err) for c in chunks for t in c]


# ---------------------------------------------------------------------------
# Fourier coefficients


@dataclass(frozen=True)
class FourierEstimate:
    a: tuple[int, ...]
    value: complex
    stderr: float
    samples: int
    error_bound: float = 0.0  # fixed-point phase error bound, 2π·‖a‖_1·err


def e(phase: float) -> complex:
    return cmath.exp(2j * math.pi * phase)


def _phase_sums(phases: np.ndarray) -> np.ndarray:
    c = np.cos(2 * np.pi * phases)
    s = np.sin(2 * np.pi * phases)
    return np.array([c.sum(), s.sum(), (c * c).sum(), (s * s).sum(), (c * s).sum()])


def _combine(sums: list[np.ndarray], samples: int) -> tuple[complex, float]:
    tot = [math.fsum(s[i] for s in sums) for i in range(5)]
    mc, ms = tot[0] / samples, tot[1] / samples
    var = max(tot[2] / samples - mc * mc, 0.0) + max(tot[3] / samples - ms * ms, 0.0)
    if samples > 1:
        var *= samples / (samples - 1)
    return complex(mc, ms), math.sqrt(var / samples)


def _exact_phase(a: Sequence[int], x: TorusPoint) -> Fraction:
    return Fraction(sum(ai * v for ai, v in zip(a, x.nums)) % x.denom, x.denom)


def _sup(a: Sequence[int]) -> int:
    return max((abs(v) for v in a), default=0)


def empirical_fourier(mu: FiniteMeasure, n: int, x0: TorusPoint, a: Sequence[int], samples: int,
                      rng_seed: int) -> FourierEstimate:
    """Mean of e(<a, x_n>) over independent walks from x0."""
    a = tuple(int(v) for v in a)
    if len(a) != x0.dim:
        raise ValueError("frequency dimension mismatch")
    if not any(a):
        return FourierEstimate(a, 1 + 0j, 0.0, samples)
    if n == 0 or not any(x0.nums):
        # deterministic endpoint: no sampling noise
        return FourierEstimate(a, e(float(_exact_phase(a, x0))), 0.0, samples,
                               2 * math.pi * sum(map(abs, a)) * x0.err)
    return fourier_profile(mu, [n], x0, [a], samples, rng_seed)[n][0]


def fourier_profile(mu: FiniteMeasure, ns: Sequence[int], x0: TorusPoint, freqs: Sequence[Sequence[int]],
                    samples: int, rng_seed: int) -> dict[int, list[FourierEstimate]]:
    """Estimates for every (n, a) pair from one trajectory set (prefixes for smaller n)."""
    ns = sorted(set(int(n) for n in ns))
    freqs = [tuple(int(v) for v in a) for a in freqs]

    def chunk(rng, size, _c):
        state, snaps = _run_walk(mu, max(ns), x0, size, rng, checkpoints=ns)
        out = {}
        for n in ns:
            state.res = snaps[n] if n in snaps else state.res
            out[n] = [_phase_sums(state.pairing(a)) if any(a) else None for a in freqs]
        return out

    chunks = map_chunks(chunk, samples, rng_seed)
    result = {}
    for n in ns:
        bound = walk_error_bound(mu, n, x0)
        ests = []
        for j, a in enumerate(freqs):
            if not any(a):
                ests.append(FourierEstimate(a, 1 + 0j, 0.0, samples))
                continue
            value, se = _combine([c[n][j] for c in chunks], samples)
            ests.append(FourierEstimate(a, value, se, samples, 2 * math.pi * sum(map(abs, a)) * bound))
        result[n] = ests
    return result


def exact_distribution(mu: FiniteMeasure, n: int, x0: TorusPoint, max_states: int = 1_000_000) -> dict[tuple[int, ...], Fraction]:
    """Exact law of x_n for an exact-mode start (states are numerator tuples over x0.denom)."""
    if x0.mode != "exact":
        raise ValueError("exact distribution needs an exact-mode point")
    q = x0.denom
    atoms = [(tuple(p.entries), w) for p, w in mu.atoms]
    dist: dict[tuple[int, ...], Fraction] = {x0.nums: Fraction(1)}
    for _ in range(n):
        nxt: dict[tuple[int, ...], Fraction] = {}
        for state, pw in dist.items():
            for rows, w in atoms:
                s = tuple(sum(gij * v for gij, v in zip(row, state)) % q for row in rows)
                nxt[s] = nxt.get(s, Fraction(0)) + pw * w
        dist = nxt
        if len(dist) > max_states:
            raise BudgetExceeded(f"rational chain exceeded {max_states} states")
    return dist


def fourier_exact_rational(mu: FiniteMeasure, n: int, x0: TorusPoint, a: Sequence[int],
                           max_states: int = 1_000_000) -> complex:
    """Coefficient of the exact finite-state law; only the roots of unity are rounded."""
    a = tuple(int(v) for v in a)
    dist = exact_distribution(mu, n, x0, max_states)
    q = x0.denom
    # group states by exact phase so each root of unity is evaluated once
    by_phase: dict[int, Fraction] = {}
    for s, w in dist.items():
        r = sum(ai * v for ai, v in zip(a, s)) % q
        by_phase[r] = by_phase.get(r, Fraction(0)) + w
    if set(by_phase) == {0}:
        return complex(float(by_phase[0]), 0.0)
    re_parts = [float(w) * math.cos(2 * math.pi * r / q) for r, w in sorted(by_phase.items())]
    im_parts = [float(w) * math.sin(2 * math.pi * r / q) for r, w in sorted(by_phase.items())]
    return complex(math.fsum(re_parts), math.fsum(im_parts))


# ---------------------------------------------------------------------------
# large coefficients


@dataclass(frozen=True)
class CoefficientSet:
    t: float
    radius: int
    estimates: tuple[FourierEstimate, ...]
    members: tuple[FourierEstimate, ...]

    def csv_rows(self) -> list[list]:
        return [[*m.a, m.value.real, m.value.imag, abs(m.value), m.stderr, m.samples] for m in self.estimates]


def frequency_ball(d: int, radius: int) -> list[tuple[int, ...]]:
    """All a in Z^d with sup norm <= radius, lexicographic order."""
    return list(itertools.product(range(-radius, radius + 1), repeat=d))


def _canonical(a: tuple[int, ...]) -> bool:
    """a is the lexicographically positive representative of {a, -a}."""
    for v in a:
        if v:
            return v > 0
    return False


def large_coefficient_scan(mu: FiniteMeasure, n: int, x0: TorusPoint, t: float, N: int,
                           samples_per_freq: int, rng_seed: int, budget: int = 10 ** 10) -> CoefficientSet:
    """Frequencies a with ‖a‖∞ <= N and |estimate| >= t - 3 stderr.

    One trajectory set serves all frequencies; -a is taken as the conjugate of a.
    """
    freqs = frequency_ball(x0.dim, N)
    cost = len(freqs) * samples_per_freq
    if cost > budget:
        raise BudgetExceeded(f"scan needs {cost} phase evaluations (budget {budget})")
    canon = [a for a in freqs if _canonical(a)]
    if n == 0 or not any(x0.nums):
        found = {a: empirical_fourier(mu, n, x0, a, samples_per_freq, rng_seed) for a in canon}
    else:
        prof = fourier_profile(mu, [n], x0, canon, samples_per_freq, rng_seed)[n]
        found = dict(zip(canon, prof))
    ests = []
    for a in freqs:
        if not any(a):
            ests.append(FourierEstimate(a, 1 + 0j, 0.0, samples_per_freq))
        elif a in found:
            ests.append(found[a])
        else:
            f = found[tuple(-v for v in a)]
            ests.append(FourierEstimate(a, f.value.conjugate(), f.stderr, f.samples, f.error_bound))
    members = tuple(est for est in ests if abs(est.value) >= t - 3 * est.stderr)
    return CoefficientSet(t, N, tuple(ests), members)


# ---------------------------------------------------------------------------
# separated sets and concentration


def _as_array(points) -> np.ndarray:
    if isinstance(points, np.ndarray):
        arr = points.astype(float)
    else:
        arr = np.array([p.to_float() for p in points], dtype=float)
    if arr.size == 0:
        return arr.reshape(0, 0)
    arr = np.mod(arr, 1.0)
    arr[arr >= 1.0] = 0.0
    return arr


def _sup_dists(p: np.ndarray, many: np.ndarray) -> np.ndarray:
    diff = np.abs(many - p) % 1.0
    return np.max(np.minimum(diff, 1.0 - diff), axis=1)


def separated_subset(points: Sequence[TorusPoint], r: float) -> list[TorusPoint]:
    """Greedy in input order: keep a point if it is at distance >= r from all kept points."""
    arr = _as_array(points)
    kept: list[int] = []
    for i in range(len(points)):
        if not kept or np.all(_sup_dists(arr[i], arr[kept]) >= r):
            kept.append(i)
    return [points[i] for i in kept]


def concentration_mass(walk_samples, centers, radius: float) -> float:
    """Fraction of samples within sup distance `radius` of some center."""
    xs = _as_array(walk_samples)
    cs = _as_array(centers)
    if len(xs) == 0:
        return 0.0
    if len(cs) == 0:
        return 0.0
    tree = cKDTree(cs, boxsize=1.0)
    dist, _ = tree.query(xs, k=1, p=np.inf)
    return float(np.count_nonzero(dist <= radius)) / len(xs)


def ball_masses(samples: np.ndarray, centers: np.ndarray, radius: float) -> np.ndarray:
    """Empirical mass of the closed sup-ball around each center."""
    xs = _as_array(samples)
    cs = _as_array(centers)
    tree = cKDTree(xs, boxsize=1.0)
    counts = tree.query_ball_point(cs, np.nextafter(radius, np.inf), p=np.inf, return_length=True)
    return np.asarray(counts, dtype=float) / len(xs)
