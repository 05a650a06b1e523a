"""Lyapunov exponents, Cartan projections of random products and deviation tails.

Sampled products are tracked through their exterior powers: log||∧^k P|| equals
κ_1 + ... + κ_k, so each κ_k comes from a difference of two well-conditioned
top singular values. Renormalisation uses exact powers of two so the identity
walk yields exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy import stats

from ._parallel import map_chunks
from .linalg import spectral_norms
from .measure import FiniteMeasure, iter_steps

LN2 = math.log(2.0)


def exterior_power(m: np.ndarray, k: int) -> np.ndarray:
    """Matrix of k×k minors of m (rows/cols indexed by sorted k-subsets)."""
    d = m.shape[0]
    subsets = list(combinations(range(d), k))
    out = np.empty((len(subsets), len(subsets)))
    for a, rows in enumerate(subsets):
        for b, cols in enumerate(subsets):
            out[a, b] = np.linalg.det(m[np.ix_(rows, cols)])
    return out


def _pow2_normalise(mats: np.ndarray, exps: np.ndarray) -> None:
    """Divide each matrix by a power of two near its Frobenius norm (exact scaling)."""
    fro = np.sqrt(np.sum(mats * mats, axis=(1, 2)))
    _, e = np.frexp(fro)
    e = np.where(fro > 0, e, 0)
    mats *= np.ldexp(1.0, -e)[:, None, None]
    exps += e


def _log_norm(mats: np.ndarray, exps: np.ndarray) -> np.ndarray:
    """log of the spectral norm of mats * 2^exps without rounding the scale."""
    s = spectral_norms(mats)
    mant, e = np.frexp(s)
    with np.errstate(divide="ignore"):
        return np.log(mant) + (exps + e) * LN2


def _cartan_chunk(mu: FiniteMeasure, ns: Sequence[int], kmax: int, rng, size: int,
                  renorm: int = 5) -> dict[int, np.ndarray]:
    mats, _ = mu.float_atoms()
    d = mu.dim
    kmax = min(kmax, d)
    ext = [np.array([exterior_power(m, k) for m in mats]) for k in range(1, min(kmax, d - 1) + 1)]
    with np.errstate(divide="ignore"):
        logdet = np.log(np.abs(np.linalg.det(mats)))
    prods = [np.broadcast_to(np.eye(e.shape[1]), (size,) + e.shape[1:]).copy() for e in ext]
    exps = [np.zeros(size, dtype=np.int64) for _ in ext]
    det_acc = np.zeros(size)
    want = set(ns)
    out: dict[int, np.ndarray] = {}

    def record(t: int) -> None:
        cum = [_log_norm(p, e) for p, e in zip(prods, exps)]
        if kmax == d:
            cum.append(det_acc.copy())
        kap = np.empty((size, len(cum)))
        prev = np.zeros(size)
        for k, c in enumerate(cum):
            kap[:, k] = c - prev
            prev = c
        out[t] = kap

    if 0 in want:
        record(0)
    for t, idx in enumerate(iter_steps(mu, max(ns), size, rng), 1):
        for j, e in enumerate(ext):
            prods[j] = np.matmul(e[idx], prods[j])
        det_acc += logdet[idx]
        if t % renorm == 0:
            for p, e in zip(prods, exps):
                _pow2_normalise(p, e)
        if t in want:
            record(t)
    return out


def sample_cartan(mu: FiniteMeasure, ns: Sequence[int], samples: int, rng_seed: int,
                  kmax: int | None = None) -> dict[int, np.ndarray]:
    """Cartan projections κ(g_n ... g_1) for every n in ns, same trajectories (prefixes).

    Returns n -> array (samples, kmax).
    """
    kmax = kmax or mu.dim
    chunks = map_chunks(lambda rng, size, _c: _cartan_chunk(mu, ns, kmax, rng, size), samples, rng_seed)
    return {n: np.concatenate([c[n] for c in chunks]) for n in ns}


def _vector_chunk(mu: FiniteMeasure, ns: Sequence[int], v: np.ndarray, rng, size: int,
                  kappa1: bool) -> dict[int, np.ndarray]:
    """log(||P v|| / ||v||), optionally paired with κ_1(P), at each checkpoint."""
    mats, _ = mu.float_atoms()
    d = mu.dim
    v = np.asarray(v, dtype=float)
    w = np.broadcast_to(v / np.linalg.norm(v), (size, d)).copy()
    logs = np.zeros(size)
    prod = np.broadcast_to(np.eye(d), (size, d, d)).copy()
    exps = np.zeros(size, dtype=np.int64)
    want = set(ns)
    out = {}

    def record(t):
        growth = logs + np.log(np.linalg.norm(w, axis=1))
        out[t] = (growth, _log_norm(prod, exps)) if kappa1 else (growth, None)

    if 0 in want:
        record(0)
    for t, idx in enumerate(iter_steps(mu, max(ns), size, rng), 1):
        g = mats[idx]
        w = np.einsum("sij,sj->si", g, w)
        nrm = np.linalg.norm(w, axis=1)
        w /= nrm[:, None]
        logs += np.log(nrm)
        if kappa1:
            prod = np.matmul(g, prod)
            if t % 5 == 0:
                _pow2_normalise(prod, exps)
        if t in want:
            record(t)
    return out


def sample_vector_growth(mu, ns, v, samples, rng_seed, with_norm=False):
    chunks = map_chunks(lambda rng, size, _c: _vector_chunk(mu, ns, v, rng, size, with_norm),
                        samples, rng_seed)
    res = {}
    for n in ns:
        growth = np.concatenate([c[n][0] for c in chunks])
        norm = np.concatenate([c[n][1] for c in chunks]) if with_norm else None
        res[n] = (growth, norm)
    return res


# ---------------------------------------------------------------------------
# estimators


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    if len(x) < 2:
        return float(np.mean(x)), 0.0
    return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(len(x)))


def top_exponent(mu: FiniteMeasure, n: int, samples: int, rng_seed: int) -> tuple[float, float]:
    """Mean of (1/n) log ||g_n ... g_1|| with its CLT standard error."""
    if n < 1:
        raise ValueError("n must be >= 1")
    kap = sample_cartan(mu, [n], samples, rng_seed, kmax=1)[n][:, 0] / n
    return _mean_se(kap)


@dataclass(frozen=True)
class SpectrumEstimate:
    lam: tuple[float, ...]
    stderr: tuple[float, ...]
    n: int
    samples: int

    @property
    def total(self) -> float:
        return math.fsum(self.lam)

    @property
    def total_stderr(self) -> float:
        return math.fsum(self.stderr)


def _qr_chunk(mu: FiniteMeasure, n: int, reorth: int, rng, size: int) -> np.ndarray:
    mats, _ = mu.float_atoms()
    d = mu.dim
    frame = np.broadcast_to(np.eye(d), (size, d, d)).copy()
    logs = np.zeros((size, d))

    def reorthonormalise(fr):
        q, r = np.linalg.qr(fr)
        diag = np.diagonal(r, axis1=1, axis2=2)
        with np.errstate(divide="ignore"):
            logs[:] += np.log(np.abs(diag))
        return q

    for t, idx in enumerate(iter_steps(mu, n, size, rng), 1):
        frame = np.matmul(mats[idx], frame)
        if t % reorth == 0 and t != n:
            frame = reorthonormalise(frame)
    reorthonormalise(frame)
    return logs / n


def spectrum(mu: FiniteMeasure, n: int, samples: int, rng_seed: int, reorth_period: int = 5) -> SpectrumEstimate:
    """Lyapunov spectrum from a QR-reorthonormalised frame."""
    if n < reorth_period:
        raise ValueError("n must be >= reorth_period")
    vals = np.concatenate(map_chunks(lambda rng, size, _c: _qr_chunk(mu, n, reorth_period, rng, size),
                                     samples, rng_seed))
    pairs = [_mean_se(vals[:, k]) for k in range(mu.dim)]
    return SpectrumEstimate(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs), n, samples)


@dataclass(frozen=True)
class LyapunovVector:
    values: tuple[float, ...]
    stderr: tuple[float, ...]
    n: int
    samples: int


def lyapunov_vector(mu: FiniteMeasure, n: int, samples: int, rng_seed: int) -> LyapunovVector:
    """Mean Cartan projection divided by n."""
    kap = sample_cartan(mu, [n], samples, rng_seed)[n] / n
    pairs = [_mean_se(kap[:, k]) for k in range(kap.shape[1])]
    return LyapunovVector(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs), n, samples)


# ---------------------------------------------------------------------------
# tails


def clopper_pearson(count: int, total: int, level: float = 0.95) -> tuple[float, float]:
    alpha = 1.0 - level
    lo = 0.0 if count == 0 else float(stats.beta.ppf(alpha / 2, count, total - count + 1))
    hi = 1.0 if count == total else float(stats.beta.ppf(1 - alpha / 2, count + 1, total - count))
    return lo, hi


@dataclass(frozen=True)
class TailReport:
    omega: float
    ns: tuple[int, ...]
    counts: tuple[int, ...]
    probs: tuple[float, ...]
    ci_low: tuple[float, ...]
    ci_high: tuple[float, ...]
    samples: int
    mode: str
    reference: float
    reference_stderr: float

    def rows(self) -> list[tuple]:
        return list(zip(self.ns, self.counts, self.probs, self.ci_low, self.ci_high))


def deviation_tails(mu: FiniteMeasure, omega: float, ns: Sequence[int], samples: int, mode: str = "norm",
                    rng_seed: int = 0, *, k: int = 1, v: Sequence[float] | None = None,
                    reference: tuple[float, float] | None = None, reorth_period: int = 5) -> TailReport:
    """Empirical P(|(1/n) X_n - λ| >= ω) for each n, on one set of trajectories.

    mode "norm": X = log||g||; "singular_k": X = log σ_k(g); "vector": X = log(||gv||/||v||).
    The reference λ defaults to the plug-in from spectrum() at max(ns).
    """
    ns = tuple(sorted(ns))
    index = 0 if mode in ("norm", "vector") else k - 1
    if reference is None:
        est = spectrum(mu, max(max(ns), reorth_period), samples, rng_seed + 1, reorth_period)
        reference = (est.lam[index], est.stderr[index])
    lam = reference[0]
    if mode == "vector":
        if v is None:
            raise ValueError("vector mode needs v")
        growth = sample_vector_growth(mu, ns, v, samples, rng_seed)
        series = {n: growth[n][0] for n in ns}
    elif mode in ("norm", "singular_k"):
        kap = sample_cartan(mu, ns, samples, rng_seed, kmax=index + 1)
        series = {n: kap[n][:, index] for n in ns}
    else:
        raise ValueError(f"unknown mode {mode!r}")
    counts, probs, lo, hi = [], [], [], []
    for n in ns:
        c = int(np.count_nonzero(np.abs(series[n] / n - lam) >= omega))
        a, b = clopper_pearson(c, samples)
        counts.append(c)
        probs.append(c / samples)
        lo.append(a)
        hi.append(b)
    label = mode if mode != "singular_k" else f"singular_{k}"
    return TailReport(omega, ns, tuple(counts), tuple(probs), tuple(lo), tuple(hi), samples, label,
                      float(reference[0]), float(reference[1]))


def _contraction_ratios(mu, n, v, samples, rng_seed) -> np.ndarray:
    growth, lognorm = sample_vector_growth(mu, [n], v, samples, rng_seed, with_norm=True)[n]
    # ||gv|| / (||g|| ||v||) <= 1 for the spectral norm; clip rounding excess
    return np.minimum(np.exp(growth - lognorm), 1.0)


def contraction_tail(mu: FiniteMeasure, n: int, v: Sequence[float], rho: float, samples: int,
                     rng_seed: int) -> float:
    """Empirical P(||gv|| <= rho ||g|| ||v||)."""
    r = _contraction_ratios(mu, n, v, samples, rng_seed)
    return float(np.count_nonzero(r <= rho)) / samples


@dataclass
class ContractionFit:
    rhos: list[float]
    counts: list[int]
    probs: list[float]
    kappa_hat: float | None
    used: list[float] = field(default_factory=list)
    dropped: list[float] = field(default_factory=list)


def contraction_fit(mu: FiniteMeasure, n: int, v: Sequence[float], rhos: Sequence[float], samples: int,
                    rng_seed: int, min_count: int = 20) -> ContractionFit:
    """Sweep rho on one trajectory set; least-squares slope of log P against log rho."""
    r = _contraction_ratios(mu, n, v, samples, rng_seed)
    counts = [int(np.count_nonzero(r <= rho)) for rho in rhos]
    probs = [c / samples for c in counts]
    used = [rho for rho, c in zip(rhos, counts) if c >= min_count]
    dropped = [rho for rho, c in zip(rhos, counts) if c < min_count]
    kappa = None
    if len(used) >= 2:
        x = np.log(used)
        y = np.log([p for rho, p, c in zip(rhos, probs, counts) if c >= min_count])
        kappa = float(np.polyfit(x, y, 1)[0])
    return ContractionFit(list(rhos), counts, probs, kappa, used, dropped)
