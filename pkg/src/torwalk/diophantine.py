"""Rational points with bounded denominator: nearest approximations, W_Q masses,
witness search for the quantitative equidistribution statement, and a screen of
heavy balls against rational neighbourhoods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import NotApplicable
from .measure import FiniteMeasure
from .torus import (FourierEstimate, TorusPoint, _as_array, ball_masses, empirical_fourier,
                    fourier_exact_rational, format_point)


@dataclass(frozen=True)
class RationalApprox:
    q: int
    xprime: TorusPoint
    dist_exact: Fraction

    @property
    def dist(self) -> float:
        return float(self.dist_exact)

    def to_json(self) -> dict:
        return {"q": self.q, "xprime": format_point(self.xprime), "dist": self.dist}


def _round_q(nums: Sequence[int], m: int, q: int) -> tuple[list[int], int]:
    """Per-coordinate nearest p_i to q*x_i (ties to floor); returns (p, max numerator of error over q*m)."""
    ps = []
    worst = 0
    for v in nums:
        p, rem = divmod(q * v, m)
        if 2 * rem > m:
            p += 1
            rem = m - rem
        ps.append(p)
        worst = max(worst, rem)
    return ps, worst


def _approx_distances(x: TorusPoint, Q: int):
    m = x.denom
    for q in range(1, Q + 1):
        ps, worst = _round_q(x.nums, m, q)
        yield q, ps, worst


def nearest_rational(x: TorusPoint, Q: int) -> RationalApprox:
    """Closest point of (1/q)Z^d/Z^d over q = 1..Q in the sup metric; ties to the smallest q."""
    if Q < 1:
        raise ValueError("Q must be >= 1")
    best = None
    for q, ps, worst in _approx_distances(x, Q):
        # distance = worst / (q m); compare worst/q across q without the common m
        if best is None or worst * best[0] < best[2] * q:
            best = (q, ps, worst)
    q, ps, worst = best
    return RationalApprox(q, TorusPoint.exact([Fraction(p, q) for p in ps]), Fraction(worst, q * x.denom))


def first_within(x: TorusPoint, Q: int, rho: float) -> RationalApprox | None:
    """Smallest q <= Q with a rational point within rho, or None."""
    bound = Fraction(rho)
    for q, ps, worst in _approx_distances(x, Q):
        dist = Fraction(worst, q * x.denom)
        if dist <= bound:
            return RationalApprox(q, TorusPoint.exact([Fraction(p, q) for p in ps]), dist)
    return None


def _wq_dist_float(arr: np.ndarray, Q: int) -> np.ndarray:
    best = np.full(len(arr), np.inf)
    for q in range(1, Q + 1):
        y = q * arr
        dist = np.max(np.abs(y - np.rint(y)), axis=1) / q
        best = np.minimum(best, dist)
    return best


def wq_mass(samples, Q: int, rho: float) -> float:
    """Fraction of samples within rho of W_Q (rational points with denominator <= Q)."""
    if len(samples) == 0:
        return 0.0
    if isinstance(samples, np.ndarray):
        return float(np.count_nonzero(_wq_dist_float(_as_array(samples), Q) <= rho)) / len(samples)
    bound = Fraction(rho)
    hits = 0
    for x in samples:
        if x.mode == "exact":
            hits += nearest_rational(x, Q).dist_exact <= bound
        else:
            hits += nearest_rational(x, Q).dist <= rho
    return hits / len(samples)


def wq_mass_exact(dist: dict[tuple[int, ...], Fraction], denom: int, Q: int, rho: Fraction | int = 0) -> Fraction:
    """Exact law mass of the rho-neighbourhood of W_Q for a finite-state distribution."""
    total = Fraction(0)
    for state, w in dist.items():
        x = TorusPoint(state, denom)
        if nearest_rational(x, Q).dist_exact <= rho:
            total += w
    return total


# ---------------------------------------------------------------------------
# witness search


@dataclass
class TheoremReport:
    coefficient: FourierEstimate
    t: float
    n: int
    lam: float
    Q: int
    threshold: float
    witness: RationalApprox
    found: bool
    exponent_needed: float | None
    method: str

    def to_json(self) -> dict:
        c = self.coefficient
        return {
            "coefficient": {"re": c.value.real, "im": c.value.imag, "abs": abs(c.value), "stderr": c.stderr},
            "witness": self.witness.to_json(),
            "exponent_needed": self.exponent_needed,
            "found": self.found,
            "n": self.n,
            "t": self.t,
            "lambda": self.lam,
            "Q": self.Q,
            "threshold": self.threshold,
            "method": self.method,
        }


def _sup(a: Sequence[int]) -> int:
    return max(abs(v) for v in a)


def verify_main_theorem(mu: FiniteMeasure, x0: TorusPoint, a: Sequence[int], t: float, n: int, lam: float,
                        C_window: float, samples: int = 10_000, rng_seed: int = 0, *,
                        lambda1_hat: float | None = None, estimate: FourierEstimate | None = None,
                        method: str = "auto", max_states: int = 200_000) -> TheoremReport:
    """Check the coefficient hypothesis, then search W_Q for a point within e^{-λn} of x0.

    The coefficient comes from the exact finite chain when x0 is rational with a
    small state space, else from Monte Carlo (or a caller-supplied estimate).
    """
    a = tuple(int(v) for v in a)
    if not 0 < t < 0.5:
        raise ValueError("t must lie in (0, 1/2)")
    if lam <= 0 or (lambda1_hat is not None and lam >= lambda1_hat):
        raise ValueError("need 0 < lambda < lambda1_hat")
    norm_a = _sup(a)
    if norm_a == 0:
        raise ValueError("a must be nonzero")
    if estimate is None:
        use_exact = method == "exact" or (method == "auto" and x0.mode == "exact"
                                          and x0.denom ** x0.dim <= max_states)
        if use_exact:
            value = fourier_exact_rational(mu, n, x0, a, max_states)
            estimate = FourierEstimate(a, value, 0.0, 0)
            method = "exact"
        else:
            estimate = empirical_fourier(mu, n, x0, a, samples, rng_seed)
            method = "monte-carlo"
    else:
        method = "supplied"
    if abs(estimate.value) - 3 * estimate.stderr < t:
        raise NotApplicable(f"|coefficient| = {abs(estimate.value):.4g} below t = {t}", estimate)
    ratio = norm_a / t
    Q = math.ceil(ratio ** C_window)
    threshold = math.exp(-lam * n)
    witness = nearest_rational(x0, Q)
    found = witness.dist <= threshold
    exponent = math.log(witness.q) / math.log(ratio) if found else None
    return TheoremReport(estimate, t, n, lam, Q, threshold, witness, found, exponent, method)


# ---------------------------------------------------------------------------
# heavy-ball screen


@dataclass
class ScreenReport:
    rho: float
    eta_fit: float
    n_used: int
    Q: int
    threshold_mass: float
    centers: list[dict]
    counterexamples: list[dict]
    sensitivity: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "rho": self.rho, "eta_fit": self.eta_fit, "n_used": self.n_used, "Q": self.Q,
            "threshold_mass": self.threshold_mass, "passing_centers": len(self.centers),
            "counterexamples": self.counterexamples, "sensitivity": self.sensitivity,
        }


def dioph_screen(mu: FiniteMeasure | None, nu_samples, rho: float, n_used: int, eta_fit: float) -> ScreenReport:
    """Centers (distinct sample points) with ball mass >= rho^eta_fit, tested against W_{rho^-1/10}^{(rho^9/10)}.

    `mu` is carried for provenance only: the screen acts on the supplied samples.
    """
    arr = _as_array(nu_samples)
    centers, first = np.unique(arr, axis=0, return_index=True)
    order = np.argsort(first)
    centers = centers[order]
    masses = ball_masses(arr, centers, rho)
    Q = max(1, math.floor(rho ** -0.1))
    near = rho ** 0.9

    def passing(eta):
        return np.nonzero(masses >= rho ** eta)[0]

    idx = passing(eta_fit)
    dist = _wq_dist_float(centers[idx], Q) if len(idx) else np.zeros(0)
    rows = [{"center": [float(v) for v in centers[i]], "mass": float(masses[i]), "wq_dist": float(dd),
             "in_neighbourhood": bool(dd <= near)} for i, dd in zip(idx, dist)]
    bad = [r for r in rows if not r["in_neighbourhood"]]
    sens = {}
    for factor in (0.5, 1.0, 2.0):
        eta = eta_fit * factor
        sens[f"eta={eta:g}"] = int(len(passing(eta)))
    return ScreenReport(rho, eta_fit, n_used, Q, rho ** eta_fit, rows, bad, sens)
