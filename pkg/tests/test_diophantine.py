import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from torwalk.diophantine import dioph_screen, nearest_rational, verify_main_theorem, wq_mass, wq_mass_exact
from torwalk.errors import NotApplicable
from torwalk.presets import perturbed_rational_start, sl2_dense_measure
from torwalk.torus import TorusPoint, exact_distribution, parse_point, sample_endpoints

SL2 = sl2_dense_measure()


def brute_force_nearest(coords, Q):
    """Exhaustive over q <= Q and both roundings per coordinate; ties go to the smaller q."""
    best = None
    for q in range(1, Q + 1):
        for choice in itertools.product((math.floor, math.ceil), repeat=len(coords)):
            cand = [Fraction(f(c * q), q) for f, c in zip(choice, coords)]
            d = max(abs(c - p) for c, p in zip(coords, cand))
            if best is None or d < best[1]:
                best = (q, d)
    return best


def w_points(Q, d):
    return {tuple(Fraction(v, q) for v in idx) for q in range(1, Q + 1) for idx in itertools.product(range(q), repeat=d)}


def test_nearest_rational_exact_hit():
    r = nearest_rational(TorusPoint.exact([Fraction(1, 5), Fraction(2, 5)]), 5)
    assert r.q == 5 and r.dist_exact == 0


def test_nearest_rational_Q1():
    x = TorusPoint.exact([Fraction(3, 10), Fraction(7, 8)])
    r = nearest_rational(x, 1)
    assert r.q == 1 and r.dist_exact == Fraction(3, 10)


def test_nearest_rational_matches_brute_force():
    x = parse_point("phi-1,sqrt2-1")
    got = nearest_rational(x, 10)
    want = brute_force_nearest(x.coords, 10)
    assert (got.q, got.dist_exact) == want
    rng = np.random.default_rng(3)
    for _ in range(30):
        y = TorusPoint.exact([Fraction(int(v), 9973) for v in rng.integers(0, 9973, size=2)])
        r = nearest_rational(y, 12)
        assert (r.q, r.dist_exact) == brute_force_nearest(y.coords, 12)


def test_wq_mass_rational_and_dense_cases():
    pts = [TorusPoint.exact([Fraction(1, 3), Fraction(2, 3)]), TorusPoint.exact([Fraction(1, 2), 0])]
    assert wq_mass(pts, 3, 0.0) == 1.0
    rng = np.random.default_rng(4)
    Q = 4
    assert wq_mass(rng.random((1000, 1)), Q, 1 / (2 * Q)) == 1.0


def test_wq_mass_area_oracle():
    Q, rho, N = 3, 0.01, 1_000_000
    pts = w_points(Q, 2)
    assert len(pts) == 12
    # balls are disjoint: closest pair of W_3 points is 1/6 apart > 2ρ
    area = len(pts) * (2 * rho) ** 2
    sample = np.random.default_rng(5).random((N, 2))
    m = wq_mass(sample, Q, rho)
    assert abs(m - area) <= 4 * math.sqrt(area * (1 - area) / N)


def test_wq_mass_exact_on_rational_orbit():
    x0 = TorusPoint.exact([Fraction(1, 5), Fraction(2, 5)])
    dist = exact_distribution(SL2, 6, x0)
    assert wq_mass_exact(dist, x0.denom, 5) == 1
    assert wq_mass_exact(dist, x0.denom, 4) == 0


def test_verify_zero_start():
    rep = verify_main_theorem(SL2, TorusPoint.zero(2), (1, 0), 0.4, 10, 0.05, 1.0)
    assert rep.found and rep.witness.q == 1 and rep.witness.dist_exact == 0
    assert abs(rep.coefficient.value) == 1


def test_verify_rational_start_every_n():
    x0 = TorusPoint.exact([Fraction(1, 5), Fraction(2, 5)])
    for n in (1, 2, 5, 10, 20):
        rep = verify_main_theorem(SL2, x0, (5, 0), 0.45, n, 0.05, 1.0)
        assert rep.method == "exact" and abs(rep.coefficient.value) == 1
        assert rep.witness.q == 5 and rep.witness.dist_exact == 0


def test_verify_perturbed_start_finds_seven():
    x0 = perturbed_rational_start()
    lam = 0.05
    n = 20
    assert math.exp(-lam * n) > 2.0 ** -40
    rep = verify_main_theorem(SL2, x0, (7, 0), 0.4, n, lam, 1.0, samples=5000, rng_seed=1)
    assert rep.found and rep.witness.q == 7
    assert rep.witness.dist_exact == Fraction(1, 2 ** 40)
    assert brute_force_nearest(x0.coords, rep.Q)[0] == 7
    assert abs(rep.exponent_needed - math.log(7) / math.log(7 / 0.4)) <= 1e-15


def test_verify_hypothesis_failure_raises():
    x0 = parse_point("phi-1,sqrt2-1")
    with pytest.raises(NotApplicable):
        verify_main_theorem(SL2, x0, (1, 0), 0.4, 30, 0.05, 1.0, samples=20_000)


def test_verify_rejects_bad_lambda():
    with pytest.raises(ValueError):
        verify_main_theorem(SL2, TorusPoint.zero(2), (1, 0), 0.4, 10, 0.2, 1.0, lambda1_hat=0.1)


def test_screen_mass_at_zero():
    rep = dioph_screen(SL2, np.zeros((100, 2)), 0.01, 10, 1.0)
    assert len(rep.centers) == 1 and rep.centers[0]["in_neighbourhood"]
    assert rep.counterexamples == []


def test_screen_haar_no_center_passes():
    sample = np.random.default_rng(6).random((20_000, 2))
    rep = dioph_screen(None, sample, 0.01, 0, 1.0)
    assert rep.centers == []


def test_screen_rational_orbit():
    rho = 1e-7
    assert math.floor(rho ** -0.1) >= 5
    sample = sample_endpoints(SL2, 15, TorusPoint.exact([Fraction(1, 5), Fraction(2, 5)]), 5000, 7)
    rep = dioph_screen(SL2, sample, rho, 15, 1.0)
    assert rep.centers and rep.counterexamples == []
