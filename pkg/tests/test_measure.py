import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from torwalk.errors import AtomCapExceeded, ConfigError
from torwalk.linalg import IntMatrix, RealMatrix, operator_norm, word_product
from torwalk.measure import (FiniteMeasure, add_power, convolve_add, convolve_diff, convolve_mult,
                             dump_measure, exponential_moment, load_measure, power_exact, rescale,
                             sample_product, sample_products, symmetrize)
from torwalk.lyapunov import top_exponent

A = IntMatrix.group_element([[1, 1], [0, 1]])
B = IntMatrix.group_element([[1, 0], [1, 1]])
I2 = IntMatrix.identity(2)
SL2 = symmetrize([A, B])


def test_from_pairs_merges_and_sorts():
    mu = FiniteMeasure.from_pairs([(B, "1/4"), (A, "1/4"), (B, "1/4"), (I2, 0)])
    assert len(mu) == 2
    assert mu.weight_of(B) == Fraction(1, 2)
    assert [p.key() for p in mu.support] == sorted(p.key() for p in mu.support)
    with pytest.raises(ValueError):
        FiniteMeasure.from_pairs([(A, "3/4"), (B, "1/2")])


def test_convolve_mult_identity_and_square():
    assert convolve_mult(FiniteMeasure.dirac(I2), SL2) == SL2
    mu = FiniteMeasure.uniform([A, B])
    sq = convolve_mult(mu, mu)
    want = {A @ A, A @ B, B @ A, B @ B}
    assert set(sq.support) == want and all(w == Fraction(1, 4) for w in sq.weights)


def test_convolve_mult_associative():
    mu = FiniteMeasure.from_pairs([(A, "1/2"), (B.inverse(), "1/3"), (A @ B, "1/6")])
    assert convolve_mult(convolve_mult(mu, mu), mu) == convolve_mult(mu, convolve_mult(mu, mu))


def test_additive_convolutions():
    mu = FiniteMeasure.from_pairs([(A, "1/2"), (B, "1/3"), (A @ B, "1/6")])
    diff = convolve_diff(mu, mu)
    assert diff.weight_of(IntMatrix.zeros(2)) >= sum(w * w for w in mu.weights)
    assert convolve_add(FiniteMeasure.dirac(IntMatrix.zeros(2)), mu) == mu
    two = FiniteMeasure.uniform([A, B])
    assert len(add_power(two, 2)) == 3


def test_power_exact_cases():
    assert power_exact(SL2, 0) == FiniteMeasure.dirac(I2)
    mu = FiniteMeasure.uniform([A, B])
    p3 = power_exact(mu, 3)
    words = {word_product(w) for w in itertools.product([A, B], repeat=3)}
    assert len(words) == 8 and set(p3.support) == words
    assert all(w == Fraction(1, 8) for w in p3.weights)
    with pytest.raises(AtomCapExceeded) as exc:
        power_exact(SL2, 3, atom_cap=4)
    assert exc.value.at_step == 2


def test_power_exact_left_multiplies_new_letter():
    mu = FiniteMeasure.from_pairs([(A, "1/2"), (B, "1/2")])
    p2 = power_exact(mu, 2)
    assert p2.weight_of(A @ B) == Fraction(1, 4)


def test_sample_product_dirac_and_determinism():
    assert sample_product(FiniteMeasure.dirac(A), 5, 0) == IntMatrix(((1, 5), (0, 1)))
    assert sample_product(SL2, 40, 123) == sample_product(SL2, 40, 123)


def test_sample_frequencies_within_4_sigma():
    mu = FiniteMeasure.from_pairs([(A, "1/2"), (B, "1/3"), (A.inverse(), "1/6")])
    draws = sample_products(mu, 1, 100_000, 9)
    for g, w in mu.atoms:
        p = float(w)
        count = sum(1 for x in draws if x == g)
        assert abs(count - 1e5 * p) <= 4 * math.sqrt(1e5 * p * (1 - p))


def test_sample_products_stream_independent_of_thread_count():
    from torwalk._parallel import set_threads
    set_threads(1)
    a = sample_products(SL2, 20, 70_000, 4)
    set_threads(4)
    b = sample_products(SL2, 20, 70_000, 4)
    set_threads(None)
    assert a == b


def test_rescale_cases():
    assert rescale(SL2, 0.3, 0).support == [RealMatrix.from_numpy(g.to_numpy()) for g in SL2.support]
    g = IntMatrix(((2, 1), (1, 1)))
    lam = math.log(operator_norm(g))
    scaled = rescale(FiniteMeasure.dirac(g), lam, 1)
    assert abs(np.linalg.norm(scaled.support[0].to_numpy(), 2) - 1.0) <= 1e-12


def test_rescaled_median_norm_within_deviation_band():
    lam, _ = top_exponent(SL2, 200, 2000, 1)
    n, omega = 50, 0.1
    mu_n = FiniteMeasure.empirical(sample_products(SL2, n, 10_000, 2))
    norms = [np.linalg.norm(p.to_numpy(), 2) for p in rescale(mu_n, lam, n).support]
    med = float(np.median(norms))
    assert math.exp(-omega * n) <= med <= math.exp(omega * n)


def test_exponential_moment():
    assert exponential_moment(FiniteMeasure.dirac(I2), 0.7) == 1.0
    g = IntMatrix(((2, 1), (1, 1)))
    mu = FiniteMeasure.uniform([g, g.inverse()])
    assert abs(exponential_moment(mu, 1.0) - (operator_norm(g) + operator_norm(g.inverse())) / 2) <= 1e-15
    vals = [exponential_moment(SL2, e) for e in (0.1, 0.5, 1.0, 2.0)]
    assert vals == sorted(vals)


def test_measure_file_round_trip(tmp_path):
    path = tmp_path / "m.json"
    dump_measure(SL2, path)
    assert load_measure(path) == SL2
    with pytest.raises(ConfigError, match="measure_path not found"):
        load_measure(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text('{"dim": 2, "atoms": []}')
    with pytest.raises(ConfigError):
        load_measure(tmp_path / "bad.json")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 9), min_size=2, max_size=4))
def test_total_mass_preserved_by_convolution(raw):
    s = sum(raw)
    mats = [A, B, A.inverse(), B.inverse()][:len(raw)]
    mu = FiniteMeasure.from_pairs(zip(mats, (Fraction(r, s) for r in raw)))
    assert convolve_mult(mu, mu).total == 1
    assert convolve_diff(mu, mu).total == 1
