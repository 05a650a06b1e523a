import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from torwalk.errors import ConfigError
from torwalk.linalg import (IntMatrix, RealMatrix, cartan_projection, dump_matrix, mat_mul, operator_norm,
                            parse_matrix, singular_values, spectral_norms, word_product)
from torwalk.lyapunov import top_exponent
from torwalk.measure import FiniteMeasure, sample_product

PHI = (1 + math.sqrt(5)) / 2
A = IntMatrix.group_element([[1, 1], [0, 1]])
B = IntMatrix.group_element([[1, 0], [1, 1]])
GENS = [A, A.inverse(), B, B.inverse()]


def random_word(rng, length):
    return word_product([GENS[i] for i in rng.integers(0, 4, size=length)])


def sv_oracle(g: IntMatrix, dps: int = 60):
    """Singular values from mpmath's symmetric eigensolver on g^T g."""
    with mpmath.workdps(dps):
        m = mpmath.matrix([[int(v) for v in r] for r in g.entries])
        ev = mpmath.eigsy(m.T * m, eigvals_only=True)
        return sorted((float(mpmath.sqrt(max(e, 0))) for e in ev), reverse=True)


def test_mat_mul_identity_and_2x2():
    I = IntMatrix.identity(2)
    assert mat_mul(I, I) == I
    assert mat_mul(A, B) == IntMatrix(((2, 1), (1, 1)))


def test_mat_mul_associative_on_words():
    rng = np.random.default_rng(11)
    for _ in range(100):
        x, y, z = (random_word(rng, int(rng.integers(1, 40))) for _ in range(3))
        assert mat_mul(mat_mul(x, y), z) == mat_mul(x, mat_mul(y, z))


def test_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        mat_mul(A, IntMatrix.identity(3))


def test_group_element_checks_det():
    with pytest.raises(ValueError):
        IntMatrix.group_element([[2, 0], [0, 1]])
    assert A.det_hint == 1


def test_no_overflow_beyond_64_bits():
    g = word_product([A] * 10 + [B] * 10)
    p = IntMatrix.identity(2)
    for _ in range(20):
        p = p @ g
    assert p.max_abs() > 2 ** 64
    assert p.det == 1


def test_operator_norm_cases():
    assert operator_norm(IntMatrix.identity(3)) == 1.0
    assert abs(operator_norm(A) - PHI) <= 1e-15
    perm = IntMatrix(((0, 1, 0), (0, 0, 1), (1, 0, 0)))
    assert abs(operator_norm(perm) - 1.0) <= 1e-15


def test_singular_values_identity_and_shear():
    prof = singular_values(IntMatrix.identity(2))
    assert prof.sigma == (1.0, 1.0) and prof.kappa == (0.0, 0.0)
    prof = singular_values(A)
    assert abs(prof.sigma[0] - PHI) <= 1e-15 and abs(prof.sigma[1] - 1 / PHI) <= 1e-15


def test_singular_values_match_mpmath_oracle():
    rng = np.random.default_rng(5)
    for _ in range(20):
        g = random_word(rng, 60)
        got = singular_values(g).sigma
        want = sv_oracle(g)
        for a, b in zip(got, want):
            assert abs(a - b) <= 1e-13 * b


def test_singular_values_of_inverse_reverse():
    rng = np.random.default_rng(6)
    for _ in range(20):
        g = random_word(rng, 30)
        s, si = singular_values(g).sigma, singular_values(g.inverse()).sigma
        for k in range(2):
            assert abs(si[k] - 1 / s[1 - k]) <= 1e-12 * si[k]


def test_sum_log_sigma_zero_for_unimodular_long_word():
    rng = np.random.default_rng(7)
    g = random_word(rng, 1000)
    prof = singular_values(g)
    assert abs(prof.sum_log) <= 1e-9 * abs(prof.kappa[0])
    assert all(s > 0 for s in prof.sigma)
    assert list(prof.sigma) == sorted(prof.sigma, reverse=True)


def test_singular_input_is_flagged():
    prof = singular_values(IntMatrix(((1, 2), (2, 4))))
    assert prof.singular and prof.kappa is None


def test_cartan_projection():
    assert cartan_projection(IntMatrix.identity(2)) == (0.0, 0.0)
    k = cartan_projection(A)
    assert abs(k[0] - math.log(PHI)) <= 1e-15 and abs(k[1] + math.log(PHI)) <= 1e-15


def test_cartan_of_random_product_near_growth_rate():
    mu = FiniteMeasure.uniform(GENS)
    lam, _ = top_exponent(mu, 50, 2000, 3)
    vals = [cartan_projection(sample_product(mu, 50, 99, s))[0] for s in range(200)]
    # deviation band at n = 50: typical |κ1/n - λ| well below 0.1
    assert abs(np.median(vals) / 50 - lam) <= 0.1


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-50, 50), min_size=4, max_size=4))
def test_spectral_norm_closed_form_matches_numpy(entries):
    m = np.array(entries, dtype=float).reshape(2, 2)
    assert abs(spectral_norms(m) - np.linalg.norm(m, 2)) <= 1e-12 * max(1.0, np.linalg.norm(m, 2))


def test_real_matrix_normalises_negative_zero():
    r = RealMatrix.from_numpy(np.array([[-0.0, 1.0], [0.0, 2.0]]))
    assert math.copysign(1.0, r.entries[0][0]) == 1.0
    with pytest.raises(ValueError):
        RealMatrix(((float("nan"), 0.0), (0.0, 1.0)))


def test_matrix_json_round_trip_with_big_entries():
    g = word_product([A] * 3 + [B] * 2)
    big = IntMatrix(((2 ** 70, 1), (3, -(2 ** 65))))
    for m in (g, big):
        assert parse_matrix(dump_matrix(m)) == m
