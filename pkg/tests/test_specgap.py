import math
from fractions import Fraction

import numpy as np
import pytest

from torwalk.linalg import IntMatrix
from torwalk.measure import FiniteMeasure, sample_products
from torwalk.presets import sl2_dense_measure
from torwalk.specgap import (closure, dense_operator, distribution_trace, gap_sweep, max_atom_mod_p, mod_det,
                             operator_gap, reduce_mod, second_eigenvalue, table_for, uniformization_time)

SL2 = sl2_dense_measure()


def dense_gap_oracle(mu, table):
    """1 - largest singular value of T restricted to mean-zero functions, by dense SVD."""
    T = dense_operator(mu, table)
    n = table.order
    P = np.eye(n) - np.full((n, n), 1.0 / n)
    return 1.0 - np.linalg.svd(P @ T @ P, compute_uv=False)[0]


def test_reduce_mod_cases():
    assert reduce_mod(IntMatrix.identity(2), 5) == ((1, 0), (0, 1))
    assert reduce_mod(IntMatrix(((1, 6), (0, 1))), 5) == ((1, 1), (0, 1))
    with pytest.raises(ValueError):
        reduce_mod(IntMatrix.identity(2), 6)


def test_reduction_preserves_det():
    for g in sample_products(SL2, 25, 100, 3):
        assert mod_det(reduce_mod(g, 7), 7) == 1


@pytest.mark.parametrize("p", [2, 3, 5])
def test_closure_orders_match_formula(p):
    assert table_for(SL2, p).order == p * (p * p - 1)


def test_closure_of_identity():
    assert closure([((1, 0), (0, 1))], 5).order == 1


def test_operator_gap_trivial_cases():
    table = table_for(SL2, 3)
    assert abs(operator_gap(FiniteMeasure.dirac(IntMatrix.identity(2)), table).norm - 1.0) <= 1e-12
    # uniform on a cyclic group Z/5 generated by the shear: one-step uniformization
    A = IntMatrix.group_element([[1, 1], [0, 1]])
    powers = [IntMatrix(((1, k), (0, 1))) for k in range(5)]
    cyc = table_for(FiniteMeasure.uniform([A]), 5)
    assert cyc.order == 5
    assert operator_gap(FiniteMeasure.uniform(powers), cyc).norm <= 1e-12


def test_gap_mod5_matches_dense():
    table = table_for(SL2, 5)
    res = operator_gap(SL2, table)
    assert res.gap > 0.05
    assert abs(res.gap - dense_gap_oracle(SL2, table)) <= 1e-8


def test_second_eigenvalue_matches_dense():
    table = table_for(SL2, 7)
    ev = np.linalg.eigvalsh(dense_operator(SL2, table))
    assert abs(second_eigenvalue(SL2, table) - ev[-2]) <= 1e-8


def test_distribution_trace_exact_mass():
    table = table_for(SL2, 5)
    for t, counts, scale in distribution_trace(SL2, table, 30):
        assert sum(counts) == scale
    assert max_atom_mod_p(SL2, table, 0) == 1


def test_max_atom_tends_to_uniform():
    table = table_for(SL2, 5)
    assert abs(float(max_atom_mod_p(SL2, table, 400)) - 1 / 120) <= 1e-12


def test_uniformization_times_grow_slowly():
    sweep = gap_sweep(SL2, [5, 7, 11, 13])
    times = [r[3] for r in sweep.rows]
    assert times == sorted(times)
    assert all(t <= sweep.C * math.log(p) + 1e-12 for (p, _, _, t) in sweep.rows)
    assert sweep.slope is not None
    first = uniformization_time(SL2, table_for(SL2, 5))
    assert first == times[0]
