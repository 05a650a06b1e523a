"""Reductions mod p, the finite image group, the averaging operator on mean-zero
functions, and exact equidistribution times.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import CapExceeded, ConvergenceError
from .linalg import IntMatrix
from .measure import FiniteMeasure

ModMatrix = tuple[tuple[int, ...], ...]


def is_prime(p: int) -> bool:
    if p < 2:
        return False
    if p % 2 == 0:
        return p == 2
    f = 3
    while f * f <= p:
        if p % f == 0:
            return False
        f += 2
    return True


def reduce_mod(g: IntMatrix, p: int) -> ModMatrix:
    if not is_prime(p):
        raise ValueError(f"{p} is not prime")
    return tuple(tuple(v % p for v in row) for row in g.entries)


def mod_mul(a: ModMatrix, b: ModMatrix, p: int) -> ModMatrix:
    cols = list(zip(*b))
    return tuple(tuple(sum(x * y for x, y in zip(r, c)) % p for c in cols) for r in a)


def mod_det(a: ModMatrix, p: int) -> int:
    m = [list(r) for r in a]
    n = len(m)
    det = 1
    for c in range(n):
        piv = next((r for r in range(c, n) if m[r][c] % p), None)
        if piv is None:
            return 0
        if piv != c:
            m[c], m[piv] = m[piv], m[c]
            det = -det
        det = det * m[c][c] % p
        inv = pow(m[c][c], -1, p)
        for r in range(c + 1, n):
            f = m[r][c] * inv % p
            for k in range(c, n):
                m[r][k] = (m[r][k] - f * m[c][k]) % p
    return det % p


def mod_inverse(a: ModMatrix, p: int) -> ModMatrix:
    n = len(a)
    m = [list(r) + [int(i == j) for j in range(n)] for i, r in enumerate(a)]
    for c in range(n):
        piv = next((r for r in range(c, n) if m[r][c] % p), None)
        if piv is None:
            raise ValueError("matrix not invertible mod p")
        m[c], m[piv] = m[piv], m[c]
        inv = pow(m[c][c], -1, p)
        m[c] = [v * inv % p for v in m[c]]
        for r in range(n):
            if r != c and m[r][c]:
                f = m[r][c]
                m[r] = [(x - f * y) % p for x, y in zip(m[r], m[c])]
    return tuple(tuple(r[n:]) for r in m)


@dataclass(frozen=True, eq=False)
class FiniteGroupTable:
    p: int
    elements: tuple[ModMatrix, ...]
    index: dict
    gens: tuple[ModMatrix, ...]
    gen_action: np.ndarray     # (k, |G|): position of gens[j] · elements[i]

    @property
    def order(self) -> int:
        return len(self.elements)

    @property
    def identity_index(self) -> int:
        d = len(self.elements[0])
        return self.index[tuple(tuple(int(i == j) for j in range(d)) for i in range(d))]


def closure(support: Sequence[ModMatrix], p: int, cap: int = 1_000_000) -> FiniteGroupTable:
    """BFS from the identity under the generators and their inverses; canonical sorted order."""
    gens = list(dict.fromkeys(tuple(tuple(v % p for v in r) for r in g) for g in support))
    d = len(gens[0])
    ident = tuple(tuple(int(i == j) for j in range(d)) for i in range(d))
    moves = list(dict.fromkeys(gens + [mod_inverse(g, p) for g in gens]))
    seen = {ident}
    queue = deque([ident])
    while queue:
        x = queue.popleft()
        for g in moves:
            y = mod_mul(g, x, p)
            if y not in seen:
                seen.add(y)
                if len(seen) > cap:
                    raise CapExceeded(f"closure exceeds {cap} elements")
                queue.append(y)
    elements = tuple(sorted(seen))
    index = {e: i for i, e in enumerate(elements)}
    action = np.array([[index[mod_mul(g, e, p)] for e in elements] for g in gens], dtype=np.int64)
    return FiniteGroupTable(p, elements, index, tuple(gens), action)


def table_for(mu: FiniteMeasure, p: int, cap: int = 1_000_000) -> FiniteGroupTable:
    return closure([reduce_mod(g, p) for g in mu.support], p, cap)


def _step_weights(mu: FiniteMeasure, table: FiniteGroupTable) -> list[tuple[np.ndarray, Fraction]]:
    """(permutation, weight) per atom, merging atoms with equal reductions; atoms must lie in the group."""
    acc: dict[ModMatrix, Fraction] = {}
    for g, w in mu.atoms:
        r = reduce_mod(g, table.p)
        acc[r] = acc.get(r, Fraction(0)) + w
    pos = {g: j for j, g in enumerate(table.gens)}
    out = []
    for r, w in acc.items():
        if r in pos:
            out.append((table.gen_action[pos[r]], w))
        elif r in table.index:
            perm = np.array([table.index[mod_mul(r, e, table.p)] for e in table.elements], dtype=np.int64)
            out.append((perm, w))
        else:
            raise ValueError("measure support does not reduce into the group")
    return out


@dataclass(frozen=True)
class GapResult:
    norm: float
    iterations: int

    @property
    def gap(self) -> float:
        return 1.0 - self.norm


def operator_gap(mu: FiniteMeasure, table: FiniteGroupTable, tol: float = 1e-10, max_iter: int = 10_000,
                 rng_seed: int = 0) -> GapResult:
    """Top singular value of f -> Σ w_g f(g·) on mean-zero functions, by power iteration on T*T."""
    steps = [(perm, float(w)) for perm, w in _step_weights(mu, table)]
    inverse = []
    for perm, w in steps:
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        inverse.append((inv, w))

    def T(f):
        return sum(w * f[perm] for perm, w in steps)

    def T_adj(f):
        return sum(w * f[inv] for inv, w in inverse)

    rng = np.random.default_rng(np.random.SeedSequence(rng_seed))
    v = rng.standard_normal(table.order)
    v -= v.mean()
    v /= np.linalg.norm(v)
    prev = None
    for it in range(1, max_iter + 1):
        w = T_adj(T(v))
        w -= w.mean()
        val = float(np.dot(v, w))
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return GapResult(0.0, it)
        v = w / nrm
        if prev is not None and abs(val - prev) <= tol * max(val, 1e-300):
            return GapResult(math.sqrt(max(val, 0.0)), it)
        prev = val
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps",
                           math.sqrt(max(prev or 0.0, 0.0)))


def second_eigenvalue(mu: FiniteMeasure, table: FiniteGroupTable, tol: float = 1e-10,
                      max_iter: int = 20_000, rng_seed: int = 0) -> float:
    """Largest eigenvalue of T on mean-zero functions for symmetric μ (power iteration on (I+T)/2)."""
    steps = [(perm, float(w)) for perm, w in _step_weights(mu, table)]
    rng = np.random.default_rng(np.random.SeedSequence(rng_seed))
    v = rng.standard_normal(table.order)
    v -= v.mean()
    v /= np.linalg.norm(v)
    prev = None
    for _ in range(max_iter):
        w = 0.5 * (v + sum(c * v[perm] for perm, c in steps))
        w -= w.mean()
        val = float(np.dot(v, w))
        v = w / np.linalg.norm(w)
        if prev is not None and abs(val - prev) <= tol * max(abs(val), 1e-300):
            return 2.0 * val - 1.0
        prev = val
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps", 2.0 * (prev or 0.0) - 1.0)


def dense_operator(mu: FiniteMeasure, table: FiniteGroupTable) -> np.ndarray:
    """Matrix of T on functions, (T f)(x) = Σ w f(g x)."""
    n = table.order
    M = np.zeros((n, n))
    for perm, w in _step_weights(mu, table):
        M[np.arange(n), perm] += float(w)
    return M


def distribution_trace(mu: FiniteMeasure, table: FiniteGroupTable, n: int):
    """Yields (step, counts, scale) with exact integer counts; law = counts / scale."""
    steps = _step_weights(mu, table)
    L = math.lcm(*(w.denominator for _, w in steps))
    ints = [(perm, int(w * L)) for perm, w in steps]
    counts = np.zeros(table.order, dtype=object)
    counts[:] = 0
    counts[table.identity_index] = 1
    scale = 1
    yield 0, counts, scale
    for t in range(1, n + 1):
        new = np.zeros(table.order, dtype=object)
        new[:] = 0
        for perm, c in ints:
            # mass at x moves to g x
            new[perm] = new[perm] + counts * c
        counts = new
        scale *= L
        yield t, counts, scale


def max_atom_mod_p(mu: FiniteMeasure, table: FiniteGroupTable, n: int) -> Fraction:
    """Exact max_a μ^{*n}(π_p^{-1}(a))."""
    for t, counts, scale in distribution_trace(mu, table, n):
        if t == n:
            return Fraction(int(max(counts)), scale)
    raise AssertionError("unreachable")


def uniformization_time(mu: FiniteMeasure, table: FiniteGroupTable, n_max: int = 10_000) -> int:
    """Smallest n with max atom <= 2/|G|."""
    G = table.order
    for t, counts, scale in distribution_trace(mu, table, n_max):
        if int(max(counts)) * G <= 2 * scale:
            return t
    raise ConvergenceError(f"not uniform within {n_max} steps")


@dataclass
class GapSweep:
    rows: list[tuple[int, int, float, int]]
    C: float
    slope: float | None
    one_sided: list[float | None] | None = None

    def to_json(self) -> dict:
        return {"C": self.C, "slope_vs_log_p": self.slope, "one_sided_gap": self.one_sided,
                "rows": [dict(zip(("p", "group_order", "gap", "uniformization_time"), r)) for r in self.rows]}


def gap_sweep(mu: FiniteMeasure, primes: Sequence[int], cap: int = 1_000_000) -> GapSweep:
    rows = []
    one_sided = []
    symmetric = all(mu.weight_of(g.inverse()) == w for g, w in mu.atoms)
    for p in primes:
        table = table_for(mu, p, cap)
        gap = operator_gap(mu, table).gap
        rows.append((p, table.order, gap, uniformization_time(mu, table)))
        one_sided.append(1.0 - second_eigenvalue(mu, table) if symmetric else None)
    logs = np.log([r[0] for r in rows])
    times = np.array([r[3] for r in rows], dtype=float)
    C = float(np.max(times / logs))
    slope = float(np.polyfit(logs, times, 1)[0]) if len(rows) >= 2 else None
    return GapSweep(rows, C, slope, one_sided)
