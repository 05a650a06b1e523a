"""Exact integer matrices and spectral kernels (singular values, Cartan projection).

Integer matrices are stored as tuples of Python ints, so products never overflow.
Singular values are computed from the exact Gram matrix g^T g by a cyclic Jacobi
sweep carried out in mpmath at a precision chosen from the condition number, which
keeps the smallest singular value accurate even for very long products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import mpmath
import numpy as np

Rows = tuple[tuple[int, ...], ...]


def _bareiss_det(rows: Sequence[Sequence[int]]) -> int:
    """Fraction-free Gaussian elimination; exact for integer input."""
    a = [list(r) for r in rows]
    n = len(a)
    sign = 1
    prev = 1
    for k in range(n - 1):
        if a[k][k] == 0:
            swap = next((i for i in range(k + 1, n) if a[i][k] != 0), None)
            if swap is None:
                return 0
            a[k], a[swap] = a[swap], a[k]
            sign = -sign
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
        prev = a[k][k]
    return sign * a[n - 1][n - 1]


def _as_int(v) -> int:
    if isinstance(v, bool):
        raise TypeError("boolean is not a matrix entry")
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, str):
        return int(v.strip())
    if isinstance(v, float) and v.is_integer():
        return int(v)
    raise TypeError(f"not an integer entry: {v!r}")


@dataclass(frozen=True)
class IntMatrix:
    """Square integer matrix with exact entries and a cached determinant."""

    entries: Rows
    det_hint: int = field(default=None, compare=False, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        rows = tuple(tuple(_as_int(v) for v in r) for r in self.entries)
        d = len(rows)
        if d == 0 or any(len(r) != d for r in rows):
            raise ValueError("matrix must be square and nonempty")
        object.__setattr__(self, "entries", rows)
        if self.det_hint is None:
            object.__setattr__(self, "det_hint", _bareiss_det(rows))

    @classmethod
    def group_element(cls, rows) -> "IntMatrix":
        """Construct an element of SL_d(Z); raises if det != 1."""
        m = cls(rows)
        if m.det_hint != 1:
            raise ValueError(f"determinant {m.det_hint} != 1, not in SL_d(Z)")
        return m

    @classmethod
    def identity(cls, d: int) -> "IntMatrix":
        return cls(tuple(tuple(int(i == j) for j in range(d)) for i in range(d)), 1)

    @classmethod
    def zeros(cls, d: int) -> "IntMatrix":
        return cls(tuple((0,) * d for _ in range(d)), 0)

    @property
    def dim(self) -> int:
        return len(self.entries)

    @property
    def det(self) -> int:
        return self.det_hint

    def key(self) -> tuple:
        return tuple(v for r in self.entries for v in r)

    def to_numpy(self) -> np.ndarray:
        return np.array([[float(v) for v in r] for r in self.entries])

    def to_object_array(self) -> np.ndarray:
        out = np.empty((self.dim, self.dim), dtype=object)
        for i, r in enumerate(self.entries):
            for j, v in enumerate(r):
                out[i, j] = v
        return out

    def max_abs(self) -> int:
        return max(abs(v) for r in self.entries for v in r)

    def transpose(self) -> "IntMatrix":
        return IntMatrix(tuple(zip(*self.entries)), self.det_hint)

    def inverse(self) -> "IntMatrix":
        """Exact inverse; only defined for det = ±1."""
        if self.det_hint not in (1, -1):
            raise ValueError("integer inverse requires det = ±1")
        d = self.dim
        if d == 2:
            (a, b), (c, e) = self.entries
            s = self.det_hint
            return IntMatrix(((s * e, -s * b), (-s * c, s * a)), s)
        adj = []
        for i in range(d):
            row = []
            for j in range(d):
                minor = [r[:i] + r[i + 1:] for k, r in enumerate(self.entries) if k != j]
                row.append((-1) ** (i + j) * _bareiss_det(minor) if d > 1 else 1)
            adj.append(row)
        s = self.det_hint
        return IntMatrix(tuple(tuple(s * v for v in r) for r in adj), s)

    def __matmul__(self, other):
        if isinstance(other, IntMatrix):
            return mat_mul(self, other)
        if isinstance(other, RealMatrix):
            return RealMatrix.from_numpy(self.to_numpy() @ other.to_numpy())
        return NotImplemented

    def __add__(self, other):
        if isinstance(other, IntMatrix):
            _check_dims(self, other)
            return IntMatrix(tuple(tuple(x + y for x, y in zip(r, s))
                                   for r, s in zip(self.entries, other.entries)))
        if isinstance(other, RealMatrix):
            return RealMatrix.from_numpy(self.to_numpy() + other.to_numpy())
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, IntMatrix):
            _check_dims(self, other)
            return IntMatrix(tuple(tuple(x - y for x, y in zip(r, s))
                                   for r, s in zip(self.entries, other.entries)))
        if isinstance(other, RealMatrix):
            return RealMatrix.from_numpy(self.to_numpy() - other.to_numpy())
        return NotImplemented

    def __neg__(self):
        return IntMatrix(tuple(tuple(-v for v in r) for r in self.entries),
                         self.det_hint * (-1) ** self.dim)


@dataclass(frozen=True)
class RealMatrix:
    """Square real matrix; hashable so it can be a measure atom."""

    entries: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        rows = tuple(tuple(float(v) for v in r) for r in self.entries)
        d = len(rows)
        if d == 0 or any(len(r) != d for r in rows):
            raise ValueError("matrix must be square and nonempty")
        if not all(math.isfinite(v) for r in rows for v in r):
            raise ValueError("real matrix entries must be finite")
        object.__setattr__(self, "entries", rows)

    @classmethod
    def from_numpy(cls, a: np.ndarray) -> "RealMatrix":
        # +0.0 normalises negative zeros so equal matrices share one atom
        return cls(tuple(tuple(float(v) + 0.0 for v in r) for r in np.asarray(a, dtype=float)))

    @property
    def dim(self) -> int:
        return len(self.entries)

    def key(self) -> tuple:
        return tuple(v for r in self.entries for v in r)

    def to_numpy(self) -> np.ndarray:
        return np.array(self.entries, dtype=float)

    def __matmul__(self, other):
        if isinstance(other, (IntMatrix, RealMatrix)):
            _check_dims(self, other)
            return RealMatrix.from_numpy(self.to_numpy() @ other.to_numpy())
        return NotImplemented

    def __add__(self, other):
        if isinstance(other, (IntMatrix, RealMatrix)):
            _check_dims(self, other)
            return RealMatrix.from_numpy(self.to_numpy() + other.to_numpy())
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, (IntMatrix, RealMatrix)):
            _check_dims(self, other)
            return RealMatrix.from_numpy(self.to_numpy() - other.to_numpy())
        return NotImplemented

    def __neg__(self):
        return RealMatrix.from_numpy(-self.to_numpy())


def _check_dims(a, b) -> None:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")


def mat_mul(a: IntMatrix, b: IntMatrix) -> IntMatrix:
    _check_dims(a, b)
    cols = tuple(zip(*b.entries))
    rows = tuple(tuple(sum(x * y for x, y in zip(r, c)) for c in cols) for r in a.entries)
    return IntMatrix(rows, a.det_hint * b.det_hint)


def word_product(letters: Iterable[IntMatrix], d: int | None = None) -> IntMatrix:
    """Product g_n ... g_1 of letters given in application order g_1, g_2, ..."""
    out = None
    for g in letters:
        out = g if out is None else mat_mul(g, out)
    if out is None:
        if d is None:
            raise ValueError("empty word needs an explicit dimension")
        return IntMatrix.identity(d)
    return out


# ---------------------------------------------------------------------------
# singular values


@dataclass(frozen=True)
class SingularProfile:
    sigma: tuple[float, ...]
    kappa: tuple[float, ...] | None
    singular: bool = False

    @property
    def sum_log(self) -> float:
        if self.kappa is None:
            raise ValueError("kappa undefined for a singular matrix")
        return math.fsum(self.kappa)


def _jacobi_eigenvalues(a: list[list], eps) -> list:
    """Cyclic Jacobi on a symmetric mpf matrix (modified in place)."""
    n = len(a)
    for _ in range(200):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p][q]
                if apq == 0:
                    continue
                if abs(apq) <= eps * mpmath.sqrt(abs(a[p][p] * a[q][q])):
                    continue
                rotated = True
                theta = (a[q][q] - a[p][p]) / (2 * apq)
                t = (1 if theta >= 0 else -1) / (abs(theta) + mpmath.sqrt(theta * theta + 1))
                c = 1 / mpmath.sqrt(t * t + 1)
                s = t * c
                for k in range(n):
                    akp, akq = a[k][p], a[k][q]
                    a[k][p] = c * akp - s * akq
                    a[k][q] = s * akp + c * akq
                for k in range(n):
                    apk, aqk = a[p][k], a[q][k]
                    a[p][k] = c * apk - s * aqk
                    a[q][k] = s * apk + c * aqk
        if not rotated:
            break
    return [a[i][i] for i in range(n)]


def _gram(g: IntMatrix) -> list[list[int]]:
    cols = list(zip(*g.entries))
    d = g.dim
    return [[sum(x * y for x, y in zip(cols[i], cols[j])) for j in range(d)] for i in range(d)]


def singular_values(g: IntMatrix) -> SingularProfile:
    d = g.dim
    if g.max_abs() == 0:
        return SingularProfile((0.0,) * d, None, True)
    gram = _gram(g)
    trace = sum(gram[i][i] for i in range(d))
    det_gram = g.det_hint * g.det_hint
    singular = det_gram == 0
    # bits lost to conditioning: log2(lambda_max / lambda_min) <= d*log2(tr) - log2(det)
    lost = d * trace.bit_length() - (det_gram.bit_length() - 1 if not singular else 0)
    prec = 53 + 64 + max(lost, 0)
    # scale so the largest entry of g sits in [2^52, 2^53)
    shift = g.max_abs().bit_length() - 53
    with mpmath.workprec(prec):
        scale = mpmath.ldexp(1, -2 * shift)
        a = [[mpmath.mpf(v) * scale for v in row] for row in gram]
        eigs = _jacobi_eigenvalues(a, mpmath.ldexp(1, -(prec - 16)))
        eigs = sorted((max(e, mpmath.mpf(0)) for e in eigs), reverse=True)
        if singular:
            # the smallest eigenvalue is exactly zero; suppress rounding residue
            eigs[-1] = mpmath.mpf(0)
        roots = [mpmath.sqrt(e) for e in eigs]
        log2shift = shift * mpmath.log(2)
        kappa = None
        if not singular:
            kappa = tuple(float(mpmath.log(r) + log2shift) for r in roots)
        sigma = []
        for r in roots:
            try:
                sigma.append(float(mpmath.ldexp(r, shift)))
            except OverflowError:
                sigma.append(math.inf)
    return SingularProfile(tuple(sigma), kappa, singular)


def operator_norm(a: IntMatrix) -> float:
    return singular_values(a).sigma[0]


def cartan_projection(g: IntMatrix) -> tuple[float, ...]:
    prof = singular_values(g)
    if prof.kappa is None:
        raise ValueError("Cartan projection undefined for a singular matrix")
    return prof.kappa


def spectral_norms(mats: np.ndarray) -> np.ndarray:
    """Spectral norms of a stack of real matrices (..., d, d)."""
    mats = np.asarray(mats, dtype=float)
    if mats.shape[-1] == 2:
        fro2 = np.sum(mats * mats, axis=(-2, -1))
        det = mats[..., 0, 0] * mats[..., 1, 1] - mats[..., 0, 1] * mats[..., 1, 0]
        disc = np.sqrt(np.maximum(fro2 * fro2 - 4.0 * det * det, 0.0))
        return np.sqrt((fro2 + disc) / 2.0)
    return np.linalg.norm(mats, ord=2, axis=(-2, -1))


# ---------------------------------------------------------------------------
# JSON literals


def parse_matrix(obj) -> IntMatrix:
    """Rows of integers; decimal strings accepted for big entries."""
    if not isinstance(obj, list) or not obj or not all(isinstance(r, list) for r in obj):
        raise ValueError("matrix literal must be a nonempty list of rows")
    return IntMatrix(tuple(tuple(_as_int(v) for v in r) for r in obj))


def dump_matrix(m: IntMatrix) -> list:
    limit = 1 << 63
    return [[v if -limit < v < limit else str(v) for v in r] for r in m.entries]
