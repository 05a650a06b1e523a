"""The real matrix algebra spanned by a semigroup: basis, det_E, S_E / G_E
membership, affine span, proximal dimension and empirical limit projectors.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NotInAlgebra
from .linalg import IntMatrix, RealMatrix, spectral_norms
from .lyapunov import sample_cartan
from .measure import FiniteMeasure, float_walk
from ._parallel import chunk_rng

MEMBERSHIP_TOL = 1e-6


def _as_array(x) -> np.ndarray:
    if isinstance(x, (IntMatrix, RealMatrix)):
        return x.to_numpy()
    return np.asarray(x, dtype=float)


@dataclass(frozen=True, eq=False)
class AlgebraBasis:
    ambient_dim: int
    basis: np.ndarray            # (D, d, d), orthonormal under tr(a^T b)
    structure: np.ndarray        # (D, D, D): b_i b_j = sum_k structure[i, j, k] b_k

    @property
    def dim_E(self) -> int:
        return self.basis.shape[0]

    def coords(self, x) -> np.ndarray:
        """Trace-pairing coordinates; works on one matrix or a stack (..., d, d)."""
        x = _as_array(x)
        return np.einsum("...ij,kij->...k", x, self.basis)

    def from_coords(self, c: np.ndarray) -> np.ndarray:
        return np.einsum("...k,kij->...ij", c, self.basis)

    def residual(self, x) -> float:
        x = _as_array(x)
        return float(np.linalg.norm(x - self.from_coords(self.coords(x))))

    def checked_coords(self, x) -> np.ndarray:
        x = _as_array(x)
        c = self.coords(x)
        res = np.linalg.norm(x - self.from_coords(c))
        if res > MEMBERSHIP_TOL * max(np.linalg.norm(x), 1e-300):
            raise NotInAlgebra(f"residual {res:.3g} off the algebra span")
        return c

    def left_mult(self, c: np.ndarray) -> np.ndarray:
        """Matrix (in the basis) of y -> a y where a has coordinates c; batched over leading axes."""
        return np.einsum("...i,ijk->...kj", c, self.structure)

    def right_mult(self, c: np.ndarray) -> np.ndarray:
        return np.einsum("...i,jik->...kj", c, self.structure)

    def closure_residual(self) -> float:
        worst = 0.0
        for i in range(self.dim_E):
            for j in range(self.dim_E):
                worst = max(worst, self.residual(self.basis[i] @ self.basis[j]))
        return worst

    def identity_coords(self) -> np.ndarray:
        return self.coords(np.eye(self.ambient_dim))

    def to_json(self) -> dict:
        return {"dim_E": self.dim_E, "ambient_dim": self.ambient_dim,
                "basis": [[[float(v) for v in row] for row in b] for b in self.basis]}

    @classmethod
    def from_json(cls, obj: dict) -> "AlgebraBasis":
        basis = np.array(obj["basis"], dtype=float)
        if basis.shape[0] != obj["dim_E"]:
            raise ValueError("dim_E header does not match the basis length")
        return cls(int(obj["ambient_dim"]), basis, _structure(basis))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)


def _structure(basis: np.ndarray) -> np.ndarray:
    prods = np.einsum("iab,jbc->ijac", basis, basis)
    return np.einsum("ijac,kac->ijk", prods, basis)


def _try_add(vectors: list[np.ndarray], v: np.ndarray, tol: float) -> bool:
    """Gram-Schmidt step (two passes); appends the normalised residual if it clears tol·|v|."""
    scale = np.linalg.norm(v)
    if scale == 0:
        return False
    r = v.copy()
    for _ in range(2):
        for b in vectors:
            r -= np.vdot(b, r) * b
    nr = np.linalg.norm(r)
    if nr <= tol * scale:
        return False
    vectors.append(r / nr)
    return True


def generate_algebra(support: Sequence, tol: float = 1e-9) -> AlgebraBasis:
    """Span of I and the support, closed under right multiplication by the generators."""
    if not support:
        raise ValueError("support must be nonempty")
    gens = [_as_array(g) for g in support]
    d = gens[0].shape[0]
    vecs: list[np.ndarray] = []
    _try_add(vecs, np.eye(d), tol)
    for g in gens:
        _try_add(vecs, g, tol)
    frontier = list(vecs)
    while frontier:
        new = []
        for b in frontier:
            for g in gens:
                before = len(vecs)
                if _try_add(vecs, b @ g, tol):
                    new.append(vecs[before])
        frontier = new
    basis = np.array(vecs)
    return AlgebraBasis(d, basis, _structure(basis))


def full_matrix_algebra(d: int) -> AlgebraBasis:
    """Mat_d(R) with the elementary-matrix basis."""
    basis = np.zeros((d * d, d, d))
    for k in range(d * d):
        basis[k, k // d, k % d] = 1.0
    return AlgebraBasis(d, basis, _structure(basis))


def det_E(basis: AlgebraBasis, a) -> float:
    """Determinant of left multiplication x -> a x on E."""
    return float(np.linalg.det(basis.left_mult(basis.checked_coords(a))))


def det_E_batch(basis: AlgebraBasis, coords: np.ndarray) -> np.ndarray:
    """det_E for a stack of coordinate vectors (no membership check)."""
    return np.linalg.det(basis.left_mult(coords))


def det_E_right(basis: AlgebraBasis, a) -> float:
    return float(np.linalg.det(basis.right_mult(basis.checked_coords(a))))


def in_S_E(basis: AlgebraBasis, x, rho: float) -> bool:
    return abs(det_E(basis, x)) <= rho


def in_G_E(basis: AlgebraBasis, x, K: float) -> bool:
    """x invertible in E with ||x|| <= K and ||x^{-1}|| <= K (spectral norms)."""
    try:
        c = basis.checked_coords(x)
    except NotInAlgebra:
        return False
    L = basis.left_mult(c)
    if abs(np.linalg.det(L)) == 0 or np.linalg.cond(L) > 1e14:
        return False
    inv = basis.from_coords(np.linalg.solve(L, basis.identity_coords()))
    xa = _as_array(x)
    return bool(spectral_norms(xa) <= K and spectral_norms(inv) <= K)


def affine_span_defect(basis: AlgebraBasis, sample: Sequence) -> float:
    """Smallest singular value of the rows coords(g - I); 0 when they do not span E."""
    D = basis.dim_E
    d = basis.ambient_dim
    rows = np.array([basis.coords(_as_array(g) - np.eye(d)) for g in sample]).reshape(-1, D)
    if rows.shape[0] < D:
        return 0.0
    s = np.linalg.svd(rows, compute_uv=False)
    if s[0] == 0 or s[D - 1] <= 1e-9 * s[0]:
        return 0.0
    return float(s[D - 1])


# ---------------------------------------------------------------------------
# proximality


DEFAULT_OMEGA = 0.03


@dataclass
class ProximalityReport:
    r_estimate: int
    agreement: float
    gap_ratios: list[float]
    counts: dict[int, int]
    confidence_note: str
    n: int
    omega: float
    low_confidence: bool = field(default=False)

    def to_json(self) -> dict:
        g = np.array(self.gap_ratios)
        finite = g[np.isfinite(g)]
        return {
            "r_estimate": self.r_estimate, "agreement": self.agreement, "n": self.n, "omega": self.omega,
            "counts": {str(k): v for k, v in sorted(self.counts.items())},
            "gap_ratio_log_median": float(np.median(np.log(finite))) if len(finite) else None,
            "gap_ratio_infinite": int(len(g) - len(finite)),
            "confidence_note": self.confidence_note,
        }


def proximal_dimension(mu: FiniteMeasure, n: int, samples: int, rng_seed: int,
                       omega: float = DEFAULT_OMEGA) -> ProximalityReport:
    """Modal number of singular values with σ_i/σ_1 >= e^{-nω} over sampled products."""
    kap = sample_cartan(mu, [n], samples, rng_seed)[n]
    d = kap.shape[1]
    rel = kap - kap[:, :1]
    ranks = np.sum(rel >= -n * omega, axis=1)
    counts = Counter(int(r) for r in ranks)
    r = max(sorted(counts), key=lambda k: counts[k])
    agreement = counts[r] / samples
    if r < d:
        gaps = np.exp(kap[:, r - 1] - kap[:, r])
    else:
        gaps = np.full(samples, np.inf)
    median_gap = float(np.median(gaps))
    notes = []
    low = False
    if median_gap < 10:
        notes.append(f"median gap ratio {median_gap:.3g} < 10")
        low = True
    if agreement < 0.9:
        notes.append(f"modal agreement {agreement:.3f} < 0.9")
        low = True
    note = "low confidence: " + "; ".join(notes) if low else "confident"
    return ProximalityReport(r, agreement, [float(v) for v in gaps], dict(counts), note, n, omega, low)


def limit_projector(mu: FiniteMeasure, n: int, samples: int, rng_seed: int,
                    omega: float = DEFAULT_OMEGA) -> RealMatrix:
    """σ1-normalised sampled product truncated to its top-r singular subspace."""
    report = proximal_dimension(mu, n, samples, rng_seed, omega)
    if report.low_confidence:
        raise ValueError(f"proximal dimension not resolved: {report.confidence_note}")
    prod, _ = float_walk(mu, n, 1, chunk_rng(rng_seed, 0))
    u, s, vt = np.linalg.svd(prod[0])
    r = report.r_estimate
    approx = (u[:, :r] * (s[:r] / s[0])) @ vt[:r]
    return RealMatrix.from_numpy(approx)
