"""δ-discretised measures on an algebra E ≅ R^D: cell binning, P_δ smoothing,
L2 norms, covering numbers, additive energy, the truncated flattening recursion,
Fourier transforms on E, and exact checks of two Fourier inequalities.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .algebra import AlgebraBasis, det_E_batch
from .errors import BudgetExceeded, NotInAlgebra
from .linalg import IntMatrix, RealMatrix, spectral_norms
from .measure import FiniteMeasure, add_power, convolve_diff, convolve_mult, power_exact
from .torus import TorusPoint
from ._parallel import chunk_rng

MEMBERSHIP_TOL = 1e-6


def ball_volume(D: int) -> float:
    return math.pi ** (D / 2) / math.gamma(D / 2 + 1)


def kernel_factor(D: int) -> float:
    """‖δ_0 ⊞ P_δ‖² · |B_E(0,δ)| for the 3^D cell kernel, i.e. V_D / 3^D."""
    return ball_volume(D) / 3 ** D


@dataclass(frozen=True, eq=False)
class GridMeasure:
    basis: AlgebraBasis
    delta: float
    box_radius: float
    cells: np.ndarray          # (K, D) int64, unique, lexicographic
    values: np.ndarray         # (K,) masses, or densities when kind == "density"
    kind: str = "mass"
    dropped: float = 0.0

    @property
    def D(self) -> int:
        return self.basis.dim_E

    @property
    def cell_volume(self) -> float:
        return self.delta ** self.D

    @property
    def total(self) -> float:
        s = math.fsum(self.values)
        return s * self.cell_volume if self.kind == "density" else s

    @property
    def weights(self) -> dict[tuple[int, ...], float]:
        return {tuple(int(v) for v in c): float(w) for c, w in zip(self.cells, self.values)}

    def masses(self) -> np.ndarray:
        return self.values * self.cell_volume if self.kind == "density" else self.values

    def centers(self) -> np.ndarray:
        """Cell centres as matrices (K, d, d)."""
        return self.basis.from_coords(self.cells * self.delta)

    def reflected(self) -> "GridMeasure":
        return _grid(self, -self.cells, self.values, self.kind, self.dropped)

    def shifted(self, offset: Sequence[int]) -> "GridMeasure":
        return _grid(self, self.cells + np.asarray(offset, dtype=np.int64), self.values, self.kind, self.dropped)


def _merge(cells: np.ndarray, values: np.ndarray, D: int) -> tuple[np.ndarray, np.ndarray]:
    if len(cells) == 0:
        return np.zeros((0, D), dtype=np.int64), np.zeros(0)
    uniq, inv = np.unique(cells, axis=0, return_inverse=True)
    return uniq.astype(np.int64), np.bincount(inv.ravel(), weights=values, minlength=len(uniq))


def _grid(template: GridMeasure, cells, values, kind="mass", dropped=0.0) -> GridMeasure:
    c, v = _merge(np.asarray(cells, dtype=np.int64).reshape(-1, template.D), np.asarray(values, float),
                  template.D)
    return GridMeasure(template.basis, template.delta, template.box_radius, c, v, kind, dropped)


def _cell_of(coords: np.ndarray, delta: float) -> np.ndarray:
    return np.floor(coords / delta + 0.5).astype(np.int64)


def grid_from_coords(basis: AlgebraBasis, delta: float, box_radius: float, coords: np.ndarray,
                     weights: np.ndarray, norms: np.ndarray | None = None) -> GridMeasure:
    """Bin coordinate vectors; points with spectral norm above box_radius are dropped."""
    coords = np.asarray(coords, dtype=float).reshape(-1, basis.dim_E)
    weights = np.asarray(weights, dtype=float)
    if norms is None:
        norms = spectral_norms(basis.from_coords(coords)) if len(coords) else np.zeros(0)
    inside = norms <= box_radius
    dropped = math.fsum(weights[~inside])
    cells, vals = _merge(_cell_of(coords[inside], delta), weights[inside], basis.dim_E)
    return GridMeasure(basis, delta, box_radius, cells, vals, "mass", dropped)


def discretize(mu: FiniteMeasure, basis: AlgebraBasis, delta: float, box_radius: float) -> GridMeasure:
    """Bin each atom to its δ-cell in basis coordinates; out-of-box mass reported as dropped."""
    if len(mu) == 0:
        return GridMeasure(basis, delta, box_radius, np.zeros((0, basis.dim_E), dtype=np.int64), np.zeros(0))
    mats, w = mu.float_atoms()
    coords = basis.coords(mats)
    res = np.linalg.norm(mats - basis.from_coords(coords), axis=(1, 2))
    scale = np.maximum(np.linalg.norm(mats, axis=(1, 2)), 1e-300)
    if np.any(res > MEMBERSHIP_TOL * scale):
        raise NotInAlgebra("atom outside the algebra span")
    return grid_from_coords(basis, delta, box_radius, coords, w)


def _offsets(D: int, r: int) -> np.ndarray:
    return np.array(list(itertools.product(range(-r, r + 1), repeat=D)), dtype=np.int64)


def smooth_P_delta(gm: GridMeasure) -> GridMeasure:
    """Density of gm ⊞ P_δ with P_δ realised as the uniform 3^D neighbouring-cell kernel."""
    if gm.kind != "mass":
        raise ValueError("smoothing expects a mass-form grid")
    off = _offsets(gm.D, 1)
    cells = (gm.cells[:, None, :] + off[None, :, :]).reshape(-1, gm.D)
    vals = np.repeat(gm.values / (len(off) * gm.cell_volume), len(off))
    return _grid(gm, cells, vals, "density", gm.dropped)


def l2_norm_sq(density: GridMeasure) -> float:
    if density.kind != "density":
        raise ValueError("l2_norm_sq expects a density-form grid")
    return math.fsum(density.values ** 2) * density.cell_volume


def _kernel_overlap(diff: np.ndarray) -> np.ndarray:
    return np.prod(np.clip(3 - np.abs(diff), 0, None), axis=-1).astype(float)


def _pair_kernel_sum(cells: np.ndarray, wa: np.ndarray, wb: np.ndarray) -> float:
    """Σ_{c,c'} wa_c wb_c' Π(3 - |c - c'|)_+ over all pairs of (unique) cells."""
    if len(cells) == 0:
        return 0.0
    D = cells.shape[1]
    lo = cells.min(axis=0) - 2
    span = cells.max(axis=0) + 3 - lo
    total = []
    if np.prod(span.astype(float)) < 2.0 ** 62:
        radix = np.cumprod(np.concatenate([[1], span[:-1]])).astype(np.int64)
        keys = (cells - lo) @ radix
        order = np.argsort(keys)
        skeys = keys[order]
        for off in _offsets(D, 2):
            weight = float(np.prod(3 - np.abs(off)))
            if weight <= 0:
                continue
            target = keys + off @ radix
            pos = np.searchsorted(skeys, target)
            pos = np.minimum(pos, len(skeys) - 1)
            hit = skeys[pos] == target
            if np.any(hit):
                total.append(weight * math.fsum(wa[hit] * wb[order[pos[hit]]]))
    else:
        index = {tuple(c): i for i, c in enumerate(cells.tolist())}
        for off in _offsets(D, 2):
            weight = float(np.prod(3 - np.abs(off)))
            if weight <= 0:
                continue
            acc = []
            for i, c in enumerate(cells.tolist()):
                j = index.get(tuple(a + b for a, b in zip(c, off)))
                if j is not None:
                    acc.append(wa[i] * wb[j])
            total.append(weight * math.fsum(acc))
    return math.fsum(total)


def smoothed_l2_sq(gm: GridMeasure) -> float:
    """‖gm ⊞ P_δ‖² computed from pair overlaps (equals l2_norm_sq(smooth_P_delta(gm)))."""
    m = gm.masses()
    return _pair_kernel_sum(gm.cells, m, m) / (9 ** gm.D * gm.cell_volume)


def ustat_l2_sq(cells: np.ndarray, mass: float, delta: float) -> float:
    """Unbiased estimate of ‖ν ⊞ P_δ‖² from N i.i.d. sample cells of ν (total mass `mass`).

    Self-pairs are excluded, so the estimate has no 1/N atom bias.
    """
    N = len(cells)
    if N < 2 or mass == 0:
        return 0.0
    D = cells.shape[1]
    uniq, counts = np.unique(cells, axis=0, return_counts=True)
    c = counts.astype(float)
    pairs = _pair_kernel_sum(uniq, c, c) - 3 ** D * math.fsum(c)
    return mass * mass * pairs / (N * (N - 1)) / (9 ** D * delta ** D)


# ---------------------------------------------------------------------------
# covering numbers and energy


def covering_number(cells, rho: float, delta: float = 1.0) -> int:
    """Greedy cover by radius-rho balls centred on cells (cells in units of delta).

    Cells are visited in lexicographic order; each uncovered cell becomes a centre.
    Centres are then rho-separated, so in D = 2 the count is at most 5 times optimal.
    """
    pts = np.unique(np.asarray(cells, dtype=np.int64).reshape(len(cells), -1), axis=0)
    if len(pts) == 0:
        return 0
    radius = rho / delta
    tree = cKDTree(pts.astype(float))
    covered = np.zeros(len(pts), dtype=bool)
    count = 0
    for i in range(len(pts)):
        if covered[i]:
            continue
        count += 1
        covered[tree.query_ball_point(pts[i].astype(float), radius + 1e-9)] = True
    return count


@dataclass(frozen=True)
class EnergyReport:
    delta: float
    energy: int
    n_A: int
    n_B: int

    @property
    def normalized(self) -> float:
        return self.energy / (self.n_A ** 1.5 * self.n_B ** 1.5)


def sum_counts(A, B) -> Counter:
    """r(x) = #{(a, b) in A × B : a + b = x}, as exact integers."""
    A = [tuple(int(v) for v in np.atleast_1d(a)) for a in A]
    B = [tuple(int(v) for v in np.atleast_1d(b)) for b in B]
    return Counter(tuple(x + y for x, y in zip(a, b)) for a in A for b in B)


def additive_energy(A, B, delta: float = 1.0) -> EnergyReport:
    """Σ_x (1_A ⊞ 1_B)(x)² over integer cell sums; covering counts at radius delta."""
    r = sum_counts(A, B)
    energy = sum(v * v for v in r.values())
    cov = lambda S: covering_number(np.array([np.atleast_1d(s) for s in S]), delta, delta)
    return EnergyReport(delta, energy, cov(A), cov(B))


# ---------------------------------------------------------------------------
# grid convolutions


def _check_same(gm1: GridMeasure, gm2: GridMeasure) -> None:
    if gm1.basis is not gm2.basis or gm1.delta != gm2.delta:
        raise ValueError("basis mismatch: grids must share basis and delta")
    if gm1.kind != "mass" or gm2.kind != "mass":
        raise ValueError("convolutions act on mass-form grids")


def mult_convolve_grid(gm1: GridMeasure, gm2: GridMeasure, max_pairs: int = 20_000_000) -> GridMeasure:
    """Pushforward of cell centres under algebra multiplication, rebinned."""
    _check_same(gm1, gm2)
    if len(gm1.cells) * len(gm2.cells) > max_pairs:
        raise BudgetExceeded(f"{len(gm1.cells) * len(gm2.cells)} cell pairs exceed {max_pairs}")
    x = gm1.cells * gm1.delta
    y = gm2.cells * gm2.delta
    S = gm1.basis.structure
    cells, vals = [], []
    step = max(1, 2_000_000 // max(len(y), 1))
    for s in range(0, len(x), step):
        xb = x[s:s + step]
        z = np.einsum("ai,bj,ijk->abk", xb, y, S).reshape(-1, gm1.D)
        cells.append(z)
        vals.append(np.outer(gm1.values[s:s + step], gm2.values).ravel())
    z = np.concatenate(cells) if cells else np.zeros((0, gm1.D))
    w = np.concatenate(vals) if vals else np.zeros(0)
    return grid_from_coords(gm1.basis, gm1.delta, gm1.box_radius, z, w)


def diff_convolve_grid(gm1: GridMeasure, gm2: GridMeasure, max_pairs: int = 20_000_000) -> GridMeasure:
    """Pushforward under subtraction; exact on cell indices."""
    _check_same(gm1, gm2)
    if len(gm1.cells) * len(gm2.cells) > max_pairs:
        raise BudgetExceeded(f"{len(gm1.cells) * len(gm2.cells)} cell pairs exceed {max_pairs}")
    cells = (gm1.cells[:, None, :] - gm2.cells[None, :, :]).reshape(-1, gm1.D)
    w = np.outer(gm1.values, gm2.values).ravel()
    norms = spectral_norms(gm1.basis.from_coords(cells * gm1.delta))
    inside = norms <= gm1.box_radius
    c, v = _merge(cells[inside], w[inside], gm1.D)
    return GridMeasure(gm1.basis, gm1.delta, gm1.box_radius, c, v, "mass", math.fsum(w[~inside]))


def fourier_on_E(gm: GridMeasure, xi: Sequence[float]) -> complex:
    """Σ mass · e(<ξ, cell centre>) in basis coordinates."""
    xi = np.asarray(xi, dtype=float)
    m = gm.masses()
    ph = 2 * np.pi * ((gm.cells * gm.delta) @ xi)
    return complex(math.fsum(m * np.cos(ph)), math.fsum(m * np.sin(ph)))


# ---------------------------------------------------------------------------
# flattening recursion


@dataclass(frozen=True)
class FlattenRecord:
    k: int
    threshold: float
    mu_mass: float
    eta_mass: float
    l2_eta: float
    l2_mu_next: float
    dropped_mass: float

    def csv_row(self) -> list:
        return [self.k, self.eta_mass, self.l2_eta, self.l2_mu_next, self.dropped_mass]


def _exact_l2(mu: FiniteMeasure, basis: AlgebraBasis, delta: float) -> float:
    if len(mu) == 0:
        return 0.0
    return math.sqrt(max(smoothed_l2_sq(discretize(mu, basis, delta, math.inf)), 0.0))


def _flatten_exact(mu, basis, delta, eps, k_max, atom_cap):
    box = delta ** -eps
    mats, _ = mu.float_atoms()
    norms = spectral_norms(mats)
    mu_k = FiniteMeasure(tuple(a for a, nrm in zip(mu.atoms, norms) if nrm <= box))
    dropped = float(mu.total - mu_k.total)
    records = []
    for k in range(1, k_max + 1):
        thr = delta ** (2 ** k * eps)
        if len(mu_k):
            m, _ = mu_k.float_atoms()
            dets = np.abs(det_E_batch(basis, basis.coords(m)))
            eta = FiniteMeasure(tuple(a for a, dv in zip(mu_k.atoms, dets) if dv > thr))
        else:
            eta = mu_k
        if len(eta) ** 4 > atom_cap:
            exc = BudgetExceeded(f"flattening support would reach {len(eta) ** 4} atoms at k={k}")
            exc.k_reached = k
            raise exc
        sq = convolve_mult(eta, eta)
        nxt = convolve_diff(sq, sq)
        records.append(FlattenRecord(k, thr, float(mu_k.total), float(eta.total), _exact_l2(eta, basis, delta),
                                     _exact_l2(nxt, basis, delta), dropped if k == 1 else 0.0))
        mu_k = nxt
    return records


def _flatten_sample(mu, basis, delta, eps, k_max, samples, rng_seed):
    rng = chunk_rng(rng_seed, 0)
    mats, w = mu.float_atoms()
    total = float(mu.total)
    cuts = np.cumsum(w)[:-1] / total
    draw = mats[np.searchsorted(cuts, rng.random(samples), side="right")]
    box = delta ** -eps
    inside = spectral_norms(draw) <= box
    dropped = total * float(np.count_nonzero(~inside)) / samples
    coords = basis.coords(draw[inside])
    mass = total * float(np.count_nonzero(inside)) / samples
    S = basis.structure
    records = []
    for k in range(1, k_max + 1):
        thr = delta ** (2 ** k * eps)
        mu_mass = mass
        if len(coords):
            keep = np.abs(det_E_batch(basis, coords)) > thr
            eta = coords[keep]
            eta_mass = mass * float(np.count_nonzero(keep)) / len(coords)
        else:
            eta = coords
            eta_mass = 0.0
        l2_eta = math.sqrt(max(ustat_l2_sq(_cell_of(eta, delta), eta_mass, delta), 0.0)) if len(eta) else 0.0
        if len(eta):
            idx = rng.integers(0, len(eta), size=(4, samples))
            x, y, z, u = (eta[i] for i in idx)
            nxt = np.einsum("ni,nj,ijk->nk", x, y, S) - np.einsum("ni,nj,ijk->nk", z, u, S)
        else:
            nxt = np.zeros((0, basis.dim_E))
        mass = eta_mass ** 4
        l2_next = math.sqrt(max(ustat_l2_sq(_cell_of(nxt, delta), mass, delta), 0.0)) if len(nxt) else 0.0
        records.append(FlattenRecord(k, thr, mu_mass, eta_mass, l2_eta, l2_next, dropped if k == 1 else 0.0))
        coords = nxt
    return records


def flatten_iterate(mu: FiniteMeasure, basis: AlgebraBasis, delta: float, eps: float, k_max: int, *,
                    mode: str = "auto", samples: int = 200_000, rng_seed: int = 0,
                    atom_cap: int = 2_000_000) -> list[FlattenRecord]:
    """μ_1 = μ restricted to B(0, δ^{-ε}); η_k = μ_k off S_E(δ^{2^k ε}); μ_{k+1} = η_k⊛η_k ⊟ η_k⊛η_k.

    Exact mode enumerates atoms with exact weights; sample mode propagates i.i.d.
    samples and estimates smoothed L2 norms with a U-statistic.
    """
    if not 1 <= k_max <= 6:
        raise ValueError("k_max must lie in 1..6")
    if mode == "auto":
        mode = "exact" if len(mu) ** 4 <= atom_cap and len(mu) <= 64 else "sample"
    if mode == "exact":
        return _flatten_exact(mu, basis, delta, eps, k_max, atom_cap)
    if mode == "sample":
        return _flatten_sample(mu, basis, delta, eps, k_max, samples, rng_seed)
    raise ValueError(f"unknown mode {mode!r}")


def crossing_step(records: Sequence[FlattenRecord], delta: float, kappa: float) -> int | None:
    """First k whose l2_eta² drops to δ^{κ/2} or below (κ is a fitted, not canonical, exponent)."""
    for r in records:
        if r.l2_eta ** 2 <= delta ** (kappa / 2):
            return r.k
    return None


# ---------------------------------------------------------------------------
# exact Fourier inequalities


def _pairing(xi: np.ndarray, point) -> float:
    return float(np.sum(xi * point.to_numpy()))


def fourier_matrix_measure(mu: FiniteMeasure, xi: np.ndarray) -> complex:
    """Σ w e(<ξ, x>) with the trace pairing <ξ, x> = Σ ξ_ij x_ij."""
    xi = np.asarray(xi, dtype=float)
    re_, im_ = [], []
    for p, w in mu.atoms:
        ph = 2 * math.pi * _pairing(xi, p)
        re_.append(float(w) * math.cos(ph))
        im_.append(float(w) * math.sin(ph))
    return complex(math.fsum(re_), math.fsum(im_))


@dataclass(frozen=True)
class OrdreResult:
    lhs: float
    rhs: complex
    holds: bool


def ordre_check(nu: FiniteMeasure, l: int, m: int, xi, atom_cap: int = 2_000_000,
                slack: float = 1e-10) -> OrdreResult:
    """|ν̂^{*m}(ξ)|^{(2l)^m} <= μ̂^{*m}(ξ) with μ = ν^{⊞l} ⊟ ν^{⊞l}; the right side must be real."""
    xi = np.asarray(xi, dtype=float)
    lp = add_power(nu, l)
    mu = convolve_diff(lp, lp)
    lhs = abs(fourier_matrix_measure(power_exact(nu, m, atom_cap), xi)) ** ((2 * l) ** m)
    rhs = fourier_matrix_measure(power_exact(mu, m, atom_cap), xi)
    holds = lhs <= rhs.real + slack and abs(rhs.imag) <= slack
    return OrdreResult(lhs, rhs, holds)


def torus_fourier(points: Sequence[tuple[TorusPoint, Fraction]], b: Sequence[int]) -> complex:
    """ν̂(b) = Σ w e(<b, x>), with exact phases for exact-mode points."""
    re_, im_ = [], []
    for x, w in points:
        r = sum(int(bi) * v for bi, v in zip(b, x.nums)) % x.denom
        ph = 2 * math.pi * (r / x.denom)
        re_.append(float(w) * math.cos(ph))
        im_.append(float(w) * math.sin(ph))
    return complex(math.fsum(re_), math.fsum(im_))


@dataclass(frozen=True)
class SpecHolderResult:
    applicable: bool
    coefficient: float
    mass_of_A: Fraction | None
    bound: float
    holds: bool | None


def _row_times(a: Sequence[int], g: IntMatrix) -> tuple[int, ...]:
    return tuple(sum(a[i] * g.entries[i][j] for i in range(g.dim)) for j in range(g.dim))


def specholder_check(mu: FiniteMeasure, nu: Sequence[tuple[TorusPoint, Fraction]], a0: Sequence[int], k: int,
                     t0: float, atom_cap: int = 2_000_000) -> SpecHolderResult:
    """(μ^{⊞k} ⊟ μ^{⊞k})(A) >= t0^{2k}/2 for A = {g : |ν̂(a0 g)| >= t0^{2k}/2}, when |(μ*ν)^(a0)| >= t0."""
    if not mu.is_integral():
        raise TypeError("specholder_check needs integer matrices")
    a0 = tuple(int(v) for v in a0)
    coef = abs(complex(math.fsum(float(w) * torus_fourier(nu, _row_times(a0, g)).real for g, w in mu.atoms),
                       math.fsum(float(w) * torus_fourier(nu, _row_times(a0, g)).imag for g, w in mu.atoms)))
    bound = t0 ** (2 * k) / 2
    if coef < t0:
        return SpecHolderResult(False, coef, None, bound, None)
    kp = add_power(mu, k)
    diff = convolve_diff(kp, kp)
    if len(diff) > atom_cap:
        raise BudgetExceeded(f"{len(diff)} atoms exceed cap {atom_cap}")
    mass = sum((w for g, w in diff.atoms if abs(torus_fourier(nu, _row_times(a0, g))) >= bound), Fraction(0))
    return SpecHolderResult(True, coef, mass, bound, float(mass) >= bound)
