"""Finitely supported measures on matrices with exact rational weights.

Atoms are kept in canonical lexicographic order of their entries and merged on
equal points. Convolutions are exact pushforwards; sampling uses inverse-CDF
over atoms in stored order with per-chunk seeded streams.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence, Union

import numpy as np

from ._parallel import chunk_rng, map_chunks
from .errors import AtomCapExceeded, ConfigError
from .linalg import IntMatrix, RealMatrix, dump_matrix, mat_mul, operator_norm, parse_matrix, spectral_norms

Point = Union[IntMatrix, RealMatrix]


def _to_fraction(w) -> Fraction:
    if isinstance(w, Fraction):
        return w
    if isinstance(w, (int, str)):
        return Fraction(w)
    if isinstance(w, float):
        return Fraction(w)
    raise TypeError(f"unsupported weight {w!r}")


@dataclass(frozen=True)
class FiniteMeasure:
    atoms: tuple[tuple[Point, Fraction], ...]

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[Point, object]]) -> "FiniteMeasure":
        acc: dict[Point, Fraction] = {}
        dim = None
        for point, w in pairs:
            w = _to_fraction(w)
            if w < 0:
                raise ValueError("negative weight")
            if dim is None:
                dim = point.dim
            elif point.dim != dim:
                raise ValueError("atoms of different dimensions")
            if w == 0:
                continue
            acc[point] = acc.get(point, Fraction(0)) + w
        atoms = tuple(sorted(acc.items(), key=lambda kv: kv[0].key()))
        m = cls(atoms)
        if m.total > 1:
            raise ValueError(f"total mass {m.total} exceeds 1")
        return m

    @classmethod
    def dirac(cls, point: Point) -> "FiniteMeasure":
        return cls(((point, Fraction(1)),))

    @classmethod
    def uniform(cls, points: Sequence[Point]) -> "FiniteMeasure":
        w = Fraction(1, len(points))
        return cls.from_pairs((p, w) for p in points)

    @classmethod
    def empirical(cls, points: Sequence[Point]) -> "FiniteMeasure":
        """Empirical measure of a sample (duplicates merge into heavier atoms)."""
        return cls.uniform(points)

    @property
    def total(self) -> Fraction:
        return sum((w for _, w in self.atoms), Fraction(0))

    @property
    def dim(self) -> int:
        if not self.atoms:
            raise ValueError("empty measure has no dimension")
        return self.atoms[0][0].dim

    @property
    def support(self) -> list[Point]:
        return [p for p, _ in self.atoms]

    @property
    def weights(self) -> list[Fraction]:
        return [w for _, w in self.atoms]

    def __len__(self) -> int:
        return len(self.atoms)

    def is_probability(self) -> bool:
        return self.total == 1

    def is_integral(self) -> bool:
        return all(isinstance(p, IntMatrix) for p, _ in self.atoms)

    def weight_of(self, point: Point) -> Fraction:
        for p, w in self.atoms:
            if p == point:
                return w
        return Fraction(0)

    def restrict(self, keep: Callable[[Point], bool]) -> "FiniteMeasure":
        return FiniteMeasure(tuple((p, w) for p, w in self.atoms if keep(p)))

    def map(self, f: Callable[[Point], Point]) -> "FiniteMeasure":
        return FiniteMeasure.from_pairs((f(p), w) for p, w in self.atoms)

    def float_atoms(self) -> tuple[np.ndarray, np.ndarray]:
        mats = np.array([p.to_numpy() for p, _ in self.atoms], dtype=float)
        return mats, np.array([float(w) for _, w in self.atoms])

    def cumulative(self) -> np.ndarray:
        """Float cut points for inverse-CDF sampling (exact partial sums, then rounded)."""
        if not self.is_probability():
            raise ValueError("sampling requires a probability measure (total == 1)")
        cum = Fraction(0)
        cuts = []
        for _, w in self.atoms[:-1]:
            cum += w
            cuts.append(float(cum))
        return np.array(cuts, dtype=float)


def _pushforward(mu: FiniteMeasure, nu: FiniteMeasure, op) -> FiniteMeasure:
    if mu.atoms and nu.atoms and mu.dim != nu.dim:
        raise ValueError("incompatible dimensions")
    return FiniteMeasure.from_pairs((op(x, y), wx * wy) for x, wx in mu.atoms for y, wy in nu.atoms)


def convolve_mult(mu: FiniteMeasure, nu: FiniteMeasure) -> FiniteMeasure:
    """Law of XY with X ~ mu, Y ~ nu independent."""
    return _pushforward(mu, nu, lambda x, y: x @ y)


def convolve_add(mu: FiniteMeasure, nu: FiniteMeasure) -> FiniteMeasure:
    return _pushforward(mu, nu, lambda x, y: x + y)


def convolve_diff(mu: FiniteMeasure, nu: FiniteMeasure) -> FiniteMeasure:
    return _pushforward(mu, nu, lambda x, y: x - y)


def add_power(mu: FiniteMeasure, k: int) -> FiniteMeasure:
    """k-fold additive convolution (k >= 1)."""
    out = mu
    for _ in range(k - 1):
        out = convolve_add(out, mu)
    return out


def power_exact(mu: FiniteMeasure, n: int, atom_cap: int = 100_000) -> FiniteMeasure:
    """Exact mu^{*n}; law of g_n ... g_1."""
    if n < 0:
        raise ValueError("n must be >= 0")
    d = mu.dim
    identity = IntMatrix.identity(d) if mu.is_integral() else RealMatrix.from_numpy(np.eye(d))
    out = FiniteMeasure.dirac(identity)
    for step in range(1, n + 1):
        # new letter acts on the left: g_step * (g_{step-1} ... g_1)
        out = convolve_mult(mu, out)
        if len(out) > atom_cap:
            raise AtomCapExceeded(step, len(out), atom_cap)
    return out


def symmetrize(mu_support: Sequence[IntMatrix]) -> FiniteMeasure:
    """Uniform measure on S ∪ S^{-1}."""
    pts = list(dict.fromkeys(list(mu_support) + [g.inverse() for g in mu_support]))
    return FiniteMeasure.uniform(pts)


# ---------------------------------------------------------------------------
# sampling


def step_indices(cuts: np.ndarray, rng: np.random.Generator, size: int) -> np.ndarray:
    """Atom indices for one step of `size` independent walks."""
    return np.searchsorted(cuts, rng.random(size), side="right")


def iter_steps(mu: FiniteMeasure, n: int, size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Canonical random stream: step-major draws of atom indices."""
    cuts = mu.cumulative()
    for _ in range(n):
        yield step_indices(cuts, rng, size)


def _int_atoms(mu: FiniteMeasure) -> np.ndarray:
    if not mu.is_integral():
        raise TypeError("integer walk needs integer atoms")
    return np.array([[list(r) for r in p.entries] for p in mu.support], dtype=object)


def _int_walk_products(mu: FiniteMeasure, n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Products g_n ... g_1 as int64 while safe, switching to Python ints on overflow risk."""
    obj = _int_atoms(mu)
    d = mu.dim
    amax = max(p.max_abs() for p in mu.support)
    fits = amax < (1 << 62)
    atoms = obj.astype(np.int64) if fits else obj
    prod = np.broadcast_to(np.eye(d, dtype=np.int64), (size, d, d)).copy()
    bound = 1
    limit = 1 << 62
    for idx in iter_steps(mu, n, size, rng):
        if prod.dtype != object and bound * amax * d >= limit:
            prod = prod.astype(object)
            atoms = obj
        g = atoms[idx]
        prod = np.einsum("sij,sjk->sik", g, prod) if prod.dtype != object else _obj_batch_matmul(g, prod)
        bound = bound * amax * d
    return prod


def _obj_batch_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a.shape[-1]
    out = np.empty(a.shape, dtype=object)
    for i in range(d):
        for k in range(d):
            acc = a[:, i, 0] * b[:, 0, k]
            for j in range(1, d):
                acc = acc + a[:, i, j] * b[:, j, k]
            out[:, i, k] = acc
    return out


def sample_products(mu: FiniteMeasure, n: int, samples: int, rng_seed: int) -> list[IntMatrix]:
    """`samples` independent draws of g_n ... g_1 (chunked seeded streams)."""
    chunks = map_chunks(lambda rng, size, _c: _int_walk_products(mu, n, size, rng), samples, rng_seed)
    out = []
    for arr in chunks:
        for m in arr:
            out.append(IntMatrix(tuple(tuple(int(v) for v in r) for r in m)))
    return out


def sample_product(mu: FiniteMeasure, n: int, rng_seed: int, stream: int = 0) -> IntMatrix:
    """One draw of g_n ... g_1, a deterministic function of (rng_seed, stream)."""
    if not mu.is_probability():
        raise ValueError("sampling requires a probability measure (total == 1)")
    rng = chunk_rng(rng_seed, stream)
    d = mu.dim
    out = IntMatrix.identity(d)
    support = mu.support
    for idx in iter_steps(mu, n, 1, rng):
        out = mat_mul(support[int(idx[0])], out)
    return out


def float_walk(mu: FiniteMeasure, n: int, size: int, rng: np.random.Generator,
               renorm_every: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """Float products of one chunk: (normalised products, accumulated log scale)."""
    mats, _ = mu.float_atoms()
    d = mu.dim
    prod = np.broadcast_to(np.eye(d), (size, d, d)).copy()
    logs = np.zeros(size)
    for t, idx in enumerate(iter_steps(mu, n, size, rng), 1):
        prod = np.matmul(mats[idx], prod)
        if t % renorm_every == 0:
            s = np.sqrt(np.sum(prod * prod, axis=(1, 2)))
            prod /= s[:, None, None]
            logs += np.log(s)
    return prod, logs


# ---------------------------------------------------------------------------
# rescaling and moments


def _scaled(v: int | float, log_factor: float) -> float:
    if v == 0:
        return 0.0
    if isinstance(v, int) and abs(v) >= (1 << 1000):
        return math.copysign(math.exp(math.log(abs(v)) + log_factor), v)
    return float(v) * math.exp(log_factor)


def rescale(mu_n: FiniteMeasure, lambda1_hat: float, n: int) -> FiniteMeasure:
    """Multiply every atom by e^{-lambda1_hat * n}; weights unchanged."""
    lf = -lambda1_hat * n
    return FiniteMeasure.from_pairs(
        (RealMatrix(tuple(tuple(_scaled(v, lf) for v in r) for r in p.entries)), w)
        for p, w in mu_n.atoms)


def atom_norm(p: Point) -> float:
    if isinstance(p, IntMatrix):
        return operator_norm(p)
    return float(spectral_norms(p.to_numpy()))


def exponential_moment(mu: FiniteMeasure, eps: float) -> float:
    """Sum of w * ||g||^eps over atoms."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return math.fsum(float(w) * atom_norm(p) ** eps for p, w in mu.atoms)


# ---------------------------------------------------------------------------
# JSON


def measure_to_json(mu: FiniteMeasure) -> dict:
    atoms = []
    for p, w in mu.atoms:
        mat = dump_matrix(p) if isinstance(p, IntMatrix) else [list(r) for r in p.entries]
        atoms.append({"matrix": mat, "weight": str(w)})
    return {"dim": mu.dim, "atoms": atoms}


def measure_from_json(obj: dict) -> FiniteMeasure:
    try:
        dim = int(obj["dim"])
        pairs = []
        for a in obj["atoms"]:
            m = parse_matrix(a["matrix"])
            if m.dim != dim:
                raise ValueError(f"atom of dimension {m.dim} in a dim-{dim} measure")
            pairs.append((m, Fraction(str(a["weight"]))))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid measure file: {exc}") from exc
    if not pairs:
        raise ConfigError("invalid measure file: no atoms")
    try:
        return FiniteMeasure.from_pairs(pairs)
    except ValueError as exc:
        raise ConfigError(f"invalid measure file: {exc}") from exc


def load_measure(path: str | Path) -> FiniteMeasure:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"measure_path not found: {p}")
    try:
        obj = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid measure file: {exc}") from exc
    return measure_from_json(obj)


def dump_measure(mu: FiniteMeasure, path: str | Path) -> None:
    Path(path).write_text(json.dumps(measure_to_json(mu), indent=1) + "\n")
