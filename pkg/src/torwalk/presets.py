"""Shipped example configurations and the named measures / start points they use."""

from __future__ import annotations

from fractions import Fraction
from importlib import resources

from .config import ExperimentConfig
from .errors import ConfigError
from .linalg import IntMatrix
from .measure import FiniteMeasure, load_measure
from .torus import TorusPoint

DEFAULT_SEED = 20240611


def data_path(name: str) -> str:
    return str(resources.files("torwalk") / "data" / f"{name}.json")


PRESETS: dict[str, tuple[str, str, dict[str, str]]] = {
    "sl2-dense": ("equidistribute", "sl2-dense", {"n": "30", "samples": "100000", "x0": "phi-1,sqrt2-1", "radius": "3"}),
    "sl2-rational-start": ("dioph-verify", "sl2-dense",
                           {"x0": "1/5,2/5", "a": "5,0", "t": "0.4", "ns": "1,5,10,20,40", "C_window": "1.0"}),
    "nonproximal-block": ("algebra-info", "nonproximal-block", {"n": "60", "samples": "200"}),
    "specgap-sweep": ("specgap", "sl2-dense", {"primes": "5,7,11,13"}),
}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    experiment, measure, params = PRESETS[name]
    return ExperimentConfig(experiment, data_path(measure), DEFAULT_SEED, f"torwalk-out/{name}", dict(params))


def sl2_generators() -> list[IntMatrix]:
    return [IntMatrix.group_element([[1, 1], [0, 1]]), IntMatrix.group_element([[1, 0], [1, 1]])]


def sl2_dense_measure() -> FiniteMeasure:
    return load_measure(data_path("sl2-dense"))


def nonproximal_block_measure() -> FiniteMeasure:
    return load_measure(data_path("nonproximal-block"))


def orthogonal_measure() -> FiniteMeasure:
    """Uniform on a cyclic permutation and a sign change of R^3 (isometries)."""
    return load_measure(data_path("orthogonal"))


def perturbed_rational_start() -> TorusPoint:
    """(1/7 + 2^-40, 3/7): a denominator-7 point moved by 2^-40."""
    return TorusPoint.exact([Fraction(1, 7) + Fraction(1, 2 ** 40), Fraction(3, 7)])
