"""Experiment configuration: flat `key = value` text with [section] headers."""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

EXPERIMENTS = ("equidistribute", "lyapunov", "fourier-scan", "dioph-verify", "flatten", "specgap", "algebra-info")


@dataclass
class ExperimentConfig:
    experiment: str
    measure_path: str
    seed: int = 0
    output_dir: str = "torwalk-out"
    params: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {', '.join(EXPERIMENTS)}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        self.seed = int(self.seed)
        self.params = {str(k): str(v) for k, v in self.params.items()}

    @property
    def measure(self):
        from .measure import load_measure
        return load_measure(self.measure_path)

    @property
    def dim(self) -> int:
        return self.measure.dim

    def serialize(self) -> str:
        lines = ["[experiment]",
                 f"name = {self.experiment}",
                 f"measure_path = {self.measure_path}",
                 f"seed = {self.seed}",
                 f"output_dir = {self.output_dir}",
                 "",
                 "[params]"]
        lines += [f"{k} = {v}" for k, v in self.params.items()]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()

    def replace(self, **changes) -> "ExperimentConfig":
        data = dict(experiment=self.experiment, measure_path=self.measure_path, seed=self.seed,
                    output_dir=self.output_dir, params=dict(self.params))
        data.update(changes)
        return ExperimentConfig(**data)


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}".replace("\n", " ")) from exc
    if not parser.has_section("experiment"):
        raise ConfigError("config lacks an [experiment] section")
    sec = parser["experiment"]
    unknown = set(sec) - {"name", "measure_path", "seed", "output_dir"}
    if unknown:
        raise ConfigError(f"unknown keys in [experiment]: {', '.join(sorted(unknown))}")
    if "name" not in sec or "measure_path" not in sec:
        raise ConfigError("[experiment] needs name and measure_path")
    extra = set(parser.sections()) - {"experiment", "params"}
    if extra:
        raise ConfigError(f"unknown sections: {', '.join(sorted(extra))}")
    try:
        seed = int(sec.get("seed", "0"))
    except ValueError as exc:
        raise ConfigError(f"seed is not an integer: {sec.get('seed')!r}") from exc
    params = dict(parser["params"]) if parser.has_section("params") else {}
    return ExperimentConfig(sec["name"], sec["measure_path"], seed, sec.get("output_dir", "torwalk-out"), params)


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config not found: {p}")
    return parse_config(p.read_text())
