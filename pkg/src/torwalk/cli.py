"""Command-line experiment runner: `torwalk <experiment> --config PATH | --preset NAME`."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import itertools
import json
import math
import platform
import sys
import time
from pathlib import Path
from typing import Any, Callable

import mpmath
import numpy as np
import scipy

from . import __version__
from ._parallel import set_threads
from .algebra import DEFAULT_OMEGA, affine_span_defect, full_matrix_algebra, generate_algebra, proximal_dimension
from .config import EXPERIMENTS, ExperimentConfig, load_config
from .diophantine import verify_main_theorem
from .discretized import flatten_iterate
from .errors import BudgetExceeded, ConfigError, NotApplicable
from .linalg import word_product
from .lyapunov import deviation_tails, lyapunov_vector, spectrum, top_exponent
from .measure import FiniteMeasure, load_measure, rescale, sample_products
from .presets import PRESETS, preset
from .specgap import gap_sweep
from .torus import format_point, large_coefficient_scan, parse_point, walk_error_bound

EXIT_OK, EXIT_BUDGET, EXIT_CONFIG = 0, 1, 2


# ---------------------------------------------------------------------------
# parameter schemas


def _int(s: str) -> int:
    return int(s.replace("_", ""))


def _float(s: str) -> float:
    s = s.strip()
    if s.startswith("2^"):
        return 2.0 ** float(s[2:])
    return float(s)


def _ints(s: str) -> list[int]:
    return [_int(v) for v in s.split(",") if v.strip()]


def _choice(*options: str) -> Callable[[str], str]:
    def parse(s: str) -> str:
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s
    return parse


SCHEMAS: dict[str, dict[str, tuple[Callable[[str], Any], str]]] = {
    "equidistribute": {"n": (_int, "30"), "samples": (_int, "100000"), "x0": (parse_point, "phi-1,sqrt2-1"),
                       "radius": (_int, "3"), "bound": (_float, "0.05")},
    "lyapunov": {"n": (_int, "200"), "samples": (_int, "10000"), "reorth_period": (_int, "5"),
                 "omega": (_float, "0.2"), "tail_ns": (_ints, "10,20,40"), "tail_samples": (_int, "10000")},
    "fourier-scan": {"n": (_int, "30"), "samples": (_int, "20000"), "x0": (parse_point, "phi-1,sqrt2-1"),
                     "t": (_float, "0.5"), "radius": (_int, "3"), "budget": (_int, "10000000000")},
    "dioph-verify": {"x0": (parse_point, "1/5,2/5"), "a": (_ints, "5,0"), "t": (_float, "0.4"),
                     "ns": (_ints, "1,5,10,20,40"), "C_window": (_float, "1.0"),
                     "lambda_fraction": (_float, "0.5"), "samples": (_int, "10000"),
                     "lambda_n": (_int, "200"), "lambda_samples": (_int, "2000")},
    "flatten": {"n": (_int, "40"), "walk_samples": (_int, "20000"), "delta": (_float, "2^-10"),
                "eps": (_float, "0.05"), "k_max": (_int, "3"), "samples": (_int, "200000"),
                "mode": (_choice("sample", "exact", "auto"), "sample"), "basis": (_choice("full", "generated"), "full"),
                "lambda_n": (_int, "200"), "lambda_samples": (_int, "2000")},
    "specgap": {"primes": (_ints, "5,7,11,13")},
    "algebra-info": {"n": (_int, "60"), "samples": (_int, "200"), "omega": (_float, str(DEFAULT_OMEGA)),
                     "words": (_int, "3")},
}


def validate_params(config: ExperimentConfig) -> dict[str, Any]:
    schema = SCHEMAS[config.experiment]
    unknown = set(config.params) - set(schema)
    if unknown:
        raise ConfigError(f"unknown params for {config.experiment}: {', '.join(sorted(unknown))}")
    out = {}
    for key, (parse, default) in schema.items():
        raw = config.params.get(key, default)
        try:
            out[key] = parse(raw)
        except (ValueError, TypeError, ConfigError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc
    return out


# ---------------------------------------------------------------------------
# artifact writers


class Artifacts:
    def __init__(self, root: Path):
        self.root = root
        self.files: dict[str, str] = {}
        root.mkdir(parents=True, exist_ok=True)

    def _record(self, name: str, data: bytes) -> None:
        (self.root / name).write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()

    def csv(self, name: str, header: list[str], rows) -> None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows([_cell(v) for v in row] for row in rows)
        self._record(name, buf.getvalue().encode())

    def dat(self, name: str, pairs) -> None:
        self._record(name, "".join(f"{_cell(x)} {_cell(y)}\n" for x, y in pairs).encode())

    def json(self, name: str, obj) -> None:
        self._record(name, (json.dumps(obj, indent=1, sort_keys=True) + "\n").encode())


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


# ---------------------------------------------------------------------------
# experiments


def run_equidistribute(mu: FiniteMeasure, p: dict, seed: int, out: Artifacts) -> None:
    x0 = p["x0"]
    scan = large_coefficient_scan(mu, p["n"], x0, p["bound"], p["radius"], p["samples"], seed)
    d = x0.dim
    rows = [r for r in scan.csv_rows() if any(r[:d])]
    out.csv("fourier.csv", [f"a_{i + 1}" for i in range(d)] + ["re", "im", "abs", "stderr", "samples"], rows)
    out.dat("fourier.dat", [(max(abs(v) for v in r[:d]), r[d + 2]) for r in rows])
    sig = [r[d + 2] / r[d + 3] if r[d + 3] > 0 else 0.0 for r in rows]
    out.json("summary.json", {
        "n": p["n"], "samples": p["samples"], "x0": format_point(x0), "radius": p["radius"], "bound": p["bound"],
        "frequencies": len(rows), "max_abs": max(r[d + 2] for r in rows), "max_sigma": max(sig),
        "all_below_bound": all(r[d + 2] <= p["bound"] for r in rows),
        "all_within_4_sigma": all(s <= 4 for s in sig),
        "walk_error_bound": walk_error_bound(mu, p["n"], x0),
    })


def run_lyapunov(mu: FiniteMeasure, p: dict, seed: int, out: Artifacts) -> None:
    qr = spectrum(mu, p["n"], p["samples"], seed, p["reorth_period"])
    vec = lyapunov_vector(mu, p["n"], p["samples"], seed + 1)
    top = top_exponent(mu, p["n"], p["samples"], seed + 2)
    out.json("spectrum.json", {
        "n": p["n"], "samples": p["samples"],
        "qr": {"lambda": list(qr.lam), "stderr": list(qr.stderr), "sum": qr.total},
        "cartan": {"lambda": list(vec.values), "stderr": list(vec.stderr)},
        "top_norm": {"lambda": top[0], "stderr": top[1]},
    })
    tails = deviation_tails(mu, p["omega"], p["tail_ns"], p["tail_samples"], "norm", seed + 3,
                            reference=(qr.lam[0], qr.stderr[0]))
    out.csv("tails.csv", ["n", "count", "prob", "ci_low", "ci_high"], tails.rows())
    out.dat("tails.dat", [(r[0], r[2]) for r in tails.rows()])


def run_fourier_scan(mu: FiniteMeasure, p: dict, seed: int, out: Artifacts) -> None:
    x0 = p["x0"]
    scan = large_coefficient_scan(mu, p["n"], x0, p["t"], p["radius"], p["samples"], seed, p["budget"])
    d = x0.dim
    out.csv("scan.csv", [f"a_{i + 1}" for i in range(d)] + ["re", "im", "abs", "stderr", "samples"],
            scan.csv_rows())
    out.dat("scan.dat", [(max(abs(v) for v in r[:d]), r[d + 2]) for r in scan.csv_rows()])
    out.json("members.json", {"t": p["t"], "radius": p["radius"], "n": p["n"],
                              "members": [list(m.a) for m in scan.members]})


def run_dioph_verify(mu: FiniteMeasure, p: dict, seed: int, out: Artifacts) -> None:
    lam1, lam1_se = top_exponent(mu, p["lambda_n"], p["lambda_samples"], seed + 1)
    lam = p["lambda_fraction"] * lam1
    reports = []
    rows = []
    for n in p["ns"]:
        try:
            rep = verify_main_theorem(mu, p["x0"], p["a"], p["t"], n, lam, p["C_window"], p["samples"], seed,
                                      lambda1_hat=lam1)
        except NotApplicable as exc:
            est = exc.estimate
            reports.append({"n": n, "applicable": False, "coefficient_abs": abs(est.value), "stderr": est.stderr})
            rows.append([n, abs(est.value), est.stderr, None, None, math.exp(-lam * n), False])
            continue
        obj = rep.to_json()
        obj["applicable"] = True
        reports.append(obj)
        rows.append([n, abs(rep.coefficient.value), rep.coefficient.stderr, rep.witness.q, rep.witness.dist,
                     rep.threshold, rep.found])
    out.csv("witness.csv", ["n", "abs", "stderr", "q", "dist", "threshold", "found"], rows)
    out.dat("witness.dat", [(r[0], r[4]) for r in rows if r[4] is not None])
    out.json("report.json", {"x0": format_point(p["x0"]), "a": p["a"], "t": p["t"], "lambda1_hat": lam1,
                             "lambda1_stderr": lam1_se, "lambda": lam, "reports": reports})


def run_flatten(mu: FiniteMeasure, p: dict, seed: int, out: Artifacts) -> None:
    lam1, _ = top_exponent(mu, p["lambda_n"], p["lambda_samples"], seed + 1)
    walk = FiniteMeasure.empirical(sample_products(mu, p["n"], p["walk_samples"], seed + 2))
    scaled = rescale(walk, lam1, p["n"])
    basis = full_matrix_algebra(mu.dim) if p["basis"] == "full" else generate_algebra(mu.support)
    records = flatten_iterate(scaled, basis, p["delta"], p["eps"], p["k_max"], mode=p["mode"],
                              samples=p["samples"], rng_seed=seed)
    out.csv("flatten.csv", ["k", "eta_mass", "l2_eta", "l2_mu_next", "dropped_mass"],
            [r.csv_row() for r in records])
    out.dat("flatten.dat", [(r.k, r.l2_eta) for r in records])
    l2 = [r.l2_eta for r in records]
    out.json("summary.json", {
        "lambda1_hat": lam1, "n": p["n"], "delta": p["delta"], "eps": p["eps"], "dim_E": basis.dim_E,
        "thresholds": [r.threshold for r in records],
        "min_eta_mass": min(r.eta_mass for r in records),
        "l2_strictly_decreasing": all(b < a for a, b in zip(l2, l2[1:])),
    })


def run_specgap(mu: FiniteMeasure, p: dict, seed: int, out: Artifacts) -> None:
    sweep = gap_sweep(mu, p["primes"])
    out.csv("gaps.csv", ["p", "group_order", "gap", "uniformization_time"], sweep.rows)
    out.dat("gaps.dat", [(r[0], r[2]) for r in sweep.rows])
    out.dat("uniformization.dat", [(math.log(r[0]), r[3]) for r in sweep.rows])
    out.json("summary.json", sweep.to_json())


def run_algebra_info(mu: FiniteMeasure, p: dict, seed: int, out: Artifacts) -> None:
    basis = generate_algebra(mu.support)
    words = [word_product(w) for L in range(1, p["words"] + 1) for w in itertools.product(mu.support, repeat=L)]
    info = basis.to_json()
    info["closure_residual"] = basis.closure_residual()
    info["affine_span_defect"] = affine_span_defect(basis, words)
    info["word_count"] = len(words)
    out.json("algebra.json", info)
    prox = proximal_dimension(mu, p["n"], p["samples"], seed, p["omega"])
    out.json("proximality.json", prox.to_json())
    out.dat("proximality.dat", sorted(prox.counts.items()))


RUNNERS = {
    "equidistribute": run_equidistribute, "lyapunov": run_lyapunov, "fourier-scan": run_fourier_scan,
    "dioph-verify": run_dioph_verify, "flatten": run_flatten, "specgap": run_specgap,
    "algebra-info": run_algebra_info,
}


def run(config: ExperimentConfig) -> Path:
    """Validate, run, and write artifacts plus manifest.json; returns the output directory."""
    params = validate_params(config)
    mu = load_measure(config.measure_path)
    if not mu.is_probability():
        raise ConfigError(f"measure at {config.measure_path} is not a probability measure")
    out = Artifacts(Path(config.output_dir))
    out._record("config.ini", config.serialize().encode())
    start = time.perf_counter()
    RUNNERS[config.experiment](mu, params, config.seed, out)
    wall = time.perf_counter() - start
    manifest = {
        "experiment": config.experiment, "seed": config.seed, "config_sha256": config.digest(),
        "versions": {"torwalk": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "mpmath": mpmath.__version__, "python": platform.python_version()},
        "wall_time_s": wall, "files": dict(sorted(out.files.items())),
    }
    (out.root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return out.root


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="torwalk", description="Random matrix walks on tori: seeded experiments.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", help="path to a [experiment]/[params] config file")
    ap.add_argument("--preset", help=f"shipped config: {', '.join(PRESETS)}")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--threads", type=int, help="worker threads (default: TORWALK_THREADS or 1)")
    ap.add_argument("--output-dir", help="override the config output directory")
    return ap


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    if (args.config is None) == (args.preset is None):
        raise ConfigError("give exactly one of --config or --preset")
    config = load_config(args.config) if args.config else preset(args.preset)
    if config.experiment != args.experiment:
        raise ConfigError(f"config is for {config.experiment!r}, not {args.experiment!r}")
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.output_dir is not None:
        changes["output_dir"] = args.output_dir
    return config.replace(**changes) if changes else config


def _fail(kind: str, exc: Exception, code: int) -> int:
    msg = " ".join(str(exc).split())
    print(f"error: {kind}: {msg}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            set_threads(args.threads)
        config = resolve_config(args)
        root = run(config)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except BudgetExceeded as exc:
        return _fail("budget", exc, EXIT_BUDGET)
    print(str(root))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
