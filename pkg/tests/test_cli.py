import json
import subprocess
import sys
from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from torwalk.cli import main
from torwalk.config import ExperimentConfig, parse_config
from torwalk.errors import ConfigError
from torwalk.presets import PRESETS, data_path, preset

KEY = st.text(alphabet="abcdefghijklmnopqrstuvwxyz_", min_size=1, max_size=10)
VALUE = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789,./-^+_", min_size=1, max_size=20)


def write_config(tmp_path, experiment, params, measure=None, seed=7, name="c.ini"):
    cfg = ExperimentConfig(experiment, measure or data_path("sl2-dense"), seed, str(tmp_path / "out"), params)
    path = tmp_path / name
    path.write_text(cfg.serialize())
    return path


def outputs(root: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(root.iterdir()) if p.name not in ("manifest.json", "config.ini")}


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(list(PRESETS)), st.integers(0, 2 ** 64 - 1), st.dictionaries(KEY, VALUE, max_size=6))
def test_config_round_trip(name, seed, params):
    cfg = preset(name).replace(seed=seed, params=params)
    assert parse_config(cfg.serialize()) == cfg
    assert parse_config(cfg.serialize()).serialize() == cfg.serialize()


def test_config_rejects_garbage():
    with pytest.raises(ConfigError):
        parse_config("[experiment]\nname = nope\nmeasure_path = x\n")
    with pytest.raises(ConfigError):
        parse_config("[experiment]\nname = specgap\nmeasure_path = x\ncolour = red\n")
    with pytest.raises(ConfigError):
        parse_config("no sections here")


def test_presets():
    mu = preset("sl2-dense").measure
    assert len(mu) == 4 and all(w == Fraction(1, 4) for w in mu.weights)
    assert preset("nonproximal-block").dim == 4
    with pytest.raises(ConfigError) as exc:
        preset("nope")
    for name in ("sl2-dense", "sl2-rational-start", "nonproximal-block", "specgap-sweep"):
        assert name in str(exc.value)


def test_equidistribute_writes_csv_and_summary(tmp_path):
    path = write_config(tmp_path, "equidistribute", {"n": "10", "samples": "2000", "radius": "1"})
    assert main(["equidistribute", "--config", str(path)]) == 0
    out = tmp_path / "out"
    header = (out / "fourier.csv").read_text().splitlines()[0]
    assert header == "a_1,a_2,re,im,abs,stderr,samples"
    summary = json.loads((out / "summary.json").read_text())
    assert summary["frequencies"] == 8
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest) >= {"config_sha256", "versions", "wall_time_s", "files"}
    assert (out / "fourier.dat").read_text().split("\n")[0].count(" ") == 1


@pytest.mark.parametrize("experiment,params", [
    ("equidistribute", {"n": "12", "samples": "40000", "radius": "2"}),
    ("lyapunov", {"n": "30", "samples": "500", "tail_samples": "40000"}),
    ("dioph-verify", {"x0": "1/7+2^-40,3/7", "a": "7,0", "ns": "5,10", "samples": "2000", "lambda_samples": "200"}),
    ("flatten", {"walk_samples": "300", "samples": "5000", "lambda_samples": "200", "delta": "2^-4"}),
    ("specgap", {"primes": "5,7"}),
    ("algebra-info", {"samples": "50"}),
    ("fourier-scan", {"n": "8", "samples": "3000", "radius": "2"}),
])
def test_same_seed_identical_bytes_across_thread_counts(tmp_path, experiment, params):
    path = write_config(tmp_path, experiment, params)
    runs = []
    for i, threads in enumerate(("1", "3")):
        out = tmp_path / f"run{i}"
        assert main([experiment, "--config", str(path), "--threads", threads, "--output-dir", str(out)]) == 0
        runs.append(outputs(out))
    assert runs[0] == runs[1] and runs[0]


def test_missing_measure_exit_code(tmp_path, capsys):
    path = write_config(tmp_path, "specgap", {}, measure=str(tmp_path / "missing.json"))
    assert main(["specgap", "--config", str(path)]) == 2
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and "measure_path not found" in err and err.startswith("error: config:")


def test_invalid_params_exit_code(tmp_path, capsys):
    path = write_config(tmp_path, "lyapunov", {"n": "ten"})
    assert main(["lyapunov", "--config", str(path)]) == 2
    assert "bad value for n" in capsys.readouterr().err
    path = write_config(tmp_path, "lyapunov", {"colour": "red"}, name="d.ini")
    assert main(["lyapunov", "--config", str(path)]) == 2


def test_budget_exit_code(tmp_path, capsys):
    path = write_config(tmp_path, "fourier-scan", {"budget": "10"})
    assert main(["fourier-scan", "--config", str(path)]) == 1
    assert capsys.readouterr().err.startswith("error: budget:")


def test_experiment_mismatch_and_source_choice(tmp_path):
    path = write_config(tmp_path, "specgap", {})
    assert main(["lyapunov", "--config", str(path)]) == 2
    assert main(["specgap"]) == 2
    assert main(["specgap", "--config", str(path), "--preset", "specgap-sweep"]) == 2


def test_console_script_runs_preset(tmp_path):
    res = subprocess.run([sys.executable, "-m", "torwalk.cli", "specgap", "--preset", "specgap-sweep",
                          "--output-dir", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "o" / "gaps.csv").read_text().startswith("p,group_order,gap,uniformization_time")


def test_threads_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("TORWALK_THREADS", "2")
    path = write_config(tmp_path, "specgap", {"primes": "5"})
    assert main(["specgap", "--config", str(path)]) == 0
