import csv
import math

import pytest

from ldplab.config import ExperimentConfig, ProbeConfig
from ldplab.experiment import EXIT_OK, EXIT_PROBE, emit_plotdata, exit_status, inputs_digest, run_experiment
from ldplab.probes import NO_TARGET

two_state = {"kind": "two_state", "m1": 1.0, "m2": 1.0, "w": 1.0}


def experiment(*probes):
    return ExperimentConfig.from_dict({"space": two_state, "probes": list(probes), "seed": 3})


def read_summary(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_digest_tracks_inputs():
    probe = ProbeConfig.from_dict({"kind": "metric", "pairs": [[0, 1]]})
    digest = inputs_digest(two_state, probe, 0)
    assert len(digest) == 16
    assert digest == inputs_digest(dict(two_state), probe, 0)
    assert digest != inputs_digest(two_state, probe, 1)


def test_rerun_is_identical(tmp_path):
    config = experiment(
        {"kind": "varadhan_kernel", "id": "kernel", "x": 0, "y": 1, "points": 6},
        {"kind": "gaussian_threshold", "id": "threshold", "a": [0], "b": [1], "points": 20},
    )
    rows = run_experiment(config, tmp_path / "a")
    run_experiment(config, tmp_path / "b")
    assert exit_status(rows) == EXIT_OK
    for name in ("summary.csv", "kernel.csv", "kernel.dat", "threshold.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    summary = read_summary(tmp_path / "a" / "summary.csv")
    assert [r["probe_id"] for r in summary] == ["kernel", "threshold"]
    assert "outside continuum validity window" in summary[0]["flags"]
    assert summary[1]["flags"].startswith(NO_TARGET)
    assert float(summary[1]["headline"]) == pytest.approx(0.372, abs=0.01)
    timings = read_summary(tmp_path / "a" / "timings.csv")
    assert [r["probe_id"] for r in timings] == ["kernel", "threshold"]


def test_failing_probe(tmp_path):
    rows = run_experiment(experiment({"kind": "vd", "radii": [-1.0]}, {"kind": "metric", "pairs": [[0, 1]]}), tmp_path)
    assert rows[0].failed
    assert math.isnan(rows[0].headline)
    assert not rows[1].failed
    assert rows[1].headline == pytest.approx(1.0, abs=1e-3)
    assert exit_status(rows) == EXIT_PROBE
    summary = read_summary(tmp_path / "summary.csv")
    assert "error:ValueError" in summary[0]["flags"]


def test_empty_experiment(tmp_path):
    assert run_experiment(experiment(), tmp_path) == []
    assert (tmp_path / "summary.csv").read_text().splitlines() == [
        "probe_id,kind,digest,headline,target,deviation,flags"
    ]


def test_plotdata(tmp_path):
    rows = run_experiment(experiment({"kind": "varadhan_kernel", "id": "kernel", "x": 0, "y": 1, "points": 5}), tmp_path)
    text = emit_plotdata(rows, "kernel")
    lines = text.splitlines()
    assert lines[0] == "# t t_log_p model_fit target"
    assert len(lines) == 6
    assert text == (tmp_path / "kernel.dat").read_text()
    with pytest.raises(ValueError):
        emit_plotdata(rows, "missing")
