import csv
import json

import torch

from ldplab.cli import build_parser, main
from ldplab.utils import THREADS_ENV

two_state = {"kind": "two_state", "m1": 1.0, "m2": 1.0, "w": 1.0}


def write_json(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


def test_run(tmp_path):
    config = write_json(
        tmp_path / "experiment.json",
        {"space": two_state, "probes": [{"kind": "metric", "pairs": [[0, 1]]}]},
    )
    assert main(["run", "--config", config, "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "summary.csv").is_file()
    assert (tmp_path / "out" / "00_metric.csv").is_file()


def test_threads_after_the_subcommand(tmp_path, monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    parser = build_parser()
    assert parser.parse_args(["run", "--config", "c.json", "--threads", "3"]).threads == 3
    assert parser.parse_args(["--threads", "2", "run", "--config", "c.json"]).threads == 2
    assert parser.parse_args(["run", "--config", "c.json"]).threads is None

    config = write_json(
        tmp_path / "experiment.json",
        {"space": two_state, "probes": [{"kind": "metric", "pairs": [[0, 1]]}]},
    )
    threads = str(torch.get_num_threads())
    assert main(["run", "--config", config, "--out", str(tmp_path / "out"), "--threads", threads]) == 0


def test_run_rejects_bad_configs(tmp_path):
    config = write_json(tmp_path / "experiment.json", {"space": two_state, "probes": [{"kind": "nope"}]})
    assert main(["run", "--config", config, "--out", str(tmp_path / "out")]) == 1
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 1


def test_failing_probe_exit_code(tmp_path):
    config = write_json(tmp_path / "experiment.json", {"space": two_state, "probes": [{"kind": "vd", "radii": [-1]}]})
    assert main(["run", "--config", config, "--out", str(tmp_path / "out")]) == 2


def test_space_build_and_validate(tmp_path):
    spec = write_json(tmp_path / "lattice.json", {"kind": "lattice_1d", "cells": 8})
    out = tmp_path / "explicit.json"
    assert main(["space", "build", "--config", spec, "--out", str(out)]) == 0
    assert main(["space", "validate", str(out)]) == 0


def test_metric(tmp_path):
    space = write_json(tmp_path / "space.json", two_state)
    out = tmp_path / "metric.csv"
    assert main(["metric", "--space", space, "--pair", "0", "1", "--out", str(out)]) == 0
    with open(out, newline="") as f:
        rows = list(csv.DictReader(f))
    assert abs(float(rows[0]["lower"]) - 1.0) < 1e-3


def test_euclidean_energy(tmp_path):
    curve = write_json(
        tmp_path / "curve.json",
        {"type": "line", "context": "euclidean", "dim": 1, "start": 0.0, "end": 1.0},
    )
    out = tmp_path / "energy.csv"
    assert main(["energy", "--curve", curve, "--op", "sup", "--out", str(out)]) == 0
    assert out.is_file()


def test_space_curve_needs_a_space(tmp_path):
    curve = write_json(tmp_path / "curve.json", {"type": "line", "start": 0.0, "end": 1.0})
    assert main(["energy", "--curve", curve, "--op", "sup", "--out", str(tmp_path / "energy.csv")]) == 1
