from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pytest
import yaml

from carleman_lab.cli import COMMANDS, config_hash, main
from carleman_lab.config import config_from_dict, config_to_dict, dump_config, load_config, resolve
from carleman_lab.errors import ConfigError
from carleman_lab.io import read_array, read_csv, read_json, write_array, write_csv, write_json

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _write(tmp_path: Path, data: dict, name="cfg.yaml") -> Path:
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


def _run(tmp_path, command, data, name="run"):
    cfg = _write(tmp_path, data, f"{name}.yaml")
    out = tmp_path / name
    code = main([command, "--config", str(cfg), "--out", str(out), "--quiet"])
    return code, out


# ---------------------------------------------------------------------------
# configuration


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError):
        config_from_dict({"domian": {}})
    with pytest.raises(ConfigError):
        config_from_dict({"domain": {"cell": 8}})
    with pytest.raises(ConfigError):
        config_from_dict({"domain": {"cells": "many"}})
    with pytest.raises(ConfigError):
        config_from_dict({"time": {"T": "soon"}})
    with pytest.raises(ConfigError):
        config_from_dict({"source": {"mode": "magic"}})


def test_config_round_trip():
    cfg = config_from_dict({"domain": {"n": 1, "lower": [0.0], "upper": [1.0], "cells": 16},
                            "weight": {"x0": [-0.5]}, "seed": 9})
    again = config_from_dict(yaml.safe_load(dump_config(cfg)))
    assert again == cfg
    assert config_to_dict(again)["seed"] == 9
    assert config_hash(again) == config_hash(cfg)


def test_auto_time_and_cutoff():
    res = resolve(config_from_dict({}))
    assert res.threshold == pytest.approx(math.sqrt(2.5), abs=1e-12)
    assert res.T == pytest.approx(1.05 * math.sqrt(2.5))
    assert res.eps == pytest.approx((res.T - res.threshold) / 3)


def test_shipped_configs_load():
    files = sorted(CONFIGS.glob("*.yaml"))
    assert {f.stem.replace("_", "-") for f in files} == set(COMMANDS)
    for f in files:
        resolve(load_config(f))


def test_missing_or_malformed_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("domain: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(bad)


# ---------------------------------------------------------------------------
# exit codes


SMALL = {"domain": {"n": 2, "cells": 12}, "experiment": {"n_xi": 16}}


def test_check_geometry_identity_passes(tmp_path):
    code, out = _run(tmp_path, "check-geometry", SMALL)
    assert code == 0
    rep = read_json(out / "report.json")
    assert rep["passed"] and rep["result"]["pseudo_convexity"]["min_ratio"] == pytest.approx(8.0, rel=1e-8)
    assert rep["result"]["T"] == pytest.approx(1.05 * rep["result"]["threshold"])
    assert (out / "resolved_config.yaml").exists()


def test_observer_inside_domain_is_a_usage_error(tmp_path):
    code, _ = _run(tmp_path, "check-geometry", {**SMALL, "weight": {"x0": [0.5, 0.5]}})
    assert code == 2


def test_invalid_config_is_a_usage_error(tmp_path):
    assert _run(tmp_path, "simulate", {"domain": {"cells": 2}})[0] == 2
    assert _run(tmp_path, "simulate", {"bogus": 1}, "b")[0] == 2


def test_failing_check_exits_one(tmp_path):
    data = {**SMALL, "coefficients": {"preset": "sheared", "params": {"rate": 5.0, "shear": 0.5}},
            "weight": {"x0": [2.0, 0.5]}}
    assert _run(tmp_path, "check-geometry", data)[0] == 1
    # T below the threshold also fails the geometry check
    assert _run(tmp_path, "check-geometry", {**SMALL, "time": {"T": 1.0}}, "short")[0] == 1


def test_zero_energy_report_passes(tmp_path):
    code, out = _run(tmp_path, "energy-report", {"domain": {"n": 2, "cells": 8}, "time": {"T": 0.5}})
    assert code == 0
    assert read_json(out / "report.json")["result"]["energy_estimate"]["skipped"]


def test_simulate_writes_arrays_with_config_hash(tmp_path):
    data = {"domain": {"n": 1, "lower": [0.0], "upper": [1.0], "cells": 16}, "weight": {"x0": [-0.5]},
            "time": {"T": 0.5}, "source": {"mode": "manufactured", "f": {"kind": "sine"}}}
    code, out = _run(tmp_path, "simulate", data)
    assert code == 0
    u = read_array(out / "arrays" / "u.f64")
    meta = read_json(out / "arrays" / "u.json")
    assert u.shape == tuple(meta["shape"]) and meta["shape"][1] == 17
    assert meta["config_sha256"] == config_hash(load_config(tmp_path / "run.yaml"))
    header, rows = read_csv(out / "trace.csv")
    assert header == ["t", "node", "value"] and rows


def test_carleman_scan_csv_layout(tmp_path):
    # h = 1/64 resolves the weight; at h = 1/32 the first-order forms are under-resolved
    data = {"domain": {"n": 1, "lower": [0.0], "upper": [1.0], "cells": 64}, "weight": {"x0": [-0.5]},
            "kernel": {"preset": "decaying"}, "source": {"mode": "manufactured", "f": {"kind": "sine_power"}},
            "experiment": {"memory_samples": 1}}
    code, out = _run(tmp_path, "carleman-scan", data)
    assert code == 0
    for form in ("v_form", "first_order", "second_order"):
        header, rows = read_csv(out / f"scan_{form}.csv")
        assert len(rows) == 12 and len(header) == 6


def test_reconstruct_small_problem(tmp_path):
    data = {"domain": {"n": 1, "lower": [0.0], "upper": [1.0], "cells": 32}, "weight": {"x0": [-0.5]},
            "source": {"f": {"kind": "bump", "center": [0.5], "radius": 0.3}},
            "experiment": {"data_order": 0}}
    code, out = _run(tmp_path, "reconstruct", data)
    assert code == 0
    assert read_json(out / "report.json")["result"]["reconstruction"]["final_error_l2"] <= 0.05


# ---------------------------------------------------------------------------
# io


def test_io_round_trips(tmp_path):
    arr = np.arange(12.0).reshape(3, 4) / 7
    p = write_array(tmp_path, "a", arr, h=0.5)
    assert np.array_equal(read_array(p), arr)
    write_json(tmp_path / "r.json", {"x": np.float64(1.5), "y": [np.int64(2)], "z": math.inf, "w": np.array([1.0])})
    assert read_json(tmp_path / "r.json") == {"x": 1.5, "y": [2], "z": "inf", "w": [1.0]}
    write_csv(tmp_path / "t.csv", ["a", "b"], [[0.1, 2], [np.float64(1 / 3), 3]])
    header, rows = read_csv(tmp_path / "t.csv")
    assert header == ["a", "b"] and float(rows[1][0]) == 1 / 3
    assert json.loads((tmp_path / "r.json").read_text())["z"] == "inf"
