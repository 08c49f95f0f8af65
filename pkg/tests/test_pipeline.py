import json

import numpy as np
import pytest

from lte_lab import io
from lte_lab.config import DEFAULT_CONFIG, parse_config
from lte_lab.errors import ConfigError
from lte_lab.fluctuations import BUMP_NORM_SQ
from lte_lab.pipeline import run_pipeline, thread_count


def cfg_with(**tables):
    raw = json.loads(json.dumps(DEFAULT_CONFIG))
    for k, v in tables.items():
        raw[k] = {**raw.get(k, {}), **v} if isinstance(v, dict) else v
    return parse_config(raw)


def records(report, level=None, name=None):
    return [r for r in report["verdicts"]["records"]
            if (level is None or r["level"] == level) and (name is None or r["name"] == name)]


def test_equilibrium_config_passes_everywhere():
    cfg = cfg_with(hydro={"left": {"theta": [1.0]}, "right": {"theta": [1.0]}})
    rep, art = run_pipeline(cfg, threads=1)
    assert rep["verdicts"]["overall_pass"]
    np.testing.assert_allclose(art["source"][0].theta[:, 0], 1.0, atol=1e-12)
    for r in records(rep, "meso", "local_covariance"):
        assert r["value"][0][0] == pytest.approx(1 / np.cosh(1.0) ** 2, abs=1e-12)


def test_driven_meso_at_quarter():
    cfg = cfg_with(checks={"points": [[0.25, 0.0]]}, fluct={"samples": 20000})
    rep, _ = run_pipeline(cfg, threads=1)
    (cov,) = records(rep, "meso", "local_covariance")
    assert cov["value"][0][0] == pytest.approx(1 / np.cosh(0.75) ** 2, abs=1e-9)
    (meso,) = records(rep, "meso", "punctual_covariance")
    assert meso["pass"]
    assert meso["expected"] == pytest.approx(BUMP_NORM_SQ / np.cosh(0.75) ** 2, abs=1e-9)


def test_double_well_coexistence_reports_errors():
    cfg = cfg_with(model={"name": "double_well"},
                   hydro={"left": {"theta": [0.0]}, "right": {"theta": [0.0]}},
                   checks={"points": [[0.5, 0.0]]})
    rep, _ = run_pipeline(cfg, threads=1, levels=("macro", "meso", "micro"))
    assert not rep["verdicts"]["overall_pass"]
    errs = [r for r in rep["verdicts"]["records"] if r["status"] == "error"]
    assert errs and all("PhaseBoundaryError" in r["detail"] for r in errs)


def test_verdicts_deterministic_across_threads():
    cfg = cfg_with(fluct={"samples": 4000})
    a, _ = run_pipeline(cfg, threads=1)
    b, _ = run_pipeline(cfg, threads=3)
    assert io.dumps(a["verdicts"]) == io.dumps(b["verdicts"])
    assert a["provenance"]["config_hash"] == b["provenance"]["config_hash"]


def test_records_sorted_by_time_then_position():
    rep, _ = run_pipeline(cfg_with(fluct={"samples": 2000}), threads=2)
    xs = [r["x"] for r in rep["verdicts"]["records"] if r["x"] is not None]
    assert xs == sorted(xs)


def test_free_fermion_cross_level_consistency():
    cfg = cfg_with(model={"name": "free_fermion"}, checks={"points": [[0.3, 0.0], [0.6, 0.0]]},
                   hydro={"cells": 32, "left": {"theta": [0.5, 0.0]}, "right": {"theta": [1.5, 0.2]}},
                   quantum={"restriction_L": 200})
    rep, _ = run_pipeline(cfg, threads=1, levels=("macro", "micro"))
    gc = records(rep, "micro", "gibbs_covariance")
    assert len(gc) == 2
    for r in gc:
        assert r["detail"]["max_abs_diff"] < 1e-6 and r["pass"]


def test_threads_env(monkeypatch):
    monkeypatch.setenv("LTE_LAB_THREADS", "3")
    assert thread_count() == 3
    monkeypatch.setenv("LTE_LAB_THREADS", "0")
    with pytest.raises(ConfigError):
        thread_count()
    monkeypatch.delenv("LTE_LAB_THREADS")
    assert thread_count() >= 1
