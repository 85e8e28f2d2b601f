import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from secaggsim.adversary import AttackPlan
from secaggsim.errors import ConfigError
from secaggsim.simulation import (
    CSV_COLUMNS,
    DetectionSettings,
    ScenarioConfig,
    SyntheticWorkload,
    bench_csv,
    bench_once,
    run_scenario,
)
from secaggsim.wire import StarTransport
from secaggsim.counters import OpCounters


def small_config(**kw) -> ScenarioConfig:
    base = dict(
        n_users=18,
        rounds=3,
        tree_height=2,
        tree_degree=2,
        neighbor_radius=1,
        share_threshold=2,
        detection=DetectionSettings(enabled=True, low_bits_override=16),
        synthetic=SyntheticWorkload(vector_len=12),
        seed=11,
    )
    base.update(kw)
    return ScenarioConfig(**base)


# -- config validation ------------------------------------------------------------


def test_config_validation_errors():
    with pytest.raises(ConfigError):
        small_config(n_users=6).validate()  # subgroups too small
    with pytest.raises(ConfigError):
        small_config(dropout_rate=1.5).validate()
    with pytest.raises(ConfigError):
        small_config(protocol="carrier-pigeon").validate()
    with pytest.raises(ConfigError):
        small_config(share_threshold=9).validate()
    with pytest.raises(ConfigError):
        cfg = small_config()
        cfg.attack = AttackPlan(attacker_ids=(0,), start_round=99)
        cfg.validate()
    with pytest.raises(ConfigError):
        cfg = small_config(inter_mask_margin_bits=16)
        cfg.validate()  # no room left for inter-group masks


def test_config_json_roundtrip():
    cfg = small_config()
    cfg.attack = AttackPlan(attacker_ids=(1, 2), strategy="continuous", start_round=1, duration=2)
    again = ScenarioConfig.from_json(cfg.to_json())
    assert again == cfg


def test_segment_spec_from_epsilon():
    cfg = small_config(detection=DetectionSettings(enabled=True, epsilon=70.0))
    spec = cfg.segment_spec()
    # subgroups of 5: threshold 2(1-sqrt(4/5))*70 ~ 14.8 real units,
    # 3785 quantized -> 12 bits
    assert spec.low_bits == 12


# -- determinism --------------------------------------------------------------------


def test_reports_byte_identical():
    cfg = small_config(dropout_rate=0.1)
    cfg.attack = AttackPlan(attacker_ids=(3,), strategy="one_shot", start_round=2)
    a = run_scenario(cfg)
    b = run_scenario(small_config(dropout_rate=0.1, attack=AttackPlan(attacker_ids=(3,), strategy="one_shot", start_round=2)))
    assert a.to_csv() == b.to_csv()
    assert a.to_json() == b.to_json()


def test_different_seeds_differ():
    a = run_scenario(small_config())
    b = run_scenario(small_config(seed=12))
    assert a.to_json() != b.to_json()


def test_csv_schema():
    report = run_scenario(small_config())
    lines = report.to_csv().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 1 + 3


def test_transcript_schema():
    report = run_scenario(small_config())
    doc = json.loads(report.to_json())
    assert doc["schema"] == "run-report-v1"
    assert {"config", "metrics", "rounds", "counters", "final"} <= set(doc)
    assert len(doc["rounds"]) == 3
    assert "detection" in doc["rounds"][0]


def test_baseline_scenario_runs():
    cfg = small_config(protocol="baseline", n_users=10)
    report = run_scenario(cfg)
    assert len(report.rows) == 3
    assert report.counters.per_user_prg(10) == pytest.approx(10 * 3 / 10 * 10 / 10 * 1.0 * 10 / 10, abs=30)


# -- transport rules ------------------------------------------------------------------


def test_star_transport_rejects_user_to_user():
    transport = StarTransport(OpCounters())
    with pytest.raises(AssertionError):
        transport.deliver("user:1", "user:2", b"x")
    transport.deliver("user:1", "server", b"abc")
    transport.deliver("server", "user:1", b"defg")
    assert transport.counters.bytes_user_to_server == 3
    assert transport.counters.bytes_server_to_user == 4


# -- bench -----------------------------------------------------------------------------


def test_bench_rows():
    row = bench_once(small_config())
    assert row.protocol == "tree"
    assert row.per_user_prg > 0
    text = bench_csv([row])
    assert text.splitlines()[0].startswith("protocol,")


# -- CLI --------------------------------------------------------------------------------


def test_cli_run_and_determinism(tmp_path: Path):
    cfg = small_config()
    cfg_path = tmp_path / "scenario.json"
    cfg_path.write_text(cfg.to_json())
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        proc = subprocess.run(
            [sys.executable, "-m", "secaggsim.cli", "run", "--config", str(cfg_path), "--out", str(out)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
    assert (out_a / "report.csv").read_bytes() == (out_b / "report.csv").read_bytes()
    assert (out_a / "transcript.json").read_bytes() == (out_b / "transcript.json").read_bytes()


def test_cli_config_error_exit_code(tmp_path: Path):
    cfg = small_config(n_users=6)
    cfg_path = tmp_path / "broken.json"
    cfg_path.write_text(cfg.to_json())
    proc = subprocess.run(
        [sys.executable, "-m", "secaggsim.cli", "run", "--config", str(cfg_path), "--out", str(tmp_path / "o")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 1


def test_cli_flag_overrides(tmp_path: Path):
    cfg = small_config()
    cfg_path = tmp_path / "scenario.json"
    cfg_path.write_text(cfg.to_json())
    proc = subprocess.run(
        [
            sys.executable, "-m", "secaggsim.cli", "run",
            "--config", str(cfg_path), "--rounds", "1", "--seed", "99",
            "--out", str(tmp_path / "o"),
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    report = (tmp_path / "o" / "report.csv").read_text()
    assert len(report.splitlines()) == 2  # header + one round
