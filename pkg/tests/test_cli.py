from __future__ import annotations

import json

import pytest

from agora.cli import (
    ExperimentSpec,
    build_policy,
    cmd_ablate,
    cmd_metrics,
    cmd_run,
    cmd_serve,
    load_spec,
    main,
)
from agora.economy import ConfigError, MarketConfig
from agora.execution import ExecutionParams
from agora.policies import RandomPolicy, StandardPolicy

from conftest import PYTHON, WIRE_AGENTS


def spec_for(tmp_path, *, rounds=3, seeds=(1,), n_agents=4, mode="market", **kwargs):
    return ExperimentSpec(
        config=MarketConfig(n_agents=n_agents, rounds=rounds, **kwargs),
        mode=mode, seeds=list(seeds), out_dir=tmp_path / "exp")


# -- spec loading -----------------------------------------------------------------

def test_load_spec_empty_config_is_baseline(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("{}")

    class Args:
        rounds = None
        mode = None
        seeds = None
        out = None

    spec = load_spec(path, Args())
    assert spec.config == MarketConfig(seed=spec.config.seed)
    assert spec.mode == "market"


def test_load_spec_overrides_and_unknown_keys(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({
        "config": {"mu": 5, "rounds": 6},
        "mode": "autarky",
        "seeds": [3, 4],
        "policies": {"default": "random", "overrides": {"a001": "standard"}},
    }))

    class Args:
        rounds = 8
        mode = None
        seeds = None
        out = None

    spec = load_spec(path, Args())
    assert spec.config.mu == 5
    assert spec.config.rounds == 8  # CLI flag wins
    assert spec.mode == "autarky"
    assert spec.seeds == [3, 4]
    assert spec.default_policy == "random"

    path.write_text(json.dumps({"config": {"not_a_knob": 1}}))
    with pytest.raises(ConfigError, match="unknown config keys"):
        load_spec(path, Args())


def test_spec_rejects_unknown_override_agents(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentSpec(config=MarketConfig(n_agents=3), seeds=[1],
                       out_dir=tmp_path, policy_overrides={"a099": "random"})


def test_build_policy_names():
    cfg = MarketConfig()
    assert isinstance(build_policy("standard", cfg, ExecutionParams()), StandardPolicy)
    assert isinstance(build_policy("random", cfg, ExecutionParams()), RandomPolicy)
    with pytest.raises(ConfigError):
        build_policy("nonsense", cfg, ExecutionParams())


# -- run ----------------------------------------------------------------------------

def test_cmd_run_writes_expected_layout(tmp_path):
    spec = spec_for(tmp_path, seeds=(1, 2))
    dirs = cmd_run(spec)
    assert [d.name for d in dirs] == ["seed-1", "seed-2"]
    for d in dirs:
        for name in ("config.json", "transactions.ndjson", "metrics.json",
                     "metrics.txt", "market_state.json", "snapshots"):
            assert (d / name).exists()
        snaps = sorted((d / "snapshots").glob("round_*.json"))
        assert len(snaps) == 3
    assert (spec.out_dir / "pooled_metrics.json").exists()


def test_cmd_run_is_byte_deterministic(tmp_path):
    a = spec_for(tmp_path / "a")
    b = spec_for(tmp_path / "b")
    log_a = cmd_run(a)[0] / "transactions.ndjson"
    log_b = cmd_run(b)[0] / "transactions.ndjson"
    assert log_a.read_bytes() == log_b.read_bytes()

    c = spec_for(tmp_path / "c", seeds=(2,))
    log_c = cmd_run(c)[0] / "transactions.ndjson"
    assert log_a.read_bytes() != log_c.read_bytes()


def test_cmd_run_autarky_has_no_reputation(tmp_path):
    spec = spec_for(tmp_path, mode="autarky")
    run_dir = cmd_run(spec)[0]
    state = json.loads((run_dir / "market_state.json").read_text())
    assert all(a["n_as_poster"] == 0 and a["n_as_contractor"] == 0
               for a in state["agents"])


# -- ablate -----------------------------------------------------------------------------

def test_cmd_ablate_mu_axis(tmp_path):
    spec = spec_for(tmp_path, rounds=2)
    report = cmd_ablate(spec, "mu")
    assert set(report["cohens_d_vs_base"]) == {"mu=1", "mu=5"}
    assert (spec.out_dir / "ablation_report.json").exists()
    variant_cfg = json.loads(
        (spec.out_dir / "mu-1" / "seed-1" / "config.json").read_text())
    assert variant_cfg["config"]["mu"] == 1.0
    base_cfg = json.loads(
        (spec.out_dir / "base" / "seed-1" / "config.json").read_text())
    assert base_cfg["config"]["mu"] == 10.0


def test_cmd_ablate_fierce_axis(tmp_path):
    spec = spec_for(tmp_path, rounds=3, n_agents=5)
    cmd_ablate(spec, "fierce")
    cfg = json.loads(
        (spec.out_dir / "fierce K=3 E=3 R=3".replace("=", "-") / "seed-1" /
         "config.json").read_text())
    assert (cfg["config"]["K"], cfg["config"]["E"], cfg["config"]["R"]) == (3, 3, 3)


def test_cmd_ablate_transparency_axis(tmp_path):
    spec = spec_for(tmp_path, rounds=2)
    report = cmd_ablate(spec, "transparency")
    assert "transparency=on" in report["cohens_d_vs_base"]


def test_cmd_ablate_disposition_axis(tmp_path):
    spec = spec_for(tmp_path, rounds=2, n_agents=4)
    report = cmd_ablate(spec, "disposition")
    assert set(report["cohens_d_vs_base"]) == {
        "disposition=honest", "disposition=adversarial", "disposition=collaborative"}


def test_cmd_ablate_monoculture_axis(tmp_path):
    spec = spec_for(tmp_path, rounds=2)
    cmd_ablate(spec, "monoculture")
    cfg = json.loads((spec.out_dir / "monoculture-deepseek" / "seed-1" /
                      "config.json").read_text())
    assert cfg["config"]["monoculture"] == "deepseek"


def test_cmd_ablate_horizon_axis(tmp_path):
    spec = spec_for(tmp_path, rounds=2, n_agents=4)
    cmd_ablate(spec, "horizon")
    cfg = json.loads((spec.out_dir / "rounds-48" / "seed-1" /
                      "config.json").read_text())
    assert cfg["config"]["rounds"] == 48
    log = (spec.out_dir / "rounds-48" / "seed-1" / "transactions.ndjson").read_text()
    rounds = [json.loads(l) for l in log.splitlines() if '"type":"round"' in l]
    assert len(rounds) == 48


def test_unknown_axis_is_usage_error(tmp_path):
    with pytest.raises(SystemExit):
        main(["ablate", "--axis", "nonsense", "--out", str(tmp_path)])


# -- metrics -----------------------------------------------------------------------------

def test_cmd_metrics_single_run(tmp_path, capsys):
    run_dir = cmd_run(spec_for(tmp_path))[0]
    out = cmd_metrics([run_dir], tmp_path / "report")
    assert str(run_dir) in out["reports"]
    assert (tmp_path / "report" / "metrics_report.json").exists()


def test_cmd_metrics_pools_same_config(tmp_path):
    dirs = cmd_run(spec_for(tmp_path, seeds=(1, 2)))
    out = cmd_metrics(dirs)
    assert out["pooled"]["seeds"] == [1, 2]


def test_cmd_metrics_refuses_mixed_configs(tmp_path, capsys):
    a = cmd_run(spec_for(tmp_path / "a"))[0]
    b = cmd_run(spec_for(tmp_path / "b", mu=5.0))[0]
    out = cmd_metrics([a, b])
    assert "pooled" not in out and "comparison" not in out
    assert "refusing to pool" in capsys.readouterr().out


def test_cmd_metrics_market_autarky_comparison(tmp_path):
    market = cmd_run(spec_for(tmp_path / "m"))[0]
    autarky = cmd_run(spec_for(tmp_path / "x", mode="autarky"))[0]
    out = cmd_metrics([market, autarky], tmp_path / "cmp")
    rows = {row["metric"] for row in out["comparison"]["rows"]}
    assert "Dispute / fail rate" in rows
    assert (tmp_path / "cmp" / "comparison.txt").exists()


# -- serve ------------------------------------------------------------------------------

def test_cmd_serve_with_external_agent(tmp_path):
    spec = ExperimentSpec(
        config=MarketConfig(n_agents=3, rounds=2, wire_timeout=5.0),
        seeds=[5], out_dir=tmp_path / "served",
        policy_overrides={"a000": f"cmd:{PYTHON} {WIRE_AGENTS / 'reference_agent.py'}"})
    run_dir = cmd_serve(spec, listen="127.0.0.1:0")
    assert (run_dir / "transactions.ndjson").exists()
    assert (run_dir / "metrics.json").exists()


# -- main entry point ----------------------------------------------------------------------

def test_main_run_roundtrip(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"config": {"n_agents": 3, "rounds": 2}}))
    rc = main(["run", "--config", str(cfg), "--out", str(tmp_path / "out"),
               "--seeds", "7"])
    assert rc == 0
    assert (tmp_path / "out" / "seed-7" / "transactions.ndjson").exists()


def test_main_reports_config_errors(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"config": {"mu": 0.1}}))
    rc = main(["run", "--config", str(cfg), "--out", str(tmp_path / "out")])
    assert rc == 1
