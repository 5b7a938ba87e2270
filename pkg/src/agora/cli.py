"""Operator command line: run, ablate, metrics, serve.

Experiments are described by a single JSON file; every market parameter
defaults to the baseline value, so an empty config reproduces the baseline
economy. Each (experiment, seed) gets its own directory containing the
config copy, transaction log, per-round snapshots, and metrics, which is all
the structure multi-seed analysis needs.
"""

from __future__ import annotations

import argparse
import json
import math
import shlex
import sys
import threading
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .analytics import (
    AnalyticsError,
    MetricsReport,
    cohens_d,
    comparison,
    comparison_to_text,
    config_core_hash,
    load_run,
    pool_reports,
    report_to_text,
    run_data_from_result,
    summarize,
)
from .economy import ConfigError, InvariantViolation, MarketConfig
from .engine import MODE_AUTARKY, MODE_MARKET, MarketEngine, RunResult
from .execution import (
    ExecutionCache,
    ExecutionParams,
    TierParams,
    default_catalog,
    ingest_catalog,
)
from .policies import AgentPolicy, make_policy
from .protocol import ExternalPolicy, ProcessTransport, QueryServer, SocketTransport

ABLATION_AXES = ("mu", "monoculture", "disposition", "fierce", "transparency", "horizon")


@dataclass
class ExperimentSpec:
    config: MarketConfig
    mode: str = MODE_MARKET
    seeds: list[int] = field(default_factory=lambda: [1])
    out_dir: Path = Path("runs/experiment")
    default_policy: str = "standard"
    policy_overrides: dict[str, str] = field(default_factory=dict)
    exec_params: ExecutionParams = field(default_factory=ExecutionParams)
    catalog_path: Optional[Path] = None
    cache_path: Optional[Path] = None
    monoculture_family: str = "deepseek"  # family used by the monoculture ablation

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.mode not in (MODE_MARKET, MODE_AUTARKY):
            raise ConfigError(f"unknown mode {self.mode!r}")
        valid_ids = {f"a{i:03d}" for i in range(self.config.n_agents)}
        unknown = set(self.policy_overrides) - valid_ids
        if unknown:
            raise ConfigError(f"policy overrides for unknown agents: {sorted(unknown)}")


def _exec_params_from_dict(raw: dict) -> ExecutionParams:
    kwargs = dict(raw)
    if "tiers" in kwargs:
        kwargs["tiers"] = {
            name: TierParams(name, t["cost_multiplier"], t["quality_boost"])
            for name, t in kwargs["tiers"].items()
        }
    return ExecutionParams(**kwargs)


def load_spec(path: Optional[Path], overrides: argparse.Namespace) -> ExperimentSpec:
    raw: dict = {}
    if path is not None:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    config_fields = {f.name for f in fields(MarketConfig)}
    cfg_raw = raw.get("config", {})
    unknown = set(cfg_raw) - config_fields
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    config = MarketConfig(**cfg_raw)

    if getattr(overrides, "rounds", None) is not None:
        config = replace(config, rounds=overrides.rounds)
    mode = getattr(overrides, "mode", None) or raw.get("mode", MODE_MARKET)
    seeds = (list(getattr(overrides, "seeds", None) or [])
             or raw.get("seeds") or [config.seed or 1])
    out_dir = Path(getattr(overrides, "out", None) or raw.get("out_dir", "runs/experiment"))
    policies = raw.get("policies", {})
    return ExperimentSpec(
        config=config, mode=mode, seeds=[int(s) for s in seeds], out_dir=out_dir,
        default_policy=policies.get("default", "standard"),
        policy_overrides=dict(policies.get("overrides", {})),
        exec_params=_exec_params_from_dict(raw.get("execution", {})),
        catalog_path=Path(raw["catalog"]) if raw.get("catalog") else None,
        cache_path=Path(raw["cache"]) if raw.get("cache") else None,
        monoculture_family=raw.get("monoculture_family", "deepseek"),
    )


def build_policy(spec_str: str, config: MarketConfig,
                 exec_params: ExecutionParams) -> AgentPolicy:
    """Instantiate a policy from its spec string: builtin name, cmd:, or tcp:."""
    if spec_str.startswith("cmd:"):
        argv = shlex.split(spec_str[len("cmd:"):])
        return ExternalPolicy(ProcessTransport(argv), timeout=config.wire_timeout)
    if spec_str.startswith("tcp:"):
        host, _, port = spec_str[len("tcp:"):].rpartition(":")
        return ExternalPolicy(SocketTransport(host, int(port)),
                              timeout=config.wire_timeout)
    return make_policy(spec_str, disposition=config.disposition,
                       exec_params=exec_params, mu=config.mu)


def _build_engine(spec: ExperimentSpec, seed: int, run_dir: Optional[Path]) -> MarketEngine:
    config = replace(spec.config, seed=seed)
    catalog = (ingest_catalog(spec.catalog_path) if spec.catalog_path
               else default_catalog())
    cache = ExecutionCache().bind(spec.cache_path) if spec.cache_path else None
    policies = {aid: build_policy(pspec, config, spec.exec_params)
                for aid, pspec in spec.policy_overrides.items()}

    def factory(agent):
        return build_policy(spec.default_policy, config, spec.exec_params)

    return MarketEngine(config, catalog, policies=policies, policy_factory=factory,
                        exec_params=spec.exec_params, cache=cache, mode=spec.mode,
                        out_dir=run_dir)


def _write_run_meta(spec: ExperimentSpec, seed: int, run_dir: Path) -> None:
    config = replace(spec.config, seed=seed)
    meta = {
        "mode": spec.mode,
        "config": asdict(config),
        "config_core": config_core_hash(asdict(config)),
        "policies": {"default": spec.default_policy,
                     "overrides": spec.policy_overrides},
    }
    (run_dir / "config.json").write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def run_one_seed(spec: ExperimentSpec, seed: int) -> tuple[Path, RunResult, MetricsReport]:
    run_dir = spec.out_dir / f"seed-{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_run_meta(spec, seed, run_dir)
    engine = _build_engine(spec, seed, run_dir)
    try:
        result = engine.run(spec.config.rounds)
    finally:
        for policy in engine._policies.values():
            if isinstance(policy, ExternalPolicy):
                policy.close()
    report = summarize(run_data_from_result(result))
    (run_dir / "metrics.json").write_text(
        json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    (run_dir / "metrics.txt").write_text(report_to_text(report), encoding="utf-8")
    return run_dir, result, report


def cmd_run(spec: ExperimentSpec) -> list[Path]:
    """Execute the experiment for every seed; write logs, snapshots, metrics."""
    run_dirs = []
    reports = []
    for seed in spec.seeds:
        run_dir, _, report = run_one_seed(spec, seed)
        run_dirs.append(run_dir)
        reports.append(report)
        print(f"seed {seed}: {report.final['transactions']} transactions, "
              f"mean wealth {report.final['mean_wealth']:.2f} -> {run_dir}")
    if len(reports) > 1:
        pooled = pool_reports(reports)
        (spec.out_dir / "pooled_metrics.json").write_text(
            json.dumps(pooled, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        cv = pooled["cross_seed_cv"]["mean_wealth"]
        print(f"pooled over {len(reports)} seeds: "
              f"mean wealth {pooled['pooled_mean']['mean_wealth']:.2f} (CV {cv:.1%})")
    return run_dirs


# ---------------------------------------------------------------------------
# Ablations
# ---------------------------------------------------------------------------

def _ablation_variants(spec: ExperimentSpec, axis: str) -> list[tuple[str, ExperimentSpec]]:
    cfg = spec.config
    if axis == "mu":
        return [(f"mu={v}", replace(spec, config=replace(cfg, mu=float(v))))
                for v in (1, 5, 10) if float(v) != cfg.mu]
    if axis == "monoculture":
        return [(f"monoculture={spec.monoculture_family}",
                 replace(spec, config=replace(cfg, monoculture=spec.monoculture_family)))]
    if axis == "disposition":
        return [(f"disposition={d}", replace(spec, config=replace(cfg, disposition=d)))
                for d in ("honest", "adversarial", "collaborative")]
    if axis == "fierce":
        return [("fierce K=3 E=3 R=3",
                 replace(spec, config=replace(cfg, K=3, E=3, R=3)))]
    if axis == "transparency":
        return [("transparency=on",
                 replace(spec, config=replace(cfg, transparency=True)))]
    if axis == "horizon":
        return [("rounds=48", replace(spec, config=replace(cfg, rounds=48)))]
    raise ConfigError(f"unknown ablation axis {axis!r}; pick from {ABLATION_AXES}")


_OUTCOME_KEYS = ("final_wealth", "contracts_won", "dollars_won",
                 "mean_rho_received", "dispute_share_received", "total_costs")


def per_agent_outcomes(result: RunResult) -> dict[str, list[float]]:
    """Per-active-agent final outcome vectors, the unit of effect-size tests."""
    active = [a for a in result.agents if a.active]
    won: dict[str, list] = {a.agent_id: [] for a in active}
    for t in result.records:
        if t.contractor in won:
            won[t.contractor].append(t)
    out = {k: [] for k in _OUTCOME_KEYS}
    for a in active:
        ts = won[a.agent_id]
        out["final_wealth"].append(a.wealth)
        out["contracts_won"].append(float(len(ts)))
        out["dollars_won"].append(math.fsum(t.rho * t.bid_price for t in ts))
        out["mean_rho_received"].append(
            math.fsum(t.rho for t in ts) / len(ts) if ts else 0.0)
        out["dispute_share_received"].append(
            sum(1 for t in ts if t.status == "dispute") / len(ts) if ts else 0.0)
        out["total_costs"].append(a.backbone_paid + a.exec_paid)
    return out


def _run_for_outcomes(spec: ExperimentSpec, label: str) -> dict[str, list[float]]:
    pooled: dict[str, list[float]] = {k: [] for k in _OUTCOME_KEYS}
    for seed in spec.seeds:
        sub = replace(spec, out_dir=spec.out_dir / label.replace("=", "-"))
        _, result, _ = run_one_seed(sub, seed)
        outcomes = per_agent_outcomes(result)
        for k in _OUTCOME_KEYS:
            pooled[k].extend(outcomes[k])
    return pooled


def cmd_ablate(spec: ExperimentSpec, axis: str) -> dict:
    """Run base and variant(s) on shared seeds; report per-metric Cohen's d."""
    base_outcomes = _run_for_outcomes(spec, "base")
    table: dict[str, dict[str, float]] = {}
    for label, variant in _ablation_variants(spec, axis):
        variant_outcomes = _run_for_outcomes(variant, label)
        table[label] = {
            k: cohens_d(variant_outcomes[k], base_outcomes[k]) for k in _OUTCOME_KEYS
        }
    report = {"axis": axis, "seeds": spec.seeds, "cohens_d_vs_base": table}
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    (spec.out_dir / "ablation_report.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    lines = [f"ablation axis: {axis} (Cohen's d vs base, per-agent outcomes)"]
    for label, row in table.items():
        lines.append(f"  {label}")
        for k in _OUTCOME_KEYS:
            lines.append(f"    {k:<24} {row[k]:+8.3f}")
    text = "\n".join(lines) + "\n"
    (spec.out_dir / "ablation_report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return report


# ---------------------------------------------------------------------------
# Metrics over existing logs
# ---------------------------------------------------------------------------

def cmd_metrics(paths: list[Path], out_dir: Optional[Path] = None) -> dict:
    """Summarize one or more run directories; pool only compatible configs."""
    reports = []
    for path in paths:
        run = load_run(path)
        reports.append((Path(path), summarize(run)))
    out: dict = {"reports": {}}
    for path, report in reports:
        out["reports"][str(path)] = report.to_json_dict()
        print(report_to_text(report), end="")

    groups: dict[tuple[str, str], list[MetricsReport]] = {}
    for _, report in reports:
        groups.setdefault((report.config_core, report.mode), []).append(report)

    if len(groups) == 1 and len(reports) > 1:
        pooled = pool_reports([r for _, r in reports])
        out["pooled"] = pooled
        print(f"pooled over seeds {pooled['seeds']}: "
              f"mean wealth {pooled['pooled_mean']['mean_wealth']:.2f} "
              f"(CV {pooled['cross_seed_cv']['mean_wealth']:.1%})")
    elif len(groups) == 2:
        cores = {core for core, _ in groups}
        modes = {mode for _, mode in groups}
        if len(cores) == 1 and modes == {MODE_MARKET, MODE_AUTARKY}:
            market = pool_reports(groups[(cores.pop(), MODE_MARKET)])
            # re-pool returns means; comparison wants single reports, so compare
            # pooled means via representative reports when single-seed
            market_reports = [r for (_, m), rs in groups.items() for r in rs
                              if m == MODE_MARKET]
            autarky_reports = [r for (_, m), rs in groups.items() for r in rs
                               if m == MODE_AUTARKY]
            cmp = comparison(market_reports[0], autarky_reports[0])
            out["comparison"] = cmp
            text = comparison_to_text(cmp)
            print(text, end="")
            if out_dir:
                Path(out_dir).mkdir(parents=True, exist_ok=True)
                (Path(out_dir) / "comparison.txt").write_text(text, encoding="utf-8")
        else:
            print("note: runs use different configurations; refusing to pool, "
                  "reported separately")
    elif len(groups) > 2:
        print("note: runs use different configurations; refusing to pool, "
              "reported separately")

    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "metrics_report.json").write_text(
            json.dumps(out, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return out


# ---------------------------------------------------------------------------
# Serve (external agents + query endpoint)
# ---------------------------------------------------------------------------

def cmd_serve(spec: ExperimentSpec, listen: Optional[str] = None) -> Path:
    """Run one seed with external agents, serving read-only queries throughout."""
    seed = spec.seeds[0]
    run_dir = spec.out_dir / f"seed-{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_run_meta(spec, seed, run_dir)
    engine = _build_engine(spec, seed, run_dir)

    lock = threading.Lock()
    server = None
    if listen:
        host, _, port = listen.rpartition(":")
        server = QueryServer(engine, host or "127.0.0.1", int(port), lock=lock).start()
        print(f"query endpoint listening on {server.address[0]}:{server.address[1]}")
    try:
        for r in range(1, spec.config.rounds + 1):
            with lock:
                engine.run_round(r)
    finally:
        if server is not None:
            server.stop()
        for policy in engine._policies.values():
            if isinstance(policy, ExternalPolicy):
                policy.close()
    result = RunResult(mode=engine.mode, config=engine.config,
                       records=list(engine.records), log_lines=list(engine.log_lines),
                       snapshots=list(engine.snapshots),
                       incidents=list(engine.incidents),
                       agents=[engine.agents[a] for a in sorted(engine.agents)],
                       sink_wealth=engine.sink_wealth)
    report = summarize(run_data_from_result(result))
    (run_dir / "metrics.json").write_text(
        json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    (run_dir / "metrics.txt").write_text(report_to_text(report), encoding="utf-8")
    print(f"served session complete: {report.final['transactions']} transactions "
          f"-> {run_dir}")
    return run_dir


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="experiment JSON file")
    parser.add_argument("--out", type=Path, default=None, help="output directory")
    parser.add_argument("--seeds", type=int, nargs="*", default=None)
    parser.add_argument("--mode", choices=[MODE_MARKET, MODE_AUTARKY], default=None)
    parser.add_argument("--rounds", type=int, default=None)


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="agora", description="agent task-market simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment for each seed")
    _add_common(p_run)

    p_ablate = sub.add_parser("ablate", help="run base plus one-mechanism variants")
    _add_common(p_ablate)
    p_ablate.add_argument("--axis", required=True, choices=ABLATION_AXES)

    p_metrics = sub.add_parser("metrics", help="summarize existing run directories")
    p_metrics.add_argument("paths", type=Path, nargs="+")
    p_metrics.add_argument("--out", type=Path, default=None)

    p_serve = sub.add_parser("serve", help="run with external agents and live queries")
    _add_common(p_serve)
    p_serve.add_argument("--listen", default=None, metavar="HOST:PORT",
                         help="also serve read-only queries on this TCP endpoint")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cmd_run(load_spec(args.config, args))
        elif args.command == "ablate":
            cmd_ablate(load_spec(args.config, args), args.axis)
        elif args.command == "metrics":
            cmd_metrics(args.paths, args.out)
        elif args.command == "serve":
            cmd_serve(load_spec(args.config, args), args.listen)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, AnalyticsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
