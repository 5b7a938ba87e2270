"""Metrics over transaction logs and population snapshots.

Everything here is a pure read-only computation: the same log always
produces the same report. Inequality metrics (Gini, Lorenz) clamp negative
wealth to zero; raw wealth is reported separately. The dispute-rate field is
relabelled as a task failure rate for autarky logs, where no payment
judgement exists.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .rng import substream

ADEQUATE_QUALITY = 0.5  # payments jump sharply at this score; also the success bar


class AnalyticsError(ValueError):
    """Bad or incomplete inputs to a metric computation."""


# ---------------------------------------------------------------------------
# Primitive metrics
# ---------------------------------------------------------------------------

def gini(values: Sequence[float], *, clamp_negative: bool = False) -> float:
    """Gini coefficient of a non-negative sequence; 0 when mean is 0."""
    vals = [float(v) for v in values]
    if not vals:
        raise AnalyticsError("gini of an empty sequence")
    if clamp_negative:
        vals = [max(v, 0.0) for v in vals]
    if any(v < 0 for v in vals):
        raise AnalyticsError("gini requires non-negative values")
    n = len(vals)
    total = math.fsum(vals)
    if total == 0:
        return 0.0
    vals.sort()
    weighted = math.fsum((i + 1) * v for i, v in enumerate(vals))
    return 2 * weighted / (n * total) - (n + 1) / n


def lorenz_points(values: Sequence[float]) -> list[tuple[float, float]]:
    """Cumulative (population share, wealth share) pairs, ending at (1, 1)."""
    vals = sorted(float(v) for v in values)
    if not vals:
        raise AnalyticsError("lorenz_points of an empty sequence")
    n = len(vals)
    total = math.fsum(vals)
    points = []
    running = 0.0
    for i, v in enumerate(vals):
        running += v
        share = running / total if total != 0 else (i + 1) / n
        points.append(((i + 1) / n, share))
    return points


def gini_from_lorenz(points: Sequence[tuple[float, float]]) -> float:
    """Area-based Gini: 1 - 2 * (trapezoid area under the Lorenz curve)."""
    prev_x, prev_y = 0.0, 0.0
    area = 0.0
    for x, y in points:
        area += (x - prev_x) * (y + prev_y) / 2.0
        prev_x, prev_y = x, y
    return 1.0 - 2.0 * area


def hhi(volumes: Sequence[float]) -> float:
    """Concentration index: sum of squared volume shares."""
    vals = [float(v) for v in volumes]
    total = math.fsum(vals)
    if total <= 0:
        raise AnalyticsError("hhi requires positive total volume")
    return math.fsum((v / total) ** 2 for v in vals)


def reciprocity(edges: Iterable[tuple[str, str]]) -> float:
    """Fraction of directed edges with a return edge; 0 for an empty set."""
    edge_set = set(tuple(e) for e in edges)
    if not edge_set:
        return 0.0
    returned = sum(1 for u, v in edge_set if (v, u) in edge_set)
    return returned / len(edge_set)


def random_reciprocity_baseline(n_nodes: int, n_edges: int,
                                rng: random.Random, trials: int = 200) -> float:
    """Monte Carlo reciprocity of uniform random digraphs at the given density."""
    if n_nodes < 2 or n_edges < 1:
        return 0.0
    population = n_nodes * (n_nodes - 1)
    k = min(n_edges, population)
    total = 0.0
    for _ in range(trials):
        picks = rng.sample(range(population), k)
        edges = []
        for idx in picks:
            u, rem = divmod(idx, n_nodes - 1)
            v = rem if rem < u else rem + 1
            edges.append((u, v))
        total += reciprocity(edges)
    return total / trials


def false_dispute_rate(records: Iterable[dict],
                       quality_threshold: float = ADEQUATE_QUALITY) -> float:
    """Among adequate-quality settlements, the fraction paid at dispute level."""
    adequate = [r for r in records if r["quality"] >= quality_threshold]
    if not adequate:
        return 0.0
    return sum(1 for r in adequate if r["status"] == "dispute") / len(adequate)


def grouped_false_dispute(records: Iterable[dict], key: Callable[[dict], str],
                          quality_threshold: float = ADEQUATE_QUALITY) -> dict[str, float]:
    groups: dict[str, list[dict]] = {}
    for r in records:
        groups.setdefault(key(r), []).append(r)
    return {k: false_dispute_rate(v, quality_threshold) for k, v in sorted(groups.items())}


def cohens_d(a: Sequence[float], b: Sequence[float]) -> float:
    """Standardised mean difference of a versus b with pooled variance."""
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise AnalyticsError("cohens_d needs at least two samples per group")
    ma = math.fsum(a) / na
    mb = math.fsum(b) / nb
    va = math.fsum((x - ma) ** 2 for x in a) / (na - 1)
    vb = math.fsum((x - mb) ** 2 for x in b) / (nb - 1)
    pooled = math.sqrt(((na - 1) * va + (nb - 1) * vb) / (na + nb - 2))
    if pooled == 0:
        return 0.0
    return (ma - mb) / pooled


def coefficient_of_variation(xs: Sequence[float]) -> float:
    if len(xs) < 2:
        return 0.0
    mean = math.fsum(xs) / len(xs)
    if mean == 0:
        return 0.0
    var = math.fsum((x - mean) ** 2 for x in xs) / (len(xs) - 1)
    return math.sqrt(var) / abs(mean)


# ---------------------------------------------------------------------------
# Run loading
# ---------------------------------------------------------------------------

@dataclass
class RunData:
    mode: str
    seed: int
    config: dict
    transactions: list[dict]
    rounds: list[dict]
    evolutions: list[dict]
    snapshots: list[dict]


def config_core_hash(config: dict) -> str:
    """Hash of the config without the seed: the pooling compatibility key."""
    core = {k: v for k, v in config.items() if k != "seed"}
    return hashlib.sha256(
        json.dumps(core, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def parse_log_lines(lines: Iterable[dict]) -> tuple[list[dict], list[dict], list[dict]]:
    transactions, rounds, evolutions = [], [], []
    for line in lines:
        kind = line.get("type")
        if kind == "transaction":
            transactions.append(line)
        elif kind == "round":
            rounds.append(line)
        elif kind == "evolution":
            evolutions.append(line)
    return transactions, rounds, evolutions


def validate_log(transactions: list[dict], rounds: list[dict]) -> None:
    """Reject truncated or gappy logs, naming the offending round."""
    seen = [r["round"] for r in rounds]
    if seen != list(range(1, len(seen) + 1)):
        missing = next(i for i, r in enumerate(seen, start=1) if r != i) if seen else 1
        raise AnalyticsError(f"log truncated or out of order at round {missing}")
    last = len(seen)
    for t in transactions:
        if t["round"] > last:
            raise AnalyticsError(f"log truncated at round {t['round']}: "
                                 "transactions without a round summary")


def load_run(run_dir: Path | str) -> RunData:
    run_dir = Path(run_dir)
    config_path = run_dir / "config.json"
    log_path = run_dir / "transactions.ndjson"
    for path in (config_path, log_path):
        if not path.exists():
            raise AnalyticsError(f"missing run file: {path}")
    meta = json.loads(config_path.read_text(encoding="utf-8"))
    lines = []
    with log_path.open(encoding="utf-8") as fh:
        for raw in fh:
            raw = raw.strip()
            if raw:
                lines.append(json.loads(raw))
    transactions, rounds, evolutions = parse_log_lines(lines)
    validate_log(transactions, rounds)
    snapshots = []
    snap_dir = run_dir / "snapshots"
    if snap_dir.is_dir():
        for path in sorted(snap_dir.glob("round_*.json")):
            snapshots.append(json.loads(path.read_text(encoding="utf-8")))
    return RunData(mode=meta.get("mode", "market"), seed=meta["config"]["seed"],
                   config=meta["config"], transactions=transactions, rounds=rounds,
                   evolutions=evolutions, snapshots=snapshots)


def run_data_from_result(result) -> RunData:
    """Build RunData from an in-memory engine RunResult."""
    from dataclasses import asdict

    transactions, rounds, evolutions = parse_log_lines(result.log_lines)
    validate_log(transactions, rounds)
    return RunData(mode=result.mode, seed=result.config.seed,
                   config=asdict(result.config), transactions=transactions,
                   rounds=rounds, evolutions=evolutions, snapshots=result.snapshots)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    mode: str
    rounds: int
    seed: int
    config_core: str
    final: dict
    per_round: list[dict]
    lorenz_wealth: list[tuple[float, float]]
    labels: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode, "rounds": self.rounds, "seed": self.seed,
            "config_core": self.config_core, "final": self.final,
            "per_round": self.per_round,
            "lorenz_wealth": [list(p) for p in self.lorenz_wealth],
            "labels": self.labels,
        }


def summarize(run: RunData) -> MetricsReport:
    """Full per-round and final metric report for one run."""
    if not run.snapshots:
        raise AnalyticsError("run has no snapshots")
    txs = run.transactions
    last_snap = run.snapshots[-1]
    agents = {a["agent_id"]: a for a in last_snap["agents"]}
    active = [a for a in last_snap["agents"] if a["active"]]
    autarky = run.mode == "autarky"

    active_wealth = [a["wealth"] for a in active]
    all_wealth = [a["wealth"] for a in last_snap["agents"]]

    contracts_won: dict[str, int] = {a["agent_id"]: 0 for a in active}
    dollars_won: dict[str, float] = {a["agent_id"]: 0.0 for a in active}
    volume_by_contractor: dict[str, float] = {}
    count_by_contractor: dict[str, int] = {}
    edges: set[tuple[str, str]] = set()
    pairs: set[tuple[str, str]] = set()
    for t in txs:
        paid = t["rho"] * t["bid_price"]
        volume_by_contractor[t["contractor"]] = (
            volume_by_contractor.get(t["contractor"], 0.0) + paid)
        count_by_contractor[t["contractor"]] = (
            count_by_contractor.get(t["contractor"], 0) + 1)
        if t["contractor"] in contracts_won:
            contracts_won[t["contractor"]] += 1
            dollars_won[t["contractor"]] += paid
        if t["poster"] != t["contractor"]:
            edges.add((t["poster"], t["contractor"]))
            pairs.add(tuple(sorted((t["poster"], t["contractor"]))))

    n = len(txs)
    dispute_rate = sum(1 for t in txs if t["status"] == "dispute") / n if n else 0.0
    mean_quality = math.fsum(t["quality"] for t in txs) / n if n else 0.0
    success_rate = sum(1 for t in txs if t["quality"] >= ADEQUATE_QUALITY) / n if n else 0.0
    skill_share = sum(1 for t in txs if t["skill_matched"]) / n if n else 0.0
    cross_share = sum(1 for t in txs if t["cross_family"]) / n if n else 0.0
    mean_rho = math.fsum(t["rho"] for t in txs) / n if n else 0.0
    total_volume = math.fsum(t["rho"] * t["bid_price"] for t in txs)

    def poster_family(t: dict) -> str:
        a = agents.get(t["poster"])
        return a["family"] if a else "platform"

    def poster_skill(t: dict) -> str:
        a = agents.get(t["poster"])
        return a["skill"] if a else "platform"

    rec_by_family: dict[str, float] = {}
    for fam in sorted({a["family"] for a in last_snap["agents"]}):
        fam_edges = [e for e in edges if agents.get(e[0], {}).get("family") == fam]
        rec_by_family[fam] = (sum(1 for u, v in fam_edges if (v, u) in edges)
                              / len(fam_edges)) if fam_edges else 0.0

    graph_nodes = {u for e in edges for u in e}
    baseline_rng = substream(run.config.get("seed", 0), "reciprocity-baseline")
    rec_baseline = random_reciprocity_baseline(
        max(len(graph_nodes), 2), len(edges), baseline_rng) if edges else 0.0

    final = {
        "transactions": n,
        "mean_wealth": (math.fsum(active_wealth) / len(active_wealth)
                        if active_wealth else 0.0),
        "mean_wealth_all_agents": (math.fsum(all_wealth) / len(all_wealth)
                                   if all_wealth else 0.0),
        "total_wealth": last_snap["totals"]["wealth"],
        "wealth_gini": gini(active_wealth, clamp_negative=True) if active_wealth else 0.0,
        "contract_gini": gini(list(contracts_won.values())) if contracts_won else 0.0,
        "volume_gini": gini(list(dollars_won.values())) if dollars_won else 0.0,
        "hhi_by_count": (hhi(list(count_by_contractor.values()))
                         if count_by_contractor else 0.0),
        "hhi_by_dollar": (hhi([v for v in volume_by_contractor.values() if v > 0])
                          if any(v > 0 for v in volume_by_contractor.values()) else 0.0),
        "unique_trading_pairs": len(pairs),
        "reciprocity": reciprocity(edges),
        "reciprocity_by_family": rec_by_family,
        "reciprocity_random_baseline": rec_baseline,
        "cross_family_share": cross_share,
        "dispute_rate": dispute_rate,
        "false_dispute_rate": false_dispute_rate(txs),
        "false_dispute_by_family": grouped_false_dispute(txs, poster_family),
        "false_dispute_by_skill": grouped_false_dispute(txs, poster_skill),
        "mean_quality": mean_quality,
        "task_success_rate": success_rate,
        "skill_match_share": skill_share,
        "mean_rho": mean_rho,
        "total_volume": total_volume,
        "total_backbone": last_snap["totals"]["backbone"],
        "total_exec": last_snap["totals"]["exec"],
        "active_wealth": sorted(active_wealth),
    }

    per_round = []
    tx_by_round: dict[int, list[dict]] = {}
    for t in txs:
        tx_by_round.setdefault(t["round"], []).append(t)
    snaps_by_round = {s["round"]: s for s in run.snapshots}
    for rline in run.rounds:
        r = rline["round"]
        rtx = tx_by_round.get(r, [])
        snap = snaps_by_round.get(r)
        wealth_r = [a["wealth"] for a in snap["agents"] if a["active"]] if snap else []
        per_round.append({
            "round": r,
            "settled": len(rtx),
            "escalated": rline["escalated"],
            "pool_size_end": rline["pool_size_end"],
            "mean_wealth": math.fsum(wealth_r) / len(wealth_r) if wealth_r else 0.0,
            "wealth_gini": gini(wealth_r, clamp_negative=True) if wealth_r else 0.0,
            "dispute_rate": (sum(1 for t in rtx if t["status"] == "dispute") / len(rtx)
                             if rtx else 0.0),
            "mean_quality": (math.fsum(t["quality"] for t in rtx) / len(rtx)
                             if rtx else 0.0),
            "skill_match_share": (sum(1 for t in rtx if t["skill_matched"]) / len(rtx)
                                  if rtx else 0.0),
            "volume": math.fsum(t["rho"] * t["bid_price"] for t in rtx),
            "rewards_minted": rline["rewards_minted"],
            "backbone_costs": rline["backbone_costs"],
        })

    labels = {
        "dispute_rate": ("task failure rate (autarky: no payment judgement)"
                         if autarky else "dispute rate"),
        "hhi": "reported on both contract-count and dollar-volume bases",
    }
    return MetricsReport(
        mode=run.mode, rounds=len(run.rounds), seed=run.seed,
        config_core=config_core_hash(run.config), final=final, per_round=per_round,
        lorenz_wealth=lorenz_points([max(w, 0.0) for w in active_wealth])
        if active_wealth else [],
        labels=labels,
    )


# ---------------------------------------------------------------------------
# Multi-seed pooling and comparisons
# ---------------------------------------------------------------------------

_POOLED_KEYS = (
    "mean_wealth", "wealth_gini", "contract_gini", "volume_gini",
    "hhi_by_count", "hhi_by_dollar", "reciprocity", "cross_family_share",
    "dispute_rate", "false_dispute_rate", "mean_quality", "task_success_rate",
    "skill_match_share", "mean_rho",
)


def pool_reports(reports: Sequence[MetricsReport]) -> dict:
    """Cross-seed means and CVs; all reports must share the same config core."""
    if not reports:
        raise AnalyticsError("nothing to pool")
    cores = {r.config_core for r in reports}
    modes = {r.mode for r in reports}
    if len(cores) > 1 or len(modes) > 1:
        raise AnalyticsError("refusing to pool runs with different configurations")
    per_seed = {r.seed: {k: r.final[k] for k in _POOLED_KEYS} for r in reports}
    pooled = {k: math.fsum(r.final[k] for r in reports) / len(reports)
              for k in _POOLED_KEYS}
    cv = {k: coefficient_of_variation([r.final[k] for r in reports])
          for k in _POOLED_KEYS}
    return {
        "mode": reports[0].mode,
        "seeds": sorted(per_seed),
        "per_seed": per_seed,
        "pooled_mean": pooled,
        "cross_seed_cv": cv,
        "total_transactions": sum(r.final["transactions"] for r in reports),
    }


_COMPARISON_ROWS = (
    ("Mean wealth ($)", "mean_wealth"),
    ("Wealth Gini", "wealth_gini"),
    ("Mean quality", "mean_quality"),
    ("Task success rate", "task_success_rate"),
    ("Contract Gini", "contract_gini"),
    ("Dispute / fail rate", "dispute_rate"),
)


def comparison(market: MetricsReport, baseline: MetricsReport) -> dict:
    """Side-by-side table for a market run against its no-market twin."""
    rows = []
    for label, key in _COMPARISON_ROWS:
        rows.append({"metric": label, "market": market.final[key],
                     "autarky": baseline.final[key]})
    wealth_d = None
    a, b = market.final["active_wealth"], baseline.final["active_wealth"]
    if len(a) > 1 and len(b) > 1:
        wealth_d = cohens_d(a, b)
    ratio = (market.final["mean_wealth"] / baseline.final["mean_wealth"]
             if baseline.final["mean_wealth"] else None)
    return {"rows": rows, "wealth_ratio": ratio, "wealth_cohens_d": wealth_d}


# ---------------------------------------------------------------------------
# Text rendering
# ---------------------------------------------------------------------------

def report_to_text(report: MetricsReport) -> str:
    f = report.final
    lines = [
        f"run summary: mode={report.mode} seed={report.seed} rounds={report.rounds}",
        f"  transactions        {f['transactions']}",
        f"  mean wealth         {f['mean_wealth']:.4f}",
        f"  wealth gini         {f['wealth_gini']:.4f}",
        f"  contract gini       {f['contract_gini']:.4f}",
        f"  volume gini         {f['volume_gini']:.4f}",
        f"  hhi (count/dollar)  {f['hhi_by_count']:.4f} / {f['hhi_by_dollar']:.4f}",
        f"  trading pairs       {f['unique_trading_pairs']}",
        f"  reciprocity         {f['reciprocity']:.4f} "
        f"(random baseline {f['reciprocity_random_baseline']:.4f})",
        f"  cross-family share  {f['cross_family_share']:.4f}",
        f"  {report.labels['dispute_rate']:<19} {f['dispute_rate']:.4f}",
        f"  false dispute rate  {f['false_dispute_rate']:.4f}",
        f"  mean quality        {f['mean_quality']:.4f}",
        f"  task success rate   {f['task_success_rate']:.4f}",
        f"  skill-match share   {f['skill_match_share']:.4f}",
    ]
    lines.append("  per-round: round settled disputes mean_wealth gini")
    for row in report.per_round:
        lines.append(f"    {row['round']:>4} {row['settled']:>7} "
                     f"{row['dispute_rate']:>8.3f} {row['mean_wealth']:>11.4f} "
                     f"{row['wealth_gini']:>5.3f}")
    return "\n".join(lines) + "\n"


def comparison_to_text(cmp: dict) -> str:
    lines = [f"{'Metric':<22} {'Market':>12} {'Autarky':>12}"]
    for row in cmp["rows"]:
        lines.append(f"{row['metric']:<22} {row['market']:>12.4f} {row['autarky']:>12.4f}")
    if cmp["wealth_ratio"] is not None:
        lines.append(f"{'Wealth ratio':<22} {cmp['wealth_ratio']:>12.2f}x")
    if cmp["wealth_cohens_d"] is not None:
        lines.append(f"{'Wealth Cohen d':<22} {cmp['wealth_cohens_d']:>12.3f}")
    return "\n".join(lines) + "\n"
