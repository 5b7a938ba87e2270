"""Task execution stand-in: catalog, parametric quality/cost model, replay cache.

Real task execution is out of scope; this module replaces it with a
parametric sampler whose every knob (tier boosts, skill bonus, partial-score
mixture, cost noise) lives in ``ExecutionParams`` so it can be re-calibrated
against real traces later. The cache replays stored outcomes keyed by
(task_id, tier, skill_match) and writes through on misses, so repeated runs
get cheaper without changing the generating distribution.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .economy import ConfigError, SKILL_CLUSTERS, TaskSpec
from .rng import substream

TIER_NAMES = ("low", "mid", "high")

# Fixed generation seed keeps the bundled catalog identical across runs.
_DEFAULT_CATALOG_SEED = 73

# Source mix of the bundled catalog: 47 professional tasks spread over all
# five clusters, 112 data-querying tasks, 75 function-call tasks.
_CATALOG_SOURCES = (
    ("skills", 47, None),        # domains cycle through all clusters
    ("toolqa", 112, "querying"),
    ("bfcl", 75, "coding"),
)
DEFAULT_CATALOG_SIZE = sum(n for _, n, _ in _CATALOG_SOURCES)


class CatalogError(ConfigError):
    """Malformed or inconsistent task catalog data."""


@dataclass(frozen=True)
class TierParams:
    """One worker tier: cost factor on c_ref and additive pass-probability boost."""

    tier: str
    cost_multiplier: float
    quality_boost: float

    def __post_init__(self) -> None:
        if self.cost_multiplier <= 0:
            raise ConfigError(f"tier {self.tier!r}: cost_multiplier must be > 0")


DEFAULT_TIERS = {
    "low": TierParams("low", 0.5, -0.15),
    "mid": TierParams("mid", 1.0, 0.0),
    "high": TierParams("high", 2.5, 0.10),
}


@dataclass(frozen=True)
class ExecutionParams:
    """All knobs of the synthetic execution model."""

    tiers: dict[str, TierParams] = field(default_factory=lambda: dict(DEFAULT_TIERS))
    skill_bonus: float = 0.15
    partial_zero_prob: float = 0.8     # failed runs land at q=0 with this probability
    partial_low: float = 0.1           # else uniform partial score in [low, high]
    partial_high: float = 0.49
    cost_noise_sigma: float = 0.2      # lognormal sigma; 0 disables noise

    def tier(self, name: str) -> TierParams:
        if name not in self.tiers:
            raise ConfigError(f"unknown tier {name!r}")
        return self.tiers[name]


@dataclass(frozen=True)
class ExecutionPlan:
    """Contractor's execution choice: worker tier, skill packages, effort note.

    ``effort`` is carried but uninterpreted by the engine.
    """

    tier: str = "mid"
    skills: tuple[str, ...] = ()
    effort: str = "standard"


@dataclass(frozen=True)
class ExecutionResult:
    quality: float
    exec_cost: float
    output_preview: str
    tier: str
    skill_match: bool
    cached: bool = False


@dataclass(frozen=True)
class CacheKey:
    task_id: str
    tier: str
    skill_match: bool

    def as_str(self) -> str:
        return f"{self.task_id}|{self.tier}|{int(self.skill_match)}"


def pass_probability(task: TaskSpec, tier: TierParams, skill_match: bool,
                     params: ExecutionParams) -> float:
    """Clamped pass probability for one execution attempt."""
    pi = task.pass_rate + tier.quality_boost + (params.skill_bonus if skill_match else 0.0)
    return min(max(pi, 0.0), 1.0)


def sample_execution(task: TaskSpec, plan: ExecutionPlan, skill_match: bool,
                     params: ExecutionParams, rng: random.Random) -> ExecutionResult:
    """Draw one execution outcome: quality in [0, 1] and a positive cost.

    Quality is 1 with the clamped pass probability; otherwise it falls to 0
    or a partial score, reproducing the strongly bimodal outcome mass of
    fractional verifiers.
    """
    tier = params.tier(plan.tier)
    pi = pass_probability(task, tier, skill_match, params)
    if rng.random() < pi:
        quality = 1.0
    elif rng.random() < params.partial_zero_prob:
        quality = 0.0
    else:
        quality = rng.uniform(params.partial_low, params.partial_high)
    noise = rng.lognormvariate(0.0, params.cost_noise_sigma) if params.cost_noise_sigma > 0 else 1.0
    exec_cost = task.c_ref * tier.cost_multiplier * noise
    if quality >= 1.0:
        verdict = "pass"
    elif quality > 0.0:
        verdict = f"partial {quality:.2f}"
    else:
        verdict = "fail"
    preview = f"{task.task_id}: {verdict} via {plan.tier} tier" + (
        " with skill packages" if skill_match else ""
    )
    return ExecutionResult(
        quality=quality,
        exec_cost=exec_cost,
        output_preview=preview,
        tier=plan.tier,
        skill_match=skill_match,
    )


class ExecutionCache:
    """Replay store keyed by (task_id, tier, skill_match).

    Entries are only ever appended; lookups sample uniformly among stored
    entries. When bound to a file, every recorded entry is appended to it as
    one line, so the file grows monotonically and can be shared across runs.
    """

    def __init__(self) -> None:
        self._entries: dict[str, list[dict]] = {}
        self._path: Optional[Path] = None

    def __len__(self) -> int:
        return sum(len(v) for v in self._entries.values())

    def entries_for(self, key: CacheKey) -> list[dict]:
        return list(self._entries.get(key.as_str(), ()))

    def lookup(self, key: CacheKey, rng: random.Random) -> Optional[ExecutionResult]:
        stored = self._entries.get(key.as_str())
        if not stored:
            return None
        entry = stored[rng.randrange(len(stored))]
        return ExecutionResult(
            quality=entry["quality"],
            exec_cost=entry["exec_cost"],
            output_preview=entry["output_preview"],
            tier=key.tier,
            skill_match=key.skill_match,
            cached=True,
        )

    def record(self, key: CacheKey, result: ExecutionResult) -> None:
        entry = {
            "quality": result.quality,
            "exec_cost": result.exec_cost,
            "output_preview": result.output_preview,
        }
        self._entries.setdefault(key.as_str(), []).append(entry)
        if self._path is not None:
            line = json.dumps({"key": key.as_str(), "entry": entry}, sort_keys=True)
            with self._path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def bind(self, path: Path | str) -> "ExecutionCache":
        """Attach a backing file: existing lines are loaded, new entries appended."""
        self._path = Path(path)
        if self._path.exists():
            with self._path.open(encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    self._entries.setdefault(rec["key"], []).append(rec["entry"])
        return self


def cached_execution(cache: Optional[ExecutionCache], key: CacheKey,
                     fallback: Callable[[random.Random], ExecutionResult],
                     rng: random.Random) -> ExecutionResult:
    """Serve from the cache when possible, else run the fallback and write through."""
    if cache is not None:
        hit = cache.lookup(key, rng)
        if hit is not None:
            return hit
    result = fallback(rng)
    if cache is not None:
        cache.record(key, result)
    return result


def validate_catalog(tasks: list[TaskSpec]) -> list[TaskSpec]:
    seen: set[str] = set()
    for task in tasks:
        if task.task_id in seen:
            raise CatalogError(f"duplicate task_id {task.task_id!r}")
        seen.add(task.task_id)
        if task.domain not in SKILL_CLUSTERS:
            raise CatalogError(f"task {task.task_id!r}: unknown domain {task.domain!r}")
    if not tasks:
        raise CatalogError("catalog is empty")
    return tasks


def ingest_catalog(path: Path | str) -> list[TaskSpec]:
    """Load a catalog file: one JSON record per line, validated."""
    tasks: list[TaskSpec] = []
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                tasks.append(TaskSpec(
                    task_id=rec["task_id"],
                    domain=rec["domain"],
                    c_ref=float(rec["c_ref"]),
                    pass_rate=float(rec["pass_rate"]),
                    source=rec.get("source", "file"),
                ))
            except (KeyError, ValueError, TypeError, ConfigError) as exc:
                raise CatalogError(f"{path}:{lineno}: bad task record: {exc}") from exc
    return validate_catalog(tasks)


def write_catalog(tasks: list[TaskSpec], path: Path | str) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for task in tasks:
            fh.write(json.dumps({
                "task_id": task.task_id,
                "domain": task.domain,
                "c_ref": task.c_ref,
                "pass_rate": task.pass_rate,
                "source": task.source,
            }, sort_keys=True) + "\n")


def default_catalog() -> list[TaskSpec]:
    """The bundled 234-task synthetic catalog.

    Reference costs are drawn from a lognormal with median $0.02 and pass
    rates from a uniform band; both are synthetic stand-ins, not measured
    values, and regenerate identically from a fixed internal seed.
    """
    rng = substream(_DEFAULT_CATALOG_SEED, "catalog")
    tasks: list[TaskSpec] = []
    for source, count, fixed_domain in _CATALOG_SOURCES:
        for i in range(count):
            domain = fixed_domain or SKILL_CLUSTERS[i % len(SKILL_CLUSTERS)]
            c_ref = 0.02 * rng.lognormvariate(0.0, 0.8)
            pass_rate = round(rng.uniform(0.35, 0.95), 2)
            tasks.append(TaskSpec(
                task_id=f"{source}-{i + 1:03d}",
                domain=domain,
                c_ref=c_ref,
                pass_rate=pass_rate,
                source=source,
            ))
    return validate_catalog(tasks)
