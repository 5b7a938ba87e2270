"""Core domain types and settlement arithmetic for the task market.

Every dollar in the simulator flows through the functions in this module.
All money is a 64-bit float in USD; cross-checks elsewhere compare with
``MONEY_TOL`` absolute tolerance. Negative wealth is legal everywhere and
never clamped: insolvency has no mechanical effect except through
evolutionary ranking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

MONEY_TOL = 1e-9
PAYMENT_FLOOR = 0.5
APPROVE_THRESHOLD = 0.95

SKILL_CLUSTERS = ("coding", "data-science", "documents", "querying", "web-media")

DISPOSITIONS = ("neutral", "honest", "adversarial", "collaborative")

Status = Literal["approve", "dispute"]

STATUS_APPROVE: Status = "approve"
STATUS_DISPUTE: Status = "dispute"


class ConfigError(ValueError):
    """Invalid configuration or catalog data."""


class InvariantViolation(RuntimeError):
    """An engine invariant was broken; indicates a bug, not bad input."""


@dataclass(frozen=True)
class PriceTable:
    """Per-million-token prices for one model family."""

    family_name: str
    p_in: float   # USD per 1M input tokens
    p_out: float  # USD per 1M output tokens

    def __post_init__(self) -> None:
        if self.p_in <= 0 or self.p_out <= 0:
            raise ConfigError(f"price table {self.family_name!r}: prices must be > 0")


# Default five-family price menu. The spread in decision-making cost across
# families (~13x between the cheapest and dearest output price) is what makes
# "thinking" expensive for some agents and nearly free for others.
DEFAULT_PRICE_TABLES = (
    PriceTable("deepseek", 0.26, 0.38),
    PriceTable("glm", 0.06, 0.40),
    PriceTable("gpt", 0.20, 1.25),
    PriceTable("gemini", 0.25, 1.50),
    PriceTable("claude", 1.00, 5.00),
)

DEFAULT_FAMILY_NAMES = tuple(p.family_name for p in DEFAULT_PRICE_TABLES)


@dataclass(frozen=True)
class TaskSpec:
    """A unit of work as catalog metadata.

    ``c_ref`` is the reference execution cost of the task and ``pass_rate``
    its historical solve rate; harder tasks (lower pass rate) earn
    proportionally larger rewards.
    """

    task_id: str
    domain: str
    c_ref: float
    pass_rate: float
    source: str = "synthetic"

    def __post_init__(self) -> None:
        if self.c_ref <= 0:
            raise ConfigError(f"task {self.task_id!r}: c_ref must be > 0")
        if not 0 < self.pass_rate <= 1:
            raise ConfigError(f"task {self.task_id!r}: pass_rate must be in (0, 1]")


@dataclass
class AgentState:
    """One market participant.

    ``payment_history_as_poster`` holds the payment ratios this agent paid
    out; ``payment_history_as_contractor`` holds the ratios it received.
    Both sides of every settlement are recorded, so chronic underpayers and
    chronic underperformers alike accumulate visible records.
    """

    agent_id: str
    family: str
    skill: str
    wealth: float
    active: bool = True
    payment_history_as_poster: list[float] = field(default_factory=list)
    payment_history_as_contractor: list[float] = field(default_factory=list)
    belief: str = ""
    generation: int = 0
    parent: Optional[str] = None
    # engine bookkeeping, cumulative
    initial_wealth: float = 0.0
    backbone_paid: float = 0.0
    exec_paid: float = 0.0

    def __post_init__(self) -> None:
        if self.generation < 0:
            raise ConfigError(f"agent {self.agent_id!r}: generation must be >= 0")


@dataclass(frozen=True)
class MarketConfig:
    """Every market parameter plus ablation switches and the RNG seed.

    The defaults reproduce the baseline economy; a config with no overrides
    is the baseline run.
    """

    n_agents: int = 25
    w0: float = 1.0                 # initial endowment, USD
    kappa: int = 2                  # tasks per agent per round
    mu: float = 10.0                # task multiplier on reward and exec cost
    f: float = 5.0                  # client value premium on c_ref
    K: int = 6                      # selection period, rounds
    E: int = 1                      # eliminations per selection cycle
    R: int = 1                      # reproductions per selection cycle
    rho_min: float = PAYMENT_FLOOR  # payment floor
    rho_approve: float = APPROVE_THRESHOLD
    alpha: float = 0.15             # surge increment per failed match
    surge_cooldown: float = 0.05    # pool discount per successful surge match
    seed: int = 0
    transparency: bool = False
    monoculture: Optional[str] = None
    disposition: str = "neutral"
    rounds: int = 24

    # decision-cost model: each policy decision bills synthetic token counts
    # at the agent's family prices, clamped to a per-call cap
    backbone_tokens_in: int = 2000
    backbone_tokens_out: int = 500
    backbone_cap: float = 0.05

    # engine knobs
    max_contracts_per_round: Optional[int] = None  # None = unlimited wins
    reassign_orphaned: bool = False  # surge listings of inactive posters go to a sink account
    wire_timeout: float = 30.0       # seconds per external decision attempt

    def __post_init__(self) -> None:
        if not 0 < self.rho_min <= self.rho_approve <= 1:
            raise ConfigError("require 0 < rho_min <= rho_approve <= 1")
        if self.mu < 1:
            raise ConfigError("mu must be >= 1")
        if self.f <= 0:
            raise ConfigError("f must be > 0")
        if self.kappa < 1:
            raise ConfigError("kappa must be >= 1")
        if self.E > self.n_agents:
            raise ConfigError("E must not exceed n_agents")
        if self.E < 0 or self.R < 0:
            raise ConfigError("E and R must be >= 0")
        if self.n_agents < 2:
            raise ConfigError("need at least 2 agents")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if not 0 <= self.alpha:
            raise ConfigError("alpha must be >= 0")
        if not 0 <= self.surge_cooldown < 1:
            raise ConfigError("surge_cooldown must be in [0, 1)")
        if self.disposition not in DISPOSITIONS:
            raise ConfigError(f"unknown disposition {self.disposition!r}")


def llm_call_cost(prices: PriceTable, n_in: int, n_out: int) -> float:
    """USD cost of one model call: (n_in*p_in + n_out*p_out) / 1e6."""
    if n_in < 0 or n_out < 0:
        raise ConfigError("token counts must be >= 0")
    return (n_in * prices.p_in + n_out * prices.p_out) / 1e6


def base_reward(task: TaskSpec, f: float) -> float:
    """Base reward for a task: c_ref * f / pass_rate."""
    if task.pass_rate <= 0:
        raise ConfigError(f"task {task.task_id!r}: pass_rate must be > 0")
    return task.c_ref * f / task.pass_rate


def contract_reward(base: float, mu: float) -> float:
    """Posted contract reward: the base reward scaled by the task multiplier."""
    return mu * base


def poster_profit(reward: float, rho: float, bid: float, backbone_cost: float) -> float:
    """Poster side of one settlement: reward - rho*bid - backbone_cost."""
    return reward - rho * bid - backbone_cost


def contractor_profit(
    rho: float, bid: float, mu: float, exec_cost: float, backbone_cost: float
) -> float:
    """Contractor side of one settlement: rho*bid - mu*exec_cost - backbone_cost."""
    return rho * bid - mu * exec_cost - backbone_cost


def classify_payment(
    rho: float,
    threshold: float = APPROVE_THRESHOLD,
    floor: float = PAYMENT_FLOOR,
) -> Status:
    """Classify a settlement: approve iff rho >= threshold, else dispute.

    A rho outside [floor, 1.0] is a settlement-layer bug and raises
    InvariantViolation rather than returning a status.
    """
    if not floor <= rho <= 1.0:
        raise InvariantViolation(f"payment ratio {rho} outside [{floor}, 1.0]")
    return STATUS_APPROVE if rho >= threshold else STATUS_DISPUTE


def avg_payment_ratio(history: Sequence[float]) -> float:
    """Mean payment ratio; 0 for an empty history (no default trust)."""
    if not history:
        return 0.0
    return math.fsum(history) / len(history)


def reputation_dispute_rate(
    history: Sequence[float], threshold: float = APPROVE_THRESHOLD
) -> float:
    """Fraction of recorded ratios below the approval threshold; 0 if empty."""
    if not history:
        return 0.0
    return sum(1 for rho in history if rho < threshold) / len(history)


def decision_cost(prices: PriceTable, config: MarketConfig) -> float:
    """Cost billed for one strategic decision, clamped at the per-call cap."""
    raw = llm_call_cost(prices, config.backbone_tokens_in, config.backbone_tokens_out)
    return min(raw, config.backbone_cap)
