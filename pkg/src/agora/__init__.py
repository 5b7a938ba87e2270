"""Deterministic simulator for an agent task market.

Covers the full cycle: post, sealed-bid auction, execution, discretionary
settlement with bilateral reputation, surge pricing for unmatched work,
and periodic evolutionary selection; plus a no-market (autarky) baseline,
pluggable agent policies with a wire protocol for external processes, and
analytics over the resulting logs.
"""

from .economy import (
    AgentState,
    ConfigError,
    InvariantViolation,
    MarketConfig,
    PriceTable,
    SKILL_CLUSTERS,
    TaskSpec,
    avg_payment_ratio,
    base_reward,
    classify_payment,
    contract_reward,
    contractor_profit,
    llm_call_cost,
    poster_profit,
    reputation_dispute_rate,
)
from .engine import (
    Bid,
    ContractListing,
    MarketEngine,
    SurgePool,
    TransactionRecord,
    evolution_step,
    surge_cooldown,
    surge_escalate,
)
from .execution import (
    ExecutionCache,
    ExecutionParams,
    ExecutionPlan,
    ExecutionResult,
    TierParams,
    cached_execution,
    default_catalog,
    ingest_catalog,
    sample_execution,
)
from .policies import (
    AgentPolicy,
    CostPlusBidder,
    DispositionParams,
    RandomPolicy,
    ReputationScreeningSelector,
    StandardPolicy,
    draw_calibrated_payment,
    payment_bin,
)
from .analytics import (
    MetricsReport,
    cohens_d,
    false_dispute_rate,
    gini,
    hhi,
    lorenz_points,
    reciprocity,
    summarize,
)

__version__ = "0.1.0"
