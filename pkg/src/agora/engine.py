"""The round state machine for the task market.

Each market round runs post -> bid -> select -> plan -> execute -> settle in
order, then surge bookkeeping, belief updates, and (periodically)
evolutionary selection. Listings that fail to match are never dropped: they
escalate into the surge pool and are re-offered ahead of fresh tasks the
next round.

Determinism contract: every (round, phase, agent) context draws from its own
RNG substream derived from the master seed, and all iteration is in
canonical order (ascending agent_id, then listing order), so identical
(config, seed, policies) produce byte-identical logs. Policy invocations
within a phase could run concurrently without changing results; this
implementation keeps a single logical writer throughout.

The autarky mode removes the market: agents accept or decline their own
tasks, settlement pays the quality score exactly, and no reputation is
recorded. Evolution still runs on the same schedule.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional

from .economy import (
    AgentState,
    ConfigError,
    InvariantViolation,
    MarketConfig,
    PriceTable,
    SKILL_CLUSTERS,
    Status,
    TaskSpec,
    DEFAULT_PRICE_TABLES,
    avg_payment_ratio,
    base_reward,
    classify_payment,
    contract_reward,
    contractor_profit,
    decision_cost,
    poster_profit,
    reputation_dispute_rate,
)
from .execution import (
    CacheKey,
    ExecutionCache,
    ExecutionParams,
    ExecutionPlan,
    ExecutionResult,
    TIER_NAMES,
    cached_execution,
    sample_execution,
)
from .policies import (
    AgentPolicy,
    BeliefObservation,
    BidObservation,
    BidRequest,
    BidView,
    ListingView,
    PaymentObservation,
    PlanObservation,
    SelectionObservation,
    SelfView,
    StandardPolicy,
)
from .queries import MarketQueries
from .rng import substream

POLICY_RETRIES = 5
BELIEF_MAX_CHARS = 4096
SINK_ID = "platform"

MODE_MARKET = "market"
MODE_AUTARKY = "autarky"


@dataclass
class ContractListing:
    """One open posting. ``current_reward`` follows the surge law:

    original * (1 + alpha)^surge_depth * (1 - cooldown)^cooldown_hits,
    floored at the original reward.
    """

    listing_id: str
    task: TaskSpec
    poster: str
    original_reward: float
    current_reward: float
    round_posted: int
    surge_depth: int = 0
    cooldown_hits: int = 0
    poster_avg_rho: float = 0.0
    poster_family_visible: Optional[str] = None
    alpha: float = 0.15
    cooldown_rate: float = 0.05


def _surge_reward(listing: ContractListing) -> float:
    raw = (listing.original_reward
           * (1 + listing.alpha) ** listing.surge_depth
           * (1 - listing.cooldown_rate) ** listing.cooldown_hits)
    return max(raw, listing.original_reward)


def surge_escalate(listing: ContractListing, alpha: Optional[float] = None) -> ContractListing:
    """One more failed match: depth += 1, reward recomputed on the surge law."""
    if alpha is not None:
        listing.alpha = alpha
    listing.surge_depth += 1
    listing.current_reward = _surge_reward(listing)
    return listing


def surge_cooldown(listing: ContractListing, rate: Optional[float] = None) -> ContractListing:
    """Apply one pool-level cooldown tick; the reward never drops below original."""
    if rate is not None:
        listing.cooldown_rate = rate
    listing.cooldown_hits += 1
    listing.current_reward = _surge_reward(listing)
    return listing


class SurgePool:
    """Unmatched listings waiting to be re-offered, drain-first."""

    def __init__(self) -> None:
        self.entries: list[ContractListing] = []

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, listing: ContractListing) -> None:
        self.entries.append(listing)

    def drain(self) -> list[ContractListing]:
        drained, self.entries = self.entries, []
        return drained

    def apply_cooldown(self, rate: float) -> None:
        for listing in self.entries:
            surge_cooldown(listing, rate)


@dataclass
class Bid:
    listing_id: str
    bidder: str
    price: float
    proposal: str
    bidder_dispute_rate: Optional[float] = None
    bidder_family_visible: Optional[str] = None


@dataclass(frozen=True)
class TransactionRecord:
    round: int
    listing_id: str
    poster: str
    contractor: str
    task_id: str
    bid_price: float
    rho: float
    status: Status
    quality: float
    exec_cost: float
    poster_backbone: float
    contractor_backbone: float
    poster_profit: float
    contractor_profit: float
    skill_matched: bool
    cross_family: bool

    def to_dict(self) -> dict:
        return {
            "type": "transaction",
            "round": self.round,
            "listing_id": self.listing_id,
            "poster": self.poster,
            "contractor": self.contractor,
            "task_id": self.task_id,
            "bid_price": self.bid_price,
            "rho": self.rho,
            "status": self.status,
            "quality": self.quality,
            "exec_cost": self.exec_cost,
            "poster_backbone": self.poster_backbone,
            "contractor_backbone": self.contractor_backbone,
            "poster_profit": self.poster_profit,
            "contractor_profit": self.contractor_profit,
            "skill_matched": self.skill_matched,
            "cross_family": self.cross_family,
        }


@dataclass(frozen=True)
class EvolutionEvent:
    round: int
    deactivated: tuple[tuple[str, float], ...]   # (agent_id, residual balance)
    spawned: tuple[tuple[str, str, float], ...]  # (child_id, parent_id, endowment)

    def to_dict(self) -> dict:
        return {
            "type": "evolution",
            "round": self.round,
            "deactivated": [{"agent_id": a, "balance": b} for a, b in self.deactivated],
            "spawned": [{"child": c, "parent": p, "endowment": w}
                        for c, p, w in self.spawned],
        }


def evolution_step(agents: list[AgentState], E: int, R: int, round_idx: int,
                   allocate_id: Callable[[], str]) -> Optional[EvolutionEvent]:
    """Deactivate the poorest E, reproduce the richest R, conserve total wealth.

    Children inherit (family, skill) with empty histories and beliefs; each
    child's endowment is a deactivated agent's residual balance, paired in
    rank order (richest parent's child takes the poorest eliminated
    balance). Ties in wealth break toward the lower agent_id. Returns None
    when there is nothing to do or too few active agents.
    """
    if E == 0 and R == 0:
        return None
    active = [a for a in agents if a.active]
    if len(active) < E + 1:
        return None

    poorest = sorted(active, key=lambda a: (a.wealth, a.agent_id))[:E]
    eliminated_ids = {a.agent_id for a in poorest}
    survivors = [a for a in active if a.agent_id not in eliminated_ids]
    richest = sorted(survivors, key=lambda a: (-a.wealth, a.agent_id))[:R]

    residuals = [(a, a.wealth) for a in poorest]  # ascending; captured pre-transfer
    for agent in poorest:
        agent.active = False

    # Pair endowments in rank order; balances beyond the paired count stay
    # frozen on the inactive record so total wealth is conserved either way.
    spawned = []
    for i, parent in enumerate(richest):
        if i < len(residuals):
            donor, endowment = residuals[i]
            donor.wealth = 0.0
        else:
            endowment = 0.0
        child = AgentState(
            agent_id=allocate_id(),
            family=parent.family,
            skill=parent.skill,
            wealth=endowment,
            generation=parent.generation + 1,
            parent=parent.agent_id,
            initial_wealth=endowment,
        )
        agents.append(child)
        spawned.append((child.agent_id, parent.agent_id, endowment))

    return EvolutionEvent(
        round=round_idx,
        deactivated=tuple((a.agent_id, bal) for a, bal in residuals),
        spawned=tuple(spawned),
    )


@dataclass
class RunResult:
    mode: str
    config: MarketConfig
    records: list[TransactionRecord]
    log_lines: list[dict]
    snapshots: list[dict]
    incidents: list[dict]
    agents: list[AgentState]
    sink_wealth: float


class MarketEngine:
    """Owns all market state and runs rounds.

    ``policies`` maps agent ids to policy objects; ids not covered fall back
    to ``policy_factory`` (default: the standard policy at the configured
    disposition). Children born in evolution always use the factory.
    """

    def __init__(self, config: MarketConfig,
                 catalog: list[TaskSpec],
                 policies: Optional[Mapping[str, AgentPolicy]] = None,
                 policy_factory: Optional[Callable[[AgentState], AgentPolicy]] = None,
                 exec_params: Optional[ExecutionParams] = None,
                 cache: Optional[ExecutionCache] = None,
                 price_tables: Iterable[PriceTable] = DEFAULT_PRICE_TABLES,
                 mode: str = MODE_MARKET,
                 out_dir: Optional[Path | str] = None):
        if not catalog:
            raise ConfigError("task catalog is empty")
        if mode not in (MODE_MARKET, MODE_AUTARKY):
            raise ConfigError(f"unknown mode {mode!r}")
        self.config = config
        self.mode = mode
        self.catalog = list(catalog)
        self.exec_params = exec_params or ExecutionParams()
        self.cache = cache
        self.prices = {p.family_name: p for p in price_tables}
        if config.monoculture is not None and config.monoculture not in self.prices:
            raise ConfigError(f"monoculture family {config.monoculture!r} not in price menu")

        self.agents: dict[str, AgentState] = {}
        families = list(self.prices)
        for i in range(config.n_agents):
            family = config.monoculture or families[i % len(families)]
            skill = SKILL_CLUSTERS[(i // len(families)) % len(SKILL_CLUSTERS)]
            agent = AgentState(agent_id=f"a{i:03d}", family=family, skill=skill,
                               wealth=config.w0, initial_wealth=config.w0)
            self.agents[agent.agent_id] = agent
        self._next_agent_idx = config.n_agents
        self._next_listing_idx = 1

        if policy_factory is None:
            def policy_factory(_agent: AgentState) -> AgentPolicy:
                return StandardPolicy(disposition=config.disposition,
                                      exec_params=self.exec_params, mu=config.mu)
        self._policy_factory = policy_factory
        self._policies: dict[str, AgentPolicy] = dict(policies or {})

        self.pool = SurgePool()
        self.records: list[TransactionRecord] = []
        self.log_lines: list[dict] = []
        self.snapshots: list[dict] = []
        self.incidents: list[dict] = []
        self.sink_wealth = 0.0
        self.round_index = 0
        self._round_backbone = 0.0
        self._round_rewards = 0.0
        self._round_exec = 0.0
        self.queries = MarketQueries(self)

        self._out_dir: Optional[Path] = None
        if out_dir is not None:
            self._out_dir = Path(out_dir)
            self._out_dir.mkdir(parents=True, exist_ok=True)
            (self._out_dir / "snapshots").mkdir(exist_ok=True)
            (self._out_dir / "transactions.ndjson").write_text("", encoding="utf-8")
            (self._out_dir / "incidents.ndjson").write_text("", encoding="utf-8")

    # -- small helpers ------------------------------------------------------

    def policy_for(self, agent_id: str) -> AgentPolicy:
        if agent_id not in self._policies:
            self._policies[agent_id] = self._policy_factory(self.agents[agent_id])
        return self._policies[agent_id]

    def active_agents(self) -> list[AgentState]:
        return [self.agents[aid] for aid in sorted(self.agents) if self.agents[aid].active]

    def _allocate_agent_id(self) -> str:
        aid = f"a{self._next_agent_idx:03d}"
        self._next_agent_idx += 1
        return aid

    def _allocate_listing_id(self) -> str:
        lid = f"L{self._next_listing_idx:05d}"
        self._next_listing_idx += 1
        return lid

    def _incident(self, r: int, phase: str, subject: str, message: str) -> None:
        incident = {"round": r, "phase": phase, "subject": subject, "message": message}
        self.incidents.append(incident)
        if self._out_dir is not None:
            with (self._out_dir / "incidents.ndjson").open("a", encoding="utf-8") as fh:
                fh.write(_dumps(incident) + "\n")

    def _log(self, line: dict) -> None:
        self.log_lines.append(line)
        if self._out_dir is not None:
            with (self._out_dir / "transactions.ndjson").open("a", encoding="utf-8") as fh:
                fh.write(_dumps(line) + "\n")

    def _charge_decision(self, agent: AgentState) -> float:
        cost = decision_cost(self.prices[agent.family], self.config)
        agent.wealth -= cost
        agent.backbone_paid += cost
        self._round_backbone += cost
        return cost

    def _self_view(self, agent: AgentState, r: int) -> SelfView:
        return SelfView(
            agent_id=agent.agent_id, family=agent.family, skill=agent.skill,
            wealth=agent.wealth, backbone_paid=agent.backbone_paid,
            exec_paid=agent.exec_paid, round=r, belief=agent.belief,
            avg_rho_as_poster=avg_payment_ratio(agent.payment_history_as_poster),
            dispute_rate_as_poster=reputation_dispute_rate(
                agent.payment_history_as_poster, self.config.rho_approve),
            avg_rho_as_contractor=avg_payment_ratio(agent.payment_history_as_contractor),
            dispute_rate_as_contractor=reputation_dispute_rate(
                agent.payment_history_as_contractor, self.config.rho_approve),
            n_as_poster=len(agent.payment_history_as_poster),
            n_as_contractor=len(agent.payment_history_as_contractor),
        )

    def _listing_view(self, listing: ContractListing) -> ListingView:
        return ListingView(
            listing_id=listing.listing_id, task_id=listing.task.task_id,
            domain=listing.task.domain, reward=listing.current_reward,
            surge_depth=listing.surge_depth, poster=listing.poster,
            poster_avg_rho=listing.poster_avg_rho,
            c_ref=listing.task.c_ref, pass_rate=listing.task.pass_rate,
            poster_family=listing.poster_family_visible,
        )

    def _call_policy(self, fn: Callable, *, r: int, phase: str, agent_id: str,
                     extra: tuple = (), default=None, validate: Optional[Callable] = None):
        """Invoke one policy decision with retries; fall back to the default."""
        last_err: Optional[BaseException] = None
        for attempt in range(POLICY_RETRIES):
            rng = substream(self.config.seed, "round", r, phase, agent_id, *extra,
                            "try", attempt)
            try:
                value = fn(rng)
                if validate is not None:
                    value = validate(value)
                return value
            except Exception as exc:  # isolate policy faults, never abort the round
                last_err = exc
        self._incident(r, phase, agent_id,
                       f"policy failed after {POLICY_RETRIES} attempts: {last_err}")
        return default

    # -- posting ------------------------------------------------------------

    def _fresh_reward(self, task: TaskSpec) -> float:
        return contract_reward(base_reward(task, self.config.f), self.config.mu)

    def _make_listing(self, task: TaskSpec, poster: str, r: int) -> ContractListing:
        reward = self._fresh_reward(task)
        agent = self.agents.get(poster)
        return ContractListing(
            listing_id=self._allocate_listing_id(), task=task, poster=poster,
            original_reward=reward, current_reward=reward, round_posted=r,
            poster_avg_rho=avg_payment_ratio(agent.payment_history_as_poster) if agent else 1.0,
            poster_family_visible=(agent.family if agent and self.config.transparency else None),
            alpha=self.config.alpha, cooldown_rate=self.config.surge_cooldown,
        )

    def _deal_tasks(self, r: int, count: int) -> list[TaskSpec]:
        """Per-round draw without replacement, reshuffling when exhausted."""
        rng = substream(self.config.seed, "round", r, "deal")
        deck: list[TaskSpec] = []
        dealt = []
        for _ in range(count):
            if not deck:
                deck = list(self.catalog)
                rng.shuffle(deck)
            dealt.append(deck.pop())
        return dealt

    def post_tasks(self, r: int) -> list[ContractListing]:
        """Offer surge entries first (drain-first), then kappa fresh tasks per agent."""
        active = self.active_agents()
        if len(active) < 2:
            raise ConfigError("need at least 2 active agents to run a round")

        offered: list[ContractListing] = []
        retained: list[ContractListing] = []
        for listing in self.pool.drain():
            owner = self.agents.get(listing.poster)
            if owner is not None and owner.active:
                listing.poster_avg_rho = avg_payment_ratio(owner.payment_history_as_poster)
                offered.append(listing)
            elif self.config.reassign_orphaned and self.mode == MODE_MARKET:
                listing.poster = SINK_ID
                listing.poster_avg_rho = 1.0
                listing.poster_family_visible = None
                offered.append(listing)
            else:
                retained.append(listing)
        for listing in retained:
            self.pool.add(listing)

        fresh_tasks = self._deal_tasks(r, self.config.kappa * len(active))
        i = 0
        for agent in active:
            for _ in range(self.config.kappa):
                offered.append(self._make_listing(fresh_tasks[i], agent.agent_id, r))
                i += 1
        return offered

    # -- market phases ------------------------------------------------------

    def _collect_bids(self, r: int, listings: list[ContractListing]) -> dict[str, list[Bid]]:
        views = tuple(self._listing_view(l) for l in listings)
        open_ids = {l.listing_id: l for l in listings}
        by_listing: dict[str, list[Bid]] = {}
        for agent in self.active_agents():
            policy = self.policy_for(agent.agent_id)
            obs = BidObservation(self_view=self._self_view(agent, r), listings=views,
                                 queries=self.queries)
            self._charge_decision(agent)
            requests = self._call_policy(
                lambda rng: list(policy.decide_bids(obs, rng)),
                r=r, phase="bid", agent_id=agent.agent_id, default=[])
            seen: set[str] = set()
            for req in requests or []:
                if not isinstance(req, BidRequest):
                    self._incident(r, "bid", agent.agent_id, "non-BidRequest output dropped")
                    continue
                listing = open_ids.get(req.listing_id)
                if listing is None or req.listing_id in seen:
                    continue
                if listing.poster == agent.agent_id:
                    self._incident(r, "bid", agent.agent_id,
                                   f"own-listing bid dropped on {req.listing_id}")
                    continue
                price = float(req.price)
                if not math.isfinite(price):
                    self._incident(r, "bid", agent.agent_id,
                                   f"non-finite bid price dropped on {req.listing_id}")
                    continue
                seen.add(req.listing_id)
                price = max(price, 0.0)  # engine owns the price floor
                by_listing.setdefault(req.listing_id, []).append(Bid(
                    listing_id=req.listing_id, bidder=agent.agent_id,
                    price=price, proposal=str(req.proposal)))
        for bids in by_listing.values():
            bids.sort(key=lambda b: b.bidder)
        return by_listing

    def _bid_view(self, bid: Bid) -> BidView:
        bidder = self.agents[bid.bidder]
        return BidView(
            bidder=bid.bidder, price=bid.price, proposal=bid.proposal,
            bidder_dispute_rate=reputation_dispute_rate(
                bidder.payment_history_as_contractor, self.config.rho_approve),
            bidder_family=bidder.family if self.config.transparency else None,
        )

    def run_auction(self, r: int, listing: ContractListing,
                    bids: list[Bid]) -> Optional[Bid]:
        """Delegate the hiring choice to the poster's policy; None = rejected all."""
        if not bids:
            return None
        bid_views = tuple(self._bid_view(b) for b in bids)
        if listing.poster == SINK_ID:
            winner_id = min(bids, key=lambda b: (b.price, b.bidder)).bidder
        else:
            poster = self.agents[listing.poster]
            policy = self.policy_for(listing.poster)
            obs = SelectionObservation(self_view=self._self_view(poster, r),
                                       listing=self._listing_view(listing),
                                       bids=bid_views, queries=self.queries)
            self._charge_decision(poster)

            def validate(choice):
                if choice is None:
                    return None
                if not any(b.bidder == choice for b in bids):
                    raise ValueError(f"selection {choice!r} is not a bidder")
                return choice

            winner_id = self._call_policy(
                lambda rng: policy.decide_selection(obs, rng),
                r=r, phase="select", agent_id=listing.poster,
                extra=(listing.listing_id,), default=None, validate=validate)
        if winner_id is None:
            return None
        return next(b for b in bids if b.bidder == winner_id)

    def _default_plan(self, contractor: AgentState, task: TaskSpec) -> ExecutionPlan:
        skills = (contractor.skill,) if contractor.skill == task.domain else ()
        return ExecutionPlan(tier="mid", skills=skills)

    def _plan_for(self, r: int, listing: ContractListing, bid: Bid) -> ExecutionPlan:
        contractor = self.agents[bid.bidder]
        policy = self.policy_for(bid.bidder)
        obs = PlanObservation(self_view=self._self_view(contractor, r),
                              listing=self._listing_view(listing), price=bid.price,
                              mode=MODE_MARKET, queries=self.queries)
        self._charge_decision(contractor)

        def validate(plan):
            if not isinstance(plan, ExecutionPlan) or plan.tier not in TIER_NAMES:
                raise ValueError("invalid execution plan")
            return plan

        plan = self._call_policy(
            lambda rng: policy.decide_plan(obs, rng),
            r=r, phase="plan", agent_id=bid.bidder, extra=(listing.listing_id,),
            default=self._default_plan(contractor, listing.task), validate=validate)
        # agents only own their own cluster's packages
        allowed = (contractor.skill,) if contractor.skill == listing.task.domain else ()
        skills = tuple(s for s in plan.skills if s in allowed)
        return ExecutionPlan(tier=plan.tier, skills=skills, effort=plan.effort)

    def _execute(self, r: int, listing: ContractListing,
                 plan: ExecutionPlan, contractor: AgentState) -> ExecutionResult:
        skill_match_exec = (contractor.skill == listing.task.domain) and bool(plan.skills)
        key = CacheKey(listing.task.task_id, plan.tier, skill_match_exec)
        rng = substream(self.config.seed, "round", r, "exec", listing.listing_id)
        return cached_execution(
            self.cache, key,
            lambda rng2: sample_execution(listing.task, plan, skill_match_exec,
                                          self.exec_params, rng2),
            rng)

    def settle(self, r: int, listing: ContractListing, bid: Bid,
               result: ExecutionResult) -> TransactionRecord:
        """Poster sets the payment ratio; both reputations record it."""
        contractor = self.agents[bid.bidder]
        reward = listing.current_reward
        mu = self.config.mu

        if listing.poster == SINK_ID:
            rho_raw, poster_bb = 1.0, 0.0
        else:
            poster = self.agents[listing.poster]
            policy = self.policy_for(listing.poster)
            obs = PaymentObservation(
                self_view=self._self_view(poster, r),
                listing=self._listing_view(listing), bid=self._bid_view(bid),
                output_preview=result.output_preview, exec_tier=result.tier,
                exec_skills_used=result.skill_match,
                contractor_avg_rho=avg_payment_ratio(contractor.payment_history_as_contractor),
                contractor_dispute_rate=reputation_dispute_rate(
                    contractor.payment_history_as_contractor, self.config.rho_approve),
                quality=result.quality if policy.observes_quality else None,
                queries=self.queries)
            self._charge_decision(poster)

            def finite(value: float) -> float:
                if not math.isfinite(value):
                    raise ValueError("payment ratio must be finite")
                return value

            rho_raw = self._call_policy(
                lambda rng: finite(float(policy.decide_payment(obs, rng))),
                r=r, phase="pay", agent_id=listing.poster,
                extra=(listing.listing_id,), default=0.75)
            poster_bb = 2 * decision_cost(self.prices[poster.family], self.config)

        rho = min(max(rho_raw, self.config.rho_min), 1.0)
        status = classify_payment(rho, self.config.rho_approve, self.config.rho_min)

        exec_effective = mu * result.exec_cost
        if listing.poster == SINK_ID:
            self.sink_wealth += reward - rho * bid.price
        else:
            poster = self.agents[listing.poster]
            poster.wealth += reward - rho * bid.price
            poster.payment_history_as_poster.append(rho)
        contractor.wealth += rho * bid.price - exec_effective
        contractor.exec_paid += exec_effective
        contractor.payment_history_as_contractor.append(rho)

        contractor_bb = decision_cost(self.prices[contractor.family], self.config)
        record = TransactionRecord(
            round=r, listing_id=listing.listing_id, poster=listing.poster,
            contractor=bid.bidder, task_id=listing.task.task_id,
            bid_price=bid.price, rho=rho, status=status, quality=result.quality,
            exec_cost=result.exec_cost,
            poster_backbone=poster_bb, contractor_backbone=contractor_bb,
            poster_profit=poster_profit(reward, rho, bid.price, poster_bb),
            contractor_profit=contractor_profit(rho, bid.price, mu, result.exec_cost,
                                                contractor_bb),
            skill_matched=contractor.skill == listing.task.domain,
            cross_family=(listing.poster != SINK_ID
                          and self.agents[listing.poster].family != contractor.family),
        )
        self.records.append(record)
        self._round_rewards += reward
        self._round_exec += exec_effective
        self._log(record.to_dict())
        return record

    # -- belief / evolution / bookkeeping ------------------------------------

    def _update_beliefs(self, r: int, start_wealth: dict[str, float],
                        round_records: list[TransactionRecord]) -> None:
        for agent in self.active_agents():
            won = sum(1 for t in round_records if t.contractor == agent.agent_id
                      and t.poster != agent.agent_id)
            posted = sum(1 for t in round_records if t.poster == agent.agent_id)
            disputes_recv = sum(1 for t in round_records
                                if t.contractor == agent.agent_id and t.status == "dispute")
            disputes_issued = sum(1 for t in round_records
                                  if t.poster == agent.agent_id and t.status == "dispute")
            profit = agent.wealth - start_wealth.get(agent.agent_id, agent.wealth)
            policy = self.policy_for(agent.agent_id)
            obs = BeliefObservation(self_view=self._self_view(agent, r),
                                    round_profit=profit, contracts_won=won,
                                    contracts_settled_as_poster=posted,
                                    disputes_received=disputes_recv,
                                    disputes_issued=disputes_issued,
                                    queries=self.queries)
            self._charge_decision(agent)
            text = self._call_policy(
                lambda _rng: str(policy.update_belief(obs)),
                r=r, phase="belief", agent_id=agent.agent_id, default=agent.belief)
            agent.belief = (text or "")[:BELIEF_MAX_CHARS]

    def run_evolution(self, r: int) -> Optional[EvolutionEvent]:
        agents_list = [self.agents[aid] for aid in sorted(self.agents)]
        before = math.fsum(a.wealth for a in agents_list)
        event = evolution_step(agents_list, self.config.E, self.config.R, r,
                               self._allocate_agent_id)
        if event is None:
            if self.config.E or self.config.R:
                self._incident(r, "evolution", "-",
                               "selection skipped: not enough active agents")
            return None
        for agent in agents_list:
            self.agents[agent.agent_id] = agent
        after = math.fsum(self.agents[aid].wealth for aid in sorted(self.agents))
        if before != after:
            raise InvariantViolation(
                f"round {r} evolution: total wealth {before!r} -> {after!r}")
        line = event.to_dict()
        line["wealth_total_before"] = before
        line["wealth_total_after"] = after
        self._log(line)
        return event

    def total_wealth(self) -> float:
        return math.fsum(a.wealth for a in self.agents.values()) + self.sink_wealth

    def snapshot(self, r: int) -> dict:
        agents = []
        for aid in sorted(self.agents):
            a = self.agents[aid]
            agents.append({
                "agent_id": a.agent_id, "family": a.family, "skill": a.skill,
                "wealth": a.wealth, "active": a.active,
                "generation": a.generation, "parent": a.parent,
                "initial_wealth": a.initial_wealth,
                "backbone_paid": a.backbone_paid, "exec_paid": a.exec_paid,
                "avg_rho_as_poster": avg_payment_ratio(a.payment_history_as_poster),
                "dispute_rate_as_poster": reputation_dispute_rate(
                    a.payment_history_as_poster, self.config.rho_approve),
                "n_as_poster": len(a.payment_history_as_poster),
                "avg_rho_as_contractor": avg_payment_ratio(a.payment_history_as_contractor),
                "dispute_rate_as_contractor": reputation_dispute_rate(
                    a.payment_history_as_contractor, self.config.rho_approve),
                "n_as_contractor": len(a.payment_history_as_contractor),
                "payment_history_as_poster": list(a.payment_history_as_poster),
                "payment_history_as_contractor": list(a.payment_history_as_contractor),
                "belief": a.belief,
            })
        return {
            "round": r,
            "mode": self.mode,
            "agents": agents,
            "pool": [{
                "listing_id": l.listing_id, "task_id": l.task.task_id,
                "poster": l.poster, "surge_depth": l.surge_depth,
                "cooldown_hits": l.cooldown_hits,
                "current_reward": l.current_reward,
                "original_reward": l.original_reward,
            } for l in self.pool.entries],
            "sink_wealth": self.sink_wealth,
            "totals": {
                "wealth": self.total_wealth(),
                "backbone": math.fsum(a.backbone_paid for a in self.agents.values()),
                "exec": math.fsum(a.exec_paid for a in self.agents.values()),
            },
        }

    def state_hash(self) -> str:
        return hashlib.sha256(
            _dumps(self.snapshot(self.round_index)).encode("utf-8")).hexdigest()

    def _write_snapshot(self, snap: dict) -> None:
        self.snapshots.append(snap)
        if self._out_dir is not None:
            path = self._out_dir / "snapshots" / f"round_{snap['round']:04d}.json"
            path.write_text(_dumps(snap) + "\n", encoding="utf-8")
            (self._out_dir / "market_state.json").write_text(
                _dumps(snap) + "\n", encoding="utf-8")

    # -- round drivers -------------------------------------------------------

    def run_round(self, r: int) -> list[TransactionRecord]:
        if self.mode == MODE_AUTARKY:
            return self.run_autarky_round(r)
        return self.run_market_round(r)

    def run_market_round(self, r: int) -> list[TransactionRecord]:
        self.round_index = r
        self._round_backbone = 0.0
        self._round_rewards = 0.0
        self._round_exec = 0.0
        wealth_before = self.total_wealth()
        start_wealth = {aid: a.wealth for aid, a in self.agents.items()}
        n_records_before = len(self.records)

        listings = self.post_tasks(r)
        bids_by_listing = self._collect_bids(r, listings)

        wins_this_round: dict[str, int] = {}
        cap = self.config.max_contracts_per_round
        failed: list[ContractListing] = []
        for listing in listings:
            try:
                bids = bids_by_listing.get(listing.listing_id, [])
                if cap is not None:
                    bids = [b for b in bids if wins_this_round.get(b.bidder, 0) < cap]
                winner = self.run_auction(r, listing, bids)
                if winner is None:
                    failed.append(listing)
                    continue
                wins_this_round[winner.bidder] = wins_this_round.get(winner.bidder, 0) + 1
                plan = self._plan_for(r, listing, winner)
                result = self._execute(r, listing, plan, self.agents[winner.bidder])
                self.settle(r, listing, winner, result)
            except Exception as exc:  # isolate the listing, never abort the round
                self._incident(r, "round", listing.listing_id, f"listing isolated: {exc}")
                failed.append(listing)

        round_records = self.records[n_records_before:]
        surge_successes = sum(1 for listing in listings
                              if listing.surge_depth >= 1
                              and any(t.listing_id == listing.listing_id
                                      for t in round_records))
        for listing in failed:
            surge_escalate(listing, self.config.alpha)
            self.pool.add(listing)
        for _ in range(surge_successes):
            self.pool.apply_cooldown(self.config.surge_cooldown)

        self._update_beliefs(r, start_wealth, round_records)
        self._finish_round(r, listings, round_records, failed, wealth_before)
        return round_records

    def run_autarky_round(self, r: int) -> list[TransactionRecord]:
        """No-market baseline: self-execution, deterministic quality-based pay."""
        self.round_index = r
        self._round_backbone = 0.0
        self._round_rewards = 0.0
        self._round_exec = 0.0
        wealth_before = self.total_wealth()
        start_wealth = {aid: a.wealth for aid, a in self.agents.items()}
        n_records_before = len(self.records)

        listings = self.post_tasks(r)
        failed: list[ContractListing] = []
        for listing in listings:
            try:
                agent = self.agents[listing.poster]
                policy = self.policy_for(listing.poster)
                obs = PlanObservation(self_view=self._self_view(agent, r),
                                      listing=self._listing_view(listing), price=0.0,
                                      mode=MODE_AUTARKY, queries=self.queries)
                self._charge_decision(agent)

                def validate(plan):
                    if plan is None:
                        return None
                    if not isinstance(plan, ExecutionPlan) or plan.tier not in TIER_NAMES:
                        raise ValueError("invalid execution plan")
                    return plan

                plan = self._call_policy(
                    lambda rng: policy.decide_self_execution(obs, rng),
                    r=r, phase="accept", agent_id=listing.poster,
                    extra=(listing.listing_id,), default=None, validate=validate)
                if plan is None:
                    failed.append(listing)
                    continue
                allowed = (agent.skill,) if agent.skill == listing.task.domain else ()
                plan = ExecutionPlan(tier=plan.tier,
                                     skills=tuple(s for s in plan.skills if s in allowed),
                                     effort=plan.effort)
                result = self._execute(r, listing, plan, agent)
                self._settle_autarky(r, listing, agent, result)
            except Exception as exc:
                self._incident(r, "round", listing.listing_id, f"listing isolated: {exc}")
                failed.append(listing)

        round_records = self.records[n_records_before:]
        surge_successes = sum(1 for listing in listings
                              if listing.surge_depth >= 1
                              and any(t.listing_id == listing.listing_id
                                      for t in round_records))
        for listing in failed:
            surge_escalate(listing, self.config.alpha)
            self.pool.add(listing)
        for _ in range(surge_successes):
            self.pool.apply_cooldown(self.config.surge_cooldown)

        self._update_beliefs(r, start_wealth, round_records)
        self._finish_round(r, listings, round_records, failed, wealth_before)
        return round_records

    def _settle_autarky(self, r: int, listing: ContractListing, agent: AgentState,
                        result: ExecutionResult) -> TransactionRecord:
        """Settlement pays the quality score exactly; no reputation is recorded."""
        rho = result.quality
        status = classify_payment(rho, self.config.rho_approve, floor=0.0)
        reward = listing.current_reward
        earnings = rho * reward
        exec_effective = self.config.mu * result.exec_cost
        agent.wealth += earnings - exec_effective
        agent.exec_paid += exec_effective
        accept_cost = decision_cost(self.prices[agent.family], self.config)
        record = TransactionRecord(
            round=r, listing_id=listing.listing_id, poster=agent.agent_id,
            contractor=agent.agent_id, task_id=listing.task.task_id,
            bid_price=reward, rho=rho, status=status, quality=result.quality,
            exec_cost=result.exec_cost,
            poster_backbone=0.0, contractor_backbone=accept_cost,
            poster_profit=0.0,
            contractor_profit=contractor_profit(rho, reward, self.config.mu,
                                                result.exec_cost, accept_cost),
            skill_matched=agent.skill == listing.task.domain,
            cross_family=False,
        )
        self.records.append(record)
        self._round_rewards += earnings
        self._round_exec += exec_effective
        self._log(record.to_dict())
        return record

    def _finish_round(self, r: int, listings: list[ContractListing],
                      round_records: list[TransactionRecord],
                      failed: list[ContractListing], wealth_before: float) -> None:
        if len(round_records) + len(failed) != len(listings):
            raise InvariantViolation(
                f"round {r}: {len(listings)} offered != "
                f"{len(round_records)} settled + {len(failed)} escalated")
        wealth_after = self.total_wealth()
        flows = self._round_rewards - self._round_exec - self._round_backbone
        if abs((wealth_after - wealth_before) - flows) > 1e-6:
            raise InvariantViolation(
                f"round {r} settlement: wealth delta {wealth_after - wealth_before!r} "
                f"!= flows {flows!r}")
        self._log({
            "type": "round",
            "round": r,
            "mode": self.mode,
            "posted": [l.listing_id for l in listings],
            "settled": len(round_records),
            "escalated": len(failed),
            "pool_size_end": len(self.pool),
            "rewards_minted": self._round_rewards,
            "exec_costs_effective": self._round_exec,
            "backbone_costs": self._round_backbone,
            "wealth_total_before": wealth_before,
            "wealth_total_after": wealth_after,
        })
        if r % self.config.K == 0:
            self.run_evolution(r)
        self._write_snapshot(self.snapshot(r))

    def run(self, rounds: Optional[int] = None) -> RunResult:
        n = rounds if rounds is not None else self.config.rounds
        for r in range(1, n + 1):
            self.run_round(r)
        return RunResult(
            mode=self.mode, config=self.config, records=list(self.records),
            log_lines=list(self.log_lines), snapshots=list(self.snapshots),
            incidents=list(self.incidents),
            agents=[self.agents[aid] for aid in sorted(self.agents)],
            sink_wealth=self.sink_wealth,
        )


def _dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))
