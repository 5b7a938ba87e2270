"""Pluggable agent decision policies.

A policy makes all strategic decisions for one agent: which listings to bid
on, which bid to hire, how to execute, what to pay, and what to believe.
Policies see only their ``Observation``; the engine owns enforcement of
every market rule (price floors, payment clamps, sealed bids), so no policy
output can corrupt engine state.

Observations are constructed so confidentiality holds by type: a bidding
observation has no field for other agents' bids, and ground-truth quality
appears in a payment observation only for policies that declare
``observes_quality`` (the calibrated payer, where replaying the measured
conditional payment behaviour is the point).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence

from .economy import ConfigError, DISPOSITIONS, PAYMENT_FLOOR
from .execution import ExecutionParams, ExecutionPlan

if TYPE_CHECKING:  # pragma: no cover
    from .queries import MarketQueries


# ---------------------------------------------------------------------------
# Observations (policy-facing projections of engine state)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SelfView:
    """What an agent knows about itself at decision time."""

    agent_id: str
    family: str
    skill: str
    wealth: float
    backbone_paid: float
    exec_paid: float
    round: int
    belief: str
    avg_rho_as_poster: float
    dispute_rate_as_poster: float
    avg_rho_as_contractor: float
    dispute_rate_as_contractor: float
    n_as_poster: int
    n_as_contractor: int


@dataclass(frozen=True)
class ListingView:
    listing_id: str
    task_id: str
    domain: str
    reward: float
    surge_depth: int
    poster: str
    poster_avg_rho: float
    c_ref: float
    pass_rate: float
    poster_family: Optional[str] = None  # populated only under transparency


@dataclass(frozen=True)
class BidView:
    bidder: str
    price: float
    proposal: str
    bidder_dispute_rate: float
    bidder_family: Optional[str] = None  # populated only under transparency


@dataclass(frozen=True)
class BidObservation:
    self_view: SelfView
    listings: tuple[ListingView, ...]
    queries: Optional["MarketQueries"] = None


@dataclass(frozen=True)
class SelectionObservation:
    self_view: SelfView
    listing: ListingView
    bids: tuple[BidView, ...]
    queries: Optional["MarketQueries"] = None


@dataclass(frozen=True)
class PlanObservation:
    self_view: SelfView
    listing: ListingView
    price: float          # the winning bid price; 0 when self-executing
    mode: str = "market"  # "market" or "autarky"
    queries: Optional["MarketQueries"] = None


@dataclass(frozen=True)
class PaymentObservation:
    """Settlement-time view: output preview and metadata, never the true score.

    ``quality`` is filled in by the engine only for policies that declare
    ``observes_quality``; for everyone else it is None.
    """

    self_view: SelfView
    listing: ListingView
    bid: BidView
    output_preview: str
    exec_tier: str
    exec_skills_used: bool
    contractor_avg_rho: float
    contractor_dispute_rate: float
    quality: Optional[float] = None
    queries: Optional["MarketQueries"] = None


@dataclass(frozen=True)
class BeliefObservation:
    self_view: SelfView
    round_profit: float
    contracts_won: int
    contracts_settled_as_poster: int
    disputes_received: int
    disputes_issued: int
    queries: Optional["MarketQueries"] = None


@dataclass(frozen=True)
class BidRequest:
    """A policy's sealed bid on one listing; the engine stamps the bidder."""

    listing_id: str
    price: float
    proposal: str = ""


# ---------------------------------------------------------------------------
# Calibrated conditional payment model
# ---------------------------------------------------------------------------

# (label, mean, std) of the payment ratio conditional on the quality bin,
# measured from live settlement behaviour. Bins: q == 0, 0 < q < 0.5,
# 0.5 <= q < 1, q == 1.
ORACLE_PAYMENT_BINS = (
    ("fail", 0.593, 0.189),
    ("partial", 0.672, 0.213),
    ("adequate", 0.868, 0.192),
    ("pass", 0.980, 0.094),
)


def payment_bin(quality: float,
                bins: Sequence[tuple[str, float, float]] = ORACLE_PAYMENT_BINS,
                ) -> tuple[str, float, float]:
    """Map a quality score to its calibrated (label, mean, std) bin."""
    if quality <= 0.0:
        return bins[0]
    if quality < 0.5:
        return bins[1]
    if quality < 1.0:
        return bins[2]
    return bins[3]


def draw_calibrated_payment(quality: float, rng: random.Random,
                            floor: float = PAYMENT_FLOOR,
                            bins: Sequence[tuple[str, float, float]] = ORACLE_PAYMENT_BINS,
                            ) -> float:
    """Gaussian draw from the quality bin, clamped to [floor, 1.0]."""
    _, mean, std = payment_bin(quality, bins)
    raw = rng.gauss(mean, std) if std > 0 else mean
    return min(max(raw, floor), 1.0)


# ---------------------------------------------------------------------------
# Dispositions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DispositionParams:
    """Mechanical knobs that give the disposition ablation a testable meaning."""

    mode: str = "neutral"
    generosity_shift: float = 0.0   # added to every decided payment ratio pre-clamp
    bid_margin: float = 1.5         # markup over estimated execution cost
    insularity: float = 0.0         # same-family preference weight in selection

    def __post_init__(self) -> None:
        if self.mode not in DISPOSITIONS:
            raise ConfigError(f"unknown disposition {self.mode!r}")
        if not -0.3 <= self.generosity_shift <= 0.3:
            raise ConfigError("generosity_shift must be in [-0.3, 0.3]")
        if self.bid_margin <= 0:
            raise ConfigError("bid_margin must be > 0")
        if not 0 <= self.insularity <= 1:
            raise ConfigError("insularity must be in [0, 1]")

    @classmethod
    def for_mode(cls, mode: str) -> "DispositionParams":
        if mode == "neutral":
            return cls(mode="neutral")
        if mode == "honest":
            # payment tied strictly to quality: bin mean, no noise
            return cls(mode="honest")
        if mode == "adversarial":
            return cls(mode="adversarial", generosity_shift=-0.1, insularity=0.8)
        if mode == "collaborative":
            return cls(mode="collaborative", generosity_shift=0.1)
        raise ConfigError(f"unknown disposition {mode!r}")


# ---------------------------------------------------------------------------
# Policy interface and defaults
# ---------------------------------------------------------------------------

class AgentPolicy:
    """Base policy: never bids, rejects everything, pays the safe default.

    Subclasses override the decisions they care about. ``observes_quality``
    controls whether the engine reveals the ground-truth score in payment
    observations.
    """

    observes_quality = False

    def decide_bids(self, obs: BidObservation, rng: random.Random) -> list[BidRequest]:
        return []

    def decide_selection(self, obs: SelectionObservation,
                         rng: random.Random) -> Optional[str]:
        """Return the winning bidder's agent_id, or None to reject all bids."""
        return None

    def decide_plan(self, obs: PlanObservation, rng: random.Random) -> ExecutionPlan:
        skills = (obs.self_view.skill,) if obs.self_view.skill == obs.listing.domain else ()
        return ExecutionPlan(tier="mid", skills=skills)

    def decide_payment(self, obs: PaymentObservation, rng: random.Random) -> float:
        return 0.75

    def decide_self_execution(self, obs: PlanObservation,
                              rng: random.Random) -> Optional[ExecutionPlan]:
        """Autarky accept/decline: return a plan to execute, None to decline."""
        return None

    def update_belief(self, obs: BeliefObservation) -> str:
        return obs.self_view.belief


class CostPlusBidder:
    """Bid estimated execution cost times a margin, capped at the reward.

    Skill-matched listings get a margin discount: the expected score is
    higher there, so the bidder can price keener and still come out ahead.
    That discount is what routes tasks toward comparative advantage.
    """

    def __init__(self, margin: float = 1.5, skill_discount: float = 0.8,
                 exec_params: Optional[ExecutionParams] = None, mu: float = 10.0,
                 high_tier_headroom: float = 2.0):
        if margin <= 0 or not 0 < skill_discount <= 1:
            raise ConfigError("margin must be > 0 and skill_discount in (0, 1]")
        self.margin = margin
        self.skill_discount = skill_discount
        self.exec_params = exec_params or ExecutionParams()
        self.mu = mu
        self.high_tier_headroom = high_tier_headroom

    def expected_cost(self, c_ref: float, tier: str) -> float:
        return self.mu * c_ref * self.exec_params.tier(tier).cost_multiplier

    def pick_tier(self, c_ref: float, budget: float) -> str:
        if budget < self.expected_cost(c_ref, "mid"):
            return "low"
        if budget >= self.high_tier_headroom * self.expected_cost(c_ref, "high"):
            return "high"
        return "mid"

    def bid_for(self, listing: ListingView, own_skill: str) -> Optional[BidRequest]:
        tier = self.pick_tier(listing.c_ref, listing.reward)
        est = self.expected_cost(listing.c_ref, tier)
        matched = own_skill == listing.domain
        raw = est * self.margin * (self.skill_discount if matched else 1.0)
        price = min(raw, listing.reward)
        if price < est:  # cannot cover expected cost even at full payment
            return None
        proposal = f"approach: {tier} tier / {'skill packages' if matched else 'no packages'} / cost-plus"
        return BidRequest(listing_id=listing.listing_id, price=price, proposal=proposal)

    def bids(self, obs: BidObservation) -> list[BidRequest]:
        out = []
        for listing in obs.listings:
            if listing.poster == obs.self_view.agent_id:
                continue
            bid = self.bid_for(listing, obs.self_view.skill)
            if bid is not None:
                out.append(bid)
        return out

    def plan(self, obs: PlanObservation, low_tier_only: bool = False) -> ExecutionPlan:
        budget = obs.price if obs.mode == "market" else obs.listing.reward
        tier = "low" if low_tier_only else self.pick_tier(obs.listing.c_ref, budget)
        matched = obs.self_view.skill == obs.listing.domain
        skills = (obs.self_view.skill,) if matched else ()
        return ExecutionPlan(tier=tier, skills=skills)

    def accept_own(self, obs: PlanObservation) -> Optional[ExecutionPlan]:
        plan = self.plan(obs)
        matched = obs.self_view.skill == obs.listing.domain
        tier = self.exec_params.tier(plan.tier)
        pi = min(max(obs.listing.pass_rate + tier.quality_boost
                     + (self.exec_params.skill_bonus if matched else 0.0), 0.0), 1.0)
        expected_earnings = pi * obs.listing.reward
        if expected_earnings <= self.expected_cost(obs.listing.c_ref, plan.tier):
            return None
        return plan


class ReputationScreeningSelector:
    """Pick the bid minimising price + lambda * dispute_rate * reward."""

    def __init__(self, lambda_weight: float = 1.0, skip_overpriced: bool = True,
                 insularity: float = 0.0):
        self.lambda_weight = lambda_weight
        self.skip_overpriced = skip_overpriced
        self.insularity = insularity

    def score(self, bid: BidView, listing: ListingView, own_family: str) -> float:
        s = bid.price + self.lambda_weight * bid.bidder_dispute_rate * listing.reward
        if (self.insularity > 0 and bid.bidder_family is not None
                and bid.bidder_family != own_family):
            s += self.insularity * listing.reward
        return s

    def select(self, obs: SelectionObservation) -> Optional[str]:
        candidates = [b for b in obs.bids
                      if not (self.skip_overpriced and b.price > obs.listing.reward)]
        if not candidates:
            return None
        best = min(candidates,
                   key=lambda b: (self.score(b, obs.listing, obs.self_view.family), b.bidder))
        return best.bidder


def templated_belief(obs: BeliefObservation) -> str:
    if obs.contracts_won == 0 and obs.contracts_settled_as_poster == 0:
        activity = "idle round, no settlements"
    else:
        activity = (f"won {obs.contracts_won}, settled {obs.contracts_settled_as_poster} posted")
    return (f"round {obs.self_view.round}: {activity}; "
            f"profit {obs.round_profit:+.4f}; "
            f"disputes received {obs.disputes_received}, issued {obs.disputes_issued}")


class StandardPolicy(AgentPolicy):
    """Cost-plus bidding, reputation screening, calibrated payment.

    The payment decision replays the measured conditional distribution of
    payment given quality, so this policy observes the true score. The
    disposition parameters shift generosity, insularity, and planning just
    as the corresponding ablation demands.
    """

    observes_quality = True

    def __init__(self, disposition: DispositionParams | str = "neutral",
                 exec_params: Optional[ExecutionParams] = None, mu: float = 10.0,
                 margin: Optional[float] = None, skill_discount: float = 0.8,
                 lambda_weight: float = 1.0):
        if isinstance(disposition, str):
            disposition = DispositionParams.for_mode(disposition)
        self.disposition = disposition
        self.bidder = CostPlusBidder(
            margin=margin if margin is not None else disposition.bid_margin,
            skill_discount=skill_discount, exec_params=exec_params, mu=mu)
        self.selector = ReputationScreeningSelector(
            lambda_weight=lambda_weight, insularity=disposition.insularity)

    def decide_bids(self, obs: BidObservation, rng: random.Random) -> list[BidRequest]:
        return self.bidder.bids(obs)

    def decide_selection(self, obs: SelectionObservation,
                         rng: random.Random) -> Optional[str]:
        return self.selector.select(obs)

    def decide_plan(self, obs: PlanObservation, rng: random.Random) -> ExecutionPlan:
        return self.bidder.plan(obs, low_tier_only=self.disposition.mode == "collaborative")

    def decide_payment(self, obs: PaymentObservation, rng: random.Random) -> float:
        quality = obs.quality if obs.quality is not None else 0.5
        if self.disposition.mode == "honest":
            _, mean, _ = payment_bin(quality)
            rho = mean
        else:
            rho = draw_calibrated_payment(quality, rng)
        return rho + self.disposition.generosity_shift

    def decide_self_execution(self, obs: PlanObservation,
                              rng: random.Random) -> Optional[ExecutionPlan]:
        return self.bidder.accept_own(obs)

    def update_belief(self, obs: BeliefObservation) -> str:
        return templated_belief(obs)


class RandomPolicy(AgentPolicy):
    """Stochastic baseline: coin-flip bids, uniform prices and payments."""

    def __init__(self, bid_probability: float = 0.3, accept_probability: float = 0.8):
        if not 0 <= bid_probability <= 1 or not 0 <= accept_probability <= 1:
            raise ConfigError("probabilities must be in [0, 1]")
        self.bid_probability = bid_probability
        self.accept_probability = accept_probability

    def decide_bids(self, obs: BidObservation, rng: random.Random) -> list[BidRequest]:
        out = []
        for listing in obs.listings:
            if listing.poster == obs.self_view.agent_id:
                continue
            if self.bid_probability > 0 and rng.random() < self.bid_probability:
                price = listing.reward * rng.uniform(0.3, 1.0)
                out.append(BidRequest(listing.listing_id, price, "approach: random"))
        return out

    def decide_selection(self, obs: SelectionObservation,
                         rng: random.Random) -> Optional[str]:
        if not obs.bids or rng.random() > self.accept_probability:
            return None
        return obs.bids[rng.randrange(len(obs.bids))].bidder

    def decide_plan(self, obs: PlanObservation, rng: random.Random) -> ExecutionPlan:
        tier = ("low", "mid", "high")[rng.randrange(3)]
        matched = obs.self_view.skill == obs.listing.domain
        return ExecutionPlan(tier=tier, skills=(obs.self_view.skill,) if matched else ())

    def decide_payment(self, obs: PaymentObservation, rng: random.Random) -> float:
        return rng.uniform(0.5, 1.0)

    def decide_self_execution(self, obs: PlanObservation,
                              rng: random.Random) -> Optional[ExecutionPlan]:
        if rng.random() < self.accept_probability:
            return self.decide_plan(obs, rng)
        return None

    def update_belief(self, obs: BeliefObservation) -> str:
        return templated_belief(obs)


BUILTIN_POLICIES = ("standard", "random", "passive")


def make_policy(name: str, *, disposition: str = "neutral",
                exec_params: Optional[ExecutionParams] = None,
                mu: float = 10.0) -> AgentPolicy:
    """Instantiate a built-in policy by name."""
    if name == "standard":
        return StandardPolicy(disposition=disposition, exec_params=exec_params, mu=mu)
    if name == "random":
        return RandomPolicy()
    if name == "passive":
        return AgentPolicy()
    raise ConfigError(f"unknown policy {name!r}")
