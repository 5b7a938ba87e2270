from __future__ import annotations

import math

import pytest

from agora.economy import ConfigError
from agora.execution import ExecutionParams
from agora.policies import (
    BidObservation,
    BidView,
    CostPlusBidder,
    DispositionParams,
    ListingView,
    ORACLE_PAYMENT_BINS,
    PaymentObservation,
    PlanObservation,
    RandomPolicy,
    ReputationScreeningSelector,
    SelectionObservation,
    SelfView,
    StandardPolicy,
    draw_calibrated_payment,
    payment_bin,
    templated_belief,
    BeliefObservation,
)
from agora.rng import substream


def sv(agent_id="a001", skill="coding", family="deepseek", wealth=5.0, rnd=1,
       belief="") -> SelfView:
    return SelfView(agent_id=agent_id, family=family, skill=skill, wealth=wealth,
                    backbone_paid=0.0, exec_paid=0.0, round=rnd, belief=belief,
                    avg_rho_as_poster=0.0, dispute_rate_as_poster=0.0,
                    avg_rho_as_contractor=0.0, dispute_rate_as_contractor=0.0,
                    n_as_poster=0, n_as_contractor=0)


def lv(listing_id="L1", domain="coding", reward=2.0, c_ref=0.04, poster="a000",
       pass_rate=0.5) -> ListingView:
    return ListingView(listing_id=listing_id, task_id="t1", domain=domain,
                       reward=reward, surge_depth=0, poster=poster,
                       poster_avg_rho=0.0, c_ref=c_ref, pass_rate=pass_rate)


# -- calibrated payment ---------------------------------------------------------

def test_payment_bin_boundaries():
    assert payment_bin(0.0) == ("fail", 0.593, 0.189)
    assert payment_bin(0.3) == ("partial", 0.672, 0.213)
    assert payment_bin(0.5) == ("adequate", 0.868, 0.192)
    assert payment_bin(0.99) == ("adequate", 0.868, 0.192)
    assert payment_bin(1.0) == ("pass", 0.980, 0.094)


def test_bin_means_are_increasing():
    means = [m for _, m, _ in ORACLE_PAYMENT_BINS]
    assert means == sorted(means)
    assert means == [0.593, 0.672, 0.868, 0.980]


def test_draws_are_clamped_to_payment_band():
    rng = substream(1, "clamp")
    for _ in range(5000):
        assert 0.5 <= draw_calibrated_payment(0.0, rng) <= 1.0


def test_degenerate_sigma_returns_mean_exactly():
    bins = (("a", 0.98, 0.0),) * 4
    rng = substream(2, "sigma0")
    assert draw_calibrated_payment(0.7, rng, bins=bins) == 0.98
    assert draw_calibrated_payment(0.0, rng, bins=bins) == 0.98


def test_empirical_bin_means_strictly_increase():
    n = 10_000
    means = []
    for q in (0.0, 0.25, 0.75, 1.0):
        rng = substream(3, "bins", q)
        means.append(math.fsum(draw_calibrated_payment(q, rng) for _ in range(n)) / n)
    assert means[0] < means[1] < means[2] < means[3]


# -- cost-plus bidding -----------------------------------------------------------

def test_cost_plus_bid_price_example():
    # estimated cost 0.6 (mu * c_ref * mid multiplier), margin 1.5 -> 0.9
    bidder = CostPlusBidder(margin=1.5, skill_discount=1.0, mu=10.0)
    listing = lv(domain="querying", reward=2.0, c_ref=0.06)
    bid = bidder.bid_for(listing, own_skill="coding")
    assert bidder.expected_cost(0.06, "mid") == pytest.approx(0.6, abs=1e-12)
    assert bid.price == pytest.approx(0.9, abs=1e-9)


def test_cost_plus_caps_at_listing_reward():
    bidder = CostPlusBidder(margin=5.0, skill_discount=1.0, mu=10.0)
    listing = lv(domain="querying", reward=2.0, c_ref=0.06)
    bid = bidder.bid_for(listing, own_skill="coding")
    assert bid.price == 2.0


def test_cost_plus_skips_unprofitable_listings():
    # reward below expected cost at any margin: no bid
    bidder = CostPlusBidder(margin=1.5, mu=10.0)
    listing = lv(domain="querying", reward=0.1, c_ref=0.06)
    assert bidder.bid_for(listing, own_skill="coding") is None


def test_skill_discount_undercuts_on_matched_domain():
    bidder = CostPlusBidder(margin=1.5, skill_discount=0.8, mu=10.0)
    listing = lv(domain="coding", reward=5.0, c_ref=0.06)
    matched = bidder.bid_for(listing, own_skill="coding")
    unmatched = bidder.bid_for(listing, own_skill="querying")
    assert matched.price == pytest.approx(unmatched.price * 0.8, rel=1e-9)


def test_bids_skip_own_listings():
    bidder = CostPlusBidder(mu=10.0)
    obs = BidObservation(self_view=sv(agent_id="a000"),
                         listings=(lv(listing_id="L1", poster="a000"),
                                   lv(listing_id="L2", poster="a009")))
    bids = bidder.bids(obs)
    assert [b.listing_id for b in bids] == ["L2"]


def test_tier_choice_against_expected_cost_table():
    params = ExecutionParams()
    bidder = CostPlusBidder(mu=10.0, exec_params=params, high_tier_headroom=2.0)
    c_ref = 0.06
    mid_cost = 10.0 * c_ref * params.tier("mid").cost_multiplier
    high_cost = 10.0 * c_ref * params.tier("high").cost_multiplier
    # enumerate budgets against the tier cost table
    assert bidder.pick_tier(c_ref, mid_cost * 0.99) == "low"
    assert bidder.pick_tier(c_ref, mid_cost * 1.01) == "mid"
    assert bidder.pick_tier(c_ref, 2.0 * high_cost - 1e-9) == "mid"
    assert bidder.pick_tier(c_ref, 2.0 * high_cost + 1e-9) == "high"


def test_plan_includes_skills_only_on_match():
    bidder = CostPlusBidder(mu=10.0)
    matched = bidder.plan(PlanObservation(sv(skill="coding"), lv(domain="coding"),
                                          price=1.0))
    unmatched = bidder.plan(PlanObservation(sv(skill="coding"), lv(domain="querying"),
                                            price=1.0))
    assert matched.skills == ("coding",)
    assert unmatched.skills == ()


def test_collaborative_policy_plans_low_tier():
    policy = StandardPolicy(disposition="collaborative", mu=10.0)
    plan = policy.decide_plan(PlanObservation(sv(), lv(reward=100.0, c_ref=0.02),
                                              price=50.0), substream(4, "p"))
    assert plan.tier == "low"


# -- selection -------------------------------------------------------------------

def bidview(bidder, price, dispute=0.0, family=None):
    return BidView(bidder=bidder, price=price, proposal="", bidder_dispute_rate=dispute,
                   bidder_family=family)


def test_selector_minimises_adjusted_score():
    selector = ReputationScreeningSelector(lambda_weight=1.0)
    listing = lv(reward=2.0)
    bids = (bidview("a001", 0.9, dispute=0.5),   # 0.9 + 1.0 = 1.9
            bidview("a002", 1.2, dispute=0.0),   # 1.2
            bidview("a003", 1.0, dispute=0.05))  # 1.0 + 0.1 = 1.1
    obs = SelectionObservation(sv(agent_id="a000"), listing, bids)
    assert selector.select(obs) == "a003"

    # brute-force recomputation over every bid
    scores = {b.bidder: b.price + b.bidder_dispute_rate * listing.reward for b in bids}
    assert min(scores, key=lambda k: (scores[k], k)) == "a003"


def test_selector_empty_bids_rejects_all():
    obs = SelectionObservation(sv(), lv(), ())
    assert ReputationScreeningSelector().select(obs) is None


def test_selector_tie_breaks_to_lower_agent_id():
    bids = (bidview("a007", 1.0), bidview("a002", 1.0))
    obs = SelectionObservation(sv(), lv(reward=2.0), bids)
    assert ReputationScreeningSelector().select(obs) == "a002"


def test_selector_skips_overpriced_bids():
    bids = (bidview("a001", 5.0),)  # above the 2.0 reward
    obs = SelectionObservation(sv(), lv(reward=2.0), bids)
    assert ReputationScreeningSelector().select(obs) is None


def test_insularity_penalises_cross_family_only_when_visible():
    listing = lv(reward=2.0)
    own = sv(agent_id="a000", family="claude")
    cheap_other = bidview("a001", 1.0, family="gpt")
    dear_same = bidview("a002", 1.5, family="claude")
    insular = ReputationScreeningSelector(insularity=0.8)
    assert insular.select(SelectionObservation(own, listing,
                                               (cheap_other, dear_same))) == "a002"
    # without transparency the family field is absent and price wins
    blind = (bidview("a001", 1.0), bidview("a002", 1.5))
    assert insular.select(SelectionObservation(own, listing, blind)) == "a001"


# -- dispositions ------------------------------------------------------------------

def test_disposition_mode_mapping():
    adversarial = DispositionParams.for_mode("adversarial")
    assert adversarial.insularity == 0.8
    assert adversarial.generosity_shift == -0.1
    collaborative = DispositionParams.for_mode("collaborative")
    assert collaborative.generosity_shift == 0.1
    assert DispositionParams.for_mode("neutral").generosity_shift == 0.0


@pytest.mark.parametrize("kwargs", [
    {"generosity_shift": 0.5},
    {"generosity_shift": -0.4},
    {"bid_margin": 0.0},
    {"insularity": 1.5},
])
def test_disposition_validation(kwargs):
    with pytest.raises(ConfigError):
        DispositionParams(**kwargs)


def pay_obs(quality):
    return PaymentObservation(self_view=sv(), listing=lv(), bid=bidview("a001", 1.0),
                              output_preview="out", exec_tier="mid",
                              exec_skills_used=False, contractor_avg_rho=0.0,
                              contractor_dispute_rate=0.0, quality=quality)


def test_generosity_shift_raises_decided_rho_exactly():
    neutral = StandardPolicy(disposition="neutral")
    collab = StandardPolicy(disposition="collaborative")
    for i in range(50):
        rng_a = substream(5, "shift", i)
        rng_b = substream(5, "shift", i)
        base = neutral.decide_payment(pay_obs(0.75), rng_a)
        shifted = collab.decide_payment(pay_obs(0.75), rng_b)
        assert shifted == pytest.approx(base + 0.1, abs=1e-12)


def test_honest_payment_is_bin_mean_no_noise():
    honest = StandardPolicy(disposition="honest")
    rng = substream(6, "honest")
    assert honest.decide_payment(pay_obs(1.0), rng) == 0.980
    assert honest.decide_payment(pay_obs(0.6), rng) == 0.868
    assert honest.decide_payment(pay_obs(0.0), rng) == 0.593


def test_payment_without_quality_uses_midline_default():
    policy = StandardPolicy()
    rho = policy.decide_payment(pay_obs(None), substream(7, "noq"))
    assert 0.5 <= rho <= 1.1  # pre-clamp value from the adequate bin


# -- misc policies -----------------------------------------------------------------

def test_random_policy_zero_probability_never_bids():
    policy = RandomPolicy(bid_probability=0.0)
    obs = BidObservation(sv(agent_id="a001"), (lv(poster="a000"),) * 5)
    assert policy.decide_bids(obs, substream(8, "r")) == []


def test_bid_observation_is_sealed_by_construction():
    obs = BidObservation(sv(), (lv(),))
    assert not hasattr(obs, "bids")


def test_templated_belief_idle_and_active():
    idle = templated_belief(BeliefObservation(sv(rnd=3), 0.0, 0, 0, 0, 0))
    assert "idle" in idle and "round 3" in idle
    busy = templated_belief(BeliefObservation(sv(rnd=4), 1.5, 2, 1, 1, 0))
    assert "won 2" in busy and "+1.5" in busy
