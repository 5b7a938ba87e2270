from __future__ import annotations

from types import SimpleNamespace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agora.economy import (
    ConfigError,
    InvariantViolation,
    MarketConfig,
    PriceTable,
    TaskSpec,
    DEFAULT_PRICE_TABLES,
    avg_payment_ratio,
    base_reward,
    classify_payment,
    contract_reward,
    contractor_profit,
    decision_cost,
    llm_call_cost,
    poster_profit,
    reputation_dispute_rate,
)

APPROX = dict(abs=1e-9)


# -- call cost ---------------------------------------------------------------

def test_llm_call_cost_examples():
    deepseek = PriceTable("deepseek", 0.26, 0.38)
    claude = PriceTable("claude", 1.00, 5.00)
    assert llm_call_cost(deepseek, 10**6, 0) == pytest.approx(0.26, **APPROX)
    assert llm_call_cost(claude, 0, 0) == 0.0
    assert llm_call_cost(claude, 500_000, 100_000) == pytest.approx(1.00, **APPROX)


def test_llm_call_cost_rejects_negative_tokens():
    with pytest.raises(ConfigError):
        llm_call_cost(DEFAULT_PRICE_TABLES[0], -1, 0)


def test_price_table_rejects_nonpositive_prices():
    with pytest.raises(ConfigError):
        PriceTable("bad", 0.0, 1.0)
    with pytest.raises(ConfigError):
        PriceTable("bad", 1.0, -0.5)


# -- rewards -------------------------------------------------------------------

def _task(c_ref: float, pass_rate: float) -> TaskSpec:
    return TaskSpec("t1", "coding", c_ref, pass_rate)


def test_base_reward_examples():
    assert base_reward(_task(0.02, 1.0), 5.0) == pytest.approx(0.10, **APPROX)
    assert base_reward(_task(0.02, 0.5), 5.0) == pytest.approx(0.20, **APPROX)
    assert base_reward(_task(1.0, 1.0), 1.0) == pytest.approx(1.0, **APPROX)


def test_base_reward_rejects_zero_pass_rate():
    with pytest.raises(ConfigError):
        TaskSpec("bad", "coding", 0.02, 0.0)
    stub = SimpleNamespace(task_id="bad", c_ref=0.02, pass_rate=0.0)
    with pytest.raises(ConfigError):
        base_reward(stub, 5.0)


def test_contract_reward_examples():
    assert contract_reward(0.20, 10) == pytest.approx(2.0, **APPROX)
    assert contract_reward(0.20, 1) == pytest.approx(0.20, **APPROX)
    assert contract_reward(0.20, 5) == pytest.approx(1.0, **APPROX)


@given(base=st.floats(0, 1e4), mu=st.floats(1, 100))
def test_contract_reward_linearity(base, mu):
    assert contract_reward(base, mu) == pytest.approx(
        mu * contract_reward(base, 1.0), rel=1e-12, abs=1e-12)


@given(
    c1=st.floats(0.001, 100), c2=st.floats(0.001, 100),
    p1=st.floats(0.01, 1.0), p2=st.floats(0.01, 1.0),
    f=st.floats(0.1, 10),
)
def test_base_reward_monotonicity(c1, c2, p1, p2, f):
    if p1 < p2:
        assert base_reward(_task(1.0, p1), f) > base_reward(_task(1.0, p2), f)
    if c1 < c2:
        assert base_reward(_task(c1, 0.5), f) < base_reward(_task(c2, 0.5), f)


# -- profits -------------------------------------------------------------------

def test_poster_profit_examples():
    assert poster_profit(2.0, 1.0, 1.5, 0.01) == pytest.approx(0.49, **APPROX)
    assert poster_profit(2.0, 0.5, 1.5, 0.0) == pytest.approx(1.25, **APPROX)
    assert poster_profit(0.0, 1.0, 0.0, 0.0) == 0.0


def test_contractor_profit_examples():
    assert contractor_profit(0.95, 1.5, 10, 0.05, 0.01) == pytest.approx(0.915, **APPROX)
    assert contractor_profit(0.5, 1.0, 10, 0.10, 0.0) == pytest.approx(-0.5, **APPROX)
    assert contractor_profit(1.0, 1.0, 1, 0.0, 0.0) == pytest.approx(1.0, **APPROX)


def test_autarky_profit_arithmetic():
    # quality-paid self-execution: rho * reward - mu * exec
    assert contractor_profit(1.0, 2.0, 10, 0.05, 0.0) == pytest.approx(1.5, **APPROX)
    assert contractor_profit(0.0, 2.0, 10, 0.05, 0.0) == pytest.approx(-0.5, **APPROX)


@given(
    reward=st.floats(0, 100), rho=st.floats(0.5, 1.0), bid=st.floats(0, 100),
    mu=st.floats(1, 50), exec_cost=st.floats(0, 10),
    bb_p=st.floats(0, 0.1), bb_c=st.floats(0, 0.1),
)
def test_payment_conservation(reward, rho, bid, mu, exec_cost, bb_p, bb_c):
    # rho*bid cancels pairwise: poster pays exactly what the contractor receives
    total = poster_profit(reward, rho, bid, bb_p) + contractor_profit(
        rho, bid, mu, exec_cost, bb_c)
    assert total == pytest.approx(reward - mu * exec_cost - bb_p - bb_c, abs=1e-9)


# -- payment classification -----------------------------------------------------

def test_classify_payment_examples():
    assert classify_payment(0.95) == "approve"
    assert classify_payment(0.949) == "dispute"
    assert classify_payment(1.0) == "approve"


def test_classify_payment_rejects_out_of_range():
    with pytest.raises(InvariantViolation):
        classify_payment(0.3)
    with pytest.raises(InvariantViolation):
        classify_payment(1.2)
    # autarky settlements disable the floor
    assert classify_payment(0.0, floor=0.0) == "dispute"


@given(r1=st.floats(0.5, 1.0), r2=st.floats(0.5, 1.0))
def test_classify_payment_is_step_function(r1, r2):
    lo, hi = min(r1, r2), max(r1, r2)
    if classify_payment(lo) == "approve":
        assert classify_payment(hi) == "approve"


# -- reputation aggregates -------------------------------------------------------

def test_avg_payment_ratio_examples():
    assert avg_payment_ratio([]) == 0.0
    assert avg_payment_ratio([1.0, 0.5]) == pytest.approx(0.75, **APPROX)
    assert avg_payment_ratio([0.95]) == pytest.approx(0.95, **APPROX)


def test_dispute_rate_examples():
    assert reputation_dispute_rate([1.0, 0.9, 0.5]) == pytest.approx(2 / 3, **APPROX)
    assert reputation_dispute_rate([1.0, 1.0]) == 0.0
    assert reputation_dispute_rate([]) == 0.0


@settings(max_examples=50)
@given(history=st.lists(st.floats(0.5, 1.0), max_size=1000))
def test_reputation_aggregates_match_brute_force(history):
    if history:
        expected_avg = sum(history) / len(history)
        expected_rate = len([r for r in history if r < 0.95]) / len(history)
    else:
        expected_avg = expected_rate = 0.0
    assert avg_payment_ratio(history) == pytest.approx(expected_avg, abs=1e-9)
    assert reputation_dispute_rate(history) == pytest.approx(expected_rate, abs=1e-9)


# -- configuration ----------------------------------------------------------------

def test_config_defaults_match_baseline():
    cfg = MarketConfig()
    assert cfg.n_agents == 25
    assert cfg.w0 == 1.0
    assert cfg.kappa == 2
    assert cfg.mu == 10.0
    assert cfg.f == 5.0
    assert cfg.K == 6
    assert cfg.E == 1 and cfg.R == 1
    assert cfg.rho_min == 0.5
    assert cfg.rho_approve == 0.95
    assert cfg.alpha == 0.15
    assert cfg.surge_cooldown == 0.05
    assert cfg.rounds == 24
    assert cfg.transparency is False
    assert cfg.monoculture is None
    assert cfg.disposition == "neutral"
    assert cfg.backbone_cap == 0.05


@pytest.mark.parametrize("kwargs", [
    {"rho_min": 0.0},
    {"rho_min": 0.96, "rho_approve": 0.95},
    {"rho_approve": 1.5},
    {"mu": 0.5},
    {"f": 0.0},
    {"kappa": 0},
    {"E": 26},
    {"n_agents": 1},
    {"disposition": "chaotic"},
])
def test_config_rejects_invalid_values(kwargs):
    with pytest.raises(ConfigError):
        MarketConfig(**kwargs)


def test_default_price_menu_families():
    names = [p.family_name for p in DEFAULT_PRICE_TABLES]
    assert names == ["deepseek", "glm", "gpt", "gemini", "claude"]
    spread = max(p.p_out for p in DEFAULT_PRICE_TABLES) / min(
        p.p_out for p in DEFAULT_PRICE_TABLES)
    assert spread > 10  # decision costs vary by an order of magnitude across families


def test_decision_cost_clamped_at_cap():
    cfg = MarketConfig()
    claude = DEFAULT_PRICE_TABLES[-1]
    assert decision_cost(claude, cfg) == pytest.approx(
        (2000 * 1.00 + 500 * 5.00) / 1e6, **APPROX)
    expensive = MarketConfig(backbone_tokens_in=10**6, backbone_tokens_out=10**6)
    assert decision_cost(claude, expensive) == 0.05


def test_agent_state_rejects_negative_generation():
    from agora.economy import AgentState

    with pytest.raises(ConfigError):
        AgentState("a", "claude", "coding", 1.0, generation=-1)
