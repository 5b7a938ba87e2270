from __future__ import annotations

import pytest

from agora.economy import llm_call_cost
from agora.queries import QUERY_NAMES, QueryError

from conftest import small_engine


@pytest.fixture
def engine():
    eng = small_engine(n_agents=4, seed=2, kappa=1)
    eng.run(2)
    return eng


def _sample_args(engine):
    return {
        "check_balance": {"agent_id": "a000"},
        "estimate_cost": {"family": "claude", "n_in": 1000, "n_out": 200},
        "query_reputation": {"agent_id": "a001"},
        "get_prices": {},
        "calculate_profit": {"reward": 2.0, "bid": 1.0, "rho": 0.9, "exec_cost": 0.01},
        "preview_task": {"task_id": engine.catalog[0].task_id},
        "leaderboard": {},
        "market_summary": {},
        "round_history": {},
        "transaction_log": {"limit": 5},
    }


def test_all_ten_queries_answer(engine):
    args = _sample_args(engine)
    assert set(args) == set(QUERY_NAMES)
    for name in QUERY_NAMES:
        result = engine.queries.dispatch(name, args[name])
        assert isinstance(result, dict) and result


def test_queries_never_mutate_state(engine):
    args = _sample_args(engine)
    for name in QUERY_NAMES:
        before = engine.state_hash()
        engine.queries.dispatch(name, args[name])
        assert engine.state_hash() == before


def test_check_balance_fields(engine):
    out = engine.queries.check_balance("a000")
    agent = engine.agents["a000"]
    assert out["balance"] == agent.wealth
    assert out["backbone_cost"] == agent.backbone_paid
    assert out["profit"] == pytest.approx(agent.wealth - agent.initial_wealth)
    assert 0 <= out["dispute_rate_as_contractor"] <= 1


def test_estimate_cost_matches_formula(engine):
    out = engine.queries.estimate_cost("claude", 1000, 200)
    assert out["usd"] == llm_call_cost(engine.prices["claude"], 1000, 200)


def test_calculate_profit_matches_formulas(engine):
    out = engine.queries.calculate_profit(reward=2.0, bid=1.5, rho=1.0,
                                          exec_cost=0.05, backbone_cost=0.01)
    assert out["poster_profit"] == pytest.approx(2.0 - 1.5 - 0.01)
    assert out["contractor_profit"] == pytest.approx(1.5 - engine.config.mu * 0.05 - 0.01)


def test_leaderboard_sorted_descending(engine):
    rows = engine.queries.leaderboard()["agents"]
    balances = [r["balance"] for r in rows]
    assert balances == sorted(balances, reverse=True)
    assert len(rows) == len(engine.agents)


def test_get_prices_returns_menu(engine):
    menu = engine.queries.get_prices()["families"]
    assert {row["family"] for row in menu} == set(engine.prices)
    assert all(row["p_in"] > 0 and row["p_out"] > 0 for row in menu)


def test_reputation_hides_family_without_transparency(engine):
    out = engine.queries.query_reputation("a000")
    assert "family" not in out
    assert out["as_poster"]["n"] == len(engine.agents["a000"].payment_history_as_poster)


def test_reputation_shows_family_with_transparency():
    eng = small_engine(n_agents=3, seed=2, transparency=True)
    assert "family" in eng.queries.query_reputation("a000")


def test_transaction_log_sanitizes_private_fields(engine):
    rows = engine.queries.transaction_log(limit=3)["transactions"]
    assert rows
    for row in rows:
        assert "quality" not in row
        assert "exec_cost" not in row


def test_unknown_query_and_bad_args(engine):
    with pytest.raises(QueryError):
        engine.queries.dispatch("drop_tables", {})
    with pytest.raises(QueryError):
        engine.queries.dispatch("check_balance", {"agent_id": "nobody"})
    with pytest.raises(QueryError):
        engine.queries.dispatch("check_balance", {"bogus_kw": 1})
