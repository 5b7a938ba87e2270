"""Read-only market queries available to every agent at zero cost.

Ten queries: check_balance, estimate_cost, query_reputation, get_prices,
calculate_profit, preview_task, leaderboard, market_summary, round_history,
transaction_log. Each returns a fresh plain-dict answer and never mutates
engine state; the serve endpoint exposes the same surface over the wire.

Quality scores and private execution costs are stripped from agent-visible
transaction views.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Optional

from .economy import (
    avg_payment_ratio,
    contractor_profit,
    llm_call_cost,
    poster_profit,
    reputation_dispute_rate,
)

if TYPE_CHECKING:  # pragma: no cover
    from .engine import MarketEngine

QUERY_NAMES = (
    "check_balance",
    "estimate_cost",
    "query_reputation",
    "get_prices",
    "calculate_profit",
    "preview_task",
    "leaderboard",
    "market_summary",
    "round_history",
    "transaction_log",
)


class QueryError(ValueError):
    """Bad query name or arguments."""


class MarketQueries:
    def __init__(self, engine: "MarketEngine") -> None:
        self._engine = engine

    def dispatch(self, name: str, args: Optional[dict] = None) -> dict:
        """Run a named query with keyword arguments (the wire entry point)."""
        if name not in QUERY_NAMES:
            raise QueryError(f"unknown query {name!r}")
        try:
            return getattr(self, name)(**(args or {}))
        except TypeError as exc:
            raise QueryError(f"bad arguments for {name}: {exc}") from exc

    # -- the ten queries ----------------------------------------------------

    def check_balance(self, agent_id: str) -> dict:
        agent = self._agent(agent_id)
        return {
            "agent_id": agent.agent_id,
            "balance": agent.wealth,
            "backbone_cost": agent.backbone_paid,
            "exec_cost": agent.exec_paid,
            "profit": agent.wealth - agent.initial_wealth,
            "dispute_rate_as_poster": reputation_dispute_rate(
                agent.payment_history_as_poster, self._engine.config.rho_approve),
            "dispute_rate_as_contractor": reputation_dispute_rate(
                agent.payment_history_as_contractor, self._engine.config.rho_approve),
            "active": agent.active,
        }

    def estimate_cost(self, family: str, n_in: int, n_out: int) -> dict:
        prices = self._engine.prices.get(family)
        if prices is None:
            raise QueryError(f"unknown family {family!r}")
        return {"family": family, "n_in": n_in, "n_out": n_out,
                "usd": llm_call_cost(prices, n_in, n_out)}

    def query_reputation(self, agent_id: str) -> dict:
        agent = self._agent(agent_id)
        out = {
            "agent_id": agent.agent_id,
            "active": agent.active,
            "generation": agent.generation,
            "as_poster": {
                "n": len(agent.payment_history_as_poster),
                "avg_rho": avg_payment_ratio(agent.payment_history_as_poster),
                "dispute_rate": reputation_dispute_rate(
                    agent.payment_history_as_poster, self._engine.config.rho_approve),
            },
            "as_contractor": {
                "n": len(agent.payment_history_as_contractor),
                "avg_rho": avg_payment_ratio(agent.payment_history_as_contractor),
                "dispute_rate": reputation_dispute_rate(
                    agent.payment_history_as_contractor, self._engine.config.rho_approve),
            },
        }
        if self._engine.config.transparency:
            out["family"] = agent.family
        return out

    def get_prices(self) -> dict:
        return {"families": [
            {"family": p.family_name, "p_in": p.p_in, "p_out": p.p_out}
            for p in self._engine.prices.values()
        ]}

    def calculate_profit(self, reward: float, bid: float, rho: float,
                         exec_cost: float = 0.0, backbone_cost: float = 0.0) -> dict:
        mu = self._engine.config.mu
        return {
            "poster_profit": poster_profit(reward, rho, bid, backbone_cost),
            "contractor_profit": contractor_profit(rho, bid, mu, exec_cost, backbone_cost),
            "mu": mu,
        }

    def preview_task(self, task_id: str) -> dict:
        for task in self._engine.catalog:
            if task.task_id == task_id:
                return {"task_id": task.task_id, "domain": task.domain,
                        "c_ref": task.c_ref, "pass_rate": task.pass_rate,
                        "source": task.source}
        raise QueryError(f"unknown task {task_id!r}")

    def leaderboard(self) -> dict:
        ranked = sorted(self._engine.agents.values(),
                        key=lambda a: (-a.wealth, a.agent_id))
        return {"agents": [
            {"agent_id": a.agent_id, "balance": a.wealth, "active": a.active}
            for a in ranked
        ]}

    def market_summary(self) -> dict:
        by_family: dict[str, dict] = {}
        for agent in self._engine.agents.values():
            row = by_family.setdefault(agent.family, {
                "n_agents": 0, "n_active": 0, "total_balance": 0.0,
                "contracts_won": 0})
            row["n_agents"] += 1
            row["n_active"] += int(agent.active)
            row["total_balance"] += agent.wealth
        for record in self._engine.records:
            contractor = self._engine.agents.get(record.contractor)
            if contractor is not None:
                by_family[contractor.family]["contracts_won"] += 1
        return {"round": self._engine.round_index,
                "mode": self._engine.mode,
                "by_family": by_family,
                "pool_size": len(self._engine.pool)}

    def round_history(self, round: Optional[int] = None) -> dict:
        rows: dict[int, dict] = {}
        for record in self._engine.records:
            if round is not None and record.round != round:
                continue
            row = rows.setdefault(record.round, {
                "round": record.round, "settled": 0, "volume": 0.0, "disputes": 0})
            row["settled"] += 1
            row["volume"] += record.rho * record.bid_price
            row["disputes"] += int(record.status == "dispute")
        return {"rounds": [rows[r] for r in sorted(rows)]}

    def transaction_log(self, limit: int = 20) -> dict:
        recent = self._engine.records[-limit:] if limit > 0 else []
        return {"transactions": [
            {"round": t.round, "listing_id": t.listing_id, "poster": t.poster,
             "contractor": t.contractor, "bid_price": t.bid_price,
             "rho": t.rho, "status": t.status}
            for t in recent
        ]}

    # -- internals ----------------------------------------------------------

    def _agent(self, agent_id: str):
        agent = self._engine.agents.get(agent_id)
        if agent is None:
            raise QueryError(f"unknown agent {agent_id!r}")
        return agent
