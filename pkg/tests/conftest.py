from __future__ import annotations

import sys
from pathlib import Path

import pytest

from agora.economy import MarketConfig, TaskSpec
from agora.engine import MarketEngine
from agora.execution import default_catalog

WIRE_AGENTS = Path(__file__).parent / "wire_agents"
PYTHON = sys.executable


def make_catalog(n: int = 10, c_ref: float = 0.02, pass_rate: float = 0.5) -> list[TaskSpec]:
    from agora.economy import SKILL_CLUSTERS

    return [
        TaskSpec(task_id=f"t{i:03d}", domain=SKILL_CLUSTERS[i % len(SKILL_CLUSTERS)],
                 c_ref=c_ref, pass_rate=pass_rate, source="test")
        for i in range(n)
    ]


def small_engine(seed: int = 1, n_agents: int = 5, rounds: int = 4, mode: str = "market",
                 catalog=None, policies=None, **config_kwargs) -> MarketEngine:
    config = MarketConfig(n_agents=n_agents, seed=seed, rounds=rounds, **config_kwargs)
    return MarketEngine(config, catalog or make_catalog(20), policies=policies, mode=mode)


@pytest.fixture
def catalog():
    return make_catalog(20)


@pytest.fixture
def full_catalog():
    return default_catalog()
