import functools

import pytest

from facts_def.cli import analyze, droop_sweep, refine_bracket
from facts_def.config import preset
from facts_def.datasets import load_dataset
from facts_def.network import Network
from facts_def.simulator import run


@functools.lru_cache(maxsize=None)
def _scenario(name):
    cfg = preset(name)
    traj = run(cfg.to_case())
    return cfg, traj, analyze(traj, cfg)


@functools.lru_cache(maxsize=None)
def _sweep():
    # seven points spanning the sink-to-source transition, then one bisection
    table = droop_sweep([-1.0, -0.5, 0.0, 0.5, 1.5, 2.0, 3.0], workers=1)
    refined = refine_bracket(table) if len(table.brackets) == 1 else None
    return table, refined


@pytest.fixture(scope="session")
def scenario():
    """Cached ``(config, trajectory, summary)`` of a shipped preset."""
    return _scenario


@pytest.fixture(scope="session")
def sweep():
    return _sweep


@pytest.fixture
def kundur():
    return Network.from_dataset(load_dataset("kundur"))
