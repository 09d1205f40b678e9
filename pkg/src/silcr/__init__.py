"""Self-imitation learning with constant rewards on a numpy soft actor-critic."""

from silcr.agents import AgentKind, SacCore, make_sac_core
from silcr.envs import make_env
from silcr.harness import RunConfig, evaluate, train
from silcr.replay import ExpertBuffer, OnlineBuffer, Trajectory, Transition

__all__ = [
    "AgentKind", "ExpertBuffer", "OnlineBuffer", "RunConfig", "SacCore", "Trajectory",
    "Transition", "evaluate", "make_env", "make_sac_core", "train",
]
