"""Hierarchical waypoint planning with search-guided policy training."""

__version__ = "0.1.0"

from . import envs, metrics, mgrpo, oracles, planner, policy, search  # noqa: F401
