"""Kinodynamic planning with terminal costs in state and Gaussian belief space."""

from .belief import GaussianBelief, GoalSpec
from .planner import ControlSegment, PlannerConfig, PlanResult, kite_plan

__version__ = "0.1.0"

__all__ = ["GaussianBelief", "GoalSpec", "ControlSegment", "PlannerConfig", "PlanResult", "kite_plan"]
