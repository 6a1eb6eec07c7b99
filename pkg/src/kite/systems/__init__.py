"""Benchmark systems and the shared system contract."""

from .base import EPS_COST, System
from .car import CarControl, CarSystem, bicycle_derivative, car_process_q, linearize_bicycle, rk4_propagate
from .flappy import FlappyState, FlappySystem, flappy_running_cost, flappy_scene, flappy_step, random_flappy_scene, tiny_flappy_scene
from .propagation import euclidean_belief_propagate, lie_belief_propagate
from .pusher import PushControl, PusherSystem, pusher_truth_step
from .scene import Circle, Rect, Scene, load_scene

__all__ = [
    "EPS_COST",
    "System",
    "CarControl",
    "CarSystem",
    "bicycle_derivative",
    "car_process_q",
    "linearize_bicycle",
    "rk4_propagate",
    "FlappyState",
    "FlappySystem",
    "flappy_running_cost",
    "flappy_scene",
    "flappy_step",
    "random_flappy_scene",
    "tiny_flappy_scene",
    "euclidean_belief_propagate",
    "lie_belief_propagate",
    "PushControl",
    "PusherSystem",
    "pusher_truth_step",
    "Circle",
    "Rect",
    "Scene",
    "load_scene",
]
