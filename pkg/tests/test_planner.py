import json
import math
from pathlib import Path

import numpy as np
import pytest

from kite import belief as bl
from kite.belief import GoalSpec
from kite.planner import (
    ControlSegment,
    PlannerConfig,
    PlanResult,
    Tree,
    augmented_distance,
    goal_check,
    heuristic,
    kite_plan,
    nearest,
    plan_with_tree,
    prune_above_cost,
    validity_check,
)
from kite.systems import CarSystem, FlappySystem, PusherSystem, Scene, tiny_flappy_scene
from kite.systems.car import parking_scene
from kite.systems.pusher import pushing_scene

DATA = Path(__file__).parent / "data"


def car():
    return CarSystem(parking_scene())


def pusher():
    return PusherSystem(pushing_scene())


def flappy():
    return FlappySystem(tiny_flappy_scene())


# -- config and small pieces -------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        PlannerConfig(metric="W2")
    with pytest.raises(ValueError):
        PlannerConfig(goal_mode="chance")
    with pytest.raises(ValueError):
        PlannerConfig(terminal_weight=-1)
    with pytest.raises(ValueError):
        PlannerConfig(p_free=1.5)
    with pytest.raises(ValueError):
        PlannerConfig(mode="quantum")
    cfg = PlannerConfig(mode="belief", metric="W2", terminal_weight=20)
    assert PlannerConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.to_dict()["time_budget_s"] is None


def test_control_segment():
    s = ControlSegment(np.array([1, 2]), 0.5)
    assert s.control == (1.0, 2.0)
    assert s.to_json() == {"control": [1.0, 2.0], "duration": 0.5}
    with pytest.raises(ValueError):
        ControlSegment((1.0,), 0.0)


def test_augmented_distance_examples():
    assert augmented_distance(0.0, 2.0, 2.0, 1.0) == 0
    assert augmented_distance(3.0, 4.0, 0.0, 1.0) == pytest.approx(5)
    assert augmented_distance(3.0, 4.0, 0.0, 0.0) == 3


def test_nearest_examples():
    s = car()
    t = Tree(3, False)
    t.add(np.array([1.0, 1.0, 0.0]), 0.0)
    assert nearest(t, s, np.array([3.0, 2.0, 1.0])) == 0
    t.add(np.array([2.0, 1.0, 0.0]), 1.0)
    assert nearest(t, s, np.array([3.0, 1.0, 0.0])) == 1
    assert nearest(t, s, np.array([0.0, 1.0, 0.0])) == 0
    # equidistant: lowest id wins
    assert nearest(t, s, np.array([1.5, 1.0, 0.0])) == 0
    # the cost coordinate can flip the choice
    assert nearest(t, s, np.array([2.0, 1.0, 0.0]), cost=0.0, cfg=PlannerConfig(cost_dim_weight=10.0)) == 0


def test_nearest_kdtree_matches_linear_scan():
    rng = np.random.default_rng(0)
    s = flappy()
    t = Tree(3, False)
    for i in range(3000):
        t.add(s.sample_state(rng), rng.uniform(0, 10), parent=i - 1 if i else -1)
    t.prune_above_cost(8.0)
    lin = PlannerConfig(cost_dim_weight=0.3)
    kd = PlannerConfig(cost_dim_weight=0.3, nn_backend="kdtree")
    from kite.planner import _NearestIndex

    a, b = _NearestIndex(s, t, lin), _NearestIndex(s, t, kd)
    for q in range(10_000):
        x = s.sample_state(rng)
        c = rng.uniform(0, 8) if q % 2 else None
        ia, ib = a.query(x, c), b.query(x, c)
        if ia != ib:
            da = a._dist_many(np.array([ia, ib]), x, c, c is not None)
            assert da[0] == pytest.approx(da[1], rel=1e-12)
        # keep growing so the lazy rebuild and tail scan both get exercised
        if q % 50 == 0:
            t.add(s.sample_state(rng), rng.uniform(0, 8), parent=0)


def test_nearest_belief_uses_trace():
    s = car()
    t = Tree(3, True)
    t.add(np.array([1.0, 1.0, 0.0]), 0.0, cov=np.eye(3) * 1.0)
    t.add(np.array([1.5, 1.0, 0.0]), 0.0, cov=np.eye(3) * 1e-4)
    # the first mean is closer but its covariance is large
    assert nearest(t, s, np.array([1.0, 1.0, 0.0])) == 1


def test_validity_examples():
    s = car()
    cfg = PlannerConfig()
    assert not validity_check(s, cfg, np.array([[2.0, 2.8, 0.0]]))
    assert validity_check(s, cfg, np.array([[0.5, 1.5, 0.0]]))
    bcfg = PlannerConfig(mode="belief", p_free=0.95)
    sigma = 0.005
    assert validity_check(s, bcfg, np.array([[0.5, 1.5, 0.0]]), (sigma**2 * np.eye(3))[None])
    assert not validity_check(s, bcfg, np.array([[0.5, 1.5, 0.0]]), (0.5 * np.eye(3))[None])


def ball_system():
    """Euclidean-chart stand-in for the goal-check examples (a 2-D ball goal)."""
    sc = Scene("car", (-5, 5, -5, 5), goals=[GoalSpec([1.0, 2.0], 0.3)])

    class Ball(CarSystem):
        chart = "euclidean"
        dim = 2

    return Ball(sc)


def test_goal_check_examples():
    s = ball_system()
    g = np.array([1.0, 2.0])
    hit, term = goal_check(s, PlannerConfig(mode="belief", metric="W2", terminal_weight=20), g, np.zeros((2, 2)))
    assert hit and term == 0.0
    gbt = PlannerConfig(mode="belief", metric="W2", goal_mode="chance", p_goal=0.7)
    hit, term = goal_check(s, gbt, g, 0.01 * np.eye(2))
    assert hit and term == 0.0
    assert not goal_check(s, PlannerConfig(mode="belief", metric="W2", goal_mode="chance", p_goal=0.8), g,
                          0.01 * np.eye(2))[0]
    # W2 to the goal point of 0.1 at weight 20
    hit, term = goal_check(s, PlannerConfig(mode="belief", metric="W2", terminal_weight=20), g + [0.06, 0.0],
                           np.diag([0.0064, 0.0]))
    assert hit and term == pytest.approx(2.0)
    hit, term = goal_check(s, PlannerConfig(terminal_weight=5), g + [0.0, 0.2])
    assert hit and term == pytest.approx(1.0)
    assert not goal_check(s, PlannerConfig(terminal_weight=5), g + [0.0, 0.4])[0]


def test_prune_examples():
    t = Tree(2, False)
    t.add(np.zeros(2), 0.0)
    t.add(np.ones(2), 3.0, 0)
    t.add(np.ones(2), 12.0, 0)
    assert prune_above_cost(t, 10.0) == 1
    assert t.alive_ids().tolist() == [0, 1]
    assert prune_above_cost(t, 10.0) == 0
    with pytest.raises(ValueError):
        prune_above_cost(t, math.inf)


def test_prune_random_trees():
    rng = np.random.default_rng(1)
    for _ in range(50):
        t = Tree(1, False)
        t.add(np.zeros(1), 0.0)
        for i in range(1, 300):
            p = int(rng.integers(0, i))
            t.add(np.zeros(1), t.cost[p] + rng.uniform(0.01, 1.0), p)
        c = rng.uniform(0.5, 5)
        prune_above_cost(t, c)
        ids = t.alive_ids()
        assert t.cost[ids].max() < c
        # every survivor's ancestors survive and the root is kept
        assert 0 in ids
        for i in ids:
            assert all(t.alive[j] for j in t.path(int(i)))
        # and nothing below the bound was lost except under a removed ancestor
        for i in range(t.n):
            if not t.alive[i]:
                assert any(t.cost[j] >= c for j in t.path(i))


def test_heuristic_examples():
    s = car()
    assert heuristic(s, s.sample_state(np.random.default_rng(0)), PlannerConfig()) == 0.0
    eu = PlannerConfig(heuristic="euclidean_over_vmax")
    for g in s.goals:
        assert heuristic(s, g.center, eu) == 0.0


# -- planning ----------------------------------------------------------------------


def test_start_in_goal():
    s = car()
    start = s.goals[0].center + np.array([0.05, 0.0, 0.0])
    for w in (0.0, 20.0):
        r = kite_plan(s, PlannerConfig(terminal_weight=w, max_iters=50), start=start)
        assert r.solved and r.best_cost_history[0][0] == 0
        assert r.running_cost == 0.0
        assert r.total_cost == pytest.approx(w * s.terminal_distance(start))
        assert r.segments == []


def test_start_in_goal_zero_weight_stops_immediately():
    s = car()
    r = kite_plan(s, PlannerConfig(max_iters=100), start=s.goals[0].center)
    assert r.solved and r.iterations == 0 and r.total_cost == 0.0


def test_invalid_start():
    s = car()
    r = kite_plan(s, PlannerConfig(max_iters=10), start=np.array([2.0, 2.8, 0.0]))
    assert not r.solved and r.status == "invalid_start" and r.iterations == 0


def test_zero_budget():
    for cfg in (PlannerConfig(max_iters=0), PlannerConfig(time_budget_s=0.0)):
        r = kite_plan(car(), cfg)
        assert not r.solved and r.status == "no_solution"
        assert math.isinf(r.total_cost)


def test_belief_mode_needs_belief_system():
    with pytest.raises(ValueError):
        kite_plan(flappy(), PlannerConfig(mode="belief"))


def assert_history_ok(r: PlanResult):
    costs = [h[4] for h in r.best_cost_history]
    assert all(b < a for a, b in zip(costs, costs[1:]))
    for _, _, run, term, total in r.best_cost_history:
        assert total == run + term
    if r.solved:
        assert r.total_cost == costs[-1]
        assert r.total_cost == r.running_cost + r.terminal_cost


def recompute_tree(system, cfg, tree, tol=1e-9):
    """Re-propagate every alive node from its parent and check payload and cost."""
    belief = cfg.mode == "belief"
    for i in tree.alive_ids()[1:]:
        p = int(tree.parent[i])
        seg = tree.segments[i]
        u = np.asarray(seg.control)
        if belief:
            states, covs = system.propagate_belief(tree.X[p], tree.P[p], u, seg.duration)
            assert np.allclose(covs[-1], tree.P[i], atol=tol)
        else:
            states, covs = system.propagate(tree.X[p], u, seg.duration), None
        assert np.allclose(states[-1], tree.X[i], atol=tol)
        if belief and cfg.metric == "W2":
            c = system.belief_running_cost(states, covs)
        else:
            c = system.running_cost(states, u, seg.duration)
        assert abs(tree.cost[i] - (tree.cost[p] + c)) <= tol
    assert tree.cost[0] == 0.0


CONFIGS = [
    ("car", PlannerConfig(max_iters=1500, rng_seed=3, heuristic="euclidean_over_vmax")),
    ("car", PlannerConfig(mode="belief", metric="W2", terminal_weight=20, max_iters=800, rng_seed=4)),
    ("car", PlannerConfig(mode="belief", metric="W2", goal_mode="chance", p_goal=0.5, max_iters=800, rng_seed=5)),
    ("pusher", PlannerConfig(mode="belief", metric="W2", terminal_weight=20, max_iters=800, rng_seed=6)),
    ("pusher", PlannerConfig(terminal_weight=5, max_iters=800, rng_seed=7, nn_backend="kdtree")),
    ("flappy", PlannerConfig(terminal_weight=20, max_iters=1500, rng_seed=8, nn_backend="kdtree")),
]


@pytest.mark.parametrize("name, cfg", CONFIGS)
def test_tree_invariants(name, cfg):
    s = {"car": car, "pusher": pusher, "flappy": flappy}[name]()
    r, tree = plan_with_tree(s, cfg)
    assert_history_ok(r)
    recompute_tree(s, cfg, tree)
    if r.solved:
        # prune soundness: nothing alive at or above the incumbent
        assert tree.cost[tree.alive_ids()].max() < r.total_cost
        assert len(r.trajectory) == len(r.segments) + 1
        # the returned plan replays to its recorded running cost
        x, run = r.trajectory[0], 0.0
        P = None if r.covariances is None else r.covariances[0]
        for k, seg in enumerate(r.segments):
            u = np.asarray(seg.control)
            if cfg.mode == "belief":
                states, covs = s.propagate_belief(x, P, u, seg.duration)
                run += s.belief_running_cost(states, covs) if cfg.metric == "W2" else s.running_cost(states, u, 1)
                P = covs[-1]
            else:
                states = s.propagate(x, u, seg.duration)
                run += s.running_cost(states, u, seg.duration)
            x = states[-1]
            assert np.allclose(x, r.trajectory[k + 1], atol=1e-12)
        assert run == pytest.approx(r.running_cost, abs=1e-9)


def strip_timing(r: PlanResult) -> str:
    d = r.to_json()
    d.pop("wall_time_s")
    d["best_cost_history"] = [[h[0]] + h[2:] for h in d["best_cost_history"]]
    return json.dumps(d)


@pytest.mark.parametrize("name, cfg", CONFIGS[:4])
def test_determinism(name, cfg):
    s = {"car": car, "pusher": pusher}[name]
    a, b = kite_plan(s(), cfg), kite_plan(s(), cfg)
    assert strip_timing(a) == strip_timing(b)
    c = kite_plan(s(), PlannerConfig.from_dict({**cfg.to_dict(), "rng_seed": cfg.rng_seed + 100}))
    assert strip_timing(a) != strip_timing(c)


def test_vanilla_ao_rrt_regression():
    ref = json.loads((DATA / "ao_rrt_reference.json").read_text())
    r = kite_plan(flappy(), PlannerConfig.from_dict(ref["config"]))
    assert r.total_cost == ref["total_cost"]
    assert r.terminal_cost == 0.0
    assert [h[4] for h in r.best_cost_history] == ref["history_costs"]
    assert [s.to_json() for s in r.segments] == ref["segments"]


class ScaledCosts:
    """Delegating wrapper multiplying every cost term by ``k``."""

    def __init__(self, inner, k):
        self._inner, self._k = inner, k

    def __getattr__(self, name):
        return getattr(self._inner, name)

    def running_cost(self, *a):
        return self._k * self._inner.running_cost(*a)

    def belief_running_cost(self, *a):
        return self._k * self._inner.belief_running_cost(*a)

    def terminal_distance(self, x):
        return self._k * self._inner.terminal_distance(x)

    def terminal_w2(self, *a):
        return self._k * self._inner.terminal_w2(*a)

    def heuristic(self, x):
        return self._k * self._inner.heuristic(x)


SCALING = [
    CONFIGS[0],
    ("car", PlannerConfig(mode="belief", metric="W2", terminal_weight=20, max_iters=2000, rng_seed=4)),
    CONFIGS[5],
]


@pytest.mark.parametrize("k", [2.0, 0.25])
@pytest.mark.parametrize("name, cfg", SCALING)
def test_cost_scaling_invariance(name, cfg, k):
    s = {"car": car, "flappy": flappy}[name]()
    base = kite_plan(s, cfg)
    scaled_cfg = PlannerConfig.from_dict({**cfg.to_dict(), "cost_dim_weight": cfg.cost_dim_weight / k})
    scaled = kite_plan(ScaledCosts(s, k), scaled_cfg)
    assert base.solved and scaled.solved
    assert scaled.segments == base.segments
    assert scaled.total_cost == k * base.total_cost


def test_heuristic_admissible_on_solved_runs():
    solved = 0
    seed = 0
    while solved < 100:
        s = pusher() if seed % 2 else car()
        cfg = PlannerConfig(max_iters=600, rng_seed=seed, heuristic="euclidean_over_vmax")
        seed += 1
        r, tree = plan_with_tree(s, cfg)
        if not r.solved:
            continue
        solved += 1
        # remaining realised running cost from each prefix end
        run_to = np.concatenate([[0.0], np.cumsum([
            s.running_cost(s.propagate(r.trajectory[i], np.asarray(seg.control), seg.duration),
                           np.asarray(seg.control), seg.duration)
            for i, seg in enumerate(r.segments)
        ])])
        for i, x in enumerate(r.trajectory):
            assert heuristic(s, x, cfg) <= r.running_cost - run_to[i] + 1e-9


def test_goal_bias_is_optional_and_deterministic():
    cfg = PlannerConfig(max_iters=300, rng_seed=1, goal_bias=0.2)
    assert strip_timing(kite_plan(car(), cfg)) == strip_timing(kite_plan(car(), cfg))


def test_plan_result_json_roundtrip():
    r = kite_plan(car(), CONFIGS[1][1])
    d = json.loads(r.dumps())
    assert d["solved"] == r.solved
    assert len(d["segments"]) == len(r.segments)
    if r.solved:
        assert np.allclose(d["covariances"], r.covariances)


def test_w2_mode_terminal_cost_matches_belief_module():
    s = car()
    r = kite_plan(s, SCALING[1][1])
    assert r.solved
    g = s.preferred_goal
    b = bl.GaussianBelief(r.trajectory[-1], r.covariances[-1], "pose")
    assert r.terminal_cost == pytest.approx(20 * bl.w2_to_goal(b, g))
