"""Benchmark harness: problems, method variants, Monte-Carlo execution, bound audit.

Seeds come from one master seed through ``numpy.random.SeedSequence`` spawn
keys: problem instances depend only on the problem id, so every method sees
the same problems; planner streams add the method and repeat index; the
Monte-Carlo stream is shared by all methods on a (problem, repeat) pair.
"""

from __future__ import annotations

import json
import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import belief as bl
from .learning import LearnedPusherSystem, TransitionModel
from .planner import PlannerConfig, PlanResult, kite_plan
from .systems.car import CarSystem, parking_scene
from .systems.flappy import FlappySystem, random_flappy_scene
from .systems.pusher import PusherSystem, pushing_scene
from .systems.scene import load_scene

log = logging.getLogger(__name__)

SYSTEMS = ("flappy", "car", "pusher")
_KITE = re.compile(r"^KiTe-(L2|W2)-([0-9.]+)$")


def derive_seed(master: int, *key: int) -> int:
    """Counter-based child seed for ``key`` under ``master``."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def method_config(name: str, base: PlannerConfig | None = None, p_goal: float | None = None) -> PlannerConfig:
    """Planner configuration for a named method variant.

    ``Base-L2`` is state-space AO-RRT (no terminal cost); ``GBT-W2`` is the
    belief planner with a chance goal; ``KiTe-L2-w`` and ``KiTe-W2-w`` add a
    terminal cost with weight ``w`` in state or belief space.
    """
    base = base or PlannerConfig()
    d = base.to_dict()
    d.update(terminal_weight=0.0, goal_mode="mean_in_region")
    if name == "Base-L2":
        d.update(mode="state", metric="L2")
    elif name == "GBT-W2":
        d.update(mode="belief", metric="W2", goal_mode="chance")
        if p_goal is not None:
            d["p_goal"] = p_goal
    else:
        m = _KITE.match(name)
        if not m:
            raise ValueError(f"unknown method {name!r}")
        metric, w = m.group(1), float(m.group(2))
        d.update(mode="belief" if metric == "W2" else "state", metric=metric, terminal_weight=w)
    return PlannerConfig.from_dict(d)


@dataclass
class ExperimentSpec:
    system: str
    methods: list
    problems: int = 20
    repeats: int = 5
    max_iters: int = 3000
    time_budget_s: float | None = None
    mc_rollouts: int = 200
    master_seed: int = 0
    p_free: float = 0.95
    p_goal: float = 0.5
    heuristic: str = "euclidean_over_vmax"
    cost_dim_weight: float = 1.0
    scene: str | None = None
    model: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ValueError(f"system must be one of {SYSTEMS}")
        if self.problems < 1 or self.repeats < 1 or self.mc_rollouts < 1:
            raise ValueError("counts must be positive")
        for m in self.methods:
            method_config(m)
        if self.system == "flappy" and any(method_config(m).mode == "belief" for m in self.methods):
            raise ValueError("flappy has no belief dynamics")

    @classmethod
    def from_json(cls, data: dict) -> "ExperimentSpec":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown experiment fields {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        spec = cls.from_json(json.loads(Path(path).read_text()))
        # relative scene/model paths are resolved against the spec file
        root = Path(path).parent
        for attr in ("scene", "model"):
            v = getattr(spec, attr)
            if v and not Path(v).is_absolute():
                setattr(spec, attr, str(root / v))
        return spec

    def planner_base(self) -> PlannerConfig:
        return PlannerConfig(
            max_iters=self.max_iters,
            time_budget_s=math.inf if self.time_budget_s is None else self.time_budget_s,
            p_free=self.p_free,
            p_goal=self.p_goal,
            heuristic=self.heuristic,
            cost_dim_weight=self.cost_dim_weight,
        )


@dataclass
class RunRecord:
    problem: int
    method: str
    seed: int
    solved: bool
    running_cost: float
    terminal_cost: float
    total_cost: float
    success_rate: float
    collision_rate: float
    reach_rate: float
    bound: float
    wall_time_s: float
    iterations: int = 0
    goal_index: int = -1
    n_mc: int = 0
    planner_running_cost: float = math.nan
    planner_terminal_cost: float = math.nan
    history: list = field(default_factory=list, repr=False)

    CSV_FIELDS = (
        "problem", "method", "seed", "solved", "running_cost", "terminal_cost", "total_cost",
        "success_rate", "collision_rate", "reach_rate", "bound", "wall_time_s", "iterations",
        "goal_index", "n_mc", "planner_running_cost", "planner_terminal_cost",
    )

    def key(self):
        return (self.problem, self.method, self.seed)

    def row(self) -> dict:
        d = asdict(self)
        d.pop("history")
        return d

    @classmethod
    def from_row(cls, row: dict) -> "RunRecord":
        kw = {}
        for f in fields(cls):
            if f.name == "history" or f.name not in row:
                continue
            v = row[f.name]
            if f.type in ("int",):
                kw[f.name] = int(v)
            elif f.type == "bool":
                kw[f.name] = v in (True, "True", "true", "1", 1)
            elif f.type == "float":
                kw[f.name] = float(v)
            else:
                kw[f.name] = v
        return cls(**kw)


# -- problems -------------------------------------------------------------


def make_system(spec: ExperimentSpec, problem: int, model: TransitionModel | None = None):
    """The problem instance for ``problem``; independent of the method."""
    rng = np.random.default_rng(derive_seed(spec.master_seed, 0, problem))
    if spec.system == "flappy":
        scene = load_scene(spec.scene) if spec.scene else random_flappy_scene(rng)
        return FlappySystem(scene)
    if spec.system == "car":
        scene = load_scene(spec.scene, chart="pose") if spec.scene else parking_scene()
        scene.start = scene.start + np.array(
            [rng.uniform(-0.1, 0.1), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)]
        )
        return CarSystem(scene)
    scene = load_scene(spec.scene, chart="se2") if spec.scene else pushing_scene()
    scene.start = scene.start + np.array(
        [rng.uniform(-0.05, 0.05), rng.uniform(-0.1, 0.1), rng.uniform(-0.2, 0.2)]
    )
    if model is not None:
        return LearnedPusherSystem(scene, model)
    return PusherSystem(scene)


# -- evaluation -------------------------------------------------------------


@dataclass
class MCResult:
    success_rate: float
    collision_rate: float
    reach_rate: float
    n: int
    terminal_states: np.ndarray

    @property
    def stderr(self) -> float:
        p = self.success_rate
        return math.sqrt(max(p * (1.0 - p), 0.0) / self.n)


def monte_carlo_execute(plan: PlanResult, system, n: int, seed: int) -> MCResult:
    """Run the plan's controls open loop ``n`` times through the ground truth.

    Success means the final state lies in some goal region and no waypoint
    collides; ``reach_rate`` ignores collisions.
    """
    if not plan.solved:
        raise ValueError("cannot execute an unsolved plan")
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    start = plan.trajectory[0]
    if not plan.segments:
        rollouts = np.repeat(np.asarray(start, dtype=float)[None, None], n, axis=0)
    else:
        rollouts = system.execute_many(start, plan.segments, n, rng)
    ok, collided = system.rollout_outcomes(rollouts)
    reached = np.array([system.in_goal(r[-1]) for r in rollouts], dtype=bool)
    return MCResult(float(ok.mean()), float(collided.mean()), float(reached.mean()), n, rollouts[:, -1])


def propagate_plan_belief(plan: PlanResult, system, start_cov=None):
    """Belief waypoints at segment ends ``(means, covs)``, re-propagated from the start."""
    P = np.asarray(system.start_cov if start_cov is None else start_cov, dtype=float)
    x = np.asarray(plan.trajectory[0], dtype=float)
    means, covs, seg_costs = [x], [P], []
    for seg in plan.segments:
        m, c = system.propagate_belief(x, P, np.asarray(seg.control), seg.duration)
        seg_costs.append(system.belief_running_cost(m, c))
        x, P = m[-1], c[-1]
        means.append(x)
        covs.append(P)
    return np.array(means), np.array(covs), seg_costs


def unify_cost(plan: PlanResult, system) -> tuple[float, float]:
    """Running W2 and terminal W2-to-goal of ``plan`` under the system's belief model.

    Systems without belief dynamics fall back to the deterministic running
    cost and the state distance to the goal.
    """
    if not plan.solved:
        raise ValueError("cannot unify an unsolved plan")
    if not system.supports_belief:
        run = 0.0
        x = np.asarray(plan.trajectory[0], dtype=float)
        for seg in plan.segments:
            w = system.propagate(x, np.asarray(seg.control), seg.duration)
            run += system.running_cost(w, np.asarray(seg.control), seg.duration)
            x = w[-1]
        return run, system.terminal_distance(x)
    means, covs, seg_costs = propagate_plan_belief(plan, system)
    return float(sum(seg_costs)), system.terminal_w2(means[-1], covs[-1])


def plan_bound(plan: PlanResult, system) -> float:
    """Goal-reaching lower bound of the plan's terminal belief (best goal)."""
    if not system.supports_belief:
        return math.nan
    means, covs, _ = propagate_plan_belief(plan, system)
    return system.goal_bound(means[-1], covs[-1])


def run_one(spec: ExperimentSpec, problem: int, method_idx: int, repeat: int, model=None) -> RunRecord:
    method = spec.methods[method_idx]
    system = make_system(spec, problem, model)
    seed = derive_seed(spec.master_seed, 1, problem, method_idx, repeat)
    cfg = method_config(method, spec.planner_base(), spec.p_goal)
    cfg = PlannerConfig.from_dict({**cfg.to_dict(), "rng_seed": seed})
    res = kite_plan(system, cfg)
    log.info("problem %d %s repeat %d: solved=%s total=%.4g", problem, method, repeat, res.solved, res.total_cost)
    if not res.solved:
        return RunRecord(
            problem, method, seed, False, math.nan, math.nan, math.nan, 0.0, 0.0, 0.0, math.nan,
            res.wall_time_s, res.iterations, -1, 0, history=res.best_cost_history,
        )
    run, term = unify_cost(res, system)
    mc = monte_carlo_execute(res, system, spec.mc_rollouts, derive_seed(spec.master_seed, 2, problem, repeat))
    return RunRecord(
        problem, method, seed, True, run, term, run + term,
        mc.success_rate, mc.collision_rate, mc.reach_rate, plan_bound(res, system),
        res.wall_time_s, res.iterations, res.goal_index, mc.n,
        res.running_cost, res.terminal_cost, history=res.best_cost_history,
    )


def _run_task(args):
    spec, p, mi, r, model = args
    return run_one(spec, p, mi, r, model)


def run_experiment(spec: ExperimentSpec, workers: int | None = None, model=None) -> list[RunRecord]:
    """Every (problem, method, repeat) run, sorted by key."""
    if model is None and spec.model:
        model = TransitionModel.load(spec.model)
    tasks = [
        (spec, p, mi, r, model)
        for p in range(spec.problems)
        for mi in range(len(spec.methods))
        for r in range(spec.repeats)
    ]
    workers = spec.workers if workers is None else workers
    if workers <= 1:
        records = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(_run_task, tasks, chunksize=1))
    order = {m: i for i, m in enumerate(spec.methods)}
    return sorted(records, key=lambda r: (r.problem, order.get(r.method, 0), r.seed))


# -- audit and aggregates ------------------------------------------------------


def verify_bound(records, z: float = 3.0, against: str = "reach_rate") -> list[dict]:
    """Records whose bound exceeds the empirical rate by more than ``z`` standard errors.

    Non-positive (vacuous) bounds are never flagged.  An empty list passes.
    """
    flagged = []
    for r in records:
        b = r.bound
        if not r.solved or b is None or not math.isfinite(b) or b <= 0:
            continue
        p = getattr(r, against)
        n = max(int(r.n_mc), 1)
        se = math.sqrt(max(p * (1.0 - p), 0.0) / n)
        if b > p + z * se:
            flagged.append({"problem": r.problem, "method": r.method, "seed": r.seed,
                            "bound": b, "empirical": p, "stderr": se, "n": n})
    return flagged


def _mean_std(vals):
    v = np.asarray([x for x in vals if x is not None and math.isfinite(x)], dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


AGG_FIELDS = (
    "method", "runs", "solved", "success_all", "success_all_std", "success_solved",
    "success_solved_std", "collision_solved", "running_solved", "running_solved_std",
    "terminal_solved", "terminal_solved_std", "running_all", "terminal_all",
    "preferred_goal_frac",
)


def aggregate(records, methods=None) -> list[dict]:
    """Mean and sample std per method.

    ``*_solved`` columns average over solved runs only.  ``success_all``
    counts unsolved runs as failures; ``running_all`` / ``terminal_all``
    charge unsolved runs the worst solved cost of that method.
    """
    methods = methods or sorted({r.method for r in records})
    out = []
    for m in methods:
        rs = [r for r in records if r.method == m]
        sol = [r for r in rs if r.solved]
        s_all = _mean_std([r.success_rate if r.solved else 0.0 for r in rs])
        s_sol = _mean_std([r.success_rate for r in sol])
        run = _mean_std([r.running_cost for r in sol])
        term = _mean_std([r.terminal_cost for r in sol])
        worst_run = max((r.running_cost for r in sol), default=math.nan)
        worst_term = max((r.terminal_cost for r in sol), default=math.nan)
        out.append({
            "method": m,
            "runs": len(rs),
            "solved": len(sol),
            "success_all": s_all[0],
            "success_all_std": s_all[1],
            "success_solved": s_sol[0],
            "success_solved_std": s_sol[1],
            "collision_solved": _mean_std([r.collision_rate for r in sol])[0],
            "running_solved": run[0],
            "running_solved_std": run[1],
            "terminal_solved": term[0],
            "terminal_solved_std": term[1],
            "running_all": _mean_std([r.running_cost if r.solved else worst_run for r in rs])[0],
            "terminal_all": _mean_std([r.terminal_cost if r.solved else worst_term for r in rs])[0],
            "preferred_goal_frac": (sum(r.goal_index == 0 for r in sol) / len(sol)) if sol else math.nan,
        })
    return out


def pooled_stderr(records, attr: str) -> float:
    v = np.asarray([getattr(r, attr) for r in records if r.solved], dtype=float)
    return float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0


def bound_check_gaussian(mean, cov, goal: bl.GoalSpec, n: int, rng) -> tuple[float, float, float]:
    """``(bound, MC probability, stderr)`` for one Gaussian belief and goal."""
    b = bl.goal_reach_lower_bound_ellipsoid(bl.GaussianBelief(mean, cov, goal.chart), goal)
    x = rng.multivariate_normal(np.asarray(mean, dtype=float), np.asarray(cov, dtype=float), size=n, method="eigh")
    p = float(np.mean(goal.contains(x)))
    return b, p, math.sqrt(max(p * (1 - p), 1e-300) / n)
