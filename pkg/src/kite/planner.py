"""KiTe: AO-RRT over (state, cost) or (belief, cost) with a terminal cost.

The loop follows the usual anytime AO-RRT shape.  Before the first solution
the nearest neighbour is found in state space only; afterwards a cost
coordinate is sampled in ``[0, c_best)`` and the augmented distance is used.
Every accepted goal hit shrinks ``c_best`` to ``c_new + phi(x_new)`` and
prunes the tree above it.  ``terminal_weight = 0`` gives plain AO-RRT;
``goal_mode = "chance"`` gives the GBT-style baseline.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)

MODES = ("state", "belief")
METRICS = ("L2", "W2")
GOAL_MODES = ("mean_in_region", "chance")
HEURISTICS = ("zero", "euclidean_over_vmax")
NN_BACKENDS = ("linear", "kdtree")


@dataclass(frozen=True)
class ControlSegment:
    control: tuple
    duration: float

    def __post_init__(self):
        object.__setattr__(self, "control", tuple(float(c) for c in np.atleast_1d(self.control)))
        if not self.duration > 0:
            raise ValueError("segment duration must be positive")

    def to_json(self) -> dict:
        return {"control": list(self.control), "duration": float(self.duration)}


@dataclass(frozen=True)
class PlannerConfig:
    terminal_weight: float = 0.0
    mode: str = "state"
    metric: str = "L2"
    p_free: float = 0.95
    goal_mode: str = "mean_in_region"
    p_goal: float = 0.9
    cost_dim_weight: float = 1.0
    heuristic: str = "zero"
    max_iters: int = 2000
    time_budget_s: float = math.inf
    rng_seed: int = 0
    goal_bias: float = 0.0
    nn_backend: str = "linear"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if self.goal_mode not in GOAL_MODES:
            raise ValueError(f"goal_mode must be one of {GOAL_MODES}")
        if self.heuristic not in HEURISTICS:
            raise ValueError(f"heuristic must be one of {HEURISTICS}")
        if self.nn_backend not in NN_BACKENDS:
            raise ValueError(f"nn_backend must be one of {NN_BACKENDS}")
        if self.metric == "W2" and self.mode != "belief":
            raise ValueError("the W2 metric needs belief mode")
        if self.goal_mode == "chance" and self.mode != "belief":
            raise ValueError("chance goals need belief mode")
        if self.terminal_weight < 0 or self.cost_dim_weight < 0:
            raise ValueError("weights must be non-negative")
        for p in (self.p_free, self.p_goal, self.goal_bias):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if self.max_iters < 0 or self.time_budget_s < 0:
            raise ValueError("budgets must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "PlannerConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "time_budget_s" in known and known["time_budget_s"] is None:
            known["time_budget_s"] = math.inf
        return cls(**known)

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(d["time_budget_s"]):
            d["time_budget_s"] = None
        return d


@dataclass
class PlanResult:
    segments: list
    trajectory: np.ndarray
    covariances: np.ndarray | None
    running_cost: float
    terminal_cost: float
    total_cost: float
    solved: bool
    iterations: int
    wall_time_s: float
    best_cost_history: list = field(default_factory=list)
    goal_index: int = -1
    tree_size: int = 0
    status: str = "ok"

    def to_json(self) -> dict:
        return {
            "solved": self.solved,
            "status": self.status,
            "segments": [s.to_json() for s in self.segments],
            "trajectory": np.asarray(self.trajectory).tolist(),
            "covariances": None if self.covariances is None else np.asarray(self.covariances).tolist(),
            "running_cost": self.running_cost,
            "terminal_cost": self.terminal_cost,
            "total_cost": self.total_cost,
            "iterations": self.iterations,
            "wall_time_s": self.wall_time_s,
            "goal_index": self.goal_index,
            "tree_size": self.tree_size,
            "best_cost_history": [list(h) for h in self.best_cost_history],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def augmented_distance(dx, c, c2, w_c: float) -> float | np.ndarray:
    """``sqrt(D_x^2 + w_c^2 |c - c2|^2)``; broadcasts over arrays."""
    dc = np.asarray(c, dtype=float) - np.asarray(c2, dtype=float)
    out = np.sqrt(np.square(dx) + (w_c * w_c) * dc * dc)
    return float(out) if np.ndim(out) == 0 else out


class Tree:
    """Append-only node store with an alive mask; ids are insertion order.

    Each node keeps its payload (state, or mean and covariance), accumulated
    cost, parent id, inbound segment and the cost of that segment.
    """

    def __init__(self, dim: int, belief: bool, capacity: int = 256):
        self.dim = dim
        self.belief = belief
        self.n = 0
        self.X = np.empty((capacity, dim))
        self.P = np.empty((capacity, dim, dim)) if belief else None
        self.trace = np.zeros(capacity)
        self.cost = np.empty(capacity)
        self.seg_cost = np.zeros(capacity)
        self.parent = np.full(capacity, -1, dtype=np.int64)
        self.alive = np.zeros(capacity, dtype=bool)
        self.segments: list = []
        self.n_pruned = 0

    def _grow(self):
        cap = 2 * self.X.shape[0]

        def ext(a, fill=0):
            out = np.full((cap,) + a.shape[1:], fill, dtype=a.dtype)
            out[: a.shape[0]] = a
            return out

        self.X = ext(self.X)
        if self.P is not None:
            self.P = ext(self.P)
        self.trace = ext(self.trace)
        self.cost = ext(self.cost)
        self.seg_cost = ext(self.seg_cost)
        self.parent = ext(self.parent, -1)
        self.alive = ext(self.alive, False)

    def add(self, x, cost: float, parent: int = -1, segment=None, seg_cost: float = 0.0, cov=None) -> int:
        if self.n == self.X.shape[0]:
            self._grow()
        i = self.n
        self.X[i] = x
        if self.belief:
            self.P[i] = cov
            self.trace[i] = float(np.trace(cov))
        self.cost[i] = cost
        self.seg_cost[i] = seg_cost
        self.parent[i] = parent
        self.alive[i] = True
        self.segments.append(segment)
        self.n += 1
        return i

    def alive_ids(self) -> np.ndarray:
        return np.flatnonzero(self.alive[: self.n])

    def path(self, i: int) -> list[int]:
        ids = []
        while i >= 0:
            ids.append(i)
            i = int(self.parent[i])
        return ids[::-1]

    def prune_above_cost(self, c_best: float) -> int:
        """Kill nodes with ``cost >= c_best`` and everything below them."""
        n = self.n
        alive = self.alive[:n]
        before = int(alive.sum())
        alive &= self.cost[:n] < c_best
        # parents precede children, so repeated passes settle within the depth
        par = self.parent[1:n]
        while True:
            upd = alive[1:] & alive[par]
            if np.array_equal(upd, alive[1:]):
                break
            alive[1:] = upd
        removed = before - int(alive.sum())
        self.n_pruned += removed
        return removed


def prune_above_cost(tree: Tree, c_best: float) -> int:
    if not math.isfinite(c_best):
        raise ValueError("c_best must be finite")
    return tree.prune_above_cost(c_best)


class _NearestIndex:
    """Nearest-neighbour lookup in (state, cost) or (belief, cost).

    The linear scan is the reference.  The kd-tree backend indexes an
    Euclidean embedding of the state plus the weighted cost, rebuilt lazily
    (after pruning or once enough new nodes accumulate) with a linear scan
    over the not-yet-indexed tail.
    """

    def __init__(self, system, tree: Tree, cfg: PlannerConfig):
        self.system = system
        self.tree = tree
        self.w_c = cfg.cost_dim_weight
        self.use_trace = cfg.mode == "belief" and cfg.metric == "W2"
        self.kd = cfg.nn_backend == "kdtree" and system.embed(np.zeros((1, system.dim))) is not None
        if cfg.nn_backend == "kdtree" and not self.kd:
            log.info("kd-tree backend needs a Euclidean state embedding; using linear scan")
        self._kd = None
        self._kd_ids = None
        self._kd_upto = 0
        self._kd_with_cost = None
        self._kd_pruned = -1

    def _dist_many(self, ids, x, c, use_cost):
        t = self.tree
        dx = self.system.state_distance_many(t.X[ids], x)
        if self.use_trace:
            dx = np.sqrt(dx * dx + t.trace[ids])
        if use_cost:
            return augmented_distance(dx, t.cost[ids], c, self.w_c)
        return dx

    def query(self, x, c=None) -> int:
        use_cost = c is not None
        t = self.tree
        if not self.kd or t.n < 64:
            ids = t.alive_ids()
            d = self._dist_many(ids, x, c, use_cost)
            return int(ids[int(np.argmin(d))])
        self._maybe_rebuild(use_cost)
        q = self._embed(x[None], None if not use_cost else np.array([c]))[0]
        best_d, best_i = math.inf, -1
        if self._kd is not None:
            d, j = self._kd.query(q)
            if np.isfinite(d):
                best_d, best_i = float(d), int(self._kd_ids[j])
        tail = np.arange(self._kd_upto, t.n)
        tail = tail[t.alive[tail]]
        if len(tail):
            dt = self._dist_many(tail, x, c, use_cost)
            k = int(np.argmin(dt))
            if dt[k] < best_d or (dt[k] == best_d and tail[k] < best_i):
                best_i = int(tail[k])
        return best_i

    def _embed(self, X, costs):
        e = self.system.embed(X)
        if self.use_trace:
            raise AssertionError("kd-tree is only used for state mode")
        if costs is None:
            return e
        return np.column_stack([e, self.w_c * costs])

    def _maybe_rebuild(self, use_cost):
        t = self.tree
        stale = (
            self._kd is None
            or self._kd_with_cost != use_cost
            or self._kd_pruned != t.n_pruned
            or t.n - self._kd_upto > max(64, self._kd_upto // 4)
        )
        if not stale:
            return
        ids = t.alive_ids()
        self._kd_ids = ids
        self._kd = cKDTree(self._embed(t.X[ids], t.cost[ids] if use_cost else None))
        self._kd_upto = t.n
        self._kd_with_cost = use_cost
        self._kd_pruned = t.n_pruned


def nearest(tree: Tree, system, target, cost=None, cfg: PlannerConfig | None = None) -> int:
    """Closest alive node to ``target`` (augmented when ``cost`` is given).

    Ties go to the lowest node id.
    """
    cfg = cfg or PlannerConfig(mode="belief" if tree.belief else "state", metric="W2" if tree.belief else "L2")
    return _NearestIndex(system, tree, cfg).query(np.asarray(target, dtype=float), cost)


def validity_check(system, cfg: PlannerConfig, states, covs=None) -> bool:
    """Whole-segment check at the system's waypoint resolution."""
    if cfg.mode == "state" or covs is None:
        return system.valid_states(states)
    return system.chance_valid(states, covs, cfg.p_free)


def goal_check(system, cfg: PlannerConfig, x, cov=None) -> tuple[bool, float]:
    """``(hit, terminal_cost)`` for an endpoint state or belief."""
    w = cfg.terminal_weight
    if cfg.mode == "state" or cov is None:
        hit = system.in_goal(x)
        return hit, (w * system.terminal_distance(x) if w > 0 else 0.0)
    if cfg.goal_mode == "chance":
        return system.goal_bound(x, cov) >= cfg.p_goal, 0.0
    hit = system.in_goal(x)
    if w == 0:
        return hit, 0.0
    if cfg.metric == "W2":
        return hit, w * system.terminal_w2(x, cov)
    return hit, w * system.terminal_distance(x)


def heuristic(system, x, cfg: PlannerConfig) -> float:
    """Lower bound on the remaining running cost; never counts terminal cost."""
    if cfg.heuristic == "zero":
        return 0.0
    return float(system.heuristic(x))


def _segment_cost(system, cfg, states, covs, u, tau) -> float:
    if cfg.mode == "belief" and cfg.metric == "W2":
        return system.belief_running_cost(states, covs)
    return system.running_cost(states, u, tau)


def _unsolved(tree, it, t0, status, history=()):
    return PlanResult(
        segments=[],
        trajectory=np.empty((0, tree.dim)),
        covariances=None,
        running_cost=math.inf,
        terminal_cost=math.inf,
        total_cost=math.inf,
        solved=False,
        iterations=it,
        wall_time_s=time.perf_counter() - t0,
        best_cost_history=list(history),
        tree_size=int(tree.alive[: tree.n].sum()),
        status=status,
    )


def kite_plan(system, cfg: PlannerConfig, start=None, start_cov=None) -> PlanResult:
    """Run the anytime loop for ``cfg.max_iters`` iterations or the time budget."""
    return _plan(system, cfg, start, start_cov)[0]


def _plan(system, cfg, start, start_cov):
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.rng_seed)
    belief = cfg.mode == "belief"
    if belief and not system.supports_belief:
        raise ValueError(f"{system.name} has no belief dynamics")
    x0 = np.asarray(system.start if start is None else start, dtype=float)
    P0 = None
    if belief:
        P0 = np.asarray(system.start_cov if start_cov is None else start_cov, dtype=float)
    tree = Tree(system.dim, belief)

    if not validity_check(system, cfg, x0[None], None if P0 is None else P0[None]):
        return _unsolved(tree, 0, t0, "invalid_start"), tree
    tree.add(x0, 0.0, cov=P0)
    nn = _NearestIndex(system, tree, cfg)

    c_best = math.inf
    best = None  # (node ids, running, terminal, goal index) at solution time
    history: list[tuple] = []

    def record(i, c_run, c_term, it):
        nonlocal c_best, best
        c_best = c_run + c_term
        ids = tree.path(i)
        best = (
            ids,
            tree.X[ids].copy(),
            None if not belief else tree.P[ids].copy(),
            [tree.segments[j] for j in ids[1:]],
            c_run,
            c_term,
            system.goal_index(tree.X[i]),
        )
        history.append((it, time.perf_counter() - t0, c_run, c_term, c_best))
        log.debug("iteration %d: new best %.6g (running %.6g, terminal %.6g)", it, c_best, c_run, c_term)
        tree.prune_above_cost(c_best)

    hit, term = goal_check(system, cfg, x0, P0)
    if hit:
        record(0, 0.0, term, 0)

    it = 0
    deadline = t0 + cfg.time_budget_s
    while it < cfg.max_iters:
        if c_best <= 0.0 or time.perf_counter() > deadline:
            break
        it += 1
        if cfg.goal_bias > 0 and rng.random() < cfg.goal_bias:
            x_rand = system.preferred_goal.center.copy()
        else:
            x_rand = system.sample_state(rng)
        u = system.sample_control(rng)
        tau = system.sample_duration(rng)
        c_rand = rng.uniform(0.0, c_best) if best is not None else None

        i_near = nn.query(x_rand, c_rand)
        if belief:
            states, covs = system.propagate_belief(tree.X[i_near], tree.P[i_near], u, tau)
        else:
            states, covs = system.propagate(tree.X[i_near], u, tau), None
        if not validity_check(system, cfg, states, covs):
            continue
        seg_cost = _segment_cost(system, cfg, states, covs, u, tau)
        c_new = tree.cost[i_near] + seg_cost
        x_new = states[-1]
        if c_new + heuristic(system, x_new, cfg) >= c_best:
            continue
        cov_new = None if covs is None else covs[-1]
        i_new = tree.add(x_new, c_new, i_near, ControlSegment(u, tau), seg_cost, cov_new)
        hit, term = goal_check(system, cfg, x_new, cov_new)
        if hit and c_new + term < c_best:
            record(i_new, c_new, term, it)

    if best is None:
        return _unsolved(tree, it, t0, "no_solution", history), tree
    _, X, P, segs, c_run, c_term, gi = best
    return PlanResult(
        segments=segs,
        trajectory=X,
        covariances=P,
        running_cost=float(c_run),
        terminal_cost=float(c_term),
        total_cost=float(c_run + c_term),
        solved=True,
        iterations=it,
        wall_time_s=time.perf_counter() - t0,
        best_cost_history=history,
        goal_index=gi,
        tree_size=int(tree.alive[: tree.n].sum()),
    ), tree


def plan_with_tree(system, cfg: PlannerConfig, start=None, start_cov=None):
    """Like :func:`kite_plan` but also hands back the final tree (for audits)."""
    return _plan(system, cfg, start, start_cov)
