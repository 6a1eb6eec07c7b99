import dataclasses
import json
import math

import numpy as np
import pytest

from kite import bench, cli, report
from kite.belief import GoalSpec
from kite.bench import ExperimentSpec, RunRecord
from kite.planner import ControlSegment, PlannerConfig, PlanResult, kite_plan
from kite.systems import CarSystem, FlappySystem, PusherSystem, Scene, tiny_flappy_scene
from kite.systems.car import parking_scene
from kite.systems.pusher import pushing_scene


def replay_plan(system, controls, duration=1.0, start=None):
    """A solved PlanResult that follows ``controls`` from the start open loop."""
    x = np.asarray(system.start if start is None else start, dtype=float)
    traj, run = [x], 0.0
    for u in controls:
        w = system.propagate(x, np.asarray(u, dtype=float), duration)
        run += system.running_cost(w, np.asarray(u, dtype=float), duration)
        x = w[-1]
        traj.append(x)
    segs = [ControlSegment(u, duration) for u in controls]
    return PlanResult(segs, np.array(traj), None, run, 0.0, run, True, 0, 0.0)


# -- Monte-Carlo execution ------------------------------------------------------------


@pytest.fixture(scope="module")
def quiet_car_plan():
    scene = parking_scene(noise=False)
    scene.start_cov = np.zeros((3, 3))
    s = CarSystem(scene)
    r = kite_plan(s, PlannerConfig(max_iters=1500, rng_seed=2, heuristic="euclidean_over_vmax"))
    assert r.solved
    return s, r


def test_zero_noise_valid_plan_always_succeeds(quiet_car_plan):
    s, r = quiet_car_plan
    mc = bench.monte_carlo_execute(r, s, 50, seed=0)
    assert mc.success_rate == 1.0 and mc.collision_rate == 0.0 and mc.reach_rate == 1.0
    assert mc.terminal_states.shape == (50, 3)
    assert np.allclose(mc.terminal_states, r.trajectory[-1], atol=1e-9)


def test_plan_ending_outside_goal_never_succeeds():
    s = CarSystem(parking_scene())
    plan = replay_plan(s, [(0.5, 0.0)])
    mc = bench.monte_carlo_execute(plan, s, 100, seed=1)
    assert mc.success_rate == 0.0 and mc.reach_rate == 0.0


def test_rejects_unsolved_and_bad_n(quiet_car_plan):
    s, r = quiet_car_plan
    with pytest.raises(ValueError):
        bench.monte_carlo_execute(dataclasses.replace(r, solved=False), s, 10, 0)
    with pytest.raises(ValueError):
        bench.monte_carlo_execute(r, s, 0, 0)


class GaussianEndCar(CarSystem):
    """Executor that lands at the start plus isotropic planar noise."""

    sigma = 0.1

    def execute_many(self, x0, segments, n, rng):
        end = np.repeat(np.asarray(x0, dtype=float)[None], n, axis=0)
        end[:, :2] += self.sigma * rng.standard_normal((n, 2))
        return np.stack([np.repeat(np.asarray(x0, dtype=float)[None], n, 0), end], axis=1)


def test_isotropic_terminal_matches_chi_square():
    goal = GoalSpec([2.0, 1.5, 0.0], 0.3, chart="pose")
    s = GaussianEndCar(Scene("car", (0.0, 4.0, 0.0, 3.0), goals=[goal], start=np.array([2.0, 1.5, 0.0])))
    plan = replay_plan(s, [(0.0, 0.0)])
    n = 100_000
    mc = bench.monte_carlo_execute(plan, s, n, seed=3)
    want = 1 - math.exp(-4.5)
    assert abs(mc.success_rate - want) <= 3 * math.sqrt(want * (1 - want) / n)
    assert mc.stderr == pytest.approx(math.sqrt(mc.success_rate * (1 - mc.success_rate) / n))


def test_empty_plan_executes_start_only():
    s = CarSystem(parking_scene())
    start = s.goals[0].center
    plan = PlanResult([], start[None], None, 0.0, 0.0, 0.0, True, 0, 0.0)
    mc = bench.monte_carlo_execute(plan, s, 5, seed=0)
    assert mc.success_rate == 1.0


# -- unified cost ---------------------------------------------------------------------


def test_unify_is_idempotent_on_belief_plans():
    s = CarSystem(parking_scene())
    r = kite_plan(s, PlannerConfig(mode="belief", metric="W2", terminal_weight=20, max_iters=2000, rng_seed=4))
    assert r.solved
    run, term = bench.unify_cost(r, s)
    assert abs(run - r.running_cost) <= 1e-9
    assert abs(20 * term - r.terminal_cost) <= 1e-9
    assert bench.unify_cost(r, s) == (run, term)


def test_unify_zero_noise_is_path_length(quiet_car_plan):
    s, r = quiet_car_plan
    run, _ = bench.unify_cost(r, s)
    assert run == pytest.approx(r.running_cost, abs=1e-9)


def test_unify_without_belief_dynamics():
    s = FlappySystem(tiny_flappy_scene())
    r = kite_plan(s, PlannerConfig(terminal_weight=20, max_iters=2000, rng_seed=1))
    run, term = bench.unify_cost(r, s)
    assert run == pytest.approx(r.running_cost)
    assert 20 * term == pytest.approx(r.terminal_cost)
    assert math.isnan(bench.plan_bound(r, s))
    with pytest.raises(ValueError):
        bench.unify_cost(dataclasses.replace(r, solved=False), s)


def test_unified_cost_separates_equal_geometry_plans():
    # three commuting pushes in two orders: same path length and endpoint
    s = PusherSystem(pushing_scene(start=[0.3, 0.5, 0.0]))
    a = replay_plan(s, [(3, 0.0, 0.07), (1, 0.0, 0.1), (1, 0.0, 0.14)], 1)
    b = replay_plan(s, [(1, 0.0, 0.14), (1, 0.0, 0.1), (3, 0.0, 0.07)], 1)
    assert np.allclose(a.trajectory[-1], b.trajectory[-1], atol=1e-12)
    assert a.running_cost == pytest.approx(b.running_cost, abs=1e-12)
    s.goals[0] = GoalSpec(a.trajectory[-1], 0.08, s.goals[0].shape_matrix, chart="se2")
    run_a, term_a = bench.unify_cost(a, s)
    run_b, term_b = bench.unify_cost(b, s)
    # b pays more along the way but ends tighter
    assert run_b > run_a
    assert term_b < term_a


# -- bound audit ----------------------------------------------------------------------


def rec(bound, p, n=100_000, solved=True):
    return RunRecord(0, "m", 1, solved, 1.0, 0.0, 1.0, p, 0.0, p, bound, 0.0, n_mc=n)


def test_verify_bound_examples():
    assert bench.verify_bound([rec(-0.4, 0.0)]) == []
    assert bench.verify_bound([rec(0.78, 0.99)]) == []
    flagged = bench.verify_bound([rec(0.9, 0.5, n=200)])
    assert len(flagged) == 1 and flagged[0]["bound"] == 0.9
    assert bench.verify_bound([]) == []
    assert bench.verify_bound([rec(math.nan, 0.1)]) == []
    assert bench.verify_bound([rec(0.9, 0.5, solved=False)]) == []


def test_verify_bound_tolerance_edge():
    n = 10_000
    p = 0.5
    se = math.sqrt(p * (1 - p) / n)
    assert bench.verify_bound([rec(p + 2.9 * se, p, n)]) == []
    assert len(bench.verify_bound([rec(p + 3.1 * se, p, n)])) == 1


def test_bound_check_gaussian_isotropic():
    g = GoalSpec([0.0, 0.0], 0.3)
    b, p, se = bench.bound_check_gaussian([0.0, 0.0], 0.01 * np.eye(2), g, 100_000, np.random.default_rng(0))
    assert b == pytest.approx(7 / 9)
    assert abs(p - (1 - math.exp(-4.5))) <= 3 * se


# -- outputs --------------------------------------------------------------------------


def test_emit_empty(tmp_path):
    paths = report.emit_outputs([], tmp_path)
    assert paths["records"].read_text().strip() == ",".join(RunRecord.CSV_FIELDS)
    assert len(paths["aggregate"].read_text().strip().splitlines()) == 1
    for k in ("cost_vs_time", "success"):
        svg = paths[k].read_text()
        assert svg.startswith("<svg") and "<polyline" not in svg and "<rect class=\"bar\"" not in svg


def test_emit_one_record(tmp_path):
    r = rec(0.5, 0.8, n=200)
    r.history = [[3, 0.25, 1.0, 0.0, 1.0]]
    paths = report.emit_outputs([r], tmp_path)
    assert len(paths["records"].read_text().strip().splitlines()) == 2
    assert len(paths["aggregate"].read_text().strip().splitlines()) == 2
    assert paths["success"].read_text().count("<rect") - 1 == 1
    back = report.read_records_csv(paths["records"])
    assert json.dumps(back[0].row()) == json.dumps(r.row())


def test_emit_is_byte_identical(tmp_path):
    rs = [rec(0.5, 0.8), dataclasses.replace(rec(0.1, 0.3), seed=2),
          dataclasses.replace(rec(0.2, 0.4), method="other", problem=3)]
    a = report.emit_outputs(rs, tmp_path / "a")
    b = report.emit_outputs(list(reversed(rs)), tmp_path / "b")
    for k in a:
        assert a[k].read_bytes() == b[k].read_bytes()


def test_emit_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        report.emit_outputs([], blocker / "sub")


# -- experiment plumbing ----------------------------------------------------------------


def test_method_configs():
    assert bench.method_config("Base-L2").terminal_weight == 0 and bench.method_config("Base-L2").mode == "state"
    k = bench.method_config("KiTe-W2-20")
    assert (k.mode, k.metric, k.terminal_weight) == ("belief", "W2", 20.0)
    assert bench.method_config("KiTe-L2-5").mode == "state"
    g = bench.method_config("GBT-W2", p_goal=0.7)
    assert g.goal_mode == "chance" and g.p_goal == 0.7 and g.terminal_weight == 0
    with pytest.raises(ValueError):
        bench.method_config("RRT*")


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec("boat", ["Base-L2"])
    with pytest.raises(ValueError):
        ExperimentSpec("car", ["Base-L2"], problems=0)
    with pytest.raises(ValueError):
        ExperimentSpec("flappy", ["KiTe-W2-20"])
    with pytest.raises(ValueError):
        ExperimentSpec.from_json({"system": "car", "methods": [], "colour": 1})


def test_seeds_are_distinct_and_stable():
    keys = [(1, p, m, r) for p in range(5) for m in range(3) for r in range(5)]
    seeds = [bench.derive_seed(0, *k) for k in keys]
    assert len(set(seeds)) == len(seeds)
    assert bench.derive_seed(0, 1, 2, 3) == bench.derive_seed(0, 1, 2, 3)
    assert bench.derive_seed(1, 1, 2, 3) != bench.derive_seed(0, 1, 2, 3)


def test_problems_shared_across_methods():
    spec = ExperimentSpec("car", ["Base-L2", "KiTe-W2-20"], problems=3)
    a = [bench.make_system(spec, p).start for p in range(3)]
    b = [bench.make_system(spec, p).start for p in range(3)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], a[1])


TINY = dict(system="car", methods=["Base-L2", "KiTe-W2-20"], problems=2, repeats=1, max_iters=400, mc_rollouts=50)


def test_aggregate_is_reproducible():
    spec = ExperimentSpec(**TINY)
    a = bench.aggregate(bench.run_experiment(spec), spec.methods)
    b = bench.aggregate(bench.run_experiment(spec), spec.methods)
    assert json.dumps(a) == json.dumps(b)
    assert [x["runs"] for x in a] == [2, 2]


def test_aggregate_columns():
    rs = [rec(0.5, 0.8), rec(0.5, 0.4), rec(math.nan, 0.0, solved=False)]
    rs[1].running_cost = 3.0
    rs[0].goal_index, rs[1].goal_index = 0, 1
    (a,) = bench.aggregate(rs)
    assert a["runs"] == 3 and a["solved"] == 2
    assert a["success_all"] == pytest.approx(0.4)
    assert a["success_solved"] == pytest.approx(0.6)
    assert a["running_all"] == pytest.approx((1 + 3 + 3) / 3)
    assert a["preferred_goal_frac"] == 0.5


# -- CLI ----------------------------------------------------------------------------------


def test_cli_plan(tmp_path, capsys):
    cfg = tmp_path / "p.json"
    cfg.write_text(json.dumps({"system": "car", "planner": {"max_iters": 1500, "heuristic": "euclidean_over_vmax"}}))
    code = cli.main(["plan", "--config", str(cfg), "--seed", "2", "--out", str(tmp_path / "o")])
    res = json.loads((tmp_path / "o" / "result.json").read_text())
    assert code == (0 if res["solved"] else 1)
    assert (tmp_path / "o" / "history.csv").read_text().startswith("iteration")
    assert "solved=" in capsys.readouterr().out


def test_cli_bench_and_audit(tmp_path):
    cfg = tmp_path / "b.json"
    cfg.write_text(json.dumps({**TINY, "problems": 1}))
    assert cli.main(["bench", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    recs = tmp_path / "o" / "records.csv"
    assert len(recs.read_text().strip().splitlines()) == 3
    assert cli.main(["audit-bound", str(recs), "--out", str(tmp_path / "a")]) == 0
    assert json.loads((tmp_path / "a" / "bound_audit.json").read_text()) == []


def test_cli_audit_flags(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text(report.records_csv([rec(0.9, 0.5, n=200)]))
    assert cli.main(["audit-bound", str(path), "--out", str(tmp_path)]) == 1


def test_cli_gen_data_and_train(tmp_path):
    assert cli.main(["gen-data", "--n", "64", "--seed", "1", "--out", str(tmp_path)]) == 0
    cfg = tmp_path / "t.json"
    cfg.write_text(json.dumps({"steps": 40, "val_fraction": 0.0}))
    assert cli.main(["train", "--config", str(cfg), "--data", str(tmp_path / "dataset.csv"), "--out", str(tmp_path)]) == 0
    from kite.learning import TransitionModel

    TransitionModel.load(tmp_path / "model.json")
    assert (tmp_path / "loss_curve.csv").read_text().startswith("epoch,loss")


def test_cli_errors(tmp_path, monkeypatch):
    with pytest.raises(SystemExit):
        cli.main(["plan", "--config", str(tmp_path / "missing.json")])
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(SystemExit):
        cli.main(["plan", "--config", str(bad)])
    with pytest.raises(SystemExit):
        cli.main(["bench", "--config", str(bad), "--workers", "0"])
    monkeypatch.setenv("KITE_LOG", "loud")
    with pytest.raises(SystemExit):
        cli.main(["gen-data", "--n", "2", "--out", str(tmp_path)])
