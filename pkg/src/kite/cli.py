"""Command line entry point: ``kite plan|bench|train|gen-data|audit-bound``.

Logging verbosity comes from the ``KITE_LOG`` environment variable
(``error``, ``info`` or ``debug``; default ``error``).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import bench, learning, report
from .planner import PlannerConfig, kite_plan
from .systems.car import CarSystem, parking_scene
from .systems.flappy import FlappySystem, random_flappy_scene
from .systems.pusher import PusherSystem, pushing_scene
from .systems.scene import load_scene

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    level = os.environ.get("KITE_LOG", "error").lower()
    if level not in LOG_LEVELS:
        raise SystemExit(f"KITE_LOG must be one of {sorted(LOG_LEVELS)}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s")


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise SystemExit(f"config not found: {path}")
    except json.JSONDecodeError as e:
        raise SystemExit(f"{path}: invalid JSON ({e})")


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _build_system(problem: dict, root: Path):
    name = problem.get("system")
    scene_path = problem.get("scene")
    if scene_path and not Path(scene_path).is_absolute():
        scene_path = str(root / scene_path)
    if name == "flappy":
        scene = load_scene(scene_path) if scene_path else random_flappy_scene(np.random.default_rng(0))
        return FlappySystem(scene, max_frames=int(problem.get("max_frames", 10)))
    if name == "car":
        return CarSystem(load_scene(scene_path, chart="pose") if scene_path else parking_scene())
    if name == "pusher":
        scene = load_scene(scene_path, chart="se2") if scene_path else pushing_scene()
        model = problem.get("model")
        if model:
            if not Path(model).is_absolute():
                model = str(root / model)
            return learning.LearnedPusherSystem(scene, learning.TransitionModel.load(model))
        return PusherSystem(scene)
    raise SystemExit(f"unknown system {name!r}; expected one of {bench.SYSTEMS}")


def cmd_plan(args) -> int:
    problem = _read_json(args.config)
    system = _build_system(problem, Path(args.config).parent)
    cfg = dict(problem.get("planner", {}))
    if args.seed is not None:
        cfg["rng_seed"] = args.seed
    elif "seed" in problem:
        cfg["rng_seed"] = problem["seed"]
    if args.time_budget is not None:
        cfg["time_budget_s"] = args.time_budget
    res = kite_plan(system, PlannerConfig.from_dict(cfg))
    out = _out_dir(args)
    (out / "result.json").write_text(res.dumps() + "\n")
    (out / "history.csv").write_text(report.history_csv(res.best_cost_history))
    print(f"solved={res.solved} total_cost={res.total_cost:.6g} running={res.running_cost:.6g} "
          f"terminal={res.terminal_cost:.6g} iterations={res.iterations}")
    return 0 if res.solved else 1


def cmd_bench(args) -> int:
    spec = bench.ExperimentSpec.load(args.config)
    if args.seed is not None:
        spec.master_seed = args.seed
    if args.time_budget is not None:
        spec.time_budget_s = args.time_budget
    records = bench.run_experiment(spec, workers=args.workers)
    paths = report.emit_outputs(records, _out_dir(args))
    flagged = bench.verify_bound(records)
    for a in bench.aggregate(records, spec.methods):
        print(f"{a['method']}: solved {a['solved']}/{a['runs']} success {a['success_all']:.3f}")
    print(f"bound audit: {len(flagged)} flagged; outputs in {paths['records'].parent}")
    return 0


def cmd_gen_data(args) -> int:
    cfg = _read_json(args.config) if args.config else {}
    n = int(args.n if args.n is not None else cfg.get("n", 1000))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    ds = learning.generate_pusher_dataset(n, seed)
    out = _out_dir(args)
    ds.to_csv(out / "dataset.csv")
    ev = learning.TransitionDataset(np.repeat(ds.eval_controls, ds.eval_outcomes.shape[1], axis=0),
                                    ds.eval_outcomes.reshape(-1, ds.targets.shape[1]))
    ev.to_csv(out / "eval.csv")
    print(f"wrote {n} samples to {out / 'dataset.csv'}")
    return 0


def cmd_train(args) -> int:
    cfg = _read_json(args.config) if args.config else {}
    data = args.data
    if not data and cfg.get("data"):
        # relative to the config file, like scene paths
        data = str(Path(args.config).parent / cfg["data"])
    if not data:
        raise SystemExit("train needs --data or a config with a 'data' entry")
    ds = learning.TransitionDataset.from_csv(data)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    loss = cfg.get("loss", "nll")
    tc = {**learning.PUSHER_TRAIN, **{k: v for k, v in cfg.items() if k in learning.TrainConfig.__dataclass_fields__}}
    tc.update(loss=loss, seed=seed)
    model, curve = learning.train(ds, learning.init_model(6, 3, seed=seed), learning.TrainConfig(**tc))
    out = _out_dir(args)
    model.save(out / "model.json")
    (out / "loss_curve.csv").write_text("epoch,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(curve)))
    print(f"trained {loss} model for {len(curve)} epochs; final loss {curve[-1]:.6g}")
    return 0


def cmd_audit(args) -> int:
    path = args.records or args.config
    if not path:
        raise SystemExit("audit-bound needs a records CSV")
    flagged = bench.verify_bound(report.read_records_csv(path))
    out = _out_dir(args)
    (out / "bound_audit.json").write_text(json.dumps(flagged, indent=2) + "\n")
    print(f"{len(flagged)} records violate the bound")
    return 1 if flagged else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kite", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="JSON config file")
        sp.add_argument("--seed", type=int, help="seed override")
        sp.add_argument("--out", help="output directory (default: current)")
        sp.add_argument("--workers", type=int, default=None, help="parallel runs")
        sp.add_argument("--time-budget", type=float, default=None, help="seconds per plan")

    common(sub.add_parser("plan", help="plan one problem"), True)
    common(sub.add_parser("bench", help="run an experiment spec"), True)
    sp = sub.add_parser("train", help="train a transition model from a dataset CSV")
    common(sp)
    sp.add_argument("--data", help="dataset CSV")
    sp = sub.add_parser("gen-data", help="generate a synthetic pusher dataset")
    common(sp)
    sp.add_argument("--n", type=int, help="number of samples")
    sp = sub.add_parser("audit-bound", help="check records against the probability bound")
    common(sp)
    sp.add_argument("records", nargs="?", help="records CSV")
    return p


COMMANDS = {"plan": cmd_plan, "bench": cmd_bench, "train": cmd_train, "gen-data": cmd_gen_data,
            "audit-bound": cmd_audit}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    if args.workers is not None and args.workers < 1:
        raise SystemExit("--workers must be positive")
    if args.time_budget is not None and not (args.time_budget >= 0 and math.isfinite(args.time_budget)):
        raise SystemExit("--time-budget must be a non-negative number")
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
