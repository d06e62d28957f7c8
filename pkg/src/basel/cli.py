"""Command-line interface.

Subcommands::

    basel simulate  --preset ci --seed 0 --out scene.json
    basel sweep     --preset ci --repeats 20 --out results.csv
    basel calibrate --preset ci --k-list 5,10,15,20,25,30 --out model.json
    basel pipeline  --model model.json --mode gg --out trace.csv
    basel parse     scene.json

Exit codes: 0 success, 2 configuration or parse error, 3 when more than
10% of sweep trials fail.  ``--config FILE`` supplies JSON defaults for
any flag of the subcommand (explicit flags win); the optional "scene"
and "solver" objects inside it override scene-generation and solver
fields.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .bench import (
    DEFAULT_FRACTIONS,
    DEFAULT_K_LIST,
    BenchConfig,
    run_calibrate,
    run_pipeline,
    run_sweep,
    write_trace_csv,
)
from .budget import BudgetParams, TimeModel, read_calibration_csv
from .errors import BaselError, ParseError
from .formats import (
    parse_bal,
    parse_g2o_subset,
    parse_problem_json,
    parse_scene_json,
    problem_to_dict,
    write_bal,
    write_problem_json,
    write_results_csv,
    write_scene_json,
)
from .select import EPSILON_DEFAULT
from .simulate import SceneConfig, SyntheticScene, desk_config, generate_scene, paper_config
from .solver import SolveConfig


def _csv_ints(text):
    return tuple(int(x) for x in text.split(",") if x.strip())


def _csv_floats(text):
    return tuple(float(x) for x in text.split(",") if x.strip())


def _csv_strs(text):
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _build_parser():
    p = argparse.ArgumentParser(prog="basel",
                                description="budget-aware subgraph selection "
                                            "for local bundle adjustment")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--preset", choices=("ci", "paper"), default=None)
        sp.add_argument("--config", default=None,
                        help="JSON file with flag defaults")
        sp.add_argument("--out", default=None)

    sp = sub.add_parser("simulate", help="generate a synthetic scene file")
    common(sp)

    sp = sub.add_parser("sweep", help="method/fraction selection study")
    common(sp)
    sp.add_argument("--methods", type=_csv_strs, default=None,
                    help="comma list: gg,greedy,covis,random,full,oracle")
    sp.add_argument("--fractions", type=_csv_floats, default=None)
    sp.add_argument("--repeats", type=int, default=None)
    sp.add_argument("--epsilon", type=float, default=None)
    sp.add_argument("--workers", type=int, default=None)

    sp = sub.add_parser("calibrate", help="fit the solve-time model")
    common(sp)
    sp.add_argument("--k-list", type=_csv_ints, default=None)
    sp.add_argument("--repeats", type=int, default=None)
    sp.add_argument("--epsilon", type=float, default=None)

    sp = sub.add_parser("pipeline", help="budget-aware trajectory replay")
    common(sp)
    sp.add_argument("--scene", default=None, help="scene JSON (default: generate)")
    sp.add_argument("--model", default=None, help="time-model JSON from calibrate")
    sp.add_argument("--mode", choices=("gg", "full"), default=None)
    sp.add_argument("--epsilon", type=float, default=None)
    sp.add_argument("--t-p", type=float, default=None, dest="t_p")
    sp.add_argument("--t-max", type=float, default=None, dest="t_max")
    sp.add_argument("--n-min", type=int, default=None, dest="n_min")

    sp = sub.add_parser("parse", help="parse a problem file and check round-trip")
    sp.add_argument("path")
    return p


def _load_config(args):
    if getattr(args, "config", None) is None:
        return {}
    with open(args.config) as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise ValueError("--config must contain a JSON object")
    return data


def _get(args, config, key, default):
    """Flag value, falling back to the config file, then the default."""
    v = getattr(args, key, None)
    if v is not None:
        return v
    return config.get(key, default)


def _scene_config(args, config) -> SceneConfig:
    preset = _get(args, config, "preset", "ci")
    seed = _get(args, config, "seed", 0)
    make = paper_config if preset == "paper" else desk_config
    return make(seed=seed, **config.get("scene", {}))


def _solver_config(config) -> SolveConfig:
    return SolveConfig(**config.get("solver", {}))


def _write(path, text):
    Path(path).write_text(text)
    digest = hashlib.sha256(text.encode()).hexdigest()
    print(f"wrote {path} ({len(text)} bytes, sha256 {digest[:16]})")


# -------------------------------------------------------------------
# subcommands
# -------------------------------------------------------------------

def cmd_simulate(args) -> int:
    config = _load_config(args)
    scene_cfg = _scene_config(args, config)
    scene = generate_scene(scene_cfg)
    g = scene.graph
    per_cam = [g.observation_count(c.id) for c in g.cameras]
    views = [len(g.cameras_seeing(p.id)) for p in g.points]
    print(f"cameras: {len(g.cameras)} ({sum(c.fixed for c in g.cameras)} fixed)")
    print(f"points: {len(g.points)}")
    print(f"observations: {len(g.observations)}")
    print(f"min points per camera: {min(per_cam)} "
          f"(required >= {scene_cfg.min_points_per_camera})")
    print(f"min views per point: {min(views)} "
          f"(required >= {scene_cfg.min_views})")
    text = write_scene_json(g, scene.gt, scene.initial,
                            dataclasses.asdict(scene_cfg))
    _write(_get(args, config, "out", "scene.json"), text)
    return 0


def cmd_sweep(args) -> int:
    config = _load_config(args)
    cfg = BenchConfig(
        preset=_get(args, config, "preset", "ci"),
        methods=tuple(_get(args, config, "methods",
                           ("gg", "covis", "random", "full"))),
        fractions=tuple(_get(args, config, "fractions", DEFAULT_FRACTIONS)),
        repeats=_get(args, config, "repeats", None),
        epsilon=_get(args, config, "epsilon", EPSILON_DEFAULT),
        seed=_get(args, config, "seed", 0),
        workers=_get(args, config, "workers", 1),
        solver=_solver_config(config),
        scene_overrides=config.get("scene") or None,
    )
    records, failures, total = run_sweep(cfg)
    _write(_get(args, config, "out", "results.csv"), write_results_csv(records))
    print(f"trials: {total}, rows: {len(records)}, failures: {failures}")
    if failures > 0.10 * total:
        print(f"more than 10% of trials failed ({failures}/{total})",
              file=sys.stderr)
        return 3
    return 0


def cmd_calibrate(args) -> int:
    config = _load_config(args)
    cfg = BenchConfig(
        preset=_get(args, config, "preset", "ci"),
        epsilon=_get(args, config, "epsilon", EPSILON_DEFAULT),
        seed=_get(args, config, "seed", 0),
        solver=_solver_config(config),
        scene_overrides=config.get("scene") or None,
    )
    k_list = tuple(_get(args, config, "k_list", DEFAULT_K_LIST))
    repeats = _get(args, config, "repeats", 3)
    model, samples_text = run_calibrate(cfg, k_list=k_list, repeats=repeats)
    out = _get(args, config, "out", "model.json")
    _write(out, json.dumps(model.to_dict(), indent=1) + "\n")
    samples_path = str(Path(out).with_name(Path(out).stem + "_samples.csv"))
    _write(samples_path, samples_text)
    lo, hi = model.k_range
    print(f"valid k range: [{lo}, {hi}], residual rms "
          f"{model.residual_rms * 1000:.3f} ms, "
          f"monotone fallback: {model.monotone_fallback}")
    for k in sorted({lo, (lo + hi) // 2, hi}):
        print(f"  tau({k}) = {model.tau(k) * 1000:.1f} ms")
    return 0


def _load_scene(args, config) -> SyntheticScene:
    path = getattr(args, "scene", None)
    if path is None:
        # in the config file "scene" may instead be the overrides object
        cfg_val = config.get("scene")
        path = cfg_val if isinstance(cfg_val, str) else None
    if path is None:
        return generate_scene(_scene_config(args, config))
    graph, gt, initial, cfg_dict = parse_scene_json(Path(path).read_text())
    known = {f.name for f in dataclasses.fields(SceneConfig)}
    kept = {k: v for k, v in (cfg_dict or {}).items() if k in known}
    if "box_half" in kept:
        kept["box_half"] = tuple(kept["box_half"])
    return SyntheticScene(graph, gt, initial, SceneConfig(**kept))


def _load_model(args, config) -> TimeModel:
    path = _get(args, config, "model", None)
    if path is None:
        raise ValueError("pipeline mode 'gg' needs --model (run calibrate first)")
    data = json.loads(Path(path).read_text())
    samples = []
    sibling = Path(path).with_name(Path(path).stem + "_samples.csv")
    if sibling.exists():
        samples = read_calibration_csv(sibling.read_text())
    return TimeModel.from_dict(data, samples=samples)


def cmd_pipeline(args) -> int:
    config = _load_config(args)
    scene = _load_scene(args, config)
    mode = _get(args, config, "mode", "gg")
    model = _load_model(args, config) if mode == "gg" else None
    params = BudgetParams(
        t_p=_get(args, config, "t_p", 0.5),
        t_max=_get(args, config, "t_max", 0.8),
        n_min=_get(args, config, "n_min", 240),
    )
    rows, _ = run_pipeline(
        scene, model, params=params, solve_cfg=_solver_config(config),
        mode=mode, seed=_get(args, config, "seed", 0),
        epsilon=_get(args, config, "epsilon", EPSILON_DEFAULT))
    _write(_get(args, config, "out", "trace.csv"), write_trace_csv(rows))
    triggered = [r for r in rows if r["triggered"]]
    print(f"steps: {len(rows)}, triggered: {len(triggered)}")
    if triggered:
        within = sum(r["solve_ms"] <= 1.5 * r["t_b"] * 1000.0 for r in triggered)
        print(f"solve within 1.5x budget: {within}/{len(triggered)}")
    return 0


def cmd_parse(args) -> int:
    path = Path(args.path)
    text = path.read_text()
    if path.suffix == ".json":
        data = json.loads(text)
        if "problem" in data:
            graph, gt, initial, cfg = parse_scene_json(text)
            once = write_scene_json(graph, gt, initial, cfg)
            again = write_scene_json(*parse_scene_json(once))
        else:
            graph, est = parse_problem_json(text)
            gt = initial = est
            once = write_problem_json(graph, est)
            again = write_problem_json(*parse_problem_json(once))
        ok = once == again
        print(f"{path.name}: {graph!r}")
        print(f"round-trip: {'ok' if ok else 'MISMATCH'}")
        return 0 if ok else 2
    if path.suffix == ".g2o":
        graph, est, report = parse_g2o_subset(text)
        print(f"{path.name}: {graph!r}")
        print(f"skipped tags: {report.skipped_tags}, "
              f"dropped points: {report.dropped_points}, "
              f"renormalized quats: {report.renormalized_quats}")
        return 0
    prob = parse_bal(text)
    back = parse_bal(write_bal(prob.graph, prob.estimates, prob.distortion))
    a = problem_to_dict(prob.graph, prob.estimates)
    b = problem_to_dict(back.graph, back.estimates)
    dev = 0.0
    for pa, pb in zip(a["points"], b["points"]):
        dev = max(dev, float(np.max(np.abs(np.array(pa["xyz"]) - np.array(pb["xyz"])))))
    for ca, cb in zip(a["cameras"], b["cameras"]):
        dev = max(dev, float(np.max(np.abs(np.array(ca["q"]) - np.array(cb["q"])))))
        dev = max(dev, float(np.max(np.abs(np.array(ca["t"]) - np.array(cb["t"])))))
    print(f"{path.name}: {prob.graph!r}")
    print(f"round-trip max deviation: {dev:.3e}")
    return 0 if dev <= 1e-9 else 2


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    handlers = {
        "simulate": cmd_simulate,
        "sweep": cmd_sweep,
        "calibrate": cmd_calibrate,
        "pipeline": cmd_pipeline,
        "parse": cmd_parse,
    }
    try:
        return handlers[args.command](args)
    except (ParseError, BaselError, ValueError, OSError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
