"""Command-line entry point.

Every subcommand writes only under ``--out`` and leaves a
``run_manifest.json`` there. Exit codes: 0 success, 1 configuration or
usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import __version__

log = logging.getLogger("maplessplan")


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- run configuration -----------------------------------------------------------------------

@dataclass
class RunConfig:
    """Resolved inputs of one invocation; ``--config`` YAML keys mirror these fields."""
    out: Path
    seed: int = 0
    workers: int = 1
    scenarios: Path | None = None
    bank: Path | None = None
    weights: Path | None = None
    resolution_m: float = 0.5
    grid_length_m: float = 100.0
    grid_width_m: float = 50.0
    grid_behind_m: float = 25.0
    route_mode: str = "command"
    noise: dict = field(default_factory=dict)
    plot: bool = True

    def check_paths(self) -> None:
        for name in ("scenarios", "bank", "weights"):
            p = getattr(self, name)
            if p is not None and not Path(p).exists():
                raise ConfigError(f"{name} path does not exist: {p}")
        if self.workers < 1:
            raise ConfigError("--workers must be >= 1")

    def to_json(self) -> dict:
        d = asdict(self)
        return {k: (str(v) if isinstance(v, Path) else v) for k, v in d.items()}


_CONFIG_KEYS = {f for f in RunConfig.__dataclass_fields__} - {"out"}
_PATH_KEYS = ("scenarios", "bank", "weights")


def _run_config(args) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a mapping")
        unknown = set(data) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        values.update(data)
    for key in _CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    noise = dict(values.get("noise") or {})
    for flag, key in (("noise_dropout", "dropout_rate"), ("noise_blur", "blur_radius_cells"),
                      ("noise_sigma", "sigma_inflation")):
        if getattr(args, flag, None) is not None:
            noise[key] = getattr(args, flag)
    values["noise"] = noise
    for key in _PATH_KEYS:
        if values.get(key) is not None:
            values[key] = Path(values[key])
    cfg = RunConfig(out=Path(args.out), **values)
    cfg.check_paths()
    return cfg


def _set_threads(workers: int) -> None:
    import numba

    numba.set_num_threads(max(1, min(workers, numba.config.NUMBA_NUM_THREADS)))


def _weights(cfg: RunConfig):
    from .costs import CostConfig, default_config, load_config

    try:
        w, safety = load_config(cfg.weights) if cfg.weights else default_config()
    except (ValueError, TypeError, yaml.YAMLError) as e:
        raise ConfigError(f"bad weights file {cfg.weights}: {e}") from None
    return w, CostConfig(safety=safety)


def _bank(cfg: RunConfig):
    from .trajectory import TrajectoryBank, default_bank

    if cfg.bank is None:
        log.info("building the default trajectory bank")
        return default_bank()
    try:
        return TrajectoryBank.load(cfg.bank)
    except (ValueError, KeyError, OSError) as e:
        raise ConfigError(f"bad bank file {cfg.bank}: {e}") from None


def _sim_options(cfg: RunConfig, cost_config):
    from .online_map import NoiseModel
    from .sim import SimOptions

    try:
        noise = NoiseModel(**cfg.noise)
        return SimOptions(cfg.resolution_m, cfg.grid_length_m, cfg.grid_width_m, cfg.grid_behind_m,
                          route_mode=cfg.route_mode, noise=noise, cost_config=cost_config)
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from None


def _scenario(path):
    from .sim import ScenarioError, load_scenario

    if not Path(path).exists():
        raise ConfigError(f"scenario file not found: {path}")
    try:
        return load_scenario(path)
    except (ScenarioError, yaml.YAMLError) as e:
        raise ConfigError(f"{path}: {e}") from None


def _scenarios(cfg: RunConfig, tags: Sequence[str] = ()):
    from .sim import ScenarioError, load_scenarios, shipped_scenario_dir

    d = cfg.scenarios or shipped_scenario_dir()
    try:
        scs = load_scenarios(d)
    except (ScenarioError, yaml.YAMLError) as e:
        raise ConfigError(str(e)) from None
    if tags:
        scs = [s for s in scs if set(tags) & set(s.tags)]
    if not scs:
        raise ConfigError(f"no scenarios selected from {d}")
    return scs


def _write(out: Path, name: str, text: str, outputs: list) -> Path:
    p = out / name
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)
    outputs.append(str(p.relative_to(out)))
    return p


def _tsv(rows: Sequence[dict]) -> str:
    from .sim import _fmt

    head = list(rows[0])
    return "\n".join(["\t".join(head)] + ["\t".join(_fmt(r[h]) for h in head) for r in rows]) + "\n"


# -- subcommands -----------------------------------------------------------------------------

def cmd_bank_build(args, cfg: RunConfig, outputs: list) -> None:
    from .trajectory import build_bank, default_families, generate_synthetic_demos

    if args.demos < 1 or args.clusters < 1:
        raise ConfigError("--demos and --clusters must be positive")
    demos = generate_synthetic_demos(default_families(), args.demos, seed=cfg.seed)
    bank = build_bank(demos, args.clusters, seed=cfg.seed)
    bank.save(cfg.out / "bank.npz")
    outputs.append("bank.npz")
    _bank_report(bank, cfg, outputs)


def cmd_bank_inspect(args, cfg: RunConfig, outputs: list) -> None:
    if cfg.bank is None:
        raise ConfigError("--bank is required")
    _bank_report(_bank(cfg), cfg, outputs)


def _bank_report(bank, cfg: RunConfig, outputs: list) -> None:
    rows = [{"v_bin": k[0], "kappa_bin": k[1], "a_bin": k[2], "prototypes": len(p)}
            for k, p in sorted(bank.bins.items())]
    _write(cfg.out, "bank_bins.tsv", _tsv(rows), outputs)
    counts = np.array([r["prototypes"] for r in rows])
    summary = {"bins": len(rows), "prototypes": int(counts.sum()), "min_per_bin": int(counts.min()),
               "median_per_bin": float(np.median(counts)), "max_per_bin": int(counts.max()),
               "dt": bank.dt, "steps": bank.steps}
    _write(cfg.out, "bank_summary.tsv", "".join(f"{k}\t{v}\n" for k, v in summary.items()), outputs)
    if cfg.plot:
        from .plotting import bank_fans, plot_bank

        fans = [{"v_bin": k[0], "kappa_bin": k[1], "a_bin": k[2], "prototype": j, "step": t,
                 "x": float(s[t, 0]), "y": float(s[t, 1])}
                for k, states in bank_fans(bank).items() for j, s in enumerate(states)
                for t in range(len(s))]
        _write(cfg.out, "bank_fans.tsv", _tsv(fans), outputs)
        plot_bank(bank, cfg.out / "bank.png")
        outputs.append("bank.png")


def cmd_plan_once(args, cfg: RunConfig, outputs: list) -> None:
    from .costs import SUBCOSTS
    from .planner import plan
    from .sim import build_scene, initial_world, planned_route
    from .trajectory import SdvState

    sc = _scenario(args.scenario)
    weights, cost_config = _weights(cfg)
    opts = _sim_options(cfg, cost_config)
    bank = _bank(cfg)
    w = initial_world(sc)
    scene, _ = build_scene(sc, w, planned_route(sc), opts, cfg.seed)
    t0 = time.perf_counter()
    res = plan(SdvState.from_array(w.sdv), scene, bank, weights, cost_config, opts.limits)
    elapsed = time.perf_counter() - t0
    rows = []
    for i in np.argsort(res.totals, kind="stable"):
        r = {"candidate": int(i), "total": float(res.totals[i])}
        r.update(zip(SUBCOSTS, map(float, res.breakdowns.values[i])))
        rows.append(r)
    _write(cfg.out, "plan_candidates.tsv", _tsv(rows), outputs)
    cols = ("x", "y", "theta", "v", "a", "kappa", "kappa_dot")
    states = [dict(step=k, **dict(zip(cols, map(float, s)))) for k, s in enumerate(res.best.states)]
    _write(cfg.out, "plan_best.tsv", _tsv(states), outputs)
    fan = [{"candidate": i, "step": t, "x": float(s[t, 0]), "y": float(s[t, 1]),
            "total": float(res.totals[i])} for i, s in enumerate(res.candidates) for t in range(len(s))]
    _write(cfg.out, "plan_fan.tsv", _tsv(fan), outputs)
    summary = {"scenario": sc.name, "candidates": res.candidate_count, "best_index": res.best_index,
               "best_cost": res.best_cost, "plan_seconds": elapsed}
    _write(cfg.out, "plan_summary.tsv", "".join(f"{k}\t{v}\n" for k, v in summary.items()), outputs)
    if cfg.plot:
        from .plotting import plot_scene

        plot_scene(scene, cfg.out / "plan.png", res.candidates, res.best.states, res.totals,
                   title=f"{sc.name}: {res.candidate_count} candidates")
        outputs.append("plan.png")


def cmd_occflow_rollout(args, cfg: RunConfig, outputs: list) -> None:
    from .grid import BevGrid, GridSpec, load_grids
    from .occupancy_flow import CLASSES, load_motion, predict_occupancy, roll_out, save_occupancy

    if args.scenario:
        from .sim import SimOptions, actor_tracks, initial_world

        sc = _scenario(args.scenario)
        w = initial_world(sc)
        spec = GridSpec.ego(tuple(w.sdv[:3]), cfg.resolution_m, cfg.grid_length_m, cfg.grid_width_m,
                            cfg.grid_behind_m)
        opts = SimOptions()
        fields, _ = predict_occupancy(actor_tracks(sc, w, idm=opts.idm, limits=opts.limits), spec,
                                      args.steps) if sc.actors else ({}, {})
    elif args.initial and args.motion:
        for p in (args.initial, args.motion):
            if not Path(p).exists():
                raise ConfigError(f"file not found: {p}")
        if args.cls not in CLASSES:
            raise ConfigError(f"--class must be one of {CLASSES}")
        try:
            spec, arr, _ = load_grids(args.initial)
            motion = load_motion(args.motion, args.cls)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        init = BevGrid(spec, arr[0].astype(float))
        fields = {args.cls: roll_out(init, [replace(motion, t=t) for t in range(args.steps)],
                                     cls=args.cls)}
    else:
        raise ConfigError("give --scenario, or both --initial and --motion")
    rows = []
    for cls, f in fields.items():
        save_occupancy(cfg.out / f"occupancy_{cls}.bevg", f)
        outputs.append(f"occupancy_{cls}.bevg")
        for t, g in enumerate(f.grids):
            rows.append({"class": cls, "t": t, "mass": float(g.cells.sum()),
                         "max": float(g.cells.max())})
    if not rows:
        rows = [{"class": "none", "t": 0, "mass": 0.0, "max": 0.0}]
    _write(cfg.out, "occupancy_mass.tsv", _tsv(rows), outputs)
    if cfg.plot and fields:
        from .plotting import plot_occupancy

        plot_occupancy(fields, cfg.out / "occupancy.png",
                       steps=(0, args.steps // 2, args.steps) if args.steps else (0,))
        outputs.append("occupancy.png")


def cmd_learn(args, cfg: RunConfig, outputs: list) -> None:
    from .costs import save_config
    from .learning import (FitOptions, featurize, fit, replan_collides, synthetic_obstacle_dataset,
                           training_curve_tsv)

    if args.examples < 1 or args.steps < 0 or not args.lr > 0:
        raise ConfigError("--examples >= 1, --steps >= 0 and --lr > 0 are required")
    ds = synthetic_obstacle_dataset(args.examples, seed=cfg.seed)
    feats = [featurize(e) for e in ds]
    res = fit(feats, FitOptions(lr=args.lr, steps=args.steps))
    save_config(cfg.out / "learned_weights.yaml", res.weights)
    outputs.append("learned_weights.yaml")
    _write(cfg.out, "training_curve.tsv", training_curve_tsv(res.history), outputs)
    collisions = sum(replan_collides(e, f, res.weights) for e, f in zip(ds, feats))
    summary = {"examples": len(ds), "initial_loss": res.initial_loss, "best_loss": res.best_loss,
               "loss_ratio": res.best_loss / res.initial_loss if res.initial_loss else 0.0,
               "occupancy_weight": res.weights.occupancy, "replan_collisions": collisions}
    _write(cfg.out, "learn_summary.tsv", "".join(f"{k}\t{v}\n" for k, v in summary.items()), outputs)
    if cfg.plot:
        from .plotting import plot_training_curve

        plot_training_curve(res.history, cfg.out / "training_curve.png")
        outputs.append("training_curve.png")


def cmd_sim_run(args, cfg: RunConfig, outputs: list) -> None:
    from .sim import aggregate, metrics_tsv, run_batch, summary_tsv, trace_tsv

    scs = _scenarios(cfg, args.tags or ())
    weights, cost_config = _weights(cfg)
    opts = _sim_options(cfg, cost_config)
    bank = _bank(cfg)
    eps = run_batch(scs, bank, weights, opts, cfg.seed, cfg.workers)
    _write(cfg.out, "metrics.tsv", metrics_tsv(eps), outputs)
    _write(cfg.out, "summary.tsv", summary_tsv(aggregate(eps)), outputs)
    for ep in eps:
        _write(cfg.out, f"traces/{ep.scenario}.tsv", trace_tsv(ep), outputs)
    if cfg.plot:
        from .plotting import plot_episode

        (cfg.out / "figures").mkdir(exist_ok=True)
        for sc, ep in zip(scs, eps):
            plot_episode(sc, ep, cfg.out / "figures" / f"{sc.name}.png")
            outputs.append(f"figures/{sc.name}.png")


def cmd_ablate(args, cfg: RunConfig, outputs: list) -> None:
    from .sim import ABLATIONS, aggregate, apply_ablation, metrics_tsv, run_batch

    names = ["full"] + [d for d in (args.drop or sorted(set(ABLATIONS) - {"full"})) if d != "full"]
    bad = [d for d in names if d not in ABLATIONS]
    if bad:
        raise ConfigError(f"unknown ablation(s) {bad}; choose from {sorted(ABLATIONS)}")
    scs = _scenarios(cfg, args.tags or ())
    weights, cost_config = _weights(cfg)
    base = _sim_options(cfg, cost_config)
    bank = _bank(cfg)
    rows = []
    for name in names:
        w, opts = apply_ablation(name, weights, base)
        eps = run_batch(scs, bank, w, opts, cfg.seed, cfg.workers)
        _write(cfg.out, f"ablations/{name}.tsv", metrics_tsv(eps), outputs)
        a = aggregate(eps)
        rows.append({"ablation": name, "episodes": a["episodes"], "success_rate": a["success_rate"],
                     "off_route_pct": a["off_route_pct"], "events_all": a["events_all"],
                     "meters_per_event": a["meters_per_event"], "mean_l2": a["mean_l2"]})
        log.info("%s: off-route %.1f%%", name, a["off_route_pct"])
    _write(cfg.out, "ablation.tsv", _tsv(rows), outputs)
    if cfg.plot:
        from .plotting import plot_ablation

        plot_ablation(rows, cfg.out / "ablation.png")
        outputs.append("ablation.png")


# -- parser ----------------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, seed_required: bool = False) -> None:
    p.add_argument("--out", required=True, help="output directory (created if missing)")
    p.add_argument("--seed", type=int, required=seed_required, default=None if seed_required else 0)
    p.add_argument("--workers", type=int, default=None, help="parallelism degree")
    p.add_argument("--config", help="YAML file with RunConfig keys; flags override it")
    p.add_argument("--no-plot", dest="plot", action="store_false", default=None)
    p.add_argument("-v", "--verbose", action="store_true")


def _sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--weights", help="weights YAML (default: shipped hand-tuned weights)")
    p.add_argument("--bank", help="bank .npz (default: build the default bank)")
    p.add_argument("--resolution", dest="resolution_m", type=float)
    p.add_argument("--route-mode", dest="route_mode", choices=("command", "keep_lane", "uniform"))
    p.add_argument("--noise-dropout", type=float, help="map cell dropout rate")
    p.add_argument("--noise-blur", type=int, help="map blur radius in cells")
    p.add_argument("--noise-sigma", type=float, help="lane distance scale inflation")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="maplessplan", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="group", required=True, parser_class=_Parser)

    bank = sub.add_parser("bank", help="trajectory bank tools")
    bsub = bank.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = bsub.add_parser("build", help="cluster synthetic demonstrations into a bank")
    _common(p)
    p.add_argument("--demos", type=int, default=40000)
    p.add_argument("--clusters", type=int, default=40)
    p.set_defaults(func=cmd_bank_build)
    p = bsub.add_parser("inspect", help="summarize a bank file")
    _common(p)
    p.add_argument("--bank")
    p.add_argument("--plot", dest="plot", action="store_true")
    p.set_defaults(func=cmd_bank_inspect, plot=False)

    plan = sub.add_parser("plan", help="single-shot planning")
    psub = plan.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = psub.add_parser("once", help="plan once from a scenario's initial state")
    _common(p)
    _sim_flags(p)
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_plan_once)

    occ = sub.add_parser("occflow", help="occupancy-flow tools")
    osub = occ.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = osub.add_parser("rollout", help="roll occupancy forward along motion fields")
    _common(p)
    p.add_argument("--scenario")
    p.add_argument("--initial", help="grid file whose first channel is the initial occupancy")
    p.add_argument("--motion", help="motion-field grid file, applied at every step")
    p.add_argument("--class", dest="cls", default="vehicle")
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--resolution", dest="resolution_m", type=float)
    p.set_defaults(func=cmd_occflow_rollout)

    p = sub.add_parser("learn", help="max-margin weight learning on the synthetic obstacle set")
    _common(p, seed_required=True)
    p.add_argument("--examples", type=int, default=20)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.05)
    p.set_defaults(func=cmd_learn)

    sim = sub.add_parser("sim", help="closed-loop simulation")
    ssub = sim.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = ssub.add_parser("run", help="run a scenario batch")
    _common(p, seed_required=True)
    _sim_flags(p)
    p.add_argument("--scenarios", help="directory of scenario YAML files (default: shipped set)")
    p.add_argument("--tags", nargs="*", help="keep scenarios carrying any of these tags")
    p.set_defaults(func=cmd_sim_run)

    p = sub.add_parser("ablate", help="rerun a batch with subcosts or the route input removed")
    _common(p)
    _sim_flags(p)
    p.add_argument("--scenarios")
    p.add_argument("--tags", nargs="*")
    p.add_argument("--drop", action="append", help="ablation preset (repeatable; default: all)")
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    outputs: list[str] = []
    started = time.time()
    try:
        cfg = _run_config(args)
        cfg.out.mkdir(parents=True, exist_ok=True)
        _set_threads(cfg.workers)
        args.func(args, cfg, outputs)
    except ConfigError as e:
        print(f"maplessplan: configuration error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - any failure past config is a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"maplessplan: runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    manifest = {"command": f"{args.group} {getattr(args, 'action', '') or ''}".strip(),
                "argv": argv, "version": __version__, "config": cfg.to_json(),
                "outputs": sorted(outputs), "elapsed_s": round(time.time() - started, 3)}
    (cfg.out / "run_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
