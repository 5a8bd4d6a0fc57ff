"""Command-line interface: register, evaluate, synth, stage, report.

Exit codes: 0 success, 2 configuration error, 3 stage failure,
4 evaluation undefined (constant image).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..correspondences import CorrespondenceSet
from ..imaging import ImageError, load_image, save_image
from ..registration import WMTransform
from ..resampling import source_coordinates, valid_mask
from .config import ENV_OUTPUT, ConfigError, RunConfig
from .metrics import EvaluationUndefined, nccc, rmse
from .pipeline import STAGE_FUNCS, StageError, run_pipeline, run_stages
from .synth import ParametricWarp, generate_synthetic_pair, synthetic_scene

EXIT_OK, EXIT_CONFIG, EXIT_STAGE, EXIT_UNDEFINED = 0, 2, 3, 4

log = logging.getLogger("careg")


def _run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "-c", help="JSON run configuration")
    p.add_argument("--master", help="master (reference) image")
    p.add_argument("--slave", help="slave image to align")
    p.add_argument("--truth", help="ground-truth correspondences CSV (xs,ys,xm,ym,score)")
    p.add_argument("--output-dir", "-o", help=f"output directory (env {ENV_OUTPUT} also accepted)")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (default: config value, else 0)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. --set segmentation.beta=0.5 (repeatable)")


def build_config(args) -> RunConfig:
    over = list(args.overrides)
    for key in ("master", "slave", "truth", "output_dir", "seed"):
        val = getattr(args, key)
        if val is not None:
            over.append(([key], val))
    if args.config:
        return RunConfig.load(args.config, over)
    return RunConfig.from_dict({}, over)


def cmd_register(args) -> int:
    cfg = build_config(args)
    report = run_pipeline(cfg)
    sys.stdout.write(report.summary())
    print(f"artifacts in {cfg.output_dir}")
    return EXIT_OK


def cmd_stage(args) -> int:
    cfg = build_config(args)
    run = run_stages(cfg, until=args.name)
    for k, v in run.timings.items():
        print(f"{k:<13s} {v:8.3f} s")
    print(json.dumps(run.details, indent=2, sort_keys=True, default=str))
    print(f"artifacts in {cfg.output_dir}")
    return EXIT_OK


def cmd_synth(args) -> int:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    warp = ParametricWarp(tx=args.tx, ty=args.ty, rotation=args.rotation, scale=args.scale,
                          bump_amplitude=args.bump_amplitude, bump_sigma=args.bump_sigma,
                          bump_angle=args.bump_angle)
    try:
        pair = generate_synthetic_pair(synthetic_scene(args.size, args.scene_seed), warp,
                                       args.noise, rng_seed=args.seed)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    save_image(pair.master, out / "master.png", 16)
    save_image(np.clip(pair.slave, 0.0, 1.0), out / "slave.png", 16)
    pair.truth.to_csv(out / "truth.csv")
    meta = {"warp": {k: getattr(pair.warp, k) for k in pair.warp.__dataclass_fields__},
            "noise_sigma": args.noise, "seed": args.seed, "overlap": pair.overlap}
    (out / "warp.json").write_text(json.dumps(meta, indent=2) + "\n")
    cfg = {"seed": args.seed, "master": "master.png", "slave": "slave.png", "truth": "truth.csv",
           "output_dir": str(out / "run")}
    (out / "config.json").write_text(json.dumps(cfg, indent=2) + "\n")
    print(f"wrote master.png, slave.png, truth.csv ({len(pair.truth)} points), config.json to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    try:
        master = load_image(args.master)
        reg = load_image(args.registered)
    except (OSError, ImageError) as e:
        raise ConfigError(str(e)) from None
    result = {}
    mask = None
    t = None
    if args.transform:
        t = WMTransform.load(args.transform)
        if args.slave_shape:
            mask = valid_mask(source_coordinates(t, master.shape), tuple(args.slave_shape))
    r = nccc(master, reg, mask)
    result["nccc"] = r.paper
    result["nccc_raw"] = r.raw
    if args.truth:
        if t is None:
            raise ConfigError("--truth needs --transform")
        truth = CorrespondenceSet.from_csv(args.truth, source="truth")
        result["rmse"] = rmse(t.apply(truth.master), truth.slave)
    print(json.dumps(result, indent=2))
    return EXIT_OK


def cmd_report(args) -> int:
    d = Path(args.directory)
    rep = d / "report.json"
    if not rep.is_file():
        raise ConfigError(f"no report.json in {d}")
    data = json.loads(rep.read_text())
    timing = json.loads((d / "timing.json").read_text()) if (d / "timing.json").is_file() else {}
    if args.json:
        print(json.dumps({**data, **timing}, indent=2, sort_keys=True))
        return EXIT_OK
    for key in ("nccc", "nccc_raw", "nccc_before", "rmse", "matches_before_refinement",
                "matches_after_refinement", "control_points"):
        print(f"{key:<26s} {data.get(key)}")
    if timing:
        print(f"{'wall_time':<26s} {timing['wall_time']:.2f} s ({timing['time_category']})")
        for k, v in timing.get("stage_timings", {}).items():
            print(f"  {k:<13s} {v:8.3f} s")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="careg", description="Feature-based image registration toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("register", help="run the full pipeline and write the evaluation report")
    _run_options(r)
    r.set_defaults(func=cmd_register)

    s = sub.add_parser("stage", help="run the pipeline up to one stage (debugging)")
    s.add_argument("name", choices=list(STAGE_FUNCS))
    _run_options(s)
    s.set_defaults(func=cmd_stage)

    y = sub.add_parser("synth", help="generate a synthetic master/slave pair with ground truth")
    y.add_argument("--output-dir", "-o", required=True)
    y.add_argument("--size", type=int, default=512)
    y.add_argument("--scene-seed", type=int, default=0)
    y.add_argument("--seed", type=int, default=0, help="noise RNG seed")
    y.add_argument("--tx", type=float, default=0.0)
    y.add_argument("--ty", type=float, default=0.0)
    y.add_argument("--rotation", type=float, default=0.0, help="degrees")
    y.add_argument("--scale", type=float, default=1.0)
    y.add_argument("--bump-amplitude", type=float, default=0.0)
    y.add_argument("--bump-sigma", type=float, default=64.0)
    y.add_argument("--bump-angle", type=float, default=0.0)
    y.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sigma")
    y.set_defaults(func=cmd_synth)

    e = sub.add_parser("evaluate", help="NCCC (and RMSE) of a registered image against the master")
    e.add_argument("--master", required=True)
    e.add_argument("--registered", required=True)
    e.add_argument("--transform", help="transform JSON, needed for RMSE and the overlap mask")
    e.add_argument("--truth", help="ground-truth correspondences CSV")
    e.add_argument("--slave-shape", type=int, nargs=2, metavar=("ROWS", "COLS"),
                   help="restrict NCCC to pixels that map inside a slave frame of this size")
    e.set_defaults(func=cmd_evaluate)

    o = sub.add_parser("report", help="print the report written by 'register'")
    o.add_argument("directory")
    o.add_argument("--json", action="store_true")
    o.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_STAGE
    except EvaluationUndefined as e:
        print(f"evaluation undefined: {e}", file=sys.stderr)
        return EXIT_UNDEFINED


if __name__ == "__main__":
    sys.exit(main())
