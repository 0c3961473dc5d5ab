"""``strainforge`` command line.

Exit codes: 0 ok, 2 validation, 3 numeric, 4 I/O. Failures print one JSON
object ``{"error": {...}}`` on stderr naming the failing stage.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .errors import BundleIOError, StrainforgeError, ValidationError

_STAGES = ("reconstruct", "fuse", "strain", "report", "run")


def _add_run_options(p):
    p.add_argument("--bundle", help="study bundle directory or study.json")
    p.add_argument("--out", dest="out_dir", help="output directory")
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--ring-samples", type=int)
    p.add_argument("--lax-samples", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--centripetal", action="store_const", const=True, default=None)
    p.add_argument("--apex-closure", choices=("fan", "flat"))
    p.add_argument("--weighting", choices=("global", "per-point"))
    p.add_argument("--extrapolation", choices=("nearest", "project", "linear"))
    p.add_argument("--theta0", type=float, help="AHA sector origin, degrees from LV +X")
    p.add_argument("--x-hint", type=float, nargs=3, metavar=("X", "Y", "Z"),
                   help="patient-space vector defining LV +X (default: 4CH plane)")
    p.add_argument("--align-peaks", action="store_const", const=True, default=None)
    p.add_argument("--no-figures", dest="figures", action="store_const", const=False, default=None)


def build_parser():
    ap = argparse.ArgumentParser(prog="strainforge",
                                 description="Multi-view LV strain from tracked 2-D contours.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="write an analytic phantom bundle and oracle.csv")
    p.add_argument("--preset", default="contractile",
                   choices=("incompressible", "contractile", "rigid", "translate"))
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int)
    p.add_argument("--config", help="JSON config whose 'preset' object overrides Ri, Ro, h, frames")

    p = sub.add_parser("track", help="track seed points through an image sequence")
    p.add_argument("--images", required=True, help="directory of .pgm/.f32grid frames")
    p.add_argument("--seeds", required=True, help='JSON list of [row, col] or {"points": [...]}')
    p.add_argument("--config", help="JSON config supplying registration defaults")
    p.add_argument("--alpha", type=float, help="bending-energy weight (default 0.01)")
    p.add_argument("--levels", type=int, help="pyramid levels (default 2)")
    p.add_argument("--spacing", type=float, help="control point spacing, px (default 8)")
    p.add_argument("--iterations", type=int, help="max iterations per level (default 200)")
    p.add_argument("--no-smooth", dest="smooth", action="store_false")
    p.add_argument("--out", required=True)

    for name in _STAGES:
        _add_run_options(sub.add_parser(name, help=f"{name} stage" if name != "run"
                                        else "all stages in order"))

    p = sub.add_parser("cohort", help="mean and SD of global peaks over reports")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out", help="write the summary JSON here as well")
    return ap


def _config(args):
    keys = ("bundle", "out_dir", "ring_samples", "lax_samples", "layers", "centripetal",
            "apex_closure", "weighting", "extrapolation", "theta0", "x_hint", "align_peaks",
            "figures")
    overrides = {k: getattr(args, k) for k in keys}
    if args.config:
        cfg = pipeline.load_config(args.config, **overrides)
    else:
        cfg = pipeline.PipelineConfig.from_dict({}, **overrides)
    if not cfg.bundle and args.command in ("reconstruct", "fuse", "run"):
        raise ValidationError("--bundle is required", stage="config")
    return cfg


def _cmd_phantom(args):
    from .phantom import write_phantom_bundle

    overrides = {}
    if args.config:
        overrides.update(pipeline.load_config(args.config).preset)
    if args.frames is not None:
        overrides["frames"] = args.frames
    if overrides.get("frames", 10) < 2:
        raise ValidationError("phantom needs at least 2 frames", stage="phantom")
    with pipeline.stage("phantom"):
        write_phantom_bundle(args.out, args.preset, overrides=overrides)
    return {"bundle": args.out, "preset": args.preset}


def _cmd_track(args):
    from .imageio import read_sequence
    from .registration import RegistrationParams, track_sequence

    with pipeline.stage("track"):
        imgs = read_sequence(args.images)
        try:
            with open(args.seeds, encoding="utf-8") as fh:
                seeds = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"seeds file is not valid JSON: {exc}") from None
        if isinstance(seeds, dict):
            seeds = seeds.get("points")
        if not isinstance(seeds, list) or not seeds:
            raise ValidationError("seeds must be a non-empty list of [row, col]")
        cfg = pipeline.PipelineConfig.from_dict({}, alpha=args.alpha, levels=args.levels,
                                                control_spacing=args.spacing,
                                                max_iterations=args.iterations)
        if args.config:
            cfg = pipeline.load_config(args.config, alpha=args.alpha, levels=args.levels,
                                       control_spacing=args.spacing,
                                       max_iterations=args.iterations)
        params = RegistrationParams(alpha=cfg.alpha, pyramid_levels=cfg.levels,
                                    control_spacing=cfg.control_spacing,
                                    max_iterations=cfg.max_iterations)
        seq = track_sequence(imgs, seeds, params, smooth=args.smooth)
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(seq.to_dict(), fh)
            fh.write("\n")
    return {"tracked": args.out, "frames": len(imgs),
            "out_of_domain": int(seq.out_of_domain.sum())}


def _cmd_stage(args):
    cfg = _config(args)
    if args.command == "run":
        res = pipeline.run_pipeline(cfg)
        return {"out_dir": cfg.out_dir, "global_peaks": res.global_peaks, "qc": res.qc}
    fn = getattr(pipeline, args.command)
    out = fn(cfg)
    if args.command == "strain":
        out = out[1]
    return out


def _cmd_cohort(args):
    summary = pipeline.cohort_summary(args.reports)
    if args.out:
        with pipeline.stage("cohort"):
            pipeline._write_json(args.out, summary)
    return summary


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"phantom": _cmd_phantom, "track": _cmd_track, "cohort": _cmd_cohort}
    try:
        result = handlers.get(args.command, _cmd_stage)(args)
    except StrainforgeError as exc:
        err = exc.to_dict()
        err.setdefault("stage", args.command)
        print(json.dumps({"error": err}, sort_keys=True), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        err = BundleIOError(str(exc), stage=args.command)
        print(json.dumps({"error": err.to_dict()}, sort_keys=True), file=sys.stderr)
        return err.exit_code
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
