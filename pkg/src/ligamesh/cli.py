"""Command-line entry point: ``ligamesh <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from .config import STAGES, PipelineConfig, set_dotted
from .errors import LigameshError, NonConvergence
from .pipeline import StageError, artifact_digests, run_pipeline, write_json


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="pipeline config JSON")
    parser.add_argument("--seed", type=int, help="seed for all randomness")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--threads", type=int, help="cap on worker threads (results do not change)")
    parser.add_argument("--brute-force", action="store_true", help="exhaustive nearest-neighbour search everywhere")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config value, e.g. fit.regularization=0.05")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    _common(common)
    parser = argparse.ArgumentParser(prog="ligamesh", parents=[common], argument_default=argparse.SUPPRESS,
                                     description="Bone shape models, landmark transfer and ligament meshes.")
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        sub.add_parser(stage, parents=[common], argument_default=argparse.SUPPRESS, help=f"run the {stage} stage")
    p = sub.add_parser("pipeline", parents=[common], argument_default=argparse.SUPPRESS,
                       help="run several stages in order (all by default)")
    p.add_argument("--stage", action="append", help="stage to run; repeat or comma-separate")
    p.add_argument("--digest", action="store_true", help="print artifact digests after the run")
    f = sub.add_parser("fit", parents=[common], argument_default=argparse.SUPPRESS,
                       help="fit a saved GP model (.lgp) to a mesh")
    f.add_argument("--model", required=True)
    f.add_argument("--target", required=True)
    f.add_argument("--reg", type=float)
    f.add_argument("--model-hint", type=float, nargs=3)
    f.add_argument("--target-hint", type=float, nargs=3)
    f.add_argument("--rigid", action="store_true", help="rigidly align the target first")
    return parser


def load_config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        path = Path(args.config)
        data = json.loads(path.read_text(encoding="utf-8")) if path.exists() else None
        if data is None:
            raise LigameshError(f"config file not found: {path}")
        base = path.parent
    else:
        data, base = {}, Path(".")
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise LigameshError(f"--set expects KEY=VALUE, got {item!r}")
        set_dotted(data, key, value)
    for key in ("seed", "out", "threads"):
        if key in args:
            data[key] = getattr(args, key)
    if getattr(args, "brute_force", False):
        data["brute_force"] = True
    cfg = PipelineConfig.from_dict(data, base_dir=base)
    cfg.check_paths()
    return cfg


def _fail(stage: str, exc: Exception, out_dir: Path | None) -> int:
    info = {"stage": stage, "error": type(exc).__name__, "message": str(exc)}
    if out_dir is not None:
        try:
            write_json(out_dir / "logs" / "error.json", info)
        except OSError:
            pass
    print(json.dumps(info), file=sys.stderr)
    return 1


def _run_fit(args, cfg: PipelineConfig) -> int:
    from . import gpmm
    from .mesh.io import load_mesh, save_mesh
    from .registration import align

    model = gpmm.LowRankGp.load(args.model)
    target = load_mesh(args.target).validate()
    out = {}
    if getattr(args, "rigid", False):
        if "model_hint" not in args or "target_hint" not in args:
            raise LigameshError("--rigid needs --model-hint and --target-hint")
        res = align(target, np.array(args.target_hint), model.reference, np.array(args.model_hint), cfg.fit.icp)
        target = res.transform.apply_mesh(target)
        out["rigid"] = res.transform.to_dict()
    reg = getattr(args, "reg", cfg.fit.regularization)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NonConvergence)
        fit = gpmm.fit_nonrigid(model, target, reg, cfg.fit.fit)
    out.update({"alpha": fit.alpha.tolist(), "residual": fit.residual, "objective": fit.objective,
                "iterations": fit.iterations, "converged": fit.converged,
                "warnings": [str(w.message) for w in caught]})
    write_json(cfg.out_dir / "reports" / "fit.json", out)
    save_mesh(gpmm.deform(model, fit.alpha), cfg.out_dir / "meshes" / "fitted.obj")
    print(json.dumps({"residual": fit.residual, "converged": fit.converged}))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except (LigameshError, OSError, ValueError, TypeError) as exc:
        return _fail("config", exc, None) + 1
    if args.command == "fit":
        try:
            return _run_fit(args, cfg)
        except (LigameshError, OSError, ValueError) as exc:
            return _fail("fit", exc, cfg.out_dir)
    if args.command == "pipeline":
        stages = []
        for s in getattr(args, "stage", None) or []:
            stages += [x.strip() for x in s.split(",") if x.strip()]
    else:
        stages = [args.command]
    bad = [s for s in stages if s not in STAGES]
    if bad:
        return _fail("config", LigameshError(f"unknown stage(s) {bad}; choose from {list(STAGES)}"), None) + 1
    try:
        summary = run_pipeline(cfg, stages or None)
    except StageError as exc:
        return _fail(exc.stage, exc.cause, cfg.out_dir)
    print(json.dumps({"stages": list(summary), "out": str(cfg.out_dir)}))
    if getattr(args, "digest", False):
        print(json.dumps(artifact_digests(cfg.out_dir), indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
