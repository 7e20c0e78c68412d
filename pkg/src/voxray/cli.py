"""Command line driver.

Subcommands:
    gen-scene   write a synthetic dataset (camera manifests + PNG views)
    train       fit a model on a dataset and write a checkpoint
    render      rasterize checkpoint views for the poses in a manifest
    eval        score a checkpoint against a dataset split
    gradcheck   run the 64-bit finite-difference gradient suite
    strip       stack one pixel column from each frame into an image

Exit codes: 0 on success, 1 on a usage error, 2 on a runtime failure.
Logs go to stderr; machine-readable results go to stdout (or --report).

Only the standard library is imported at module scope; the numeric stack
loads inside the command handlers so that --threads can pin the BLAS/OMP
thread count through environment variables before numpy first loads.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

log = logging.getLogger("voxray.cli")

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


class _Parser(argparse.ArgumentParser):
    """argparse subclass that exits with status 1 on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    p = _Parser(
        prog="voxray",
        description="Voxel radiance field with a detail-recovering decoder.")
    p.add_argument("--threads", type=int, metavar="N",
                   help="cap worker threads for array math (must precede the command)")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    g = sub.add_parser("gen-scene", help="write a synthetic dataset of posed views")
    g.add_argument("--out", required=True, metavar="DIR", help="dataset directory to create")
    g.add_argument("--views", type=int, default=20, help="number of training views")
    g.add_argument("--res", type=int, default=128, help="image resolution in pixels")
    g.add_argument("--seed", type=int, default=0, help="scene and pose seed")
    g.add_argument("--test-views", type=int, default=5, help="number of held-out views")

    t = sub.add_parser("train", help="fit a model and write a checkpoint")
    t.add_argument("--config", required=True, metavar="FILE",
                   help="profile name (paper|desk) or a JSON config file")
    t.add_argument("--data", required=True, metavar="DIR", help="dataset directory")
    t.add_argument("--out", required=True, metavar="CKPT", help="checkpoint path to write")
    t.add_argument("--resume", metavar="CKPT",
                   help="continue from this checkpoint (its stored config wins)")

    r = sub.add_parser("render", help="render the poses of a manifest from a checkpoint")
    r.add_argument("--ckpt", required=True, metavar="CKPT")
    r.add_argument("--manifest", required=True, metavar="FILE",
                   help="JSON pose manifest (e.g. transforms_test.json)")
    r.add_argument("--pose", type=int, metavar="INDEX",
                   help="render only this frame of the manifest")
    r.add_argument("--out", required=True, metavar="DIR", help="directory for PNG output")
    r.add_argument("--chunk", type=int, default=8192, help="rays per forward chunk")

    e = sub.add_parser("eval", help="score a checkpoint against a dataset split")
    e.add_argument("--ckpt", required=True, metavar="CKPT")
    e.add_argument("--data", required=True, metavar="DIR")
    e.add_argument("--report", metavar="FILE",
                   help="write the JSON report here instead of stdout")
    e.add_argument("--split", default="test", help="manifest split to score")
    e.add_argument("--chunk", type=int, default=8192, help="rays per forward chunk")

    c = sub.add_parser("gradcheck", help="finite-difference check of every gradient path")
    c.add_argument("--module", metavar="NAME",
                   help="only run checks whose name contains this substring")
    c.add_argument("--instances", type=int, default=20, help="random instances per check")
    c.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("strip", help="stack one pixel column from each frame of a sweep")
    s.add_argument("--frames", required=True, metavar="DIR",
                   help="directory of PNG frames, taken in sorted name order")
    s.add_argument("--column", required=True, type=int, help="pixel column to extract")
    s.add_argument("--out", required=True, metavar="FILE", help="PNG file to write")
    s.add_argument("--height", type=int, help="strip height (default: full image height)")
    return p


def _load_train_config(spec: str):
    """Resolve --config: a profile name, or a JSON file of config fields.

    A JSON file may carry a "profile" key naming the base profile its other
    fields override.
    """
    from .trainer import PROFILES, TrainConfig

    if spec in PROFILES:
        return PROFILES[spec]()
    with open(spec) as fh:
        data = json.load(fh)
    profile = data.pop("profile", None)
    if profile is not None:
        if profile not in PROFILES:
            raise ValueError(f"unknown profile '{profile}'; choose from {sorted(PROFILES)}")
        merged = PROFILES[profile]().to_dict()
        merged.update(data)
        data = merged
    return TrainConfig.from_dict(data)


def _cmd_gen_scene(args) -> int:
    from .scene import generate_toy_scene

    generate_toy_scene(args.out, n_views=args.views, resolution=args.res,
                       seed=args.seed, n_test=args.test_views)
    log.info("dataset written to %s", args.out)
    print(json.dumps({"out": args.out, "views": args.views,
                      "test_views": args.test_views, "res": args.res,
                      "seed": args.seed}))
    return 0


def _cmd_train(args) -> int:
    from .scene import load_dataset
    from .trainer import Trainer

    if args.resume:
        from .checkpoint import load_container
        from .trainer import TrainConfig
        _, meta = load_container(args.resume)
        config = TrainConfig.from_dict(meta["config"])
        log.info("resuming from %s; its stored config overrides --config", args.resume)
    else:
        config = _load_train_config(args.config)
    views = load_dataset(args.data, upscale=config.upscale, split="train")
    log.info("loaded %d training views from %s", len(views), args.data)
    if args.resume:
        trainer = Trainer.from_checkpoint(args.resume, views)
    else:
        trainer = Trainer(views, config)
    trainer.train(checkpoint_path=args.out)
    summary = {"checkpoint": args.out,
               "pretrain_iters": trainer.pretrain_done,
               "joint_iters": trainer.joint_done}
    if trainer.pretrain_losses:
        summary["final_pretrain_loss"] = trainer.pretrain_losses[-1]
    if trainer.joint_losses:
        summary["final_joint_loss"] = trainer.joint_losses[-1]
    print(json.dumps(summary))
    return 0


def _cmd_render(args) -> int:
    from .metrics import render_view
    from .scene import load_cameras, save_png
    from .trainer import load_models

    encoder, decoder, config = load_models(args.ckpt)
    cams = load_cameras(args.manifest)
    if args.pose is not None:
        if not 0 <= args.pose < len(cams):
            raise ValueError(f"pose index {args.pose} is out of range; "
                             f"the manifest has {len(cams)} poses")
        cams = [cams[args.pose]]
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for name, cam in cams:
        res = render_view(encoder, decoder, cam,
                          n_samples=config.n_samples, chunk=args.chunk)
        path = os.path.join(args.out, f"{name}.png")
        save_png(path, res.full)
        log.info("wrote %s (%.2fs)", path, res.seconds)
        rows.append({"frame": name, "file": path, "seconds": round(res.seconds, 4)})
    print(json.dumps({"frames": rows}))
    return 0


def _cmd_eval(args) -> int:
    from .metrics import evaluate_views
    from .scene import load_dataset
    from .trainer import load_models

    encoder, decoder, config = load_models(args.ckpt)
    views = load_dataset(args.data, upscale=config.upscale, split=args.split)
    report = evaluate_views(encoder, decoder, views,
                            n_samples=config.n_samples, chunk=args.chunk)
    payload = json.dumps(report.to_dict(), indent=1, sort_keys=True)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(payload + "\n")
        log.info("report written to %s", args.report)
        print(json.dumps({"mean_psnr": report.mean_psnr,
                          "mean_ssim": report.mean_ssim,
                          "mean_psnr_low": report.mean_psnr_low}))
    else:
        print(payload)
    return 0


def _cmd_gradcheck(args) -> int:
    from .verify import GRAD_TOL, run_suite

    results = run_suite(module=args.module, n_instances=args.instances,
                        seed=args.seed)
    n_failed = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        n_failed += not res.passed
        print(f"{res.name:<24} max_err {res.max_error:.3e}  "
              f"({res.instances} instances, {res.seconds:5.2f}s)  {status}")
    print(f"{len(results) - n_failed}/{len(results)} checks within {GRAD_TOL:g}")
    return 2 if n_failed else 0


def _cmd_strip(args) -> int:
    from .metrics import consistency_strip
    from .scene import load_png, save_png

    names = sorted(n for n in os.listdir(args.frames) if n.lower().endswith(".png"))
    if len(names) < 2:
        raise ValueError(f"{args.frames} holds {len(names)} PNG frames; need at least 2")
    frames = [load_png(os.path.join(args.frames, n)) for n in names]
    strip = consistency_strip(frames, column=args.column, strip_height=args.height)
    save_png(args.out, strip)
    log.info("strip of %d frames written to %s", len(frames), args.out)
    print(json.dumps({"out": args.out, "frames": len(frames),
                      "height": strip.shape[0], "width": strip.shape[1]}))
    return 0


_HANDLERS = {
    "gen-scene": _cmd_gen_scene,
    "train": _cmd_train,
    "render": _cmd_render,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "strip": _cmd_strip,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits for --help (0) and usage errors (1)
        return exc.code if isinstance(exc.code, int) else 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: a command is required", file=sys.stderr)
        return 1
    if args.threads is not None:
        if args.threads < 1:
            parser.print_usage(sys.stderr)
            print(f"{parser.prog}: error: --threads must be >= 1", file=sys.stderr)
            return 1
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _HANDLERS[args.command](args) or 0
    except Exception as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
