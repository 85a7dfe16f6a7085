"""``rsnet`` command line: synth, train, eval, predict, gradcheck, bench, sweep."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bench, gradcheck, metrics, pcio, train
from .config import RunConfig
from .errors import ConfigError, RSNetError
from .model import build_rsnet

log = logging.getLogger("rsnet")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="rsnet", description="Point-cloud segmentation with slice pooling and RNNs.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write synthetic scenes as RSNPC files")
    p.add_argument("--out", required=True, help="output file (count 1) or directory")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--task", choices=("room", "context"), help="defaults to synth_task")
    p.add_argument("--points", type=int, help="defaults to synth_points")

    p = sub.add_parser("train", parents=[common], help="train and write a checkpoint")
    p.add_argument("--checkpoint", help="defaults to the config's checkpoint path")
    p.add_argument("--resume", action="store_true", help="continue from --checkpoint")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test scenes")
    p.add_argument("--checkpoint")
    p.add_argument("--stride", type=float, help="test stride; defaults to test_stride")

    p = sub.add_parser("predict", parents=[common], help="label one RSNPC file")
    p.add_argument("--checkpoint")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every op")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--only", help="comma-separated case names")

    p = sub.add_parser("bench", parents=[common], help="slice-op counts and timings")
    p.add_argument("--ns", type=_ints, default=list(bench.SIZES))
    p.add_argument("--rs", type=_floats, default=list(bench.RESOLUTIONS))
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--no-timing", action="store_true")

    p = sub.add_parser("sweep", parents=[common], help="ablation grids, one metrics row per cell")
    p.add_argument("--grid", choices=("resolution", "block", "stride", "unit", "all"), default="all")
    return ap


def load_config(args) -> RunConfig:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.config:
        return RunConfig.load(args.config, overrides)
    return RunConfig.from_text("", overrides)


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"rsnet: config error: {exc}", file=sys.stderr)
        return 1
    except RSNetError as exc:
        print(f"rsnet: {exc}", file=sys.stderr)
        return 1


# -- subcommands ------------------------------------------------------------------


def cmd_synth(args, cfg: RunConfig) -> int:
    task = args.task or cfg.synth_task
    points = args.points or cfg.synth_points
    scenes = pcio.scene_series(args.count, cfg.seed, mode=task, num_points=points)
    out = Path(args.out)
    if args.count == 1:
        out.parent.mkdir(parents=True, exist_ok=True)
        pcio.write_cloud(scenes[0], out)
        print(f"wrote {out} ({scenes[0].n} points)")
        return 0
    out.mkdir(parents=True, exist_ok=True)
    for i, scene in enumerate(scenes):
        pcio.write_cloud(scene, out / f"scene_{i:03d}.pts")
    print(f"wrote {args.count} scenes to {out}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    path = args.checkpoint or cfg.checkpoint
    if args.resume:
        ckpt = train.load_checkpoint(path)
        cfg = ckpt.config.replace(epochs=cfg.epochs)
        params, state = ckpt.params, ckpt.state
    else:
        params = build_rsnet(cfg.model_config(), cfg.seed)
        state = train.OptimState.from_config(cfg)
    scenes = train.load_scenes(cfg, "train")

    def report(epoch, loss, params):
        print(f"epoch {epoch} loss {loss:.6f}", flush=True)

    train.fit(cfg, scenes, params, state, on_epoch=report)
    train.save_checkpoint(train.Checkpoint(cfg, params, state), path)
    print(f"checkpoint {path}")
    return 0


def _restore(args, cfg: RunConfig):
    ckpt = train.load_checkpoint(args.checkpoint or cfg.checkpoint)
    # data and evaluation keys may be overridden; the architecture comes from the checkpoint
    keep = {k: getattr(cfg, k) for k in ("test_data", "test_stride", "eval_seed", "batch_size", "synth_seed",
                                          "synth_train_scenes", "synth_test_scenes", "synth_points")}
    return ckpt.config.replace(**keep), ckpt.params


def cmd_eval(args, cfg: RunConfig) -> int:
    cfg, params = _restore(args, cfg)
    scenes = train.load_scenes(cfg, "test")
    cm = train.evaluate(scenes, cfg, train.model_predictor(params, cfg), args.stride)
    names = scenes[0].class_names
    print(metrics.format_report(metrics.report(cm, names)))
    print()
    print(metrics.format_table(cm, names))
    return 0


def cmd_predict(args, cfg: RunConfig) -> int:
    cfg, params = _restore(args, cfg)
    cloud = pcio.read_cloud(args.input)
    pred, _ = train.predict_scene(cloud, cfg, train.model_predictor(params, cfg))
    names = cloud.class_names if len(cloud.class_names or ()) == cfg.num_classes else None
    out = pcio.LabeledCloud(cloud.points, pred, num_classes=cfg.num_classes, class_names=names)
    pcio.write_cloud(out, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    cases = gradcheck.CASES
    if args.only:
        wanted = set(args.only.split(","))
        cases = [c for c in cases if c.name in wanted]
        if len(cases) != len(wanted):
            raise ConfigError(f"unknown gradcheck case in {args.only!r}")

    def show(name, worst, ok):
        print(f"{name:<20} max_rel_error {worst:.3e}  {'PASS' if ok else 'FAIL'}", flush=True)

    results = gradcheck.run_suite(range(args.seeds), cases=cases, on_result=show)
    failed = [k for k, v in results.items() if not v <= gradcheck.TOL]
    print(f"{len(results) - len(failed)}/{len(results)} cases pass")
    return 1 if failed else 0


def cmd_bench(args, cfg: RunConfig) -> int:
    print("pool+unpool point-touch counts")
    header = f"{'n':>8}" + "".join(f"{f'r={r:g}':>12}" for r in args.rs)
    print(header)
    for n in args.ns:
        counts = [bench.count_touches(n, r, args.channels) for r in args.rs]
        print(f"{n:>8}" + "".join(f"{c:>12}" for c in counts))
    if not args.no_timing:
        print()
        print(f"kernel wall clock, n={max(args.ns)} c={args.channels}")
        print(bench.format_timings(bench.time_kernels(max(args.ns), args.channels, repeat=args.repeat)))
    return 0


# -- sweep ---------------------------------------------------------------------


def sweep_cells(grid: str):
    """``(table, label, overrides, test_strides)`` per cell of the ablation grids."""
    cells = []
    if grid in ("resolution", "all"):
        for rz in (0.01, 0.02, 0.05, 0.08):
            cells.append(("resolution", f"r=2/2/{rz * 100:g}cm", dict(resolution_z=rz), None))
        for rxy in (0.01, 0.02, 0.04, 0.06):
            cells.append(("resolution", f"r={rxy * 100:g}/{rxy * 100:g}/2cm", dict(resolution_x=rxy, resolution_y=rxy), None))
    if grid in ("block", "all"):
        for bs, rxys in ((1.0, (0.02, 0.04, 0.06)), (2.0, (0.02, 0.04, 0.06)), (3.0, (0.02, 0.04, 0.06, 0.08, 0.16))):
            for rxy in rxys:
                cells.append(("block", f"bs={bs:g}m r={rxy * 100:g}/{rxy * 100:g}/2cm",
                              dict(block_size=bs, train_stride=bs, test_stride=bs, resolution_x=rxy, resolution_y=rxy), None))
    if grid in ("stride", "all"):
        cells.append(("stride", "stride", {}, (0.2, 0.5, 1.0)))
    if grid in ("unit", "all"):
        for unit in ("vanilla", "gru", "lstm"):
            cells.append(("unit", f"unit={unit}", dict(rnn_unit=unit), None))
    return cells


def run_sweep(cfg: RunConfig, grid: str = "all", out=print):
    """Train + evaluate every cell; returns rows of ``(table, label, miou, macc, overall)``."""
    rows = []
    out(f"{'table':<11} {'setting':<28} {'mIOU':>7} {'mAcc':>7} {'oAcc':>7}")
    for table, label, overrides, strides in sweep_cells(grid):
        cell_cfg = cfg.replace(**overrides)
        train_scenes = train.load_scenes(cell_cfg, "train")
        test_scenes = train.load_scenes(cell_cfg, "test")
        params, _, _ = train.fit(cell_cfg, train_scenes)
        predictor = train.model_predictor(params, cell_cfg)
        for frac in strides or (None,):
            stride = None if frac is None else frac * cell_cfg.block_size
            cm = train.evaluate(test_scenes, cell_cfg, predictor, stride)
            name = label if frac is None else f"test stride={frac:g}bs"
            row = (table, name, metrics.miou(cm), metrics.macc(cm), metrics.overall_acc(cm))
            rows.append(row)
            out(f"{row[0]:<11} {row[1]:<28} {row[2] * 100:>7.2f} {row[3] * 100:>7.2f} {row[4] * 100:>7.2f}")
    return rows


def cmd_sweep(args, cfg: RunConfig) -> int:
    run_sweep(cfg, args.grid, out=lambda s: print(s, flush=True))
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
    "sweep": cmd_sweep,
}


if __name__ == "__main__":
    sys.exit(main())
