"""
Command-line surface.

stdout carries one JSON document per command; logs go to stderr. Exit codes:
0 success, 1 internal error, 2 usage/configuration/format error, 3 numerical
or domain failure.
"""
import argparse
import datetime
import logging
import time
from typing import List, Optional

from ggmotion import checks
from ggmotion import network
from ggmotion.ablation import AXES, ablate
from ggmotion.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from ggmotion.config import Settings
from ggmotion.errors import GGMotionError, NumericalError, UsageError
from ggmotion.file_handler import MotionSequence, load_sequence, save_sequence, windows
from ggmotion.models import RunManifest
from ggmotion.synthetic import synth_generate
from ggmotion.topology import SkeletonTopology, build_topology, chain, human22, load_topology
from ggmotion.training import evaluate, split_windows, train
from ggmotion.utils import emit_json, read_json, setup_logging, write_json_atomic, write_jsonl

logger = logging.getLogger(__name__)

HORIZONS_MS = (80, 160, 320, 400, 560, 1000)


class RunContext:
    """State shared by a command and the manifest written when it ends"""

    def __init__(self, args: argparse.Namespace, settings: Settings):
        self.args = args
        self.settings = settings
        self.config: dict = {}
        self.seed: Optional[int] = None
        self.artifacts: dict = {}


def _resolve_topology(path: Optional[str], seq: MotionSequence, source: str) -> SkeletonTopology:
    """Skeleton from --topology, else from the parent list a JSON sequence carries"""
    if path:
        return load_topology(path)
    if seq.parent is None:
        raise UsageError(f"{source} carries no parent list; pass --topology")
    if seq.n_joints == 22 and list(seq.parent) == list(human22().parent):
        return human22()
    logger.warning("No --topology given; using the parent list of %s as a single group", source)
    return build_topology(seq.parent, [list(range(seq.n_joints))])


def _model_config(ctx: RunContext, path: Optional[str], topo: SkeletonTopology):
    overrides = {}
    if not path or "n_joints" not in read_json(path):
        overrides["n_joints"] = topo.n_joints
    return ctx.settings.model_config_from(path, **overrides)


def _train_config(ctx: RunContext, path: Optional[str]):
    threads = ctx.args.threads or ctx.settings.threads
    return ctx.settings.train_config_from(path, threads=threads)


def _load_windows(paths: List[str], t_h: int, t_f: int, stride: int):
    sequences = [load_sequence(p) for p in paths]
    pairs = []
    for seq in sequences:
        pairs.extend(windows(seq, t_h, t_f, stride))
    return sequences, pairs


def cmd_synth(ctx: RunContext) -> dict:
    args = ctx.args
    cfg = ctx.settings.synth_config_from(args.config)
    topo = load_topology(args.topology) if args.topology else None
    seq = synth_generate(cfg, topo)
    save_sequence(args.out, seq)
    ctx.config = {"synth": cfg.model_dump()}
    ctx.seed = cfg.seed
    ctx.artifacts["sequence"] = args.out
    return {"out": args.out, "n_joints": seq.n_joints, "n_frames": seq.n_frames, "fps": seq.fps}


def cmd_train(ctx: RunContext) -> dict:
    args = ctx.args
    first = load_sequence(args.data[0])
    topo = _resolve_topology(args.topology, first, args.data[0])
    model_cfg = _model_config(ctx, args.model_config, topo)
    train_cfg = _train_config(ctx, args.train_config)
    ctx.config = {"model": model_cfg.model_dump(), "train": train_cfg.model_dump()}
    ctx.seed = train_cfg.seed

    _, pairs = _load_windows(args.data, model_cfg.t_h, model_cfg.t_f, train_cfg.window_stride)
    train_w, val_w, test_w = split_windows(pairs, train_cfg.seed)
    logger.info("Training on %d windows (%d validation, %d test held out)", len(train_w), len(val_w), len(test_w))
    result = train(model_cfg, train_cfg, topo, train_w, val_w)

    save_checkpoint(args.out, Checkpoint(model_cfg, topo, result.params, train_cfg.input_scale))
    history_path = args.history or f"{args.out}.history.jsonl"
    write_jsonl(history_path, result.history)
    ctx.artifacts.update({"checkpoint": args.out, "history": history_path})
    summary = {
        "checkpoint": args.out,
        "history": history_path,
        "steps": result.steps,
        "epochs": len(result.history),
        "param_count": network.param_count(result.params),
        "final_loss_pos": result.history[-1]["loss_pos"],
        "final_val_mpjpe": result.history[-1]["val_mpjpe"],
    }
    if test_w:
        summary["test_mpjpe"] = evaluate(result.params, model_cfg, topo, test_w, train_cfg.input_scale)["mean"]
    return summary


def cmd_predict(ctx: RunContext) -> dict:
    args = ctx.args
    ckpt = load_checkpoint(args.ckpt)
    cfg, topo = ckpt.config, ckpt.topology
    seq = load_sequence(args.input)
    if seq.n_joints != topo.n_joints:
        raise UsageError(f"input has {seq.n_joints} joints, checkpoint topology has {topo.n_joints}")
    if seq.parent is not None and list(seq.parent) != list(topo.parent):
        raise UsageError("input skeleton parent list does not match the checkpoint topology")
    if seq.n_frames < cfg.t_h:
        raise UsageError(f"input has {seq.n_frames} frames, the model needs {cfg.t_h}")
    past = seq.positions[:, :, -cfg.t_h:]
    pred = network.forward(ckpt.params, past * ckpt.input_scale, cfg, topo) / ckpt.input_scale
    save_sequence(args.out, MotionSequence(pred, seq.fps, list(topo.parent)))
    ctx.config = {"model": cfg.model_dump()}
    ctx.seed = cfg.seed
    ctx.artifacts["prediction"] = args.out
    return {"out": args.out, "n_joints": topo.n_joints, "n_frames": cfg.t_f, "fps": seq.fps}


def horizon_report(per_frame: List[float], fps: float) -> dict:
    """MPJPE at the standard millisecond horizons that land on a predicted frame"""
    out = {}
    for ms in HORIZONS_MS:
        frame = ms * fps / 1000.0
        k = int(round(frame))
        if abs(frame - k) < 1e-6 and 1 <= k <= len(per_frame):
            out[str(ms)] = per_frame[k - 1]
    return out


def cmd_eval(ctx: RunContext) -> dict:
    args = ctx.args
    ckpt = load_checkpoint(args.ckpt)
    cfg, topo = ckpt.config, ckpt.topology
    sequences, pairs = _load_windows(args.data, cfg.t_h, cfg.t_f, args.stride)
    for seq in sequences:
        if seq.n_joints != topo.n_joints:
            raise UsageError(f"sequence has {seq.n_joints} joints, checkpoint topology has {topo.n_joints}")
    metrics = evaluate(ckpt.params, cfg, topo, pairs, ckpt.input_scale)
    ctx.config = {"model": cfg.model_dump()}
    ctx.seed = cfg.seed
    return {
        "mpjpe_per_horizon": {str(k + 1): v for k, v in enumerate(metrics["per_frame"])},
        "mpjpe_per_ms": horizon_report(metrics["per_frame"], sequences[0].fps),
        "mean": metrics["mean"],
        "windows": len(pairs),
    }


def cmd_check(ctx: RunContext) -> dict:
    args = ctx.args
    seed = ctx.settings.seed_override if ctx.settings.seed_override is not None else args.seed
    if args.ckpt:
        ckpt = load_checkpoint(args.ckpt)
        cfg, topo, params = ckpt.config, ckpt.topology, ckpt.params
    else:
        topo = load_topology(args.topology) if args.topology else human22()
        cfg = _model_config(ctx, args.model_config, topo)
        cfg = cfg.model_copy(update={"seed": seed})
        if args.inject_bias:
            cfg = cfg.model_copy(update={"ablation": cfg.ablation.model_copy(update={"coordinate_bias": True})})
        params = network.init_params(cfg, topo)
    ctx.config = {"model": cfg.model_dump(), "trials": args.trials, "tol": args.tol}
    ctx.seed = seed
    report = checks.equivariance_report(params, cfg, topo, args.trials, args.tol, seed, args.translation_only)
    if not report["passed"]:
        raise NumericalError(f"equivariance deviation {report['max_deviation']:.3e} exceeds {args.tol:.1e}",
                             report=report)
    return report


def cmd_gradcheck(ctx: RunContext) -> dict:
    args = ctx.args
    seed = ctx.settings.seed_override if ctx.settings.seed_override is not None else args.seed
    ctx.config = {"coords": args.coords}
    ctx.seed = seed
    report = checks.gradcheck_report(seed, args.coords)
    if not report["passed"]:
        raise NumericalError(f"{report['failures']} of {args.coords} gradient coordinates out of tolerance",
                             report=report)
    return report


def cmd_ablate(ctx: RunContext) -> dict:
    args = ctx.args
    topo = load_topology(args.topology) if args.topology else chain(10, 2)
    model_cfg = _model_config(ctx, args.model_config, topo)
    train_cfg = _train_config(ctx, args.train_config)
    synth_cfg = ctx.settings.synth_config_from(args.synth_config)
    seeds = [ctx.settings.seed_override] if ctx.settings.seed_override is not None else args.seeds
    ctx.config = {"model": model_cfg.model_dump(), "train": train_cfg.model_dump(),
                  "synth": synth_cfg.model_dump(), "axis": args.axis, "seeds": list(seeds)}
    ctx.seed = seeds[0]
    return ablate(args.axis, model_cfg, train_cfg, synth_cfg, topo, seeds, args.stride)


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "check": cmd_check,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ggmotion", description="Equivariant skeleton motion prediction")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default from env/YAML)")
    parser.add_argument("--threads", type=int, default=None, help="worker threads for batch evaluation")
    parser.add_argument("--manifest", default=None, help="write a run manifest JSON here")
    parser.add_argument("--defaults", default=None, help="YAML defaults file (default: ggmotion_config.yaml)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic rigid-body sequence")
    p.add_argument("--config", default=None, help="SynthConfig JSON")
    p.add_argument("--topology", default=None, help="topology JSON (default: 22-joint human)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", nargs="+", required=True, help="sequence files (GGS1 or .json)")
    p.add_argument("--topology", default=None, help="topology JSON (required unless the data carries a parent list)")
    p.add_argument("--model-config", default=None)
    p.add_argument("--train-config", default=None)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", default=None, help="history JSONL path (default: <out>.history.jsonl)")

    p = sub.add_parser("predict", help="predict the frames following a sequence")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="MPJPE of a checkpoint on sequences")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--stride", type=int, default=1)

    p = sub.add_parser("check", help="equivariance self-check")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--topology", default=None)
    p.add_argument("--model-config", default=None)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--translation-only", action="store_true")
    p.add_argument("--inject-bias", action="store_true", help="add a coordinate-axis bias (must fail)")

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coords", type=int, default=200)

    p = sub.add_parser("ablate", help="train variants along one ablation axis")
    p.add_argument("--axis", required=True, choices=AXES)
    p.add_argument("--topology", default=None, help="topology JSON (default: 10-joint chain, 2 groups)")
    p.add_argument("--model-config", default=None)
    p.add_argument("--train-config", default=None)
    p.add_argument("--synth-config", default=None)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--stride", type=int, default=1)
    return parser


def _manifest_path(args: argparse.Namespace) -> Optional[str]:
    if args.manifest:
        return args.manifest
    out = getattr(args, "out", None)
    return f"{out}.manifest.json" if out else None


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 0 for --help and 2 for bad flags
        return 0 if not e.code else 2

    started_at = datetime.datetime.now().isoformat()
    started = time.perf_counter()
    status = 1
    ctx = None
    try:
        settings = Settings(args.defaults)
        setup_logging(args.log_level or settings.log_level)
        ctx = RunContext(args, settings)
        emit_json(COMMANDS[args.command](ctx))
        status = 0
    except GGMotionError as e:
        logger.error("%s: %s", type(e).__name__, e.detail)
        report = getattr(e, "report", None)
        if report is not None:
            emit_json(report)
        status = e.exit_code
    except Exception as e:
        logger.error("Internal error: %s", e)
        logger.debug("Traceback", exc_info=True)
        status = 1

    manifest_path = _manifest_path(args)
    if manifest_path and ctx is not None:
        manifest = RunManifest(
            command=args.command,
            config={**ctx.config, "settings": ctx.settings.get_settings()},
            seed=ctx.seed,
            artifacts=ctx.artifacts,
            started_at=started_at,
            wall_time_s=time.perf_counter() - started,
            exit_status=status,
        )
        try:
            write_json_atomic(manifest_path, manifest.model_dump())
        except OSError as e:
            logger.error("Could not write manifest %s: %s", manifest_path, e)
    return status
