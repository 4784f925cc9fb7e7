"""
Command-line surface: train, sr, eval, inspect and serve.

Configuration resolves as defaults < key=value config file < flags, and the
resolved RunConfig is echoed at startup. Errors end the process with a single
``error: <kind>: <message>`` line on stderr and exit status 1.
"""
from pathlib import Path
from typing import Dict, List, Optional, Sequence
import argparse
import logging
import sys

from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import ConfigError, DatasetConfigError, MDCNError, TrainingAbortedError
from app.models.schemas import DatasetSpec, RunConfig
from app.services.checkpoint import EXTENSION, load_checkpoint, save_checkpoint, save_periodic
from app.services.data_pipeline import PatchDataset, list_images
from app.services.image_processor import load_image, save_image
from app.services.mdcn_arch import (
    ModelParams, build_model, channel_schedule, count_params, supported_factors, widen_head, with_tail,
)
from app.services.metrics import bicubic_upscale, evaluate_dataset, format_report, identity_upscale, report_csv
from app.services.model_service import check_factor, make_upscaler
from app.services.optim import TrainingCallbacks, fit, format_history
from app.services.video_sr import (
    VideoPatchDataset, bicubic_window, format_video_report, list_frames, model_upscaler,
    video_dirs_of, video_sr_frames, vsr_evaluate,
)

logger = logging.getLogger("mdcn")

CONFIG_KEYS = tuple(k for k in RunConfig.model_fields if k != "command")


# Configuration

def parse_config_file(path) -> Dict[str, str]:
    """Flat key=value lines; '#' starts a comment, blank lines are ignored"""
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"config file {path} does not exist")
    values = {}
    for number, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("config", f"{path}:{number}: expected key=value, got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise ConfigError(key, f"unknown key in {path}:{number}")
        values[key] = [v.strip() for v in value.split(",") if v.strip()] if key == "inputs" else value
    return values


def resolve_config(command: str, file_values: Dict, flag_values: Dict) -> RunConfig:
    """defaults < config file < flags; a validation failure names the offending key"""
    merged = {"out": settings.OUTPUT_DIR, "workers": settings.MDCN_THREADS}
    merged.update(file_values)
    merged.update(flag_values)
    try:
        run = RunConfig(command=command, **merged)
    except ValidationError as e:
        error = e.errors()[0]
        key = str(error["loc"][0]) if error["loc"] else "config"
        raise ConfigError(key, error["msg"])
    if run.workers > settings.MDCN_THREADS:
        logger.warning(f"⚠️ workers={run.workers} capped at MDCN_THREADS={settings.MDCN_THREADS}")
        run = run.model_copy(update={"workers": max(1, settings.MDCN_THREADS)})
    return run


def format_config(run: RunConfig) -> str:
    """key=value text that feeds back through --config"""
    lines = []
    for key in CONFIG_KEYS:
        value = getattr(run, key)
        if value is None:
            continue
        if isinstance(value, list):
            value = ",".join(value)
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def echo_config(run: RunConfig):
    logger.info(f"⚙️ mdcn {run.command}")
    for line in format_config(run).splitlines():
        logger.info(f"  {line}")


# Commands

def _warm_started(run: RunConfig) -> ModelParams:
    """Derive the starting model for the requested scale from a checkpoint"""
    params = load_checkpoint(run.warm_start)
    target = run.net_config()
    if params.config.in_channels != target.in_channels and not run.video:
        raise ConfigError("warm_start", "a video checkpoint cannot warm-start an image model")
    if target.upscale != params.upscale:
        params = with_tail(params, target.upscale, seed=run.seed)
    if target.in_channels == 15 and params.config.in_channels == 3:
        params = widen_head(params, 15)
    params.config = params.config.model_copy(update={"scale": target.scale})
    arch = ("feat", "growth", "n_blocks", "n_units")
    if any(getattr(params.config, k) != getattr(target, k) for k in arch):
        logger.warning("⚠️ Architecture flags ignored, the warm-start checkpoint defines the network: "
                       + ", ".join(f"{k}={getattr(params.config, k)}" for k in arch))
    logger.info(f"🔥 Warm start from {run.warm_start} (x{params.config.scale}, "
                f"r={params.upscale}, in={params.config.in_channels})")
    return params


def _initial_model(run: RunConfig) -> ModelParams:
    if run.scale == 1:
        raise ConfigError("scale", "training needs a factor of 2, 3, 4 or 8")
    if run.warm_start and not (run.video and run.video_from_scratch):
        return _warm_started(run)
    return build_model(run.net_config(), seed=run.seed)


def _training_data(run: RunConfig):
    if not run.data:
        raise ConfigError("data", "training needs --data <directory of HR images>")
    if run.video:
        return VideoPatchDataset.from_dir(run.data, run.scale, run.patch, augment=run.augment,
                                          antialias=run.antialias, seed=run.seed)
    spec = DatasetSpec(hr_dir=run.data, scale=run.scale, patch_size=run.patch,
                       augment=run.augment, antialias=run.antialias)
    return PatchDataset.from_spec(spec)


class _CheckpointWriter(TrainingCallbacks):
    def __init__(self, out_dir: Path, tag: str):
        self.out_dir = out_dir
        self.tag = tag

    def on_checkpoint(self, iteration: int, params: ModelParams):
        save_periodic(params, self.out_dir, self.tag, iteration)


def cmd_train(run: RunConfig) -> int:
    out_dir = Path(run.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{run.tag}_config.txt").write_text(format_config(run), encoding="utf-8")

    params = _initial_model(run)
    dataset = _training_data(run)
    try:
        result = fit(params, dataset, run.train_config(), callbacks=_CheckpointWriter(out_dir, run.tag),
                     workers=run.workers)
    except TrainingAbortedError as e:
        if e.last_good is not None:
            save_checkpoint(e.last_good, out_dir / f"{run.tag}_last_good{EXTENSION}")
        raise

    final = save_periodic(result.params, out_dir, run.tag, run.iters)
    loss_log = out_dir / f"{run.tag}_loss.txt"
    loss_log.write_text(format_history(result.history), encoding="utf-8")
    logger.info(f"📝 Loss log written to {loss_log}")
    print(final)
    return 0


def _sr_inputs(run: RunConfig) -> List[Path]:
    if not run.inputs:
        raise ConfigError("inputs", "give at least one input image or directory")
    paths = [Path(p) for p in run.inputs]
    for p in paths:
        if not p.exists():
            raise DatasetConfigError(f"input {p} does not exist")
    return paths


def cmd_sr(run: RunConfig) -> int:
    if not run.checkpoint:
        raise ConfigError("checkpoint", "sr needs --checkpoint")
    params = load_checkpoint(run.checkpoint)
    factor = run.scale
    check_factor(params, factor)
    out_dir = Path(run.out)

    for path in _sr_inputs(run):
        if path.is_dir() and run.video:
            frames = list_frames(path)
            sr_frames = video_sr_frames(model_upscaler(params), [load_image(p) for p in frames], factor,
                                        workers=run.workers)
            for src, img in zip(frames, sr_frames):
                print(save_image(img, out_dir / path.name / f"{src.stem}.png"))
            continue
        files = list_images(path) if path.is_dir() else [path]
        upscale = make_upscaler(params, ensemble=run.ensemble)
        for src in files:
            sr = upscale(load_image(src), factor)
            print(save_image(sr, out_dir / f"{src.stem}_x{factor}.png"))
    return 0


def _eval_functions(run: RunConfig):
    """(image SR function, video SR function, method label)"""
    source = run.checkpoint or "bicubic"
    if source == "bicubic":
        return bicubic_upscale, bicubic_window, "Bicubic"
    if source == "identity":
        if run.scale != 1:
            raise ConfigError("scale", "the identity baseline only runs at --scale 1")
        return identity_upscale, None, "Identity"
    params = load_checkpoint(source)
    check_factor(params, run.scale)
    return make_upscaler(params, ensemble=run.ensemble), model_upscaler(params), "MDCN+" if run.ensemble else "MDCN"


def cmd_eval(run: RunConfig) -> int:
    if not run.data:
        raise ConfigError("data", "eval needs --data <dataset directory>")
    image_fn, video_fn, method = _eval_functions(run)
    out_dir = Path(run.out)

    if run.video:
        if video_fn is None:
            raise ConfigError("checkpoint", f"'{run.checkpoint}' has no video mode")
        report = vsr_evaluate(video_fn, video_dirs_of(run.data), s=run.scale, max_frames=run.frames,
                              quantized=run.quantize, antialias=run.antialias, workers=run.workers)
        text = format_video_report(report, method)
    else:
        spec = DatasetSpec(hr_dir=run.data, scale=run.scale, antialias=run.antialias)
        report = evaluate_dataset(image_fn, spec, quantized=run.quantize, workers=run.workers)
        text = format_report(report)

    stem = out_dir / f"{run.tag}_{report.dataset}_x{report.scale}"
    out_dir.mkdir(parents=True, exist_ok=True)
    stem.with_suffix(".txt").write_text(text, encoding="utf-8")
    stem.with_suffix(".csv").write_text(report_csv(report), encoding="utf-8")
    logger.info(f"📝 Reports written to {stem}.txt and {stem}.csv")
    print(text, end="")
    return 0


def format_inspection(params: ModelParams) -> str:
    cfg = params.config
    counted = count_params(params)
    width = max(len(r.name) for r in counted.rows)
    lines = [f"{'tensor':<{width}}  {'shape':<18}  {'count':>10}"]
    for row in counted.rows:
        shape = "x".join(str(d) for d in row.shape)
        lines.append(f"{row.name:<{width}}  {shape:<18}  {row.count:>10,}")
    lines.append(f"{'total':<{width}}  {'':<18}  {counted.total:>10,}")
    lines.append("")
    lines.append(f"config: F={cfg.feat} K={cfg.growth} blocks={cfg.n_blocks} units={cfg.n_units} "
                 f"in={cfg.in_channels} r={params.upscale} trained_for=x{cfg.scale}")
    lines.append("block schedule: " + ",".join(str(w) for w in channel_schedule(cfg)))
    lines.append("factors: " + ",".join(f"x{f}" for f in supported_factors(cfg)))
    return "\n".join(lines) + "\n"


def cmd_inspect(run: RunConfig) -> int:
    target = run.checkpoint or (run.inputs[0] if run.inputs else None)
    if not target:
        raise ConfigError("checkpoint", "inspect needs a checkpoint")
    print(format_inspection(load_checkpoint(target)), end="")
    return 0


def cmd_serve(run: RunConfig) -> int:
    import uvicorn

    if run.checkpoint:
        settings.MDCN_CHECKPOINT = run.checkpoint
    uvicorn.run("main:app", host=run.host or settings.HOST, port=run.port or settings.PORT,
                log_level=settings.LOG_LEVEL.lower())
    return 0


HANDLERS = {
    "train": cmd_train,
    "sr": cmd_sr,
    "eval": cmd_eval,
    "inspect": cmd_inspect,
    "serve": cmd_serve,
}


# Argument parsing

def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    add = common.add_argument
    add("--config", help="key=value file; flags override it")
    add("--seed", type=int)
    add("--scale", type=int, help="SR factor: 2, 3, 4 or 8 (1 = identity diagnostic for eval)")
    add("--blocks", type=int, help="number of MDCBs")
    add("--units", type=int, help="dual-link units per MDCB")
    add("--feat", type=int, help="base channels F")
    add("--growth", type=int, help="growth rate K")
    add("--global-skip", action="store_true", default=argparse.SUPPRESS)
    add("--mean-shift", action="store_true", default=argparse.SUPPRESS)
    add("--iters", type=int)
    add("--batch", type=int)
    add("--lr", type=float)
    add("--halve-every", type=int)
    add("--loss", choices=("l1", "l2"), type=str.lower)
    add("--clip-norm", type=float)
    add("--patch", type=int, help="LR patch size")
    add("--no-augment", dest="augment", action="store_false", default=argparse.SUPPRESS)
    add("--no-antialias", dest="antialias", action="store_false", default=argparse.SUPPRESS)
    add("--no-quantize", dest="quantize", action="store_false", default=argparse.SUPPRESS,
        help="score SR output without rounding to 8 bits")
    add("--ensemble", action="store_true", default=argparse.SUPPRESS, help="geometric self-ensemble")
    add("--video", action="store_true", default=argparse.SUPPRESS, help="5-frame early-fusion model")
    add("--video-from-scratch", action="store_true", default=argparse.SUPPRESS)
    add("--warm-start", help="checkpoint to fine-tune from")
    add("--checkpoint", help="checkpoint file, or 'bicubic'/'identity' for eval")
    add("--data", help="dataset directory")
    add("--out", help="output directory")
    add("--tag")
    add("--log-every", type=int)
    add("--checkpoint-every", type=int)
    add("--workers", type=int, help="worker threads, capped by MDCN_THREADS")
    add("--frames", type=int, help="frames per video for eval --video")
    add("--host")
    add("--port", type=int)
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdcn", description="MDCN super-resolution engine")
    common = _common_options()
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("train", parents=[common], help="train or fine-tune a model")
    sr = commands.add_parser("sr", parents=[common], help="super-resolve images")
    sr.add_argument("inputs", nargs="*", help="images, directories or (with --video) frame directories")
    commands.add_parser("eval", parents=[common], help="PSNR/SSIM on a benchmark directory")
    inspect = commands.add_parser("inspect", parents=[common], help="parameter table and channel schedule")
    inspect.add_argument("inputs", nargs="*", help="checkpoint file")
    commands.add_parser("serve", parents=[common], help="run the HTTP API")
    return parser


def parse_run_config(argv: Optional[Sequence[str]] = None) -> RunConfig:
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if v is not None and k not in ("command", "config")}
    if not flags.get("inputs"):
        flags.pop("inputs", None)
    file_values = parse_config_file(args.config) if args.config else {}
    return resolve_config(args.command, file_values, flags)


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        level=settings.LOG_LEVEL,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    try:
        run = parse_run_config(argv)
        echo_config(run)
        return HANDLERS[run.command](run)
    except MDCNError as e:
        logger.debug("command failed", exc_info=True)
        print(f"error: {e.one_line()}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: io: {e}", file=sys.stderr)
        return 1
