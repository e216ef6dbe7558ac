"""
Command-line interface.

    python -m app.cli synth --count 4 --size 64
    python -m app.cli pretrain
    python -m app.cli train-diffusion
    python -m app.cli train-joint
    python -m app.cli infer input.ppm --gt gt.ppm -o restored.ppm
    python -m app.cli eval
    python -m app.cli gradcheck
    python -m app.cli serve --checkpoint runs/joint.ckpt
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import uvicorn
from pydantic import ValidationError

from app.core.config import settings
from app.core.exceptions import ConfigError, ReflectionError
from app.core.logging import configure_logging
from app.schemas.model import Preset
from app.schemas.train import RunConfig, Stage
from app.services.audit import audit_model
from app.services.data import generate_dataset, load_pairs
from app.services.inference import evaluate, infer
from app.services.trainer import CHECKPOINT_NAMES, stage_diffusion, stage_joint, stage_pretrain

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger("app.cli")

EXIT_FAILURE = 1
EXIT_USAGE = 2


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_run_config(path: Optional[Path], preset: Optional[str] = None, seed: Optional[int] = None) -> RunConfig:
    """
    Build the run configuration: preset defaults, then the TOML file, then flags.

    Args:
        path: TOML file with ``[model]``, ``[train]`` and ``[synth]`` tables
        preset: Preset name overriding the file's ``model.preset``
        seed: Seed overriding ``train.seed`` and ``synth.seed``

    Raises:
        ConfigError: If the file is unreadable or fails validation
    """
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    chosen = preset or data.get("model", {}).get("preset") or Preset.DESK.value
    try:
        defaults = RunConfig.from_preset(Preset(chosen)).model_dump(mode="json")
        merged = _merge(defaults, data)
        merged["model"]["preset"] = chosen
        run = RunConfig.model_validate(merged)
    except (ValidationError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    if seed is not None:
        run.train.seed = seed
        run.synth.seed = seed
    return run


def _run(args: argparse.Namespace) -> RunConfig:
    return load_run_config(args.config, args.preset, args.seed)


def _out_dir(args: argparse.Namespace) -> Path:
    return Path(args.out_dir) if args.out_dir else settings.OUT_DIR


def _print_json(payload: str) -> None:
    sys.stdout.write(payload + "\n")


def cmd_synth(args: argparse.Namespace) -> int:
    run = _run(args)
    data_dir = Path(args.data_dir) if args.data_dir else settings.DATA_DIR
    generate_dataset(data_dir, args.count, args.size, run.synth, source_dir=args.source_dir)
    return 0


def _train(args: argparse.Namespace, stage: Stage) -> int:
    run = _run(args)
    out_dir = _out_dir(args)
    pairs = load_pairs(Path(args.data_dir) if args.data_dir else settings.DATA_DIR, limit=args.limit)
    if stage == Stage.PRETRAIN:
        result = stage_pretrain(run, pairs, out_dir, iterations=args.iterations)
    else:
        previous = Stage.PRETRAIN if stage == Stage.DIFFUSION else Stage.DIFFUSION
        checkpoint = Path(args.checkpoint) if args.checkpoint else out_dir / CHECKPOINT_NAMES[previous]
        runner = stage_diffusion if stage == Stage.DIFFUSION else stage_joint
        result = runner(run, pairs, out_dir, checkpoint, iterations=args.iterations)
    logger.info(
        "%s finished: total loss %.6f -> %.6f, checkpoint %s",
        stage.value, result.initial_total, result.final_total, result.checkpoint,
    )
    return 0


def cmd_pretrain(args: argparse.Namespace) -> int:
    return _train(args, Stage.PRETRAIN)


def cmd_train_diffusion(args: argparse.Namespace) -> int:
    return _train(args, Stage.DIFFUSION)


def cmd_train_joint(args: argparse.Namespace) -> int:
    return _train(args, Stage.JOINT)


def _checkpoint(args: argparse.Namespace) -> Path:
    return Path(args.checkpoint) if args.checkpoint else _out_dir(args) / CHECKPOINT_NAMES[Stage.JOINT]


def _seed(args: argparse.Namespace) -> int:
    return args.seed if args.seed is not None else settings.DEFAULT_SEED


def cmd_infer(args: argparse.Namespace) -> int:
    out_path = Path(args.output) if args.output else Path(args.input).with_name(f"{Path(args.input).stem}_restored.ppm")
    result = infer(args.input, _checkpoint(args), _seed(args), out_path=out_path, gt_path=args.gt)
    if result.metrics is not None:
        sys.stdout.write(
            f"PSNR={result.metrics.psnr:.4f} SSIM={result.metrics.ssim:.4f} "
            f"(input PSNR={result.input_metrics.psnr:.4f} SSIM={result.input_metrics.ssim:.4f})\n"
        )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    data_dir = Path(args.data_dir) if args.data_dir else settings.DATA_DIR
    report = evaluate(data_dir, _checkpoint(args), _seed(args), limit=args.limit)
    _print_json(report.model_dump_json(indent=2))
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    run = _run(args)
    report = audit_model(run.model, seed=_seed(args), max_coords=args.max_coords, tolerance=args.tolerance)
    sys.stdout.write(f"gradcheck {'passed' if report.ok else 'FAILED'}: {report.summary()}\n")
    for check in report.failures()[:10]:
        sys.stdout.write(
            f"  {check.name}{list(check.index)} analytic={check.analytic:.6e} numeric={check.numeric:.6e}\n"
        )
    return 0 if report.ok else EXIT_FAILURE


def cmd_serve(args: argparse.Namespace) -> int:
    if args.checkpoint:
        settings.CHECKPOINT_PATH = args.checkpoint
    uvicorn.run("app.main:app", host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="TOML run configuration")
    common.add_argument("--seed", type=int, default=None, help="Seed for weights, data and sampling")
    common.add_argument("--preset", choices=[p.value for p in Preset], default=None, help="Model size preset")
    common.add_argument("--out-dir", type=Path, default=None, help="Checkpoints and metrics (default OUT_DIR)")
    common.add_argument("--data-dir", type=Path, default=None, help="Dataset root (default DATA_DIR)")
    common.add_argument("--log-level", default=None, help="Overrides LOG_LEVEL")

    parser = argparse.ArgumentParser(prog="reflect", description="Reflection removal with frequency prompts.")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", parents=[common], help="Generate synthetic training pairs")
    synth.add_argument("--count", type=int, default=4)
    synth.add_argument("--size", type=int, default=64)
    synth.add_argument("--source-dir", type=Path, default=None, help="Folder of images used as B and R")
    synth.set_defaults(func=cmd_synth)

    for name, func, help_text in (
        ("pretrain", cmd_pretrain, "Stage 1: pre-train FPE_pre and the restorer"),
        ("train-diffusion", cmd_train_diffusion, "Stage 2: train FPE_con and the denoisers"),
        ("train-joint", cmd_train_joint, "Stage 3: joint training"),
    ):
        stage = sub.add_parser(name, parents=[common], help=help_text)
        stage.add_argument("--iterations", type=int, default=None, help="Overrides the preset's count")
        stage.add_argument("--checkpoint", type=Path, default=None, help="Previous stage checkpoint")
        stage.add_argument("--limit", type=int, default=None, help="Use only the first N pairs")
        stage.set_defaults(func=func)

    infer = sub.add_parser("infer", parents=[common], help="Restore one image")
    infer.add_argument("input", type=Path)
    infer.add_argument("-o", "--output", type=Path, default=None)
    infer.add_argument("--gt", type=Path, default=None, help="Ground truth for PSNR/SSIM")
    infer.add_argument("--checkpoint", type=Path, default=None)
    infer.set_defaults(func=cmd_infer)

    evaluate = sub.add_parser("eval", parents=[common], help="Mean PSNR/SSIM over a pairs directory")
    evaluate.add_argument("--checkpoint", type=Path, default=None)
    evaluate.add_argument("--limit", type=int, default=None)
    evaluate.set_defaults(func=cmd_eval)

    audit = sub.add_parser("gradcheck", parents=[common], help="Finite-difference gradient audit")
    audit.add_argument("--max-coords", type=int, default=2000)
    audit.add_argument("--tolerance", type=float, default=1e-3)
    audit.set_defaults(func=cmd_gradcheck)

    serve = sub.add_parser("serve", parents=[common], help="Run the HTTP API")
    serve.add_argument("--checkpoint", type=Path, default=None)
    serve.add_argument("--host", default="0.0.0.0")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except ReflectionError as exc:
        logger.error("%s", exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
