"""
hailcast command line

    hailcast [--seed N] [--config FILE] [--out DIR] <command> [flags]

Commands: gen-data, train, nowcast, evaluate, ablate.

Flags mirror Settings fields in kebab-case. Precedence is
flag > --config file > HAILCAST_* environment > default. The resolved
settings are written to ``<out>/config.<command>.json`` before the command
runs. ``gen-data`` and ``train`` also write ``<out>/config.json``, the
snapshot that reproduces the dataset and model; later commands never
touch it.

Exit codes: 0 success, 1 user or configuration error, 2 internal error.
"""

import argparse
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any, NoReturn

import orjson
import structlog
from pydantic import ValidationError

from hailcast import __version__
from hailcast.cli.commands import COMMANDS, METHODS
from hailcast.config import Settings
from hailcast.core.errors import ConfigurationError, HailcastError
from hailcast.core.logging import configure_logging
from hailcast.numeric.tensor import set_precision

logger = structlog.get_logger(__name__)

CONFIG_SNAPSHOT = "config.json"
COMMAND_SNAPSHOT = "config.{command}.json"
RUN_DEFINING = frozenset({"gen-data", "train"})
EXIT_OK = 0
EXIT_USER = 1
EXIT_INTERNAL = 2


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors as configuration errors."""

    def error(self, message: str) -> NoReturn:
        raise ConfigurationError(f"{self.prog}: {message}")


def _common_flags() -> argparse.ArgumentParser:
    # SUPPRESS keeps unset flags out of the namespace so subcommand and
    # top-level positions can both be used.
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, dest="seed", default=argparse.SUPPRESS)
    common.add_argument("--config", type=Path, dest="config_file", default=argparse.SUPPRESS)
    common.add_argument("--out", type=Path, dest="out_dir", default=argparse.SUPPRESS)
    common.add_argument("--data-dir", type=Path, dest="data_dir", default=argparse.SUPPRESS)
    common.add_argument("--log-level", dest="log_level", default=argparse.SUPPRESS)
    common.add_argument(
        "--log-format", choices=["json", "console"], dest="log_format", default=argparse.SUPPRESS
    )
    common.add_argument("--workers", type=int, dest="workers", default=argparse.SUPPRESS)
    common.add_argument(
        "--precision", choices=["float64", "float32"], dest="precision", default=argparse.SUPPRESS
    )
    return common


def _geometry_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--height", type=int, dest="height")
    p.add_argument("--width", type=int, dest="width")
    p.add_argument("--n", type=int, dest="history_steps", help="history steps N")
    p.add_argument("--m", type=int, dest="forecast_steps", help="forecast steps M")
    p.add_argument("--patch", type=int, dest="patch")
    p.add_argument("--reference-mode", choices=["neighborhood", "full_grid"], dest="reference_mode")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant", choices=["noembd", "timeembd", "spen"], dest="variant")
    p.add_argument("--d-model", type=int, dest="d_model")
    p.add_argument("--token-patch", type=int, dest="token_patch")
    p.add_argument("--n-blocks", type=int, dest="n_blocks")
    p.add_argument("--n-heads", type=int, dest="n_heads")
    p.add_argument("--diffusion-steps", type=int, dest="diffusion_steps")
    p.add_argument("--beta-start", type=float, dest="beta_start")
    p.add_argument("--beta-end", type=float, dest="beta_end")
    p.add_argument("--target-anchor", choices=["persistence", "none"], dest="target_anchor")
    p.add_argument("--residual-scale", type=float, dest="residual_scale")


def _training_flags(p: argparse.ArgumentParser, steps_flag: str = "--steps") -> None:
    p.add_argument(steps_flag, type=int, dest="train_steps")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float, dest="lr")
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--ckpt-every", type=int, dest="ckpt_every")
    p.add_argument("--eval-every", type=int, dest="eval_every")
    p.add_argument("--log-every", type=int, dest="log_every")


def _sampling_flags(p: argparse.ArgumentParser, steps_flag: str = "--steps") -> None:
    p.add_argument("--sampler", choices=["ddpm", "ddim"], dest="sampler")
    p.add_argument(steps_flag, type=int, dest="sampler_steps")
    p.add_argument("--ensemble", type=int, dest="ensemble_size")


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = _Parser(prog="hailcast", description="Patch-conditioned diffusion nowcasting", parents=[common])
    parser.add_argument("--version", action="version", version=f"hailcast {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", parents=[common], help="generate the synthetic dataset")
    _geometry_flags(gen)
    gen.add_argument("--frames", type=int, dest="frames")
    gen.add_argument("--n-sequences", type=int, dest="n_sequences")
    gen.add_argument("--n-cells", type=int, dest="n_cells")
    gen.add_argument("--noise-std", type=float, dest="noise_std")
    gen.add_argument("--stride", type=int, dest="window_stride")
    gen.add_argument("--frame-interval", type=float, dest="frame_interval_minutes")

    tr = sub.add_parser("train", parents=[common], help="train the denoiser")
    _geometry_flags(tr)
    _model_flags(tr)
    _training_flags(tr)

    nc = sub.add_parser("nowcast", parents=[common], help="write per-window predictions")
    _geometry_flags(nc)
    _sampling_flags(nc)
    nc.add_argument("--checkpoint", type=Path, dest="checkpoint")
    nc.add_argument("--method", choices=list(METHODS), default="diffusion")
    nc.add_argument("--split", choices=["train", "val", "test"], default="test")
    nc.add_argument("--limit", type=int, default=None, help="only the first K windows")
    nc.add_argument("--pgm", action="store_true", help="also render PGM image strips")

    ev = sub.add_parser("evaluate", parents=[common], help="score predictions, write metrics.json")
    _geometry_flags(ev)
    ev.add_argument("--pred-dir", type=Path, default=None)
    ev.add_argument("--threshold", type=float, dest="threshold")
    ev.add_argument("--tolerance", type=float, dest="target_tolerance")

    ab = sub.add_parser("ablate", parents=[common], help="compare noembd / timeembd / spen")
    _geometry_flags(ab)
    _model_flags(ab)
    _training_flags(ab, steps_flag="--train-steps")
    _sampling_flags(ab, steps_flag="--sampler-steps")
    ab.add_argument("--threshold", type=float, dest="threshold")
    ab.add_argument("--seeds", type=int, nargs="+", default=None)
    return parser


def resolve_settings(args: argparse.Namespace) -> Settings:
    """Merge flags over the optional config file; env and defaults fill the rest."""
    values: dict[str, Any] = {}
    config_file = getattr(args, "config_file", None)
    if config_file is not None:
        if not Path(config_file).exists():
            raise ConfigurationError(f"config file not found: {config_file}")
        values.update(orjson.loads(Path(config_file).read_bytes()))
    flags = {
        k: v
        for k, v in vars(args).items()
        if k in Settings.model_fields and v is not None
    }
    values.update(flags)
    return Settings(**values)


def snapshot_settings(settings: Settings, command: str) -> list[Path]:
    """Write the per-command snapshot, and the run snapshot for gen-data/train."""
    paths = [settings.out_dir / COMMAND_SNAPSHOT.format(command=command)]
    if command in RUN_DEFINING:
        paths.append(settings.out_dir / CONFIG_SNAPSHOT)
    for path in paths:
        settings.save(path)
    return paths


def _validation_message(e: ValidationError) -> str:
    first = e.errors()[0]
    return str(first.get("msg", e)).removeprefix("Value error, ")


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        settings = resolve_settings(args)
        configure_logging(settings.log_level, settings.log_format)
        set_precision(settings.precision)
        snapshot_settings(settings, args.command)
        COMMANDS[args.command](settings, args)
    except ValidationError as e:
        message = _validation_message(e)
        logger.error("Invalid settings", error=message)
        print(f"hailcast: error: {message}", file=sys.stderr)
        return EXIT_USER
    except HailcastError as e:
        logger.error("Command failed", **e.to_dict()["error"])
        print(f"hailcast: error: {e.message}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        logger.error("I/O failure", error=str(e))
        print(f"hailcast: error: {e}", file=sys.stderr)
        return EXIT_USER
    except Exception as e:
        logger.exception("Unexpected failure", error=str(e))
        print(f"hailcast: internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
