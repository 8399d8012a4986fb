"""
Command-line front end.

Exit codes: 0 on success, 2 for configuration errors, 3 for missing artifacts, 1 otherwise.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Callable, Sequence
from pathlib import Path

from . import monkay
from .exceptions import ConfigError, MissingArtifactError
from .experiments import (
    DEFAULT_FRACTIONS,
    VARIANTS,
    cmd_gen_data,
    cmd_replay_study,
    cmd_report,
    cmd_run,
    cmd_stability_study,
)
from .settings import EverAdaptSettings, get_settings, load_settings

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return number


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="TOML config file")
    common.add_argument("--out", type=Path, default=None, help="output root (env EVERADAPT_OUT)")
    common.add_argument("--preset", choices=["full", "desk"], default="desk")
    common.add_argument("--seeds", type=_positive_int, default=None, help="number of seeds")
    common.add_argument("--scenario", choices=["1", "2", "3", "all"], default=None)
    common.add_argument("--workers", type=_positive_int, default=None)
    common.add_argument("--log-level", default=None)

    parser = argparse.ArgumentParser(
        prog="everadapt", description="Continual unsupervised domain adaptation experiments."
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("gen-data", parents=[common], help="generate the synthetic benchmark")
    run = commands.add_parser("run", parents=[common], help="run method variants over seeds")
    run.add_argument("--mode", nargs="+", choices=sorted(VARIANTS), default=["everadapt"])
    replay = commands.add_parser("replay-study", parents=[common], help="sweep the replay size")
    replay.add_argument("--fractions", type=float, nargs="+", default=list(DEFAULT_FRACTIONS))
    commands.add_parser("stability-study", parents=[common], help="accuracy spread over seeds")
    commands.add_parser("report", parents=[common], help="print stored metric tables")
    return parser


def _settings_for(args: argparse.Namespace) -> EverAdaptSettings:
    settings = load_settings(args.config, preset=args.preset)
    update: dict[str, object] = {}
    if args.workers is not None:
        update["workers"] = args.workers
    if args.scenario is not None:
        update["scenario"] = settings.scenario.model_copy(update={"order": args.scenario})
    return settings.model_copy(update=update) if update else settings


def _configure_logging(level: str) -> None:
    if not isinstance(logging.getLevelName(level.upper()), int):
        raise ConfigError(f"Unknown log level {level!r}.")
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT)


def _seeds(args: argparse.Namespace) -> list[int]:
    return list(range(args.seeds if args.seeds is not None else get_settings().seeds))


def _gen_data(args: argparse.Namespace, out: Path) -> None:
    print(cmd_gen_data(out))


def _run(args: argparse.Namespace, out: Path) -> None:
    frame = cmd_run(out, modes=args.mode, seeds=_seeds(args))
    print(frame.to_string(index=False))


def _replay_study(args: argparse.Namespace, out: Path) -> None:
    frame = cmd_replay_study(out, fractions=args.fractions, seeds=_seeds(args))
    print(frame.to_string(index=False))


def _stability_study(args: argparse.Namespace, out: Path) -> None:
    print(cmd_stability_study(out, seeds=_seeds(args)).to_string(index=False))


def _report(args: argparse.Namespace, out: Path) -> None:
    for name, frame in cmd_report(out).items():
        print(f"== {name}")
        print(frame.to_string(index=False))


COMMANDS: dict[str, Callable[[argparse.Namespace, Path], None]] = {
    "gen-data": _gen_data,
    "run": _run,
    "replay-study": _replay_study,
    "stability-study": _stability_study,
    "report": _report,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = _settings_for(args)
        _configure_logging(args.log_level or settings.log_level)
        out = args.out if args.out is not None else settings.out
        with monkay.with_settings(settings):
            COMMANDS[args.command](args, out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except Exception:
        logger.exception("everadapt %s failed.", args.command)
        return EXIT_INTERNAL
    return EXIT_OK
