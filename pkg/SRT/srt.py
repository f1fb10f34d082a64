import logging

from dataclasses import replace
from typing import Optional, Sequence

from .args import TypedArgumentParser, argument_parser
from .checkpoint import load_checkpoint
from .config import CONFIG, config_load, format_attack, parse_attack
from .errors import SRTException
from .figures import emit_histogram_svg, emit_channel_histogram_svg
from .harness import compare_runs, evaluate_checkpoint, output_dir, run_experiment

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_IO = 3

def _train(args: TypedArgumentParser) -> None:
    config = config_load(args.config)  # type: ignore[arg-type]
    if args.seed is not None:
        config = replace(config, seed=args.seed)

    rows = run_experiment(config, args.out, args.workers)
    print(f"{len(rows)} rows written to {args.out or output_dir(config)}")

def _eval(args: TypedArgumentParser) -> None:
    spec = parse_attack(args.attack)
    value = evaluate_checkpoint(load_checkpoint(args.checkpoint), spec, args.workers)  # type: ignore[arg-type]
    print(f"{format_attack(spec)}: {value:.2f}%")

def _histogram(args: TypedArgumentParser) -> None:
    model = load_checkpoint(args.checkpoint).model  # type: ignore[arg-type]
    emit = emit_channel_histogram_svg if args.channels else emit_histogram_svg
    histogram = emit(model, args.out, args.bins)  # type: ignore[arg-type]
    print(f"{histogram.total} values binned into {args.out}")

def _compare(args: TypedArgumentParser) -> None:
    text, _ = compare_runs(args.csv, args.out)
    print(text)

COMMANDS = {
    "train": _train,
    "eval": _eval,
    "histogram": _histogram,
    "compare": _compare,
}

def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=CONFIG.LOG.LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        args = argument_parser(argv)
        logging.getLogger().setLevel(args.log_level)
        COMMANDS[args.command](args)
    except OSError as err:
        logger.error("%s", err)
        return EXIT_IO
    except SRTException as err:
        logger.error("%s", err)
        return EXIT_INVALID

    return EXIT_OK
