from typing import Optional, Sequence, NoReturn
from argparse import ArgumentParser, Namespace

from .config import CONFIG
from .errors import ArgumentParserError

class TypedArgumentParser(Namespace):
    command: str = ""
    log_level: str = "INFO"
    config: Optional[str] = None
    seed: Optional[int] = None
    out: Optional[str] = None
    workers: int = 1
    checkpoint: Optional[str] = None
    attack: str = "none"
    bins: int = 100
    channels: bool = False
    csv: list[str] = []

class _Parser(ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise ArgumentParserError(f"{self.prog}: {message}")

def argument_parser(argv: Optional[Sequence[str]] = None) -> TypedArgumentParser:
    parser = _Parser(prog="SRT", description="Sparse robust training toolkit")
    parser.add_argument("--log-level", type=str, default=CONFIG.LOG.LEVEL, choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    train = commands.add_parser("train", help="run one experiment")
    train.add_argument("--config", type=str, required=True)
    train.add_argument("--seed", type=int)
    train.add_argument("--out", type=str)
    train.add_argument("--workers", type=int, default=1)

    evaluate = commands.add_parser("eval", help="accuracy of a checkpoint on its test split")
    evaluate.add_argument("--checkpoint", type=str, required=True)
    evaluate.add_argument("--attack", type=str, default="none")
    evaluate.add_argument("--workers", type=int, default=1)

    histogram = commands.add_parser("histogram", help="weight histogram of a checkpoint as SVG")
    histogram.add_argument("--checkpoint", type=str, required=True)
    histogram.add_argument("--out", type=str, required=True)
    histogram.add_argument("--bins", type=int, default=100)
    histogram.add_argument("--channels", action="store_true")

    compare = commands.add_parser("compare", help="best-epoch rows of several runs side by side")
    compare.add_argument("csv", nargs="+")
    compare.add_argument("--out", type=str)

    args = parser.parse_args(argv, namespace=TypedArgumentParser())
    CONFIG.LOG.LEVEL = args.log_level
    return args
