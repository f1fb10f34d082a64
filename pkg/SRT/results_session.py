import csv

from pathlib import Path
from threading import Lock
from typing import Optional, TextIO, Union

import pandas as pd

from .checkpoint import save_checkpoint
from .models import Model
from .pruners import PrunerState
from .srt_types import ReportRow, ExecuteResult

SCHEMA_LINE = "# srt-results v1"

RESULT_COLUMNS = [
    "config_hash", "pruner", "split", "epoch",
    "a1", "a2", "a3", "sparsity", "channel_sparsity", "lagrangian", "seconds",
    "best_val",
]

def _row_values(row: ReportRow) -> list[str]:
    r = row.record
    return [
        row.config_hash, row.pruner, row.split, str(r.epoch),
        repr(float(r.a1)), repr(float(r.a2)), repr(float(r.a3)),
        repr(float(r.sparsity)), repr(float(r.channel_sparsity)), repr(float(r.lagrangian)), repr(float(r.seconds)),
        "1" if row.best_val else "0",
    ]

class ResultsSession:
    """Single writer for the files of one run directory."""

    directory: Path
    file: Optional[TextIO] = None

    def __init__(self) -> None:
        self.lock = Lock()

    def init(self, directory: Union[str, Path]) -> ExecuteResult[Path]:
        try:
            self.directory = Path(directory)
            self.directory.mkdir(parents=True, exist_ok=True)
            path = self.directory / "results.csv"
            self.file = open(path, "w", encoding="utf-8", newline="")
            self.file.write(SCHEMA_LINE + "\n")
            csv.writer(self.file, lineterminator="\n").writerow(RESULT_COLUMNS)
        except OSError as err:
            return (False, str(err))

        return (True, path)

    def appendRows(self, rows: list[ReportRow]) -> ExecuteResult[int]:
        if self.file is None:
            return (False, "session is not initialised")

        try:
            with self.lock:
                writer = csv.writer(self.file, lineterminator="\n")
                for row in rows:
                    writer.writerow(_row_values(row))
                self.file.flush()
        except OSError as err:
            return (False, str(err))

        return (True, len(rows))

    def saveCheckpoint(self, name: str, model: Model, state: Optional[PrunerState] = None, config_text: str = "") -> ExecuteResult[Path]:
        path = self.directory / name
        try:
            with self.lock:
                save_checkpoint(path, model, state, config_text)
        except OSError as err:
            return (False, str(err))

        return (True, path)

    def saveText(self, name: str, text: str) -> ExecuteResult[Path]:
        path = self.directory / name
        try:
            with self.lock:
                path.write_text(text, encoding="utf-8")
        except OSError as err:
            return (False, str(err))

        return (True, path)

    def readRows(self, path: Union[str, Path]) -> ExecuteResult[pd.DataFrame]:
        try:
            with open(path, "r", encoding="utf-8", newline="") as file:
                first = file.readline().rstrip("\n")
                if first != SCHEMA_LINE:
                    return (False, f"{path}: expected schema line {SCHEMA_LINE!r}, got {first!r}")
                frame = pd.read_csv(file, dtype={"config_hash": str, "pruner": str, "split": str})
        except (OSError, ValueError) as err:
            return (False, str(err))

        if list(frame.columns) != RESULT_COLUMNS:
            return (False, f"{path}: columns {list(frame.columns)} do not match {RESULT_COLUMNS}")

        return (True, frame)

    def close(self) -> None:
        if self.file is not None:
            self.file.close()
            self.file = None
