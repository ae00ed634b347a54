"""
Convergence traces and solution vectors on disk.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Union
import csv
import logging

import numpy as np

from .problem_validator import ProblemParseError

logger = logging.getLogger(__name__)

TRACE_FIELDS = ("iter", "objective", "rel_change", "seconds", "recond")


@dataclass
class TraceRecord:
    """One completed iteration."""
    iter: int
    objective: float
    rel_change: float
    seconds: float
    recond: bool = False


@dataclass
class ConvergenceTrace:
    """Per-iteration records of a solver run."""
    records: List[TraceRecord] = field(default_factory=list)

    def append(self, record: TraceRecord) -> None:
        if self.records:
            last = self.records[-1]
            if record.iter != last.iter + 1:
                raise ValueError(f"trace records must be consecutive, got {record.iter} after {last.iter}")
            # Clock resolution may report equal times, never a decrease
            record.seconds = max(record.seconds, last.seconds)
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TraceRecord]:
        return iter(self.records)

    def __getitem__(self, index: int) -> TraceRecord:
        return self.records[index]

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records], dtype=np.float64)

    @property
    def recond_iterations(self) -> List[int]:
        return [r.iter for r in self.records if r.recond]

    def same_values(self, other: "ConvergenceTrace") -> bool:
        """Bitwise equality of everything but the wall-clock column."""
        if len(self) != len(other):
            return False
        return all(
            a.iter == b.iter and a.recond == b.recond
            and np.array_equal(np.float64(a.objective), np.float64(b.objective))
            and np.array_equal(np.float64(a.rel_change), np.float64(b.rel_change))
            for a, b in zip(self.records, other.records)
        )

    def to_csv(self, path: Union[str, Path]) -> Path:
        """Write the trace with header ``iter,objective,rel_change,seconds,recond``."""
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as csvfile:
            writer = csv.DictWriter(csvfile, fieldnames=TRACE_FIELDS, lineterminator="\n")
            writer.writeheader()
            for record in self.records:
                writer.writerow({
                    "iter": record.iter,
                    "objective": repr(float(record.objective)),
                    "rel_change": repr(float(record.rel_change)),
                    "seconds": repr(float(record.seconds)),
                    "recond": int(record.recond),
                })
        logger.info(f"Wrote trace with {len(self.records)} records to {path}")
        return path

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "ConvergenceTrace":
        path = Path(path)
        with open(path, "r", newline="", encoding="utf-8") as csvfile:
            reader = csv.DictReader(csvfile)
            if tuple(reader.fieldnames or ()) != TRACE_FIELDS:
                raise ValueError(f"{path}: unexpected trace header {reader.fieldnames}")
            trace = cls()
            for row in reader:
                trace.records.append(TraceRecord(
                    iter=int(row["iter"]),
                    objective=float(row["objective"]),
                    rel_change=float(row["rel_change"]),
                    seconds=float(row["seconds"]),
                    recond=row["recond"] == "1",
                ))
        return trace


def write_solution(x: np.ndarray, path: Union[str, Path]) -> Path:
    """One value per line in vertex order, written with full precision."""
    path = Path(path)
    with open(path, "w", newline="\n", encoding="utf-8") as handle:
        for value in np.asarray(x, dtype=np.float64):
            handle.write(f"{float(value)!r}\n")
    logger.info(f"Wrote solution with {len(x)} values to {path}")
    return path


def read_solution(path: Union[str, Path], num_vertices: Optional[int] = None) -> np.ndarray:
    path = Path(path)
    values = []
    with open(path, "r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                values.append(float(text))
            except ValueError:
                raise ProblemParseError(str(path), number, f"malformed number '{text}'")
    x = np.array(values, dtype=np.float64)
    if num_vertices is not None and len(x) != num_vertices:
        raise ProblemParseError(str(path), len(values) + 1, f"expected {num_vertices} values, got {len(x)}")
    return x
