"""Per-round metrics schema and locale-free CSV serialization.

Column order is fixed and part of the external contract; floats are
written with repr (shortest round-trip, '.' decimal) so identical runs
produce byte-identical files on any platform.
"""

import csv
from dataclasses import dataclass, fields

COLUMNS = [
    "round", "train_loss", "test_loss", "test_acc", "E_t", "Ebar_t",
    "q_t", "b_t", "frozen", "rebased", "sent", "skipped", "forced",
    "bits_round", "bits_cum",
]

_INT_COLUMNS = {"round", "b_t", "frozen", "rebased", "sent", "skipped", "forced",
                "bits_round", "bits_cum"}


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    train_loss: float
    test_loss: float
    test_acc: float
    E_t: float
    Ebar_t: float
    q_t: float
    b_t: int
    frozen: int
    rebased: int
    sent: int
    skipped: int
    forced: int
    bits_round: int
    bits_cum: int

    def __post_init__(self):
        if self.bits_round < 0 or self.bits_cum < 0:
            raise ValueError("bit counts must be nonnegative")

    def as_row(self) -> list[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(str(int(v)) if f.name in _INT_COLUMNS else repr(float(v)))
        return out


def write_metrics_csv(path, rows: list[RoundMetrics]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in rows:
            writer.writerow(row.as_row())


def read_metrics_csv(path) -> dict[str, list[float]]:
    """Columns as float lists (integers included); header validated."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != COLUMNS:
            raise ValueError(f"unexpected CSV header in {path}: {header}")
        cols: dict[str, list[float]] = {c: [] for c in COLUMNS}
        for row in reader:
            for c, v in zip(COLUMNS, row):
                cols[c].append(float(v))
    return cols
