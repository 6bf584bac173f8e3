"""Agreement percentages grouped by level, scientific area or recruitment field."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence, TextIO

from .assessment import AgreementRecord
from .taxonomy import Level, RecruitmentField

GROUPINGS = ("level", "level_sa", "level_rf")
METRIC_LABELS = (
    ("overall", "Overall agreement"),
    ("a", "Journals (A)"),
    ("b", "Citations (B)"),
    ("c", "H-index (C)"),
)


@dataclass(frozen=True)
class AgreementRow:
    """An agreement record together with the application's level and field."""

    record: AgreementRecord
    level: Level
    rf: RecruitmentField


@dataclass(frozen=True)
class AgreementReport:
    group_key: tuple
    n: int
    agree_overall: int
    n_a: int
    agree_a: int
    n_b: int
    agree_b: int
    n_c: int
    agree_c: int

    def fraction(self, metric: str) -> Optional[Fraction]:
        """Exact share of agreeing records, or None for an empty cell."""
        if metric == "overall":
            num, den = self.agree_overall, self.n
        else:
            num, den = getattr(self, f"agree_{metric}"), getattr(self, f"n_{metric}")
        return Fraction(num, den) if den else None

    def pct(self, metric: str) -> Optional[float]:
        f = self.fraction(metric)
        return None if f is None else float(100 * f)

    @property
    def pct_overall(self) -> float:
        return self.pct("overall")

    @property
    def pct_a(self) -> Optional[float]:
        return self.pct("a")

    @property
    def pct_b(self) -> Optional[float]:
        return self.pct("b")

    @property
    def pct_c(self) -> Optional[float]:
        return self.pct("c")

    @property
    def label(self) -> str:
        return group_label(self.group_key)


def group_key(row: AgreementRow, group_by: str) -> tuple:
    if group_by == "level":
        return (row.level,)
    if group_by == "level_sa":
        return (row.level, row.rf.sa)
    if group_by == "level_rf":
        return (row.level, row.rf)
    raise ValueError(f"unknown grouping {group_by!r}; expected one of {GROUPINGS}")


def group_label(key: tuple) -> str:
    parts = []
    for k in key:
        if isinstance(k, Level):
            parts.append(k.value)
        elif isinstance(k, int):
            parts.append(f"SA {k:02d}")
        else:
            parts.append(str(k))
    return " ".join(parts)


def aggregate(rows: Iterable[AgreementRow], group_by: str = "level") -> list[AgreementReport]:
    """Fold rows into per-group counts, sorted by group key."""
    counts: dict[tuple, list[int]] = {}
    for row in rows:
        key = group_key(row, group_by)
        c = counts.setdefault(key, [0] * 8)
        rec = row.record
        c[0] += 1
        c[1] += bool(rec.agree_overall)
        for i, flag in enumerate(rec.per_metric):
            if flag is not None:
                c[2 + 2 * i] += 1
                c[3 + 2 * i] += bool(flag)
    return [AgreementReport(key, *counts[key]) for key in sorted(counts)]


def rank_groups(reports: Sequence[AgreementReport], by: str = "overall") -> list[AgreementReport]:
    """Ascending by agreement; ties keep group-key order. Empty cells sort first."""
    by = by.removeprefix("pct_")

    def key(r: AgreementReport):
        f = r.fraction(by)
        return (f is not None, f if f is not None else 0, r.group_key)

    return sorted(reports, key=key)


def _fmt(pct: Optional[float]) -> str:
    return "" if pct is None else f"{pct:.2f}"


def write_table(reports: Sequence[AgreementReport], fh: TextIO, delimiter: str = ",") -> None:
    """Rows are metrics, columns are groups, as in the published tables."""
    writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
    writer.writerow(["metric"] + [r.label for r in reports])
    writer.writerow(["Number of candidates"] + [r.n for r in reports])
    for metric, title in METRIC_LABELS:
        writer.writerow([title] + [_fmt(r.pct(metric)) for r in reports])
    for metric, title in METRIC_LABELS[1:]:
        writer.writerow([f"n {title}"] + [getattr(r, f"n_{metric}") for r in reports])
