"""The three citation-discipline metrics for one application."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Protocol, Union

from .metadata import PublicationRecord
from .taxonomy import DisciplineCategory, Level, RecruitmentField, classify, parse_rf

__all__ = [
    "CandidateApplication",
    "MetricsTriple",
    "NormalizationMode",
    "NormalizationPolicy",
    "scientific_age",
    "window_filter",
    "h_index",
    "compute_metrics",
]


class NotCitationBased(ValueError):
    pass


@dataclass(frozen=True)
class MetricsTriple:
    a_journals: float
    b_citations: float
    c_hindex: float

    def __iter__(self):
        return iter((self.a_journals, self.b_citations, self.c_hindex))


@dataclass(frozen=True)
class CandidateApplication:
    app_id: str
    rf: RecruitmentField
    level: Level
    session_year: int
    dois: tuple[str, ...] = ()
    official_metrics: Optional[MetricsTriple] = None
    official_passed: Optional[bool] = None

    def __post_init__(self):
        object.__setattr__(self, "rf", parse_rf(self.rf))
        object.__setattr__(self, "level", Level.parse(self.level))
        object.__setattr__(self, "dois", tuple(dict.fromkeys(self.dois)))
        if classify(self.rf) is not DisciplineCategory.CD:
            raise NotCitationBased(f"{self.app_id}: {self.rf} is not a citation-based discipline")


class NormalizationMode(enum.Enum):
    NONE = "none"
    AGE = "divide_by_scientific_age"


@dataclass(frozen=True)
class NormalizationPolicy:
    a: NormalizationMode = NormalizationMode.NONE
    b: NormalizationMode = NormalizationMode.NONE
    c: NormalizationMode = NormalizationMode.NONE
    scientific_age_floor: int = 1

    @classmethod
    def uniform(cls, mode: Union[str, NormalizationMode]) -> "NormalizationPolicy":
        if isinstance(mode, str):
            mode = {"none": NormalizationMode.NONE, "age": NormalizationMode.AGE}.get(mode) or NormalizationMode(mode)
        return cls(mode, mode, mode)


class CountSource(Protocol):
    def citation_count(self, doi: str) -> int: ...


def scientific_age(records: Iterable[PublicationRecord], session_year: int, floor: int = 1) -> int:
    years = [r.year for r in records if r.year is not None]
    if not years:
        return floor
    return max(floor, session_year - min(years) + 1)


def window_filter(records: Iterable[PublicationRecord], level: Level, session_year: int) -> list[PublicationRecord]:
    """Keep records strictly younger than the level's window; undated ones are dropped."""
    window = Level.parse(level).window
    return [r for r in records if r.year is not None and session_year - r.year < window]


def h_index(citation_counts: Iterable[int]) -> int:
    h = 0
    for rank, count in enumerate(sorted(citation_counts, reverse=True), start=1):
        if count < rank:
            break
        h = rank
    return h


def _apply(mode: NormalizationMode, value: float, age: int) -> float:
    return value / age if mode is NormalizationMode.AGE else value


def compute_metrics(
    app: CandidateApplication,
    records: Mapping[str, Union[PublicationRecord, str]],
    index: CountSource,
    policy: NormalizationPolicy = NormalizationPolicy(),
) -> MetricsTriple:
    found = [records[d] for d in app.dois if isinstance(records.get(d), PublicationRecord)]
    windowed = window_filter(found, app.level, app.session_year)
    counts = [index.citation_count(r.doi) for r in windowed]
    a = sum(1 for r in windowed if r.is_journal_article)
    b = sum(counts)
    c = h_index(counts)
    if all(m is NormalizationMode.NONE for m in (policy.a, policy.b, policy.c)):
        return MetricsTriple(a, b, c)
    age = scientific_age(found, app.session_year, policy.scientific_age_floor)
    return MetricsTriple(_apply(policy.a, a, age), _apply(policy.b, b, age), _apply(policy.c, c, age))
