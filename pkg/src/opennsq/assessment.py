"""Threshold checks, the two-out-of-three rule, and agreement with official outcomes."""

from __future__ import annotations

import operator
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from .metrics import MetricsTriple
from .taxonomy import ThresholdTriple

COMPARATORS: dict[str, Callable[[float, float], bool]] = {
    "ge": operator.ge,
    ">=": operator.ge,
    "gt": operator.gt,
    ">": operator.gt,
}
PASS_QUOTA = 2


class MissingOfficialData(ValueError):
    pass


def _comparator(name: str) -> Callable[[float, float], bool]:
    try:
        return COMPARATORS[name]
    except KeyError:
        raise ValueError(f"unknown comparator {name!r}; use 'ge' or 'gt'") from None


@dataclass(frozen=True)
class AssessmentResult:
    exceeds: tuple[bool, bool, bool]
    passed: bool


def exceedances(values: Iterable[float], thresholds: ThresholdTriple, comparator: str = "ge") -> tuple[bool, bool, bool]:
    cmp = _comparator(comparator)
    a, b, c = (cmp(v, t) for v, t in zip(values, thresholds))
    return a, b, c


def evaluate(metrics: MetricsTriple, thresholds: ThresholdTriple, comparator: str = "ge") -> AssessmentResult:
    """Pass when at least two of the three metrics reach their threshold."""
    exceeds = exceedances(metrics, thresholds, comparator)
    return AssessmentResult(exceeds, sum(exceeds) >= PASS_QUOTA)


@dataclass(frozen=True)
class AgreementRecord:
    app_id: str
    agree_a: Optional[bool]
    agree_b: Optional[bool]
    agree_c: Optional[bool]
    agree_overall: bool
    # official outcome recomputed from official metrics, when they are known
    official_recomputed: Optional[bool] = None
    official_discrepancy: bool = False

    @property
    def per_metric(self) -> tuple[Optional[bool], Optional[bool], Optional[bool]]:
        return self.agree_a, self.agree_b, self.agree_c


def compare(
    app_id: str,
    simulated: AssessmentResult,
    thresholds: ThresholdTriple,
    official_metrics: Optional[MetricsTriple] = None,
    official_passed: Optional[bool] = None,
    comparator: str = "ge",
) -> AgreementRecord:
    """Agreement between a simulated assessment and the official one.

    Metric values are never compared directly, only which side of the
    threshold each falls on. Without official metrics the per-metric flags
    are ``None``; without any official data :class:`MissingOfficialData`
    is raised.
    """
    if official_metrics is None and official_passed is None:
        raise MissingOfficialData(f"{app_id}: no official metrics or outcome")

    per_metric: tuple[Optional[bool], ...] = (None, None, None)
    recomputed = None
    if official_metrics is not None:
        official = evaluate(official_metrics, thresholds, comparator)
        per_metric = tuple(s == o for s, o in zip(simulated.exceeds, official.exceeds))
        recomputed = official.passed

    outcome = official_passed if official_passed is not None else recomputed
    return AgreementRecord(
        app_id,
        *per_metric,
        agree_overall=simulated.passed == outcome,
        official_recomputed=recomputed,
        official_discrepancy=(recomputed is not None and official_passed is not None
                              and recomputed != official_passed),
    )
