"""TNCSI and same-period TNCSI (TNCSI_SP) from citation cohorts

A cohort's citation counts are summarised as an empirical distribution, an
exponential density is fitted by maximum likelihood and the score of a paper is
the fitted CDF at its citation count.
"""

import calendar
import logging
import math
from collections import Counter
from datetime import date
from enum import Enum
from typing import Dict, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .exceptions import DegenerateCohort, EmptyCohort, InvalidCohort
from .models import Cohort, DateWindow, PaperRecord

logger = logging.getLogger(__name__)


class MetricKind(Enum):
    """Which cohort the score is normalised against"""
    TNCSI = "tncsi"
    TNCSI_SP = "tncsi_sp"


class DiscreteCitationDistribution(BaseModel):
    """Occurrence counts of citation values within a cohort"""

    model_config = ConfigDict(frozen=True)

    counts: Dict[int, int]
    total: int = Field(gt=0)

    @model_validator(mode="after")
    def _consistent(self) -> "DiscreteCitationDistribution":
        if sum(self.counts.values()) != self.total:
            raise ValueError("occurrence counts do not add up to total")
        return self

    def probability(self, citations: int) -> float:
        return self.counts.get(citations, 0) / self.total

    def probabilities(self) -> Dict[int, float]:
        return {x: c / self.total for x, c in sorted(self.counts.items())}


class ExponentialFit(BaseModel):
    """Maximum likelihood exponential fitted to citation counts"""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    rate: float = Field(gt=0, alias="lambda")
    sample_mean: float = Field(ge=0)
    n: int = Field(gt=0)

    def pdf(self, x: float) -> float:
        if x < 0:
            return 0.0
        return self.rate * math.exp(-self.rate * x)

    def cdf(self, x: float) -> float:
        if x <= 0:
            return 0.0
        return -math.expm1(-self.rate * x)

    def log_likelihood(self, samples: Sequence[float], rate: Optional[float] = None) -> float:
        lam = self.rate if rate is None else rate
        values = np.asarray(samples, dtype=float)
        return float(values.size * math.log(lam) - lam * values.sum())


class ImpactScore(BaseModel):
    """Score of one paper against its cohort"""

    model_config = ConfigDict(frozen=True)

    value: float = Field(ge=0.0, le=1.0)
    kind: MetricKind
    fit: ExponentialFit
    cohort_size: int
    topic_phrase: str = ""
    window: Optional[DateWindow] = None

    def rounded(self, digits: int = 3) -> float:
        return round(self.value, digits)


def _add_months(day: date, months: int) -> date:
    month_index = day.year * 12 + (day.month - 1) + months
    year, month = divmod(month_index, 12)
    month += 1
    last_day = calendar.monthrange(year, month)[1]
    return date(year, month, min(day.day, last_day))


def same_period_window(anchor_date: date, half_span_months: int = 6) -> DateWindow:
    """Calendar-month window around a publication date, clamped to month ends"""
    if half_span_months < 0:
        raise ValueError(f"half_span_months must be non-negative, got {half_span_months}")
    return DateWindow(
        start=_add_months(anchor_date, -half_span_months),
        end=_add_months(anchor_date, half_span_months),
    )


def empirical_distribution(cohort: Cohort) -> DiscreteCitationDistribution:
    """Empirical P(X=x) over the cohort's citation counts"""
    if cohort.size == 0:
        raise EmptyCohort(f"cohort '{cohort.topic_phrase}' has no members")
    counts = Counter(cohort.citation_counts)
    return DiscreteCitationDistribution(counts=dict(counts), total=cohort.size)


def fit_exponential(citation_counts: Sequence[int]) -> ExponentialFit:
    """Closed-form exponential MLE: rate = 1 / sample mean"""
    values = list(citation_counts)
    if not values:
        raise EmptyCohort("cannot fit an exponential to an empty sample")
    if any(v < 0 for v in values):
        raise ValueError("citation counts must be non-negative")

    # fsum keeps integer totals exact so this agrees with fit_distribution
    mean = math.fsum(values) / len(values)
    if mean == 0.0:
        raise DegenerateCohort(f"all {len(values)} citation counts are zero; rate is undefined")

    return ExponentialFit(rate=1.0 / mean, sample_mean=mean, n=len(values))


def fit_distribution(distribution: DiscreteCitationDistribution) -> ExponentialFit:
    """Fit from an already tallied distribution"""
    total_citations = sum(x * c for x, c in distribution.counts.items())
    if total_citations == 0:
        raise DegenerateCohort(f"all {distribution.total} citation counts are zero; rate is undefined")
    mean = total_citations / distribution.total
    return ExponentialFit(rate=1.0 / mean, sample_mean=mean, n=distribution.total)


def tncsi_sp_value(cites: int, fit: ExponentialFit) -> float:
    """Integral of the fitted density from 0 to ``cites``"""
    if cites < 0:
        raise ValueError(f"citation count must be non-negative, got {cites}")
    return fit.cdf(cites)


def score_paper(paper: PaperRecord, cohort: Cohort, kind: MetricKind) -> ImpactScore:
    """Score a paper against a cohort (windowed for TNCSI_SP, unwindowed for TNCSI)"""
    if kind is MetricKind.TNCSI_SP:
        if cohort.window is None:
            raise InvalidCohort("TNCSI_SP needs a cohort restricted to a same-period window")
        if paper.publication_date is None:
            raise InvalidCohort(f"paper {paper.paper_id} has no publication date")
        if cohort.anchor_date is not None and cohort.anchor_date != paper.publication_date:
            raise InvalidCohort(
                f"cohort anchored at {cohort.anchor_date}, paper published {paper.publication_date}"
            )
        if not cohort.window.contains(paper.publication_date):
            raise InvalidCohort("cohort window does not cover the paper's publication date")
    elif cohort.window is not None:
        raise InvalidCohort("TNCSI uses the unwindowed cohort")

    distribution = empirical_distribution(cohort)
    fit = fit_distribution(distribution)
    value = tncsi_sp_value(paper.citation_count, fit)

    logger.debug(
        f"{kind.name} for {paper.paper_id}: cites={paper.citation_count} "
        f"lambda={fit.rate:.6g} n={fit.n} -> {value:.6f}"
    )
    return ImpactScore(
        value=value,
        kind=kind,
        fit=fit,
        cohort_size=cohort.size,
        topic_phrase=cohort.topic_phrase,
        window=cohort.window,
    )


def describe_fit(fit: ExponentialFit, upper: Optional[float] = None, points: int = 50) -> Dict[str, list]:
    """Sampled density and CDF of a fit, for plotting or inspection

    The grid runs from 0 to ``upper`` (default: five times the sample mean).
    """
    if points < 2:
        raise ValueError("points must be at least 2")
    upper = upper if upper is not None else 5.0 * fit.sample_mean
    xs = np.linspace(0.0, upper, points)
    return {
        "x": xs.tolist(),
        "pdf": [fit.pdf(x) for x in xs],
        "cdf": [fit.cdf(x) for x in xs],
    }
