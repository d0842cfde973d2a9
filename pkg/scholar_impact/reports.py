"""Journal quartile report and plain-text tables for ``--pretty`` output"""

import logging
import math
from typing import Any, Dict, List, Mapping, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .exceptions import EmptyGroup

logger = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.05, 0.25)


class GroupSummary(BaseModel):
    """Means of the top fractions and of the whole group"""

    model_config = ConfigDict(frozen=True)

    label: str
    n: int = Field(gt=0)
    top_means: Dict[str, float]
    overall_mean: float


class QuartileReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    fractions: List[float]
    groups: List[GroupSummary]

    def group(self, label: str) -> GroupSummary:
        for summary in self.groups:
            if summary.label == label:
                return summary
        raise KeyError(label)


def fraction_label(fraction: float) -> str:
    return f"top_{round(fraction * 100, 6):g}pct"


def top_count(fraction: float, n: int) -> int:
    """ceil(fraction * n), at least 1; rounding first keeps 0.05 * 100 at 5"""
    return max(1, math.ceil(round(fraction * n, 9)))


def journal_report(
    groups: Mapping[str, Sequence[float]],
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
) -> QuartileReport:
    """Per group: mean of the top fractions of predictions and the overall mean"""
    if not groups:
        raise EmptyGroup("no groups to report on")
    for fraction in fractions:
        if not 0.0 < fraction <= 1.0:
            raise ValueError(f"fractions must lie in (0, 1], got {fraction}")

    summaries = []
    for label in sorted(groups):
        values = np.sort(np.asarray(groups[label], dtype=float))[::-1]
        if values.size == 0:
            raise EmptyGroup(f"group '{label}' has no predictions")
        summaries.append(GroupSummary(
            label=label,
            n=int(values.size),
            top_means={fraction_label(f): float(values[:top_count(f, values.size)].mean()) for f in fractions},
            overall_mean=float(values.mean()),
        ))
        logger.debug(f"Group {label}: n={values.size}")

    logger.info(f"Quartile report over {len(summaries)} group(s)")
    return QuartileReport(fractions=list(fractions), groups=summaries)


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    if value is None:
        return "-"
    return str(value)


def render_table(rows: Sequence[Mapping[str, Any]], columns: Sequence[str] = ()) -> str:
    """Left-aligned text table; columns default to the first row's keys"""
    if not rows:
        return "(no rows)"
    columns = list(columns) or list(rows[0].keys())
    cells = [[_cell(row.get(c)) for c in columns] for row in rows]
    widths = [max(len(c), *(len(r[i]) for r in cells)) for i, c in enumerate(columns)]

    lines = [
        "  ".join(c.ljust(w) for c, w in zip(columns, widths)),
        "  ".join("-" * w for w in widths),
    ]
    lines.extend("  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in cells)
    return "\n".join(line.rstrip() for line in lines)


def report_rows(report: QuartileReport) -> List[Dict[str, Any]]:
    return [
        {"group": g.label, "n": g.n, **g.top_means, "overall_mean": g.overall_mean}
        for g in report.groups
    ]
