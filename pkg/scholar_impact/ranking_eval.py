"""Evaluation metrics: MAE and NDCG@K for score predictions, edit distance and NED for strings"""

import logging
from typing import List, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .exceptions import EmptyInput

logger = logging.getLogger(__name__)


class Prediction(BaseModel):
    """A predicted score paired with its ground truth"""

    model_config = ConfigDict(frozen=True)

    item_id: str
    truth: float = Field(ge=0.0, le=1.0)
    predicted: float = Field(ge=0.0, le=1.0)


class EvalReport(BaseModel):
    """MAE and NDCG@K over one prediction set"""

    model_config = ConfigDict(frozen=True)

    n: int = Field(gt=0)
    mae: float = Field(ge=0.0)
    ndcg_at_k: float = Field(ge=0.0, le=1.0)
    k: int = Field(gt=0)


def _require(pairs: Sequence[Prediction]) -> None:
    if not pairs:
        raise EmptyInput("no predictions to evaluate")


def mae(pairs: Sequence[Prediction]) -> float:
    """Mean absolute error between truths and predictions"""
    _require(pairs)
    truth = np.array([p.truth for p in pairs], dtype=float)
    predicted = np.array([p.predicted for p in pairs], dtype=float)
    return float(np.mean(np.abs(truth - predicted)))


def _discounted_gain(gains: np.ndarray) -> float:
    positions = np.arange(1, gains.size + 1, dtype=float)
    return float(np.sum((np.power(2.0, gains) - 1.0) / np.log2(positions + 1.0)))


def predicted_order(pairs: Sequence[Prediction]) -> List[Prediction]:
    """Rank by predicted score descending, ties by ascending item_id"""
    return sorted(pairs, key=lambda p: (-p.predicted, p.item_id))


def ndcg_at_k(pairs: Sequence[Prediction], k: int = 20) -> float:
    """NDCG@K using true gains taken in predicted order

    Sums are truncated at min(k, n). When every truth is zero all rankings are
    ideal and 1.0 is returned.
    """
    _require(pairs)
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")

    cutoff = min(k, len(pairs))
    ranked = np.array([p.truth for p in predicted_order(pairs)[:cutoff]], dtype=float)
    ideal = np.sort(np.array([p.truth for p in pairs], dtype=float))[::-1][:cutoff]

    idcg = _discounted_gain(ideal)
    if idcg == 0.0:
        logger.warning(f"All {len(pairs)} truths are zero; NDCG@{k} is defined as 1.0")
        return 1.0

    # clip guards the last ulp when DCG and IDCG sum the same gains in a different order
    return float(min(1.0, _discounted_gain(ranked) / idcg))


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit costs over Unicode code points"""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)

    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i] + [0] * len(b)
        for j, cb in enumerate(b, start=1):
            cost = 0 if ca == cb else 1
            current[j] = min(previous[j] + 1,
                             current[j - 1] + 1,
                             previous[j - 1] + cost)
        previous = current
    return previous[-1]


def ned(a: str, b: str) -> float:
    """Edit distance normalised by the longer string; 0.0 for two empty strings"""
    longest = max(len(a), len(b))
    if longest == 0:
        return 0.0
    return edit_distance(a, b) / longest


def evaluate(pairs: Sequence[Prediction], k: int = 20) -> EvalReport:
    """Bundle MAE and NDCG@K for a prediction set"""
    _require(pairs)
    report = EvalReport(n=len(pairs), mae=mae(pairs), ndcg_at_k=ndcg_at_k(pairs, k), k=k)
    logger.info(f"Evaluated {report.n} predictions: MAE={report.mae:.4f} NDCG@{k}={report.ndcg_at_k:.4f}")
    return report
