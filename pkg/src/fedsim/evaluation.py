"""Scoring, operating-point selection at a false-alarms-per-hour budget,
per-user and pooled recall aggregation, and the early-stopping rule.

The detection score of an example is the model's positive-class
probability; an example triggers when its score is >= the threshold.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import model
from .data import POSITIVE_LABEL, Federation
from .errors import ConfigError, EvaluationError
from .model import ModelSpec

logger = logging.getLogger(__name__)

# Sentinel threshold just above every attainable score: nothing triggers.
TAU_ABOVE_ALL = math.nextafter(1.0, 2.0)


@dataclass(frozen=True)
class EvalTargets:
    """False-alarm budget (per hour) and the recall that stops training."""

    fah_budget: float = 5.0
    recall_target: float = 0.95

    def __post_init__(self):
        if self.fah_budget <= 0:
            raise ConfigError("fah_budget must be positive")
        if not 0.0 <= self.recall_target <= 1.0:
            raise ConfigError("recall_target must lie in [0, 1]")


@dataclass(frozen=True)
class OperatingPoint:
    tau: float
    recall: float
    fah: float
    feasible: bool = True


class ScoredExample(NamedTuple):
    score: float
    label: int
    duration_s: float


def score_examples(spec: ModelSpec, w: np.ndarray, examples) -> list[ScoredExample]:
    """Positive-class probability per example, order preserved."""
    X, _ = model.batch_arrays(spec, examples)
    probs = model.batch_probs(spec, w, X)
    return [
        ScoredExample(score=float(probs[i, POSITIVE_LABEL]), label=ex.label, duration_s=ex.duration_s)
        for i, ex in enumerate(examples)
    ]


def operating_point(scored: list[ScoredExample], targets: EvalTargets) -> OperatingPoint:
    """Threshold maximizing recall subject to FAH <= budget.

    Candidate thresholds are the observed scores plus a sentinel above all of
    them, so the search is finite and exact. Ties in recall break toward the
    larger threshold (fewer false alarms).
    """
    pos_scores = [s.score for s in scored if s.label == POSITIVE_LABEL]
    neg = [s for s in scored if s.label != POSITIVE_LABEL]
    if not pos_scores or not neg:
        raise ValueError("operating point needs at least one positive and one negative example")
    neg_hours = sum(s.duration_s for s in neg) / 3600.0
    if neg_hours <= 0:
        raise ValueError("total negative duration must be positive")

    pos_sorted = np.sort(pos_scores)
    neg_sorted = np.sort([s.score for s in neg])
    n_pos, n_neg = len(pos_sorted), len(neg_sorted)
    candidates = sorted(set(s.score for s in scored))
    candidates.append(TAU_ABOVE_ALL)

    best: OperatingPoint | None = None
    for tau in candidates:
        hits = n_pos - int(np.searchsorted(pos_sorted, tau, side="left"))
        false_alarms = n_neg - int(np.searchsorted(neg_sorted, tau, side="left"))
        recall = hits / n_pos
        fah = false_alarms / neg_hours
        if fah > targets.fah_budget:
            continue
        if best is None or recall > best.recall or (recall == best.recall and tau > best.tau):
            best = OperatingPoint(tau=tau, recall=recall, fah=fah)
    if best is None:
        return OperatingPoint(tau=TAU_ABOVE_ALL, recall=0.0, fah=0.0, feasible=False)
    return best


def _usable(scored: list[ScoredExample]) -> bool:
    has_pos = any(s.label == POSITIVE_LABEL for s in scored)
    negs = [s for s in scored if s.label != POSITIVE_LABEL]
    return has_pos and bool(negs) and sum(s.duration_s for s in negs) > 0


def federated_eval(
    spec: ModelSpec,
    w: np.ndarray,
    federation: Federation,
    eval_user_ids,
    targets: EvalTargets,
) -> float:
    """Example-count-weighted mean of per-user recalls at per-user budgets.

    Users whose partitions lack positives, negatives, or negative duration
    are skipped and excluded from the weight normalizer.
    """
    acc = 0.0
    total_weight = 0
    skipped = []
    for uid in sorted(eval_user_ids):
        part = federation.partition(uid)
        scored = score_examples(spec, w, part.examples)
        if not _usable(scored):
            skipped.append(uid)
            continue
        point = operating_point(scored, targets)
        acc += part.size * point.recall
        total_weight += part.size
    if skipped:
        logger.info("federated_eval skipped %d user(s) without both classes: %s", len(skipped), skipped)
    if total_weight == 0:
        raise EvaluationError("every evaluation user was skipped; no metric available")
    return acc / total_weight


def pooled_eval(
    spec: ModelSpec,
    w: np.ndarray,
    federation: Federation,
    eval_user_ids,
    targets: EvalTargets,
) -> float:
    """Recall at a single operating point over all eval users' pooled examples."""
    scored: list[ScoredExample] = []
    for uid in sorted(eval_user_ids):
        scored.extend(score_examples(spec, w, federation.partition(uid).examples))
    if not scored or not _usable(scored):
        raise EvaluationError("pooled evaluation set lacks positives, negatives, or duration")
    return operating_point(scored, targets).recall


def early_stop_check(metric: float, targets: EvalTargets) -> bool:
    """True once the metric meets the recall target (inclusive)."""
    return metric >= targets.recall_target
