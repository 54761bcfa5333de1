"""Precision/recall/F1 bookkeeping for token- and entity-level labeling.

Overall scores are micro-F1 over the pooled confusion counts of every
label except "other"; per-label scores (including "other") are always
reported. 0/0 ratios are defined as 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import OTHER_LABEL, schema_labels
from .errors import ValidationError


@dataclass
class LabelScore:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class Metrics:
    schema_id: str
    token: dict[str, LabelScore]
    entity: dict[str, LabelScore]
    token_overall_f1: float
    entity_overall_f1: float

    def columns(self) -> dict[str, float]:
        """Flat column map for report emission, deterministic order."""
        out: dict[str, float] = {
            "token_overall_f1": self.token_overall_f1,
            "entity_overall_f1": self.entity_overall_f1,
        }
        for level, scores in (("token", self.token), ("entity", self.entity)):
            for label in schema_labels(self.schema_id):
                s = scores[label]
                out[f"{level}_{label}_precision"] = s.precision
                out[f"{level}_{label}_recall"] = s.recall
                out[f"{level}_{label}_f1"] = s.f1
                out[f"{level}_{label}_support"] = float(s.support)
        return out


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def f1_score(precision: float, recall: float) -> float:
    return _ratio(2.0 * precision * recall, precision + recall)


def scores_from_pairs(true: np.ndarray, pred: np.ndarray, labels: tuple[str, ...]
                      ) -> tuple[dict[str, LabelScore], float]:
    """Per-label scores plus the overall micro-F1 excluding "other"."""
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if true.shape != pred.shape:
        raise ValidationError(f"label arrays differ: {true.shape} vs {pred.shape}")
    per_label: dict[str, LabelScore] = {}
    pooled_tp = pooled_fp = pooled_fn = 0
    for idx, name in enumerate(labels):
        tp = int(np.sum((true == idx) & (pred == idx)))
        fp = int(np.sum((pred == idx) & (true != idx)))
        fn = int(np.sum((true == idx) & (pred != idx)))
        p = _ratio(tp, tp + fp)
        r = _ratio(tp, tp + fn)
        per_label[name] = LabelScore(precision=p, recall=r, f1=f1_score(p, r),
                                     support=int(np.sum(true == idx)))
        if name != OTHER_LABEL:
            pooled_tp += tp
            pooled_fp += fp
            pooled_fn += fn
    micro_p = _ratio(pooled_tp, pooled_tp + pooled_fp)
    micro_r = _ratio(pooled_tp, pooled_tp + pooled_fn)
    return per_label, f1_score(micro_p, micro_r)


def micro_f1(true: np.ndarray, pred: np.ndarray, labels: tuple[str, ...]) -> float:
    """Overall micro-F1 (excluding "other") for quick scoring loops."""
    _, overall = scores_from_pairs(true, pred, labels)
    return overall
