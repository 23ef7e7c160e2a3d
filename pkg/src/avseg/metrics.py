"""Mask-quality metrics and dataset-level evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError

F_SCORE_BETA2 = 0.3


def _as_mask(a, name: str) -> np.ndarray:
    m = np.asarray(a)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be a 2-D mask, got shape {m.shape}")
    if m.dtype != bool:
        m = m != 0
    return m


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    ma = _as_mask(a, "first mask")
    mb = _as_mask(b, "second mask")
    if ma.shape != mb.shape:
        raise ShapeError(f"mask shapes differ: {ma.shape} vs {mb.shape}")
    return ma, mb


def iou(a, b) -> float:
    """Intersection over union; two empty masks agree perfectly (1.0)."""
    ma, mb = _check_pair(a, b)
    union = np.logical_or(ma, mb).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(ma, mb).sum() / union)


def f_score(pred, gt, beta2: float = F_SCORE_BETA2) -> float:
    """Weighted F-measure with beta^2 favouring precision.

    Both masks empty counts as a perfect match; an undefined denominator
    (no true positives anywhere) scores 0.
    """
    mp, mg = _check_pair(pred, gt)
    tp = float(np.logical_and(mp, mg).sum())
    fp = float(np.logical_and(mp, ~mg).sum())
    fn = float(np.logical_and(~mp, mg).sum())
    if tp + fp + fn == 0.0:
        return 1.0
    precision = tp / (tp + fp) if tp + fp > 0.0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0.0 else 0.0
    denom = beta2 * precision + recall
    if denom == 0.0:
        return 0.0
    return (1.0 + beta2) * precision * recall / denom


@dataclass
class EvalReport:
    """Aggregate metrics over a dataset, plus per-scene values.

    The header fields record the scoring conventions in force (the
    F-measure beta^2 and the both-empty-scores-one rule) so downstream
    comparisons know what was computed.
    """

    m_iou: float
    m_f: float
    n_scenes: int
    beta2: float = F_SCORE_BETA2
    empty_pred: int = 0
    empty_gt: int = 0
    both_empty: int = 0
    per_scene_iou: list = field(default_factory=list)
    per_scene_f: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "convention": {"f_score_beta2": self.beta2, "both_empty_score": 1.0},
            "m_iou": self.m_iou,
            "m_f": self.m_f,
            "n_scenes": self.n_scenes,
            "empty_pred": self.empty_pred,
            "empty_gt": self.empty_gt,
            "both_empty": self.both_empty,
            "per_scene_iou": self.per_scene_iou,
            "per_scene_f": self.per_scene_f,
        }

    def render(self) -> str:
        lines = [
            f"scenes          {self.n_scenes}",
            f"m_iou           {self.m_iou:.4f}",
            f"m_f (b2={self.beta2:g})  {self.m_f:.4f}",
            f"empty pred/gt   {self.empty_pred}/{self.empty_gt} (both: {self.both_empty})",
        ]
        return "\n".join(lines)


def evaluate(preds, gts, beta2: float = F_SCORE_BETA2) -> EvalReport:
    preds = list(preds)
    gts = list(gts)
    if len(preds) != len(gts):
        raise ContractError(f"got {len(preds)} predictions for {len(gts)} ground truths")
    if not preds:
        raise ContractError("cannot evaluate an empty dataset")
    ious, fs = [], []
    empty_pred = empty_gt = both = 0
    for p, g in zip(preds, gts):
        mp, mg = _check_pair(p, g)
        ious.append(iou(mp, mg))
        fs.append(f_score(mp, mg, beta2=beta2))
        pe, ge = not mp.any(), not mg.any()
        empty_pred += pe
        empty_gt += ge
        both += pe and ge
    return EvalReport(
        m_iou=float(np.mean(ious)),
        m_f=float(np.mean(fs)),
        n_scenes=len(preds),
        beta2=beta2,
        empty_pred=empty_pred,
        empty_gt=empty_gt,
        both_empty=both,
        per_scene_iou=[float(x) for x in ious],
        per_scene_f=[float(x) for x in fs],
    )
