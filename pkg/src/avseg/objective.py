"""Matching costs between similarity maps and the triplet training loss.

Two complementary costs compare an anchor map f against a paired map g:
a sum of squared differences (value agreement) and a normalised
correlation without mean subtraction (shape agreement, scale invariant).
The combined cost folds the correlation in as ``1 - ncc`` by default so
that lower is better for both terms; ``ncc_mode="literal"`` instead adds
the raw correlation, matching the combined-cost formula as written. A
hinge on combined costs of (anchor, positive) vs (anchor, negative)
gives the training loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import ConfigError, DomainError, ShapeError
from .numerics import Tensor

_NCC_MODES = ("cost", "literal")


@dataclass(frozen=True)
class ObjectiveConfig:
    lambda_ssd: float = 1.0
    lambda_ncc: float = 1.0
    alpha: float = 0.3
    ncc_mode: str = "cost"

    def __post_init__(self):
        if self.lambda_ssd < 0.0 or self.lambda_ncc < 0.0:
            raise ConfigError("cost weights must be non-negative")
        if self.alpha < 0.0:
            raise ConfigError(f"margin must be non-negative, got {self.alpha}")
        if self.ncc_mode not in _NCC_MODES:
            raise ConfigError(f"ncc_mode must be one of {_NCC_MODES}, got {self.ncc_mode!r}")


def _pair(f, g, op: str) -> tuple[Tensor, Tensor, bool]:
    tf, tg = nm.as_tensor(f), nm.as_tensor(g)
    if tf.shape != tg.shape:
        raise ShapeError(f"{op}: map shapes differ, {tf.shape} vs {tg.shape}")
    if tf.data.size == 0:
        raise ShapeError(f"{op}: maps are empty")
    return tf, tg, isinstance(f, Tensor) or isinstance(g, Tensor)


def _ssd(f: Tensor, g: Tensor, axis=None) -> Tensor:
    return nm.reduce_sum(nm.square(nm.sub(f, g)), axis=axis)


def _ncc(f: Tensor, g: Tensor, axis=None) -> Tensor:
    ff = nm.reduce_sum(nm.square(f), axis=axis)
    gg = nm.reduce_sum(nm.square(g), axis=axis)
    if np.min(ff.data) <= 1e-24 or np.min(gg.data) <= 1e-24:
        raise DomainError("normalised correlation of an all-zero map")
    num = nm.reduce_sum(nm.mul(f, g), axis=axis)
    return nm.div(nm.div(num, nm.sqrt(ff)), nm.sqrt(gg))


def _combined(f: Tensor, g: Tensor, cfg: ObjectiveConfig, axis=None) -> Tensor:
    # skip a term entirely when its weight is zero: the ablations rely on
    # lambda_ncc=0 not tripping the all-zero-map domain check
    terms = []
    if cfg.lambda_ssd != 0.0:
        terms.append(nm.mul(_ssd(f, g, axis=axis), cfg.lambda_ssd))
    if cfg.lambda_ncc != 0.0:
        ncc = _ncc(f, g, axis=axis)
        if cfg.ncc_mode == "cost":
            ncc = nm.sub(1.0, ncc)
        terms.append(nm.mul(ncc, cfg.lambda_ncc))
    if not terms:
        zero = nm.reduce_sum(nm.mul(f, 0.0), axis=axis)
        return zero
    out = terms[0]
    for t in terms[1:]:
        out = nm.add(out, t)
    return out


def cost_ssd(f, g):
    """Sum of squared differences over all map entries."""
    tf, tg, grad = _pair(f, g, "cost_ssd")
    out = _ssd(tf, tg)
    return out if grad else float(out.data)


def cost_ncc(f, g):
    """Normalised correlation (no mean subtraction); lies in [-1, 1]."""
    tf, tg, grad = _pair(f, g, "cost_ncc")
    out = _ncc(tf, tg)
    return out if grad else float(out.data)


def combined_cost(f, g, cfg: ObjectiveConfig = ObjectiveConfig()):
    """Weighted blend of the two costs under the configured ncc mode."""
    tf, tg, grad = _pair(f, g, "combined_cost")
    out = _combined(tf, tg, cfg)
    return out if grad else float(out.data)


def triplet_loss(f, f_pos, f_neg, cfg: ObjectiveConfig = ObjectiveConfig()):
    """Hinge on combined costs: max(0, C(f, f_pos) - C(f, f_neg) + alpha)."""
    tf, tp, grad1 = _pair(f, f_pos, "triplet_loss")
    _, tn, grad2 = _pair(f, f_neg, "triplet_loss")
    c_pos = _combined(tf, tp, cfg)
    c_neg = _combined(tf, tn, cfg)
    out = nm.relu(nm.add(nm.sub(c_pos, c_neg), cfg.alpha))
    return out if (grad1 or grad2) else float(out.data)


def triplet_loss_batch(f, f_pos, f_neg, cfg: ObjectiveConfig, axis) -> Tensor:
    """Per-sample hinge losses reduced over ``axis``; returns the batch mean."""
    tf, tp, _ = _pair(f, f_pos, "triplet_loss_batch")
    _, tn, _ = _pair(f, f_neg, "triplet_loss_batch")
    c_pos = _combined(tf, tp, cfg, axis=axis)
    c_neg = _combined(tf, tn, cfg, axis=axis)
    hinge = nm.relu(nm.add(nm.sub(c_pos, c_neg), cfg.alpha))
    return nm.mean_pool(hinge)
