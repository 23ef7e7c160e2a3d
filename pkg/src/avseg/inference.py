"""Mask inference: token clustering, foreground pick, proposal matching.

Clustering runs on unit-normalised token vectors under cosine distance.
The foreground cluster is the one whose tokens agree most with the
pooled audio embedding; a weak best cluster means the scene is silent
and the mask comes back empty. Proposal masks can then refine the
cluster mask (union of well-overlapping proposals) or be ranked and
deduplicated on their own.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DomainError, ShapeError
from .metrics import iou
from .model import enhanced_map


@dataclass
class Proposal:
    """A candidate mask, optionally with an embedding and a score."""

    mask: np.ndarray
    embedding: np.ndarray | None = None
    score: float | None = None

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.ndim != 2:
            raise ShapeError(f"proposal mask must be 2-D, got {m.shape}")
        if m.dtype != bool:
            m = m != 0
        self.mask = m


@dataclass(frozen=True)
class InferenceConfig:
    k_clusters: int = 2
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-6
    silent_threshold: float = 0.1
    mpm_iou: float = 0.5
    bind_threshold: float = 0.7
    nms_iou: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.k_clusters < 1:
            raise ConfigError("k_clusters must be >= 1")
        if self.kmeans_max_iter < 1:
            raise ConfigError("kmeans_max_iter must be >= 1")
        if self.kmeans_tol < 0.0:
            raise ConfigError("kmeans_tol must be non-negative")
        for name in ("mpm_iou", "bind_threshold", "nms_iou"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")


def _unit_rows(points) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"points must be (P, d), got {x.shape}")
    norms = np.linalg.norm(x, axis=1)
    if np.min(norms) <= 1e-12:
        raise DomainError("cannot cluster a near-zero vector under cosine distance")
    return x / norms[:, None]


def kmeans_cosine(points, k: int, seed=0, max_iter: int = 100, tol: float = 1e-6,
                  return_state: bool = False):
    """Lloyd iterations under cosine distance on the unit sphere.

    Seeding follows the k-means++ recipe with squared cosine distances.
    Centroids are re-normalised after every update; a cluster that loses
    all members is reseeded from the point farthest from its centroid.
    Ties (and argmax draws) resolve to the lowest index, so results are
    a pure function of (points, k, seed).
    """
    x = _unit_rows(points)
    p = x.shape[0]
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if p < k:
        raise ContractError(f"need at least k={k} points, got {p}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(p)]
    for j in range(1, k):
        sims = x @ centroids[:j].T
        dist = 1.0 - sims.max(axis=1)
        w = dist * dist
        total = w.sum()
        if total <= 0.0:
            centroids[j] = x[rng.integers(p)]
        else:
            centroids[j] = x[rng.choice(p, p=w / total)]

    labels = np.zeros(p, dtype=np.int64)
    objective_trace: list[float] = []
    for _ in range(max_iter):
        sims = x @ centroids.T
        labels = np.argmax(sims, axis=1)
        own = 1.0 - sims[np.arange(p), labels]
        objective_trace.append(float(own.sum()))

        new_centroids = np.zeros_like(centroids)
        counts = np.bincount(labels, minlength=k)
        np.add.at(new_centroids, labels, x)
        spare = own.copy()
        for j in range(k):
            if counts[j] == 0:
                idx = int(np.argmax(spare))
                new_centroids[j] = x[idx]
                spare[idx] = -1.0  # a point reseeds at most one cluster
                continue
            norm = np.linalg.norm(new_centroids[j])
            if norm <= 1e-12:
                idx = int(np.argmax(spare))
                new_centroids[j] = x[idx]
                spare[idx] = -1.0
            else:
                new_centroids[j] /= norm
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        if shift < tol:
            break
    labels = np.argmax(x @ centroids.T, axis=1)
    if return_state:
        return labels, centroids, objective_trace
    return labels


def sounding_mask(visual_tokens, labels, audio_emb,
                  cfg: InferenceConfig = InferenceConfig(),
                  out_hw: tuple[int, int] | None = None) -> tuple[np.ndarray, bool]:
    """Pick the cluster that sounds, or declare the scene silent.

    ``visual_tokens`` is (h, w, d), ``labels`` the flat cluster index per
    token. The cluster with the highest mean token-audio cosine becomes
    the mask; if even that mean falls below the silence threshold the
    mask is empty. ``out_hw`` upsamples by nearest neighbour.
    """
    tokens = np.asarray(visual_tokens)
    if tokens.ndim != 3:
        raise ShapeError(f"visual tokens must be (h, w, d), got {tokens.shape}")
    h, w, d = tokens.shape
    lab = np.asarray(labels).reshape(-1)
    if lab.shape[0] != h * w:
        raise ShapeError(f"{lab.shape[0]} labels for {h * w} tokens")
    score_map = enhanced_map(tokens.reshape(h * w, d), audio_emb)
    k = int(lab.max()) + 1
    means = np.full(k, -np.inf)
    for j in range(k):
        member = lab == j
        if member.any():
            means[j] = float(score_map[member].mean())
    fg = int(np.argmax(means))
    if means[fg] < cfg.silent_threshold:
        mask = np.zeros((h, w), dtype=bool)
        silent = True
    else:
        mask = (lab == fg).reshape(h, w)
        silent = False
    if out_hw is not None:
        mask = upsample_nearest(mask, out_hw)
    return mask, silent


def upsample_nearest(mask: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ShapeError(f"mask must be 2-D, got {m.shape}")
    oh, ow = out_hw
    if oh < m.shape[0] or ow < m.shape[1]:
        raise ContractError(f"cannot upsample {m.shape} down to {out_hw}")
    rows = (np.arange(oh) * m.shape[0]) // oh
    cols = (np.arange(ow) * m.shape[1]) // ow
    return m[np.ix_(rows, cols)]


def mpm(mask, proposals, iou_threshold: float = 0.5) -> np.ndarray:
    """Refine a mask with the proposals that overlap it well.

    Output is the union of the input mask with every proposal whose IoU
    against it exceeds the threshold; with no qualifying proposal the
    input mask comes back unchanged. The result therefore always
    contains the input mask, and feeding the output back in cannot
    shrink it.
    """
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ShapeError(f"mask must be 2-D, got {m.shape}")
    if m.dtype != bool:
        m = m != 0
    out = m.copy()
    matched = False
    for p in proposals:
        if p.mask.shape != m.shape:
            raise ShapeError(f"proposal mask {p.mask.shape} does not match {m.shape}")
        if iou(p.mask, m) > iou_threshold:
            out |= p.mask
            matched = True
    return out if matched else m.copy()


def rank_proposals_bind(proposals, audio_emb, threshold: float = 0.7) -> np.ndarray:
    """Union of proposals whose embedding aligns with the audio embedding.

    Every proposal must carry an embedding. Cosine similarity at or
    above the threshold includes the proposal; none qualifying yields an
    all-false mask.
    """
    props = list(proposals)
    if not props:
        raise ContractError("need at least one proposal to rank")
    a = np.asarray(audio_emb, dtype=np.float64)
    an = np.linalg.norm(a)
    if an <= 1e-12:
        raise DomainError("audio embedding has near-zero norm")
    shape = props[0].mask.shape
    out = np.zeros(shape, dtype=bool)
    for p in props:
        if p.embedding is None:
            raise ContractError("proposal without an embedding cannot be ranked")
        if p.mask.shape != shape:
            raise ShapeError(f"proposal mask {p.mask.shape} does not match {shape}")
        e = np.asarray(p.embedding, dtype=np.float64)
        en = np.linalg.norm(e)
        if en <= 1e-12:
            raise DomainError("proposal embedding has near-zero norm")
        if float(e @ a / (en * an)) >= threshold:
            out |= p.mask
    return out


def nms_masks(proposals, iou_threshold: float = 0.5) -> list:
    """Greedy non-maximum suppression over proposal masks by score.

    Keeps proposals in descending score order (ties toward the earlier
    proposal), dropping any whose IoU with an already-kept mask exceeds
    the threshold.
    """
    props = list(proposals)
    for p in props:
        if p.score is None:
            raise ContractError("proposal without a score cannot enter NMS")
    if not props:
        return []
    scores = np.asarray([p.score for p in props], dtype=np.float64)
    order = np.lexsort((np.arange(len(props)), -scores))
    kept: list = []
    for i in order:
        cand = props[int(i)]
        if all(iou(cand.mask, k.mask) <= iou_threshold for k in kept):
            kept.append(cand)
    return kept
