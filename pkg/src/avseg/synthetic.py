"""Synthetic audio-visual scenes with known ground truth.

A scene is a token grid over an orthonormal background signature, with
axis-aligned rectangles of orthonormal class signatures placed on top.
Classes keep to fixed home cells (a coarse tiling of the grid) with a
small positional wobble, so the same class lands in roughly the same
place from scene to scene; cross-class rectangles can never collide.
One placed object sounds: the audio tokens are a fixed linear image of
its class signature plus noise. Silent scenes keep their objects but
emit the background signature instead, and their ground-truth mask is
empty.

Everything is a pure function of (config, scene index), so scenes can
be generated independently and in any order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .inference import Proposal

_STREAM_GLOBAL = 0
_STREAM_SCENE = 1
_STREAM_PROPOSAL = 2


@dataclass(frozen=True)
class SceneConfig:
    height: int = 16
    width: int = 16
    d: int = 16
    k_audio: int = 8
    num_classes: int = 4
    min_objects: int = 1
    max_objects: int = 3
    min_size: int = 5
    max_size: int = 7
    position_jitter: int = 1
    sigma_v: float = 0.05
    sigma_a: float = 0.02
    silent_fraction: float = 0.1
    jitter: int = 1
    distractors: int = 3
    audio_map: str = "random"
    seed: int = 0

    def __post_init__(self):
        if self.height < 2 or self.width < 2:
            raise ConfigError("grid must be at least 2x2")
        if self.d < 2:
            raise ConfigError("token width must be >= 2")
        if self.k_audio < 1:
            raise ConfigError("need at least one audio token")
        if self.num_classes < 2:
            raise ConfigError("need at least two classes")
        if self.num_classes + 1 > self.d:
            raise ConfigError(
                f"d={self.d} cannot hold {self.num_classes} orthonormal class "
                "signatures plus a background signature"
            )
        if not 1 <= self.min_objects <= self.max_objects <= self.num_classes:
            raise ConfigError("object count range must satisfy 1 <= min <= max <= num_classes")
        if not 1 <= self.min_size <= self.max_size:
            raise ConfigError("rectangle size range must satisfy 1 <= min <= max")
        if self.position_jitter < 0 or self.jitter < 0 or self.distractors < 0:
            raise ConfigError("jitters and distractor count must be non-negative")
        if self.sigma_v < 0.0 or self.sigma_a < 0.0:
            raise ConfigError("noise scales must be non-negative")
        if not 0.0 <= self.silent_fraction < 1.0:
            raise ConfigError("silent_fraction must lie in [0, 1)")
        if self.audio_map not in ("random", "identity"):
            raise ConfigError(f"unknown audio_map {self.audio_map!r}")
        ch, cw = self.cell_shape()
        if self.max_size + self.position_jitter > min(ch, cw):
            raise ConfigError(
                f"rectangles up to {self.max_size} with wobble {self.position_jitter} "
                f"do not fit a {ch}x{cw} home cell"
            )

    def cell_shape(self) -> tuple[int, int]:
        side = math.isqrt(self.num_classes - 1) + 1  # ceil(sqrt(num_classes))
        return self.height // side, self.width // side

    def cells_per_side(self) -> int:
        return math.isqrt(self.num_classes - 1) + 1


@dataclass
class Scene:
    visual_tokens: np.ndarray
    audio_tokens: np.ndarray
    gt_mask: np.ndarray
    sounding_class: int | None
    objects: list = field(default_factory=list)
    proposals: list = field(default_factory=list)
    index: int = 0

    @property
    def silent(self) -> bool:
        return self.sounding_class is None


@dataclass(frozen=True)
class WorldParams:
    """Dataset-level constants: signatures and the audio projection."""

    class_signatures: np.ndarray
    background: np.ndarray
    audio_projection: np.ndarray


def world_params(cfg: SceneConfig) -> WorldParams:
    rng = np.random.default_rng((cfg.seed, _STREAM_GLOBAL, 0))
    basis = rng.normal(0.0, 1.0, (cfg.d, cfg.num_classes + 1))
    q, _ = np.linalg.qr(basis)
    sigs = q[:, : cfg.num_classes].T.copy()
    bg = q[:, cfg.num_classes].copy()
    proj = rng.normal(0.0, 1.0 / math.sqrt(cfg.d), (cfg.d, cfg.d))
    return WorldParams(class_signatures=sigs, background=bg, audio_projection=proj)


def _home_rect(cfg: SceneConfig, cls: int, rng: np.random.Generator) -> tuple[int, int, int, int]:
    side = cfg.cells_per_side()
    ch, cw = cfg.cell_shape()
    row0 = (cls // side) * ch
    col0 = (cls % side) * cw
    rh = int(rng.integers(cfg.min_size, cfg.max_size + 1))
    rw = int(rng.integers(cfg.min_size, cfg.max_size + 1))
    dr = int(rng.integers(0, cfg.position_jitter + 1))
    dc = int(rng.integers(0, cfg.position_jitter + 1))
    return row0 + dr, col0 + dc, rh, rw


def _audio_base(cfg: SceneConfig, world: WorldParams, cls: int | None) -> np.ndarray:
    sig = world.background if cls is None else world.class_signatures[cls]
    if cfg.audio_map == "identity":
        return sig
    return world.audio_projection @ sig


def gen_scene(cfg: SceneConfig, world: WorldParams, index: int) -> Scene:
    rng = np.random.default_rng((cfg.seed, _STREAM_SCENE, index))
    count = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    classes = rng.choice(cfg.num_classes, size=count, replace=False)
    objects = [(int(c), _home_rect(cfg, int(c), rng)) for c in classes]
    silent = rng.random() < cfg.silent_fraction
    sounding = None if silent else int(classes[rng.integers(count)])

    tokens = np.tile(world.background, (cfg.height, cfg.width, 1))
    tokens += rng.normal(0.0, cfg.sigma_v, tokens.shape)
    gt = np.zeros((cfg.height, cfg.width), dtype=bool)
    for cls, (r0, c0, rh, rw) in objects:
        patch = world.class_signatures[cls] + rng.normal(0.0, cfg.sigma_v, (rh, rw, cfg.d))
        tokens[r0 : r0 + rh, c0 : c0 + rw] = patch
        if cls == sounding:
            gt[r0 : r0 + rh, c0 : c0 + rw] = True

    base = _audio_base(cfg, world, sounding)
    audio = base + rng.normal(0.0, cfg.sigma_a, (cfg.k_audio, cfg.d))
    return Scene(
        visual_tokens=tokens,
        audio_tokens=audio,
        gt_mask=gt,
        sounding_class=sounding,
        objects=objects,
        index=index,
    )


def _rect_mask(h: int, w: int, r0: int, c0: int, rh: int, rw: int) -> np.ndarray:
    m = np.zeros((h, w), dtype=bool)
    m[max(r0, 0) : min(r0 + rh, h), max(c0, 0) : min(c0 + rw, w)] = True
    return m


def _jittered_rect(cfg: SceneConfig, rect, rng: np.random.Generator):
    """Perturb a rectangle by at most ``cfg.jitter`` cells.

    One operation per proposal: translate, grow all sides, or shrink one
    side. Each keeps most of the rectangle, so a jitter-1 proposal of a
    reasonably sized object still overlaps it well.
    """
    r0, c0, rh, rw = rect
    j = cfg.jitter
    if j == 0:
        return rect
    op = int(rng.integers(3))
    if op == 0:
        dr = int(rng.integers(-j, j + 1))
        dc = int(rng.integers(-j, j + 1))
        dr = min(max(dr, -r0), cfg.height - (r0 + rh))
        dc = min(max(dc, -c0), cfg.width - (c0 + rw))
        return r0 + dr, c0 + dc, rh, rw
    if op == 1:
        e = int(rng.integers(1, j + 1))
        nr0, nc0 = max(r0 - e, 0), max(c0 - e, 0)
        nr1 = min(r0 + rh + e, cfg.height)
        nc1 = min(c0 + rw + e, cfg.width)
        return nr0, nc0, nr1 - nr0, nc1 - nc0
    e = min(int(rng.integers(1, j + 1)), rh - 1, rw - 1)
    if e < 1:
        return rect
    side = int(rng.integers(4))
    if side == 0:
        return r0 + e, c0, rh - e, rw
    if side == 1:
        return r0, c0, rh - e, rw
    if side == 2:
        return r0, c0 + e, rh, rw - e
    return r0, c0, rh, rw - e


def gen_proposals(cfg: SceneConfig, world: WorldParams, scene: Scene) -> list[Proposal]:
    """Jittered copies of every placed object, plus scored distractors.

    Planted proposals carry the object's class signature (plus noise) as
    embedding and a high score; distractors are random rectangles with
    random unit embeddings and low scores.
    """
    rng = np.random.default_rng((cfg.seed, _STREAM_PROPOSAL, scene.index))
    props: list[Proposal] = []
    for cls, rect in scene.objects:
        jr = _jittered_rect(cfg, rect, rng)
        emb = world.class_signatures[cls] + rng.normal(0.0, cfg.sigma_a, cfg.d)
        props.append(
            Proposal(
                mask=_rect_mask(cfg.height, cfg.width, *jr),
                embedding=emb,
                score=float(rng.uniform(0.7, 1.0)),
            )
        )
    for _ in range(cfg.distractors):
        rh = int(rng.integers(2, cfg.max_size + 1))
        rw = int(rng.integers(2, cfg.max_size + 1))
        r0 = int(rng.integers(0, cfg.height - rh + 1))
        c0 = int(rng.integers(0, cfg.width - rw + 1))
        emb = rng.normal(0.0, 1.0, cfg.d)
        emb /= np.linalg.norm(emb)
        props.append(
            Proposal(
                mask=_rect_mask(cfg.height, cfg.width, r0, c0, rh, rw),
                embedding=emb,
                score=float(rng.uniform(0.1, 0.65)),
            )
        )
    return props


def gen_dataset(cfg: SceneConfig, num_scenes: int, with_proposals: bool = True) -> list[Scene]:
    if num_scenes < 1:
        raise ConfigError("need at least one scene")
    world = world_params(cfg)
    scenes = []
    for i in range(num_scenes):
        scene = gen_scene(cfg, world, i)
        if with_proposals:
            scene.proposals = gen_proposals(cfg, world, scene)
        scenes.append(scene)
    return scenes


def global_embedding(scene: Scene) -> np.ndarray:
    """Mean visual token, the coordinate used for neighbor search."""
    return scene.visual_tokens.reshape(-1, scene.visual_tokens.shape[-1]).mean(axis=0)
