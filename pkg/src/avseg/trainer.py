"""Adapter training: triplet matching loss, Adam, cosine learning rate.

Only adapter weights train; both trunks stay frozen. That makes two big
caches safe: per-scene audio activations, and per-scene image
activations up to the first fused layer. Each step then stacks cached
activations for a batch of (anchor, positive, negative) scenes and runs
just the fused tail of the image trunk three times.

All randomness is drawn from counter-based streams keyed by (seed,
purpose, step), so a resumed run replays the exact byte-for-byte
trajectory of an uninterrupted one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import objective as obj
from .errors import ConfigError, ContractError, TrainingError
from .model import AdapterParams, AudioTrace, FrozenTrunk, Placement, audio_forward, enhanced_map, visual_forward, visual_prefix
from .numerics import Tensor, adjoint, backward
from .pairing import PairTable, sample_triplet

_STREAM_BATCH = 3
_STREAM_TRIPLET = 4


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-4
    batch_size: int = 8
    max_iters: int = 2000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    map_mode: str = "scalar"

    def __post_init__(self):
        if self.lr0 <= 0.0:
            raise ConfigError("lr0 must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.eps <= 0.0:
            raise ConfigError("Adam eps must be positive")
        if self.weight_decay < 0.0:
            raise ConfigError("weight_decay must be non-negative")
        if self.map_mode not in ("scalar", "channels"):
            raise ConfigError(f"map_mode must be 'scalar' or 'channels', got {self.map_mode!r}")


@dataclass
class OptimState:
    """First/second moment accumulators plus the completed-step count."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, params: dict[str, np.ndarray]) -> "OptimState":
        return cls(
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
            step=0,
        )


@dataclass
class TrainResult:
    adapters: AdapterParams
    state: OptimState
    trace: list = field(default_factory=list)  # rows of (step, loss, lr)


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """Half-cosine decay from lr0 at step 0 to 0 at step == total_steps."""
    if total_steps < 1:
        raise ContractError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps}]")
    if lr0 <= 0.0:
        raise ContractError("lr0 must be positive")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> tuple[dict[str, np.ndarray], OptimState]:
    """One decoupled-weight-decay Adam update; inputs are not mutated."""
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ContractError("params, grads and optimizer state must share keys")
    t = state.step + 1
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    new_params, new_m, new_v = {}, {}, {}
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ContractError(f"gradient shape {g.shape} != param shape {p.shape} for {key}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {key}", step=state.step)
        m = beta1 * state.m[key] + (1.0 - beta1) * g
        v = beta2 * state.v[key] + (1.0 - beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        if weight_decay != 0.0:
            update = update + weight_decay * p
        new_params[key] = p - lr * update
        new_m[key] = m
        new_v[key] = v
    return new_params, OptimState(m=new_m, v=new_v, step=t)


class _SceneCache:
    """Frozen activations for one scene, shared by every step that samples it."""

    __slots__ = ("prefix", "audio_inputs", "audio_mids", "pooled")

    def __init__(self, scene, trunk: FrozenTrunk, placement: Placement, n_fused: int):
        d = trunk.config.d
        tokens = np.asarray(scene.visual_tokens, dtype=trunk.dtype).reshape(-1, d)
        if tokens.shape[0] != trunk.config.n:
            raise ContractError(
                f"scene has {tokens.shape[0]} visual tokens, trunk expects {trunk.config.n}"
            )
        self.prefix, _ = visual_prefix(tokens, trunk, placement)
        trace = audio_forward(np.asarray(scene.audio_tokens, dtype=trunk.dtype), trunk)
        self.audio_inputs = trace.layer_inputs[:n_fused]
        self.audio_mids = trace.layer_mids[:n_fused]
        self.pooled = trace.pooled


def _stack_audio(caches: list[_SceneCache], idxs, n_fused: int) -> AudioTrace:
    return AudioTrace(
        layer_inputs=[np.stack([caches[i].audio_inputs[l] for i in idxs]) for l in range(n_fused)],
        layer_mids=[np.stack([caches[i].audio_mids[l] for i in idxs]) for l in range(n_fused)],
        output=np.empty(0),
        pooled=np.stack([caches[i].pooled for i in idxs]),
    )


def train(
    scenes,
    table: PairTable,
    trunk: FrozenTrunk,
    adapters: AdapterParams,
    placement: Placement,
    objective_cfg: obj.ObjectiveConfig = obj.ObjectiveConfig(),
    cfg: TrainConfig = TrainConfig(),
    optim_state: OptimState | None = None,
    run_until: int | None = None,
) -> TrainResult:
    """Optimise adapter weights on a scene corpus.

    ``optim_state`` resumes from a checkpoint (``adapters`` then carries
    the checkpointed weights); ``run_until`` stops early after that many
    total steps while keeping the cosine schedule anchored at
    ``cfg.max_iters``, so a stop-and-resume run matches an uninterrupted
    one bit for bit.
    """
    scenes = list(scenes)
    n = len(scenes)
    if table.n != n:
        raise ContractError(f"pair table covers {table.n} scenes, dataset has {n}")
    if cfg.batch_size > n:
        raise ContractError(f"batch_size {cfg.batch_size} exceeds dataset size {n}")
    fused = placement.fused_layers(trunk.config.image_layers)
    n_fused = len(fused)
    first_fused = fused[0]
    dtype = trunk.dtype

    params = {k: v.astype(dtype) for k, v in adapters.named_arrays()}
    state = optim_state if optim_state is not None else OptimState.zeros(params)
    stop = cfg.max_iters if run_until is None else run_until
    if not state.step <= stop <= cfg.max_iters:
        raise ContractError(f"run_until {stop} outside [{state.step}, {cfg.max_iters}]")

    caches = [_SceneCache(s, trunk, placement, n_fused) for s in scenes]
    grid_axis = -1 if cfg.map_mode == "scalar" else (-2, -1)

    trace: list[tuple[int, float, float]] = []
    for step in range(state.step, stop):
        lr = cosine_lr(step, cfg.max_iters, cfg.lr0)
        batch_rng = np.random.default_rng((cfg.seed, _STREAM_BATCH, step))
        anchors = batch_rng.choice(n, size=cfg.batch_size, replace=False)
        pos_idx, neg_idx = [], []
        for a in anchors:
            trip_rng = np.random.default_rng((cfg.seed, _STREAM_TRIPLET, int(a), step))
            p, q = sample_triplet(int(a), table, trip_rng)
            pos_idx.append(p)
            neg_idx.append(q)

        leaves = [
            {name: Tensor(params[f"layer{i}.{name}"], requires_grad=True) for name in AdapterParams.NAMES}
            for i in range(adapters.num_layers)
        ]

        # the anchor's audio augments all three images: the positive and
        # negative maps answer "where does the anchor's sound live here"
        audio = _stack_audio(caches, anchors, n_fused)
        pooled = Tensor(audio.pooled)

        def role_map(image_idxs):
            stack = np.stack([caches[i].prefix for i in image_idxs])
            tokens = visual_forward(
                Tensor(stack), trunk, leaves, placement, audio, start_layer=first_fused
            )
            if cfg.map_mode == "scalar":
                return enhanced_map(tokens, pooled)
            return tokens

        f = role_map(anchors)
        f_pos = role_map(pos_idx)
        f_neg = role_map(neg_idx)
        loss = obj.triplet_loss_batch(f, f_pos, f_neg, objective_cfg, axis=grid_axis)
        loss_val = float(loss.data)
        if not np.isfinite(loss_val):
            raise TrainingError("non-finite loss", step=step)
        backward(loss)
        grads = {}
        for i, layer in enumerate(leaves):
            for name, leaf in layer.items():
                grads[f"layer{i}.{name}"] = adjoint(leaf)
        params, state = adam_step(
            params,
            grads,
            state,
            lr,
            beta1=cfg.beta1,
            beta2=cfg.beta2,
            eps=cfg.eps,
            weight_decay=cfg.weight_decay,
        )
        trace.append((step, loss_val, lr))

    return TrainResult(adapters=adapters.replace_arrays(params), state=state, trace=trace)
