"""Frozen two-trunk transformer stub with trainable audio-visual adapters.

Both trunks are pre-norm transformer encoders whose weights are generated
deterministically from a seed and never trained. Adapters are small
cross-attention bottleneck blocks injected at a configurable subset of
image layers; they are the only trainable state in the pipeline.

Within one fused image layer l (with paired audio layer activations
X_a, Y_a) the update is residual on both sub-blocks:

    Y_v = X_v + MHA(X_v) + adapter(X_a, X_v)
    X_v' = Y_v + MLP(Y_v) + adapter(Y_a, Y_v)

and the two calls share that layer's adapter weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import ConfigError, ContractError, DomainError, ShapeError
from .numerics import Tensor


@dataclass(frozen=True)
class TrunkConfig:
    """Sizes and seed for the frozen backbone pair.

    ``n`` is the number of visual tokens (grid height times width) and
    ``k_audio`` the number of audio tokens. The image trunk must be at
    least as deep as the audio trunk so fused layers can pair up.
    """

    d: int = 16
    n: int = 256
    k_audio: int = 8
    image_layers: int = 12
    audio_layers: int = 6
    mlp_ratio: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.d < 2:
            raise ConfigError(f"token width d must be >= 2, got {self.d}")
        if self.n < 1 or self.k_audio < 1:
            raise ConfigError("token counts must be positive")
        if self.audio_layers < 1:
            raise ConfigError("audio trunk needs at least one layer")
        if self.image_layers < self.audio_layers:
            raise ConfigError(
                f"image trunk ({self.image_layers}) shallower than audio trunk ({self.audio_layers})"
            )
        if self.mlp_ratio < 1:
            raise ConfigError("mlp_ratio must be >= 1")


def _block_weights(rng: np.random.Generator, d: int, hidden: int, dtype) -> dict:
    s = 1.0 / math.sqrt(d)
    w = {
        "wq": rng.normal(0.0, s, (d, d)),
        "wk": rng.normal(0.0, s, (d, d)),
        "wv": rng.normal(0.0, s, (d, d)),
        "wo": rng.normal(0.0, s, (d, d)),
        "w1": rng.normal(0.0, s, (d, hidden)),
        "b1": np.zeros(hidden),
        "w2": rng.normal(0.0, 1.0 / math.sqrt(hidden), (hidden, d)),
        "b2": np.zeros(d),
    }
    return {k: v.astype(dtype) for k, v in w.items()}


class FrozenTrunk:
    """Deterministic weight bank for the image and audio encoders.

    Weights are drawn from a seeded generator in a fixed order, so the
    same (config, dtype) always reconstructs bit-identical arrays. The
    arrays are read-only by convention; nothing in this package writes
    to them.
    """

    def __init__(self, config: TrunkConfig, dtype=np.float64):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(config.seed)
        hidden = config.d * config.mlp_ratio
        self.image_blocks = [
            _block_weights(rng, config.d, hidden, self.dtype) for _ in range(config.image_layers)
        ]
        self.audio_blocks = [
            _block_weights(rng, config.d, hidden, self.dtype) for _ in range(config.audio_layers)
        ]
        self._scale = 1.0 / math.sqrt(config.d)


class AdapterParams:
    """Trainable adapter weights, one set per fused layer.

    Each layer holds ``m`` latent audio tokens, projection weights for
    two cross-attention blocks (latents query the audio tokens, then the
    visual tokens query the updated latents), and a down/up bottleneck.
    The up-projection starts at zero by default so an untrained adapter
    is an exact no-op on the frozen trunk.
    """

    NAMES = ("latents", "wq1", "wk1", "wv1", "wq2", "wk2", "wv2", "w_down", "b_down", "w_up")

    def __init__(self, layers: list[dict[str, np.ndarray]], m: int, r: int, pre_norm: bool = True):
        if not layers:
            raise ConfigError("adapter needs at least one layer")
        self.layers = layers
        self.m = m
        self.r = r
        self.pre_norm = pre_norm

    @classmethod
    def initialize(
        cls,
        num_layers: int,
        d: int,
        k_audio: int,
        m: int = 4,
        r: int | None = None,
        seed: int = 0,
        zero_up: bool = True,
        dtype=np.float64,
    ) -> "AdapterParams":
        if r is None:
            r = max(1, d // 2)
        if not 1 <= m < k_audio:
            raise ConfigError(f"latent count m={m} must satisfy 1 <= m < k_audio={k_audio}")
        if not 1 <= r < d:
            raise ConfigError(f"bottleneck width r={r} must satisfy 1 <= r < d={d}")
        rng = np.random.default_rng(seed)
        s = 1.0 / math.sqrt(d)
        layers = []
        for _ in range(num_layers):
            layer = {
                "latents": rng.normal(0.0, s, (m, d)),
                "wq1": rng.normal(0.0, s, (d, d)),
                "wk1": rng.normal(0.0, s, (d, d)),
                "wv1": rng.normal(0.0, s, (d, d)),
                "wq2": rng.normal(0.0, s, (d, d)),
                "wk2": rng.normal(0.0, s, (d, d)),
                "wv2": rng.normal(0.0, s, (d, d)),
                "w_down": rng.normal(0.0, s, (d, r)),
                "b_down": np.zeros(r),
                "w_up": np.zeros((r, d)) if zero_up else rng.normal(0.0, 1.0 / math.sqrt(r), (r, d)),
            }
            layers.append({k: v.astype(dtype) for k, v in layer.items()})
        return cls(layers, m=m, r=r, pre_norm=True)

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Flat (name, array) view in a fixed order; names are stable keys."""
        out = []
        for i, layer in enumerate(self.layers):
            for name in self.NAMES:
                out.append((f"layer{i}.{name}", layer[name]))
        return out

    def replace_arrays(self, flat: dict[str, np.ndarray]) -> "AdapterParams":
        layers = []
        for i in range(self.num_layers):
            layers.append({name: flat[f"layer{i}.{name}"] for name in self.NAMES})
        return AdapterParams(layers, m=self.m, r=self.r, pre_norm=self.pre_norm)

    def copy(self) -> "AdapterParams":
        return AdapterParams(
            [{k: v.copy() for k, v in layer.items()} for layer in self.layers],
            m=self.m,
            r=self.r,
            pre_norm=self.pre_norm,
        )

    def as_tensors(self, requires_grad: bool = False) -> list[dict[str, Tensor]]:
        return [
            {k: Tensor(v, requires_grad=requires_grad) for k, v in layer.items()}
            for layer in self.layers
        ]


@dataclass(frozen=True)
class Placement:
    """Which image layers receive an adapter.

    ``count`` adapters go either into the first ``count`` layers, the
    last ``count``, or spread at a uniform stride. Layer indices are
    1-based.
    """

    mode: str = "last-k"
    count: int = 6

    def __post_init__(self):
        if self.mode not in ("first-k", "last-k", "interleaved"):
            raise ConfigError(f"unknown placement mode {self.mode!r}")
        if self.count not in (2, 4, 6):
            raise ConfigError(f"adapter count must be 2, 4 or 6, got {self.count}")

    def fused_layers(self, image_layers: int) -> tuple[int, ...]:
        if self.count > image_layers:
            raise ConfigError(
                f"cannot place {self.count} adapters in {image_layers} image layers"
            )
        if self.mode == "first-k":
            return tuple(range(1, self.count + 1))
        if self.mode == "last-k":
            return tuple(range(image_layers - self.count + 1, image_layers + 1))
        stride = image_layers // self.count
        return tuple(stride * (i + 1) for i in range(self.count))


def _layer_tensors(layer) -> dict[str, Tensor]:
    if isinstance(layer, dict) and all(isinstance(v, Tensor) for v in layer.values()):
        return layer
    return {k: nm.as_tensor(v) for k, v in layer.items()}


def adaav_forward(x_audio, x_visual, layer, pre_norm: bool = True) -> Tensor:
    """One adapter block: audio -> latents -> visual tokens.

    ``x_audio`` is (..., k, d) audio activations, ``x_visual`` (..., n, d)
    visual activations, ``layer`` one weight dict from AdapterParams.
    Latents cross-attend to the audio tokens (residual), the visual
    tokens cross-attend to the updated latents, and the result passes
    through a down/GELU/up bottleneck. Output shape matches x_visual.
    With a zero up-projection the output is exactly zero.
    """
    xa = nm.as_tensor(x_audio)
    xv = nm.as_tensor(x_visual)
    p = _layer_tensors(layer)
    d = p["latents"].shape[-1]
    if xa.shape[-1] != d or xv.shape[-1] != d:
        raise ShapeError(
            f"adapter width {d} does not match audio {xa.shape} / visual {xv.shape}"
        )
    scale = 1.0 / math.sqrt(d)

    lat = p["latents"]
    q1 = nm.matmul(nm.layer_norm(lat) if pre_norm else lat, p["wq1"])
    k1 = nm.matmul(nm.layer_norm(xa) if pre_norm else xa, p["wk1"])
    v1 = nm.matmul(xa, p["wv1"])
    att1 = nm.matmul(nm.softmax(nm.mul(nm.matmul(q1, nm.transpose(k1)), scale)), v1)
    lat = nm.add(lat, att1)

    q2 = nm.matmul(nm.layer_norm(xv) if pre_norm else xv, p["wq2"])
    k2 = nm.matmul(nm.layer_norm(lat) if pre_norm else lat, p["wk2"])
    v2 = nm.matmul(lat, p["wv2"])
    att2 = nm.matmul(nm.softmax(nm.mul(nm.matmul(q2, nm.transpose(k2)), scale)), v2)

    z = nm.gelu(nm.add(nm.matmul(att2, p["w_down"]), p["b_down"]))
    return nm.matmul(z, p["w_up"])


def _mha(x: Tensor, blk: dict, scale: float) -> Tensor:
    h = nm.layer_norm(x)
    q = nm.matmul(h, blk["wq"])
    k = nm.matmul(h, blk["wk"])
    v = nm.matmul(h, blk["wv"])
    att = nm.matmul(nm.softmax(nm.mul(nm.matmul(q, nm.transpose(k)), scale)), v)
    return nm.matmul(att, blk["wo"])


def _mlp(x: Tensor, blk: dict) -> Tensor:
    h = nm.layer_norm(x)
    return nm.add(nm.matmul(nm.gelu(nm.add(nm.matmul(h, blk["w1"]), blk["b1"])), blk["w2"]), blk["b2"])


@dataclass
class AudioTrace:
    """Per-layer audio activations plus the pooled output embedding.

    ``layer_inputs[i]`` is the activation entering audio layer i+1 and
    ``layer_mids[i]`` the activation after its attention residual; these
    are what fused image layers consume. All arrays are plain numpy
    because the audio trunk is frozen.
    """

    layer_inputs: list[np.ndarray]
    layer_mids: list[np.ndarray]
    output: np.ndarray
    pooled: np.ndarray


def audio_forward(audio_tokens, trunk: FrozenTrunk) -> AudioTrace:
    """Run the frozen audio trunk and record what fusion needs."""
    x = np.asarray(audio_tokens, dtype=trunk.dtype)
    if x.shape[-1] != trunk.config.d or x.shape[-2] != trunk.config.k_audio:
        raise ShapeError(
            f"audio tokens {x.shape} do not match (k_audio={trunk.config.k_audio}, d={trunk.config.d})"
        )
    inputs, mids = [], []
    t = Tensor(x)
    for blk in trunk.audio_blocks:
        inputs.append(t.data)
        y = nm.add(t, _mha(t, blk, trunk._scale))
        mids.append(y.data)
        t = nm.add(y, _mlp(y, blk))
    pooled = t.data.mean(axis=-2)
    return AudioTrace(layer_inputs=inputs, layer_mids=mids, output=t.data, pooled=pooled)


def visual_prefix(image_tokens, trunk: FrozenTrunk, placement: Placement) -> tuple[np.ndarray, int]:
    """Activations entering the first fused layer.

    Layers before the first adapter see no trainable state, so their
    output can be computed once per scene and reused across training
    steps. Returns (activation, first_fused_layer_index).
    """
    fused = placement.fused_layers(trunk.config.image_layers)
    first = fused[0]
    x = np.asarray(image_tokens, dtype=trunk.dtype)
    t = Tensor(x)
    for l in range(1, first):
        blk = trunk.image_blocks[l - 1]
        y = nm.add(t, _mha(t, blk, trunk._scale))
        t = nm.add(y, _mlp(y, blk))
    return t.data, first


def visual_forward(
    image_tokens,
    trunk: FrozenTrunk,
    adapters,
    placement: Placement,
    audio: AudioTrace,
    start_layer: int = 1,
) -> Tensor:
    """Run the image trunk with adapters fused at the placed layers.

    ``adapters`` is an AdapterParams or a list of tensor dicts (one per
    fused layer, in layer order); pass tensors with requires_grad to
    differentiate. ``start_layer`` admits a cached prefix activation:
    ``image_tokens`` is then the activation entering that layer.

    The i-th fused image layer consumes the i-th audio layer's
    activations, which requires count <= audio_layers.
    """
    cfg = trunk.config
    fused = placement.fused_layers(cfg.image_layers)
    if placement.count > cfg.audio_layers:
        raise ConfigError(
            f"{placement.count} adapters need {placement.count} audio layers, trunk has {cfg.audio_layers}"
        )
    if isinstance(adapters, AdapterParams):
        pre_norm = adapters.pre_norm
        layer_params = adapters.as_tensors(requires_grad=False)
    else:
        pre_norm = True
        layer_params = adapters
    if len(layer_params) != len(fused):
        raise ContractError(
            f"adapter has {len(layer_params)} layers but placement fuses {len(fused)}"
        )
    if start_layer > fused[0]:
        raise ContractError("start_layer skips past the first fused layer")

    t = nm.as_tensor(image_tokens)
    if t.shape[-1] != cfg.d:
        raise ShapeError(f"visual tokens {t.shape} do not match d={cfg.d}")
    fi = 0
    for l in range(start_layer, cfg.image_layers + 1):
        blk = trunk.image_blocks[l - 1]
        if fi < len(fused) and l == fused[fi]:
            xa = audio.layer_inputs[fi]
            ya = audio.layer_mids[fi]
            p = layer_params[fi]
            y = nm.add(nm.add(t, _mha(t, blk, trunk._scale)), adaav_forward(xa, t, p, pre_norm))
            t = nm.add(nm.add(y, _mlp(y, blk)), adaav_forward(ya, y, p, pre_norm))
            fi += 1
        else:
            y = nm.add(t, _mha(t, blk, trunk._scale))
            t = nm.add(y, _mlp(y, blk))
    return t


def fused_forward(image_tokens, audio_tokens, trunk, adapters, placement):
    """Full forward pass; returns (visual tokens, pooled audio embedding).

    Plain-array convenience wrapper around audio_forward/visual_forward;
    use those directly when gradients are needed.
    """
    trace = audio_forward(audio_tokens, trunk)
    tokens = visual_forward(image_tokens, trunk, adapters, placement, trace)
    return tokens.data, trace.pooled


def enhanced_map(visual_tokens, audio_emb, grid: tuple[int, int] | None = None):
    """Per-token cosine similarity against a pooled audio embedding.

    ``visual_tokens`` is (..., n, d), ``audio_emb`` (d,) or batched
    (..., d). Tokens with near-zero norm map to similarity 0. Returns a
    Tensor when any input is a Tensor, else a numpy array, shaped
    (..., h, w) when ``grid`` is given and (..., n) otherwise.
    """
    tokens = nm.as_tensor(visual_tokens)
    a = nm.as_tensor(audio_emb)
    if tokens.ndim < 2:
        raise ShapeError(f"visual tokens must be (..., n, d), got {tokens.shape}")
    d = tokens.shape[-1]
    if a.shape[-1] != d:
        raise ShapeError(f"audio embedding width {a.shape[-1]} != token width {d}")
    n = tokens.shape[-2]
    if grid is not None:
        h, w = grid
        if h * w != n:
            raise ShapeError(f"grid {h}x{w} does not cover {n} tokens")

    a_norm = np.sqrt(np.sum(a.data * a.data, axis=-1))
    if np.min(a_norm) <= 1e-12:
        raise DomainError("audio embedding has near-zero norm")
    a_hat = nm.div(a, nm.sqrt(nm.reduce_sum(nm.square(a), axis=-1, keepdims=True)))
    # column vector (..., d, 1) so matmul batches over leading axes
    a_col = nm.reshape(a_hat, a_hat.shape + (1,))

    ss = nm.reduce_sum(nm.square(tokens), axis=-1, keepdims=True)
    live = ss.data > 1e-24  # rows with enough mass to normalise
    ss_safe = nm.add(ss, (~live).astype(tokens.dtype))
    dots = nm.matmul(tokens, a_col)
    sims = nm.mul(nm.div(dots, nm.sqrt(ss_safe)), live.astype(tokens.dtype))

    out_shape = tokens.shape[:-2] + ((h, w) if grid is not None else (n,))
    out = nm.reshape(sims, out_shape)
    if isinstance(visual_tokens, Tensor) or isinstance(audio_emb, Tensor):
        return out
    return out.data
