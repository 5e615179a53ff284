"""Minimal transformer forward pass and the high-to-low-to-high pipeline.

Each layer is the standard pre-norm pair of residual sub-blocks

    x' = MHSA(LN(x)) + x
    y  = FFN(LN(x')) + x'

operating on a flat (tokens, channels) array. There is no class token and no
positional embedding inside the blocks, so the plain forward pass is
permutation-equivariant over tokens; callers that need position information
add it to the layer-0 input.

:func:`run_pipeline` executes either the plain L-layer pass or the clustered
schedule: ``alpha`` layers at full resolution, token clustering, ``beta``
layers on the cluster grid, reconstruction back to full resolution from the
refined centers (with relations estimated on the pre-refinement features),
then ``gamma`` final layers. The same weight list drives both modes.

A window-attention layer variant (cyclic shift, per-window attention with a
relative-position bias, merge) is provided for shifted-window experiments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .clustering import ClusteringConfig, LocalityMap, token_clustering
from .container import NamedTensorContainer
from .grid import ClusterGrid, ParameterError, SimilarityReport, TokenGrid, cosine_similarity
from .reconstruction import ReconstructionConfig, compute_relations, reconstruct
from .windowed import RpeTable, WindowBatch, merge_windows, partition_windows

LN_EPS = 1e-6

PIPELINE_MODES = ("plain", "clustered")

# Checkpoint names recorded in a PipelineTrace.
CHECKPOINT_Z_ALPHA = "z_alpha"
CHECKPOINT_S_ALPHA = "s_alpha"
CHECKPOINT_S_ALPHA_BETA = "s_alpha_beta"
CHECKPOINT_Z_ALPHA_BETA = "z_alpha_beta"
CHECKPOINT_Z_FINAL = "z_final"
HIGH_RES_CHECKPOINTS = (CHECKPOINT_Z_ALPHA, CHECKPOINT_Z_ALPHA_BETA, CHECKPOINT_Z_FINAL)


@dataclass(frozen=True)
class LayerWeights:
    """One transformer layer: layer norms, attention projections, and the FFN."""

    ln1_scale: np.ndarray
    ln1_bias: np.ndarray
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    ln2_scale: np.ndarray
    ln2_bias: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    heads: int = 1
    mlp_ratio: float = 4.0

    def __post_init__(self):
        c = self.wq.shape[0]
        hidden = self.w1.shape[1]
        shapes = {
            "ln1_scale": (c,),
            "ln1_bias": (c,),
            "wq": (c, c),
            "bq": (c,),
            "wk": (c, c),
            "bk": (c,),
            "wv": (c, c),
            "bv": (c,),
            "wo": (c, c),
            "bo": (c,),
            "ln2_scale": (c,),
            "ln2_bias": (c,),
            "w1": (c, hidden),
            "b1": (hidden,),
            "w2": (hidden, c),
            "b2": (c,),
        }
        for name, want in shapes.items():
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float32)
            if arr.shape != want:
                raise ParameterError(f"{name} must have shape {want}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ParameterError(f"{name} contains NaN or Inf")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.heads < 1 or c % self.heads != 0:
            raise ParameterError(f"channels {c} not divisible by heads {self.heads}")

    @property
    def channels(self) -> int:
        return self.wq.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]


def layer_norm(x: np.ndarray, scale: np.ndarray, bias: np.ndarray, eps: float = LN_EPS) -> np.ndarray:
    """Per-token normalization over channels, then affine. float64 statistics."""
    if x.shape[-1] != scale.shape[0] or x.shape[-1] != bias.shape[0]:
        raise ParameterError("layer_norm channel mismatch")
    x64 = x.astype(np.float64)
    mean = x64.mean(axis=-1, keepdims=True)
    var = np.square(x64 - mean).mean(axis=-1, keepdims=True)
    normed = (x64 - mean) / np.sqrt(var + eps)
    return (normed * scale.astype(np.float64) + bias.astype(np.float64)).astype(np.float32)


def _softmax_last(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    n, c = x.shape
    return x.reshape(n, heads, c // heads).transpose(1, 0, 2)  # (heads, N, d_h)


def mhsa_forward(x: np.ndarray, w: LayerWeights, bias_logits: np.ndarray | None = None) -> np.ndarray:
    """Multi-head self-attention over a token set (no residual, no norm).

    ``bias_logits`` of shape (heads, N, N), when given, is added to the scaled
    attention logits (used by the window-attention variant).
    """
    n = x.shape[0]
    if n < 1:
        raise ParameterError("attention needs at least one token")
    q = _split_heads(x @ w.wq + w.bq, w.heads)
    k = _split_heads(x @ w.wk + w.bk, w.heads)
    v = _split_heads(x @ w.wv + w.bv, w.heads)
    d_h = w.channels // w.heads
    logits = q @ k.transpose(0, 2, 1) / np.float32(np.sqrt(d_h))
    if bias_logits is not None:
        if bias_logits.shape != logits.shape:
            raise ParameterError(
                f"attention bias must have shape {logits.shape}, got {bias_logits.shape}"
            )
        logits = logits + bias_logits
    attn = _softmax_last(logits.astype(np.float64)).astype(np.float32)
    mixed = attn @ v  # (heads, N, d_h)
    merged = mixed.transpose(1, 0, 2).reshape(n, w.channels)
    return merged @ w.wo + w.bo


def ffn_forward(x: np.ndarray, w: LayerWeights) -> np.ndarray:
    """Two-layer MLP with exact (erf) GELU."""
    h = x @ w.w1 + w.b1
    h64 = h.astype(np.float64)
    act = (0.5 * h64 * (1.0 + erf(h64 / np.sqrt(2.0)))).astype(np.float32)
    return act @ w.w2 + w.b2


def transformer_layer_forward(x: np.ndarray, w: LayerWeights) -> np.ndarray:
    """One full layer: attention sub-block then FFN sub-block, both residual."""
    if x.ndim != 2 or x.shape[1] != w.channels:
        raise ParameterError(f"input must be (tokens, {w.channels}), got {x.shape}")
    x = x + mhsa_forward(layer_norm(x, w.ln1_scale, w.ln1_bias), w)
    x = x + ffn_forward(layer_norm(x, w.ln2_scale, w.ln2_bias), w)
    return x


def relative_position_logit_bias(table: RpeTable, side: int) -> np.ndarray:
    """Gather the (heads, side^2, side^2) bias matrix for one window from an RPE table."""
    if table.side != 2 * side - 1:
        raise ParameterError(
            f"table side {table.side} does not match window side {side} (need {2 * side - 1})"
        )
    coords = np.stack(
        np.meshgrid(np.arange(side), np.arange(side), indexing="ij"), axis=-1
    ).reshape(-1, 2)
    rel = coords[:, None, :] - coords[None, :, :] + (side - 1)  # offsets in [0, 2*side-2]
    bias = table.values[rel[..., 0], rel[..., 1]]  # (N, N, heads)
    return np.ascontiguousarray(bias.transpose(2, 0, 1))


def window_attention_forward(
    grid: TokenGrid,
    w: LayerWeights,
    window: int,
    rpe: RpeTable | None = None,
    shift: int = 0,
) -> TokenGrid:
    """Per-window MHSA over a grid: optional cyclic shift, partition, attend, merge, unshift."""
    data = grid.data
    if shift:
        data = np.roll(data, (-shift, -shift), axis=(0, 1))
    batch = partition_windows(TokenGrid(data), window)
    bias = relative_position_logit_bias(rpe, window) if rpe is not None else None
    outs = []
    for win in batch.windows:
        y = mhsa_forward(win.tokens(), w, bias_logits=bias)
        outs.append(TokenGrid(y.reshape(window, window, w.channels)))
    merged = merge_windows(WindowBatch(windows=tuple(outs), rows=batch.rows, cols=batch.cols))
    out = merged.data
    if shift:
        out = np.roll(out, (shift, shift), axis=(0, 1))
    return TokenGrid(out)


def window_transformer_layer_forward(
    grid: TokenGrid,
    w: LayerWeights,
    window: int,
    rpe: RpeTable | None = None,
    shift: int = 0,
) -> TokenGrid:
    """Window-attention counterpart of :func:`transformer_layer_forward`."""
    x = grid.tokens()
    normed = layer_norm(x, w.ln1_scale, w.ln1_bias)
    h, wd = grid.height_t, grid.width_t
    attn = window_attention_forward(
        TokenGrid(normed.reshape(h, wd, w.channels)), w, window, rpe=rpe, shift=shift
    )
    x = x + attn.tokens()
    x = x + ffn_forward(layer_norm(x, w.ln2_scale, w.ln2_bias), w)
    return TokenGrid(x.reshape(h, wd, w.channels))


@dataclass(frozen=True)
class PipelineConfig:
    """Layer split and the clustering/reconstruction settings of one pipeline."""

    alpha: int
    beta: int
    gamma: int
    clustering: ClusteringConfig
    reconstruction: ReconstructionConfig
    mode: str = "clustered"

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ParameterError("alpha, beta, gamma must be >= 0")
        if self.mode not in PIPELINE_MODES:
            raise ParameterError(f"mode must be one of {PIPELINE_MODES}")

    @property
    def total_layers(self) -> int:
        return self.alpha + self.beta + self.gamma

    def to_json_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "clustering": self.clustering.to_json_dict(),
            "reconstruction": self.reconstruction.to_json_dict(),
            "mode": self.mode,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "PipelineConfig":
        return cls(
            alpha=int(d["alpha"]),
            beta=int(d["beta"]),
            gamma=int(d["gamma"]),
            clustering=ClusteringConfig.from_json_dict(d["clustering"]),
            reconstruction=ReconstructionConfig.from_json_dict(d["reconstruction"]),
            mode=str(d.get("mode", "clustered")),
        )


@dataclass(frozen=True)
class PipelineTrace:
    """Named grid snapshots plus the per-layer token counts of one run."""

    mode: str
    checkpoints: dict
    token_counts: tuple[int, ...]

    def checkpoint(self, name: str):
        if name not in self.checkpoints:
            raise ParameterError(f"trace has no checkpoint {name!r}; has {sorted(self.checkpoints)}")
        return self.checkpoints[name]


ReduceFn = Callable[[TokenGrid, "PipelineConfig"], tuple[ClusterGrid, LocalityMap | None]]
ExpandFn = Callable[[TokenGrid, ClusterGrid, ClusterGrid, "PipelineConfig"], TokenGrid]


def _default_reduce(z_alpha: TokenGrid, cfg: PipelineConfig):
    return token_clustering(z_alpha, cfg.clustering)


def _default_expand(
    z_alpha: TokenGrid,
    s_alpha: ClusterGrid,
    s_refined: ClusterGrid,
    cfg: PipelineConfig,
    locality: LocalityMap | None,
) -> TokenGrid:
    rel = compute_relations(z_alpha, s_alpha, locality, cfg.reconstruction)
    return reconstruct(rel, s_refined)


def run_pipeline(
    z0: TokenGrid,
    weights: Sequence[LayerWeights],
    cfg: PipelineConfig,
    reduce_fn: ReduceFn | None = None,
    expand_fn: ExpandFn | None = None,
) -> PipelineTrace:
    """Execute the configured forward pass and record checkpoints.

    ``reduce_fn`` / ``expand_fn`` replace the clustering and reconstruction
    slots (used by the resampling baselines); they must honor the same shape
    contracts. Weights are shared by every layer position regardless of mode
    and are never modified.
    """
    if len(weights) != cfg.total_layers:
        raise ParameterError(
            f"need {cfg.total_layers} layer weights (alpha+beta+gamma), got {len(weights)}"
        )
    for i, w in enumerate(weights):
        if w.channels != z0.channels:
            raise ParameterError(f"layer {i} has {w.channels} channels, input has {z0.channels}")

    h_t, w_t, ch = z0.height_t, z0.width_t, z0.channels
    n = z0.n_positions
    checkpoints: dict = {}
    counts: list[int] = []

    x = z0.tokens()
    for layer in weights[: cfg.alpha]:
        x = transformer_layer_forward(x, layer)
        counts.append(n)
    z_alpha = TokenGrid(x.reshape(h_t, w_t, ch))
    checkpoints[CHECKPOINT_Z_ALPHA] = z_alpha

    if cfg.mode == "plain":
        for layer in weights[cfg.alpha : cfg.alpha + cfg.beta]:
            x = transformer_layer_forward(x, layer)
            counts.append(n)
        checkpoints[CHECKPOINT_Z_ALPHA_BETA] = TokenGrid(x.reshape(h_t, w_t, ch))
        for layer in weights[cfg.alpha + cfg.beta :]:
            x = transformer_layer_forward(x, layer)
            counts.append(n)
        checkpoints[CHECKPOINT_Z_FINAL] = TokenGrid(x.reshape(h_t, w_t, ch))
        return PipelineTrace(mode=cfg.mode, checkpoints=checkpoints, token_counts=tuple(counts))

    s_alpha, locality = (reduce_fn or _default_reduce)(z_alpha, cfg)
    checkpoints[CHECKPOINT_S_ALPHA] = s_alpha
    hc, wc = s_alpha.height_c, s_alpha.width_c
    s = s_alpha.tokens()
    for layer in weights[cfg.alpha : cfg.alpha + cfg.beta]:
        s = transformer_layer_forward(s, layer)
        counts.append(hc * wc)
    s_refined = ClusterGrid(s.reshape(hc, wc, ch))
    checkpoints[CHECKPOINT_S_ALPHA_BETA] = s_refined

    if expand_fn is None:
        z_ab = _default_expand(z_alpha, s_alpha, s_refined, cfg, locality)
    else:
        z_ab = expand_fn(z_alpha, s_alpha, s_refined, cfg)
    checkpoints[CHECKPOINT_Z_ALPHA_BETA] = z_ab

    x = z_ab.tokens()
    for layer in weights[cfg.alpha + cfg.beta :]:
        x = transformer_layer_forward(x, layer)
        counts.append(n)
    checkpoints[CHECKPOINT_Z_FINAL] = TokenGrid(x.reshape(h_t, w_t, ch))
    return PipelineTrace(mode=cfg.mode, checkpoints=checkpoints, token_counts=tuple(counts))


def measure_fidelity(
    trace_a: PipelineTrace,
    trace_b: PipelineTrace,
    checkpoints: Sequence[str] = HIGH_RES_CHECKPOINTS,
) -> dict[str, SimilarityReport]:
    """Cosine similarity between two traces at each shared full-resolution checkpoint."""
    out = {}
    for name in checkpoints:
        out[name] = cosine_similarity(trace_a.checkpoint(name), trace_b.checkpoint(name))
    return out


def random_layer_weights(
    rng: np.random.Generator, channels: int, heads: int, mlp_ratio: float = 4.0
) -> LayerWeights:
    """Reproducible layer initialization: projections N(0, 0.02^2), biases 0, unit LN scale."""
    hidden = int(round(channels * mlp_ratio))
    if hidden < 1:
        raise ParameterError(f"mlp_ratio {mlp_ratio} gives empty hidden layer for C={channels}")

    def mat(rows, cols):
        return rng.normal(0.0, 0.02, size=(rows, cols)).astype(np.float32)

    zeros = lambda k: np.zeros(k, dtype=np.float32)
    return LayerWeights(
        ln1_scale=np.ones(channels, dtype=np.float32),
        ln1_bias=zeros(channels),
        wq=mat(channels, channels),
        bq=zeros(channels),
        wk=mat(channels, channels),
        bk=zeros(channels),
        wv=mat(channels, channels),
        bv=zeros(channels),
        wo=mat(channels, channels),
        bo=zeros(channels),
        ln2_scale=np.ones(channels, dtype=np.float32),
        ln2_bias=zeros(channels),
        w1=mat(channels, hidden),
        b1=zeros(hidden),
        w2=mat(hidden, channels),
        b2=zeros(channels),
        heads=heads,
        mlp_ratio=mlp_ratio,
    )


def random_pipeline_weights(
    rng: np.random.Generator, layers: int, channels: int, heads: int, mlp_ratio: float = 4.0
) -> list[LayerWeights]:
    return [random_layer_weights(rng, channels, heads, mlp_ratio) for _ in range(layers)]


# Container naming scheme for weight import/export:
#   layer{i}.ln1.scale  layer{i}.ln1.bias
#   layer{i}.attn.{wq,wk,wv,wo,bq,bk,bv,bo}
#   layer{i}.ln2.scale  layer{i}.ln2.bias
#   layer{i}.ffn.{w1,b1,w2,b2}
_FIELD_TO_NAME = {
    "ln1_scale": "ln1.scale",
    "ln1_bias": "ln1.bias",
    "wq": "attn.wq",
    "bq": "attn.bq",
    "wk": "attn.wk",
    "bk": "attn.bk",
    "wv": "attn.wv",
    "bv": "attn.bv",
    "wo": "attn.wo",
    "bo": "attn.bo",
    "ln2_scale": "ln2.scale",
    "ln2_bias": "ln2.bias",
    "w1": "ffn.w1",
    "b1": "ffn.b1",
    "w2": "ffn.w2",
    "b2": "ffn.b2",
}


def pipeline_weights_to_container(layers: Sequence[LayerWeights]) -> NamedTensorContainer:
    out = NamedTensorContainer()
    for i, layer in enumerate(layers):
        for attr, suffix in _FIELD_TO_NAME.items():
            out.add(f"layer{i}.{suffix}", getattr(layer, attr))
    return out


def pipeline_weights_from_container(
    container: NamedTensorContainer, heads: int, mlp_ratio: float | None = None
) -> list[LayerWeights]:
    """Rebuild layer weights from a container following the documented naming scheme.

    ``mlp_ratio`` defaults to the ratio implied by each layer's ``ffn.w1`` shape.
    """
    count = 0
    while f"layer{count}.ln1.scale" in container:
        count += 1
    if count == 0:
        raise ParameterError("container holds no layer0.* entries")
    layers = []
    for i in range(count):
        kwargs = {}
        for attr, suffix in _FIELD_TO_NAME.items():
            name = f"layer{i}.{suffix}"
            if name not in container:
                raise ParameterError(f"container is missing entry {name!r}")
            kwargs[attr] = container[name]
        c = kwargs["wq"].shape[0]
        ratio = mlp_ratio if mlp_ratio is not None else kwargs["w1"].shape[1] / c
        layers.append(LayerWeights(heads=heads, mlp_ratio=ratio, **kwargs))
    return layers
