"""Comparison operators: resampling stand-ins and score-based token selection.

``aap_reduce`` / ``bilinear_expand`` are drop-in replacements for the
clustering and reconstruction slots of :func:`tokcluster.minivit.run_pipeline`,
so the learned-free pipeline can be compared against plain pooling+upsampling
on identical inputs and weights. ``select_topk_tokens`` plus
``sparsify_and_reconstruct`` cover the keep-top-scores style of token
sparsification, rebuilt to full resolution through the subset reconstructor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .grid import (
    ClusterGrid,
    ParameterError,
    TokenGrid,
    adaptive_average_pool,
    bilinear_resize,
)
from .minivit import LayerWeights, PipelineConfig, PipelineTrace, _split_heads, run_pipeline
from .reconstruction import ReconstructionConfig, reconstruct_from_subset


def aap_reduce(z_alpha: TokenGrid, cfg: PipelineConfig) -> tuple[ClusterGrid, None]:
    """Clustering-slot replacement: plain adaptive average pooling, no EM refinement."""
    return adaptive_average_pool(z_alpha, cfg.clustering.target_h, cfg.clustering.target_w), None


def bilinear_expand(
    z_alpha: TokenGrid, s_alpha: ClusterGrid, s_refined: ClusterGrid, cfg: PipelineConfig
) -> TokenGrid:
    """Reconstruction-slot replacement: bilinear upsample of the refined center grid."""
    resized = bilinear_resize(s_refined, z_alpha.height_t, z_alpha.width_t, align_corners=False)
    return TokenGrid(resized.data)


def run_pipeline_pooled(
    z0: TokenGrid, weights: Sequence[LayerWeights], cfg: PipelineConfig
) -> PipelineTrace:
    """Clustered-mode pipeline with both slots swapped for AAP + bilinear upsampling."""
    return run_pipeline(z0, weights, cfg, reduce_fn=aap_reduce, expand_fn=bilinear_expand)


def uniform_downsample_tokens(z: TokenGrid, out_h: int, out_w: int) -> TokenGrid:
    """Token-level model of feeding a lower-resolution input: bilinear downsample."""
    if out_h > z.height_t or out_w > z.width_t:
        raise ParameterError(
            f"downsample target ({out_h}, {out_w}) exceeds source ({z.height_t}, {z.width_t})"
        )
    return bilinear_resize(z, out_h, out_w, align_corners=False)


@dataclass(frozen=True)
class SelectionResult:
    """Top-score token selection: kept indices (strictly increasing) and the scores used."""

    kept: np.ndarray
    scores: np.ndarray
    keep_ratio: float

    @property
    def n_kept(self) -> int:
        return int(self.kept.size)


def select_topk_tokens(scores, rho: float) -> SelectionResult:
    """Keep the ``max(1, round(rho * N))`` highest-scoring tokens.

    Ties at the threshold go to the lower index. The kept set only depends on
    the score ordering, so it is invariant to positive affine rescaling.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    n = scores.size
    if n < 1:
        raise ParameterError("scores must be non-empty")
    if not (0.0 < rho <= 1.0):
        raise ParameterError(f"rho must be in (0, 1], got {rho}")
    n_keep = max(1, int(np.floor(rho * n + 0.5)))
    n_keep = min(n_keep, n)
    order = np.argsort(-scores, kind="stable")  # descending score, lower index first on ties
    kept = np.sort(order[:n_keep]).astype(np.int64)
    kept.flags.writeable = False
    return SelectionResult(kept=kept, scores=scores.astype(np.float32), keep_ratio=float(rho))


def sparsify_and_reconstruct(
    z_pre: TokenGrid,
    scores,
    rho: float,
    refine: Callable[[np.ndarray], np.ndarray],
    cfg: ReconstructionConfig,
) -> TokenGrid:
    """Select top tokens, refine them externally, and rebuild the full grid.

    ``refine`` maps the (n_kept, C) kept-feature array to its refined version
    of the same shape; chain calls for multi-stage sparsification schedules.
    """
    sel = select_topk_tokens(scores, rho)
    kept_feats = z_pre.tokens()[sel.kept]
    refined = np.asarray(refine(kept_feats), dtype=np.float32)
    if refined.shape != kept_feats.shape:
        raise ParameterError(
            f"refine must preserve shape {kept_feats.shape}, returned {refined.shape}"
        )
    return reconstruct_from_subset(z_pre, sel.kept, refined, cfg)


def attention_column_scores(z: TokenGrid, w: LayerWeights) -> np.ndarray:
    """Demo score helper: how much attention each token receives, averaged over
    heads and query positions.

    Self-contained stand-in for class-token attentiveness, which this pipeline
    cannot provide (it carries no class token).
    """
    x = z.tokens()
    q = _split_heads(x @ w.wq + w.bq, w.heads)
    k = _split_heads(x @ w.wk + w.bk, w.heads)
    d_h = w.channels // w.heads
    logits = (q @ k.transpose(0, 2, 1) / np.float32(np.sqrt(d_h))).astype(np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    attn = e / e.sum(axis=-1, keepdims=True)  # (heads, N, N)
    return attn.mean(axis=(0, 1)).astype(np.float32)
