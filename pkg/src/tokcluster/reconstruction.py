"""Token reconstruction: rebuild a full token grid from refined cluster centers.

Relations are always estimated on *pre-refinement* features: each token picks
its nearest cluster centers as they were at clustering time, and those sparse
similarity weights are later applied to the *refined* centers. Two candidate
modes exist:

  knn_global  the k centers at smallest squared distance, with every center
              tied at the k-th distance also included (deterministic without
              an index-ordering rule);
  locality    the token's clustering-time candidate window, reusing the
              LocalityMap.

Weights are a softmax of ``-d^2 / tau`` over the selected set. The alternative
kernel ``exp(-tau * d)`` (unsquared distance, temperature as a multiplier) is
available behind ``weight_kernel="tau_times_dist"`` for compatibility
experiments; it selects the same neighbor sets and only changes the weighting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clustering import LocalityMap, masked_softmax_rows
from .grid import ClusterGrid, ParameterError, TokenGrid

CANDIDATE_MODES = ("knn_global", "locality")
WEIGHT_KERNELS = ("sq_over_tau", "tau_times_dist")


@dataclass(frozen=True)
class ReconstructionConfig:
    k: int = 20
    tau: float = 50.0
    candidate_mode: str = "knn_global"
    weight_kernel: str = "sq_over_tau"

    def __post_init__(self):
        if self.k < 1:
            raise ParameterError(f"k must be >= 1, got {self.k}")
        if not self.tau > 0:
            raise ParameterError(f"tau must be > 0, got {self.tau}")
        if self.candidate_mode not in CANDIDATE_MODES:
            raise ParameterError(f"candidate_mode must be one of {CANDIDATE_MODES}")
        if self.weight_kernel not in WEIGHT_KERNELS:
            raise ParameterError(f"weight_kernel must be one of {WEIGHT_KERNELS}")

    def to_json_dict(self) -> dict:
        d = {"k": self.k, "tau": self.tau, "candidate_mode": self.candidate_mode}
        if self.weight_kernel != "sq_over_tau":
            d["weight_kernel"] = self.weight_kernel
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "ReconstructionConfig":
        return cls(
            k=int(d.get("k", 20)),
            tau=float(d.get("tau", 50.0)),
            candidate_mode=str(d.get("candidate_mode", "knn_global")),
            weight_kernel=str(d.get("weight_kernel", "sq_over_tau")),
        )


@dataclass(frozen=True)
class ReconstructionWeights:
    """Sparse per-token neighbor sets with normalized weights.

    ``indices[p]`` / ``weights[p]`` give the selected cluster indices and their
    weights for token ``p``; ``valid`` marks real entries vs padding. Rows sum
    to 1 over valid entries.
    """

    token_shape: tuple[int, int]
    n_clusters: int
    indices: np.ndarray = field(repr=False)  # (N, L_max) int32
    weights: np.ndarray = field(repr=False)  # (N, L_max) float32
    valid: np.ndarray = field(repr=False)  # (N, L_max) bool

    @property
    def n_tokens(self) -> int:
        return self.token_shape[0] * self.token_shape[1]

    def pairs(self, p: int) -> list[tuple[int, float]]:
        """Selected (cluster index, weight) pairs for token ``p``."""
        sel = self.valid[p]
        return list(zip(self.indices[p][sel].tolist(), self.weights[p][sel].tolist()))


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


def _kernel_logits(d2: np.ndarray, cfg: ReconstructionConfig) -> np.ndarray:
    if cfg.weight_kernel == "sq_over_tau":
        return -d2 / float(cfg.tau)
    return -float(cfg.tau) * np.sqrt(d2)


def dense_sq_distances(tokens: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """All-pairs squared distances (N, M) via explicit differences, float64.

    Computed in token blocks to bound memory; per-pair arithmetic matches the
    locality path exactly, so the two candidate modes agree bit-for-bit when
    the locality window covers the whole cluster grid.
    """
    n = tokens.shape[0]
    m = centers.shape[0]
    c64 = centers.astype(np.float64)[None, :, :]
    out = np.empty((n, m), dtype=np.float64)
    block = max(1, (1 << 22) // max(1, m * centers.shape[1]))
    for lo in range(0, n, block):
        hi = min(n, lo + block)
        diff = tokens[lo:hi, None, :].astype(np.float64) - c64
        out[lo:hi] = np.einsum("nmc,nmc->nm", diff, diff)
    return out


def compute_relations(
    z_pre: TokenGrid,
    s_pre: ClusterGrid,
    locality: LocalityMap | None,
    cfg: ReconstructionConfig,
) -> ReconstructionWeights:
    """Select neighbor centers per token and compute their normalized weights.

    Both inputs must be the pre-refinement grids; the weights depend on nothing
    else, so refined centers can be swapped freely at :func:`reconstruct` time.
    """
    if z_pre.channels != s_pre.channels:
        raise ParameterError(
            f"channel mismatch: tokens {z_pre.channels} vs clusters {s_pre.channels}"
        )
    n_clusters = s_pre.n_positions
    token_shape = (z_pre.height_t, z_pre.width_t)

    if cfg.candidate_mode == "locality":
        if locality is None:
            raise ParameterError("candidate_mode='locality' requires the clustering LocalityMap")
        if locality.token_shape != token_shape or locality.cluster_shape != (
            s_pre.height_c,
            s_pre.width_c,
        ):
            raise ParameterError("locality map dimensions do not match the grids")
        diff = z_pre.tokens()[:, None, :].astype(np.float64) - s_pre.tokens()[
            locality.indices
        ].astype(np.float64)
        d2 = np.einsum("nlc,nlc->nl", diff, diff)
        weights = masked_softmax_rows(_kernel_logits(d2, cfg), locality.valid)
        return ReconstructionWeights(
            token_shape=token_shape,
            n_clusters=n_clusters,
            indices=locality.indices,
            weights=_frozen(weights.astype(np.float32)),
            valid=locality.valid,
        )

    if cfg.k > n_clusters:
        raise ParameterError(f"k={cfg.k} exceeds the number of clusters {n_clusters}")
    d2 = dense_sq_distances(z_pre.tokens(), s_pre.tokens())
    kth = np.partition(d2, cfg.k - 1, axis=1)[:, cfg.k - 1]
    selected = d2 <= kth[:, None]  # ties at the k-th distance all stay in

    counts = selected.sum(axis=1)
    width = int(counts.max())
    order = np.argsort(~selected, axis=1, kind="stable")[:, :width]  # selected first, index order
    valid = np.arange(width)[None, :] < counts[:, None]
    d2_sel = np.take_along_axis(d2, order, axis=1)
    weights = masked_softmax_rows(
        np.where(valid, _kernel_logits(d2_sel, cfg), -np.inf), valid
    )
    return ReconstructionWeights(
        token_shape=token_shape,
        n_clusters=n_clusters,
        indices=_frozen(order.astype(np.int32)),
        weights=_frozen(weights.astype(np.float32)),
        valid=_frozen(valid),
    )


def reconstruct(weights: ReconstructionWeights, s_refined: ClusterGrid) -> TokenGrid:
    """Expand refined centers back to a token grid: each token is its weighted neighbor mix."""
    if s_refined.n_positions != weights.n_clusters:
        raise ParameterError(
            f"weights expect {weights.n_clusters} clusters, refined grid has "
            f"{s_refined.n_positions}"
        )
    centers = s_refined.tokens().astype(np.float64)
    gathered = centers[weights.indices]  # (N, L_max, C)
    w = np.where(weights.valid, weights.weights.astype(np.float64), 0.0)
    out = np.einsum("nl,nlc->nc", w, gathered).astype(np.float32)
    h, wdt = weights.token_shape
    return TokenGrid(out.reshape(h, wdt, s_refined.channels))


def reconstruct_from_subset(
    z_pre: TokenGrid,
    kept: np.ndarray,
    refined_subset: np.ndarray,
    cfg: ReconstructionConfig,
) -> TokenGrid:
    """Rebuild the full grid from a kept-token subset after external refinement.

    The kept tokens' pre-refinement features act as the center set; every
    output token (kept ones included) is reconstructed through the same k-NN
    weighting, so a kept token gets dominant but not exclusive weight on its
    own refined feature.
    """
    kept = np.asarray(kept, dtype=np.int64).reshape(-1)
    n = z_pre.n_positions
    if kept.size == 0:
        raise ParameterError("kept token set must be non-empty")
    if np.unique(kept).size != kept.size:
        raise ParameterError("kept token indices must be unique")
    if kept.min() < 0 or kept.max() >= n:
        raise ParameterError(f"kept token indices must lie in [0, {n})")
    refined = np.asarray(refined_subset, dtype=np.float32)
    if refined.shape != (kept.size, z_pre.channels):
        raise ParameterError(
            f"refined_subset must have shape ({kept.size}, {z_pre.channels}), got {refined.shape}"
        )
    if cfg.k > kept.size:
        raise ParameterError(f"k={cfg.k} exceeds the number of kept tokens {kept.size}")

    centers_pre = ClusterGrid(z_pre.tokens()[kept].reshape(1, kept.size, z_pre.channels))
    knn_cfg = ReconstructionConfig(
        k=cfg.k, tau=cfg.tau, candidate_mode="knn_global", weight_kernel=cfg.weight_kernel
    )
    rel = compute_relations(z_pre, centers_pre, None, knn_cfg)
    refined_grid = ClusterGrid(refined.reshape(1, kept.size, z_pre.channels))
    return reconstruct(rel, refined_grid)
