"""Token clustering: locality-masked soft k-means over a token grid.

Reduces an ``H_t x W_t`` token grid to an ``h x w`` grid of cluster centers.
Centers are seeded by adaptive average pooling, then refined by alternating

  E-step  soft-assign each token to the cluster cells inside its locality
          window, with weights softmax(-||z_p - s_i||^2 / tau) over candidates;
  M-step  recompute each center as the assignment-mass-normalized convex
          combination of its contributing tokens (near-empty clusters keep
          their previous center instead of collapsing toward zero).

The locality window of a token is the ``lambda_h x lambda_w`` rectangle of
cluster cells centered on its *home cell* -- the cell whose pooling block
contains the token -- clipped at the grid border.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import ClusterGrid, ParameterError, TokenGrid, adaptive_average_pool

# Column mass below this counts as an empty cluster; the previous center is kept.
EMPTY_CLUSTER_MASS = 1e-16


@dataclass(frozen=True)
class ClusteringConfig:
    """Target size and EM hyper-parameters for :func:`token_clustering`."""

    target_h: int
    target_w: int
    lambda_h: int = 5
    lambda_w: int = 5
    kappa: int = 5
    tau: float = 50.0

    def __post_init__(self):
        if self.target_h < 1 or self.target_w < 1:
            raise ParameterError(f"target size must be >= 1x1, got {self.target_h}x{self.target_w}")
        if self.lambda_h < 1 or self.lambda_w < 1 or self.lambda_h % 2 == 0 or self.lambda_w % 2 == 0:
            raise ParameterError(
                f"locality window sides must be odd and >= 1, got {self.lambda_h}x{self.lambda_w}"
            )
        if self.kappa < 0:
            raise ParameterError(f"kappa must be >= 0, got {self.kappa}")
        if not self.tau > 0:
            raise ParameterError(f"tau must be > 0, got {self.tau}")

    @property
    def lambda_window(self) -> tuple[int, int]:
        return (self.lambda_h, self.lambda_w)

    def to_json_dict(self) -> dict:
        return {
            "target_h": self.target_h,
            "target_w": self.target_w,
            "lambda_h": self.lambda_h,
            "lambda_w": self.lambda_w,
            "kappa": self.kappa,
            "tau": self.tau,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ClusteringConfig":
        return cls(
            target_h=int(d["target_h"]),
            target_w=int(d["target_w"]),
            lambda_h=int(d.get("lambda_h", 5)),
            lambda_w=int(d.get("lambda_w", 5)),
            kappa=int(d.get("kappa", 5)),
            tau=float(d.get("tau", 50.0)),
        )


@dataclass(frozen=True)
class LocalityMap:
    """Per-token candidate cluster cells, as padded index rows.

    ``indices[p]`` lists the candidate cluster indices of token ``p`` in
    row-major cell order; entries where ``valid[p]`` is False are padding.
    """

    token_shape: tuple[int, int]
    cluster_shape: tuple[int, int]
    lambda_window: tuple[int, int]
    indices: np.ndarray = field(repr=False)  # (N, L_max) int32
    valid: np.ndarray = field(repr=False)  # (N, L_max) bool

    @property
    def n_tokens(self) -> int:
        return self.token_shape[0] * self.token_shape[1]

    @property
    def n_clusters(self) -> int:
        return self.cluster_shape[0] * self.cluster_shape[1]

    def candidates(self, p: int) -> np.ndarray:
        """Candidate cluster indices of token ``p`` (no padding)."""
        return self.indices[p][self.valid[p]]


@dataclass(frozen=True)
class AssignmentWeights:
    """E-step output: per-token weights over the token's locality candidates."""

    map: LocalityMap
    weights: np.ndarray = field(repr=False)  # (N, L_max) float32, 0 at padding


def home_cells(height_t: int, width_t: int, h: int, w: int) -> np.ndarray:
    """(N, 2) home cell (row, col) per token: the pooling cell whose block contains it."""
    ys = np.arange(height_t, dtype=np.int64)
    xs = np.arange(width_t, dtype=np.int64)
    hr = (ys * h) // height_t
    hc = (xs * w) // width_t
    grid = np.stack(np.meshgrid(hr, hc, indexing="ij"), axis=-1)
    return grid.reshape(-1, 2)


def build_locality_map(
    height_t: int, width_t: int, h: int, w: int, lambda_window: tuple[int, int] = (5, 5)
) -> LocalityMap:
    """Candidate cells per token: the lambda window around its home cell, border-clipped."""
    lam_h, lam_w = lambda_window
    if height_t < 1 or width_t < 1 or not (1 <= h <= height_t) or not (1 <= w <= width_t):
        raise ParameterError(
            f"invalid dimensions: tokens {height_t}x{width_t}, clusters {h}x{w}"
        )
    if lam_h < 1 or lam_w < 1 or lam_h % 2 == 0 or lam_w % 2 == 0:
        raise ParameterError(f"lambda window sides must be odd, got {lam_h}x{lam_w}")

    homes = home_cells(height_t, width_t, h, w)  # (N, 2)
    half_h, half_w = (lam_h - 1) // 2, (lam_w - 1) // 2
    dy = np.arange(-half_h, half_h + 1, dtype=np.int64)
    dx = np.arange(-half_w, half_w + 1, dtype=np.int64)
    offs = np.stack(np.meshgrid(dy, dx, indexing="ij"), axis=-1).reshape(-1, 2)  # row-major

    cells = homes[:, None, :] + offs[None, :, :]  # (N, lam_h*lam_w, 2)
    valid = (
        (cells[..., 0] >= 0) & (cells[..., 0] < h) & (cells[..., 1] >= 0) & (cells[..., 1] < w)
    )
    indices = (np.clip(cells[..., 0], 0, h - 1) * w + np.clip(cells[..., 1], 0, w - 1)).astype(
        np.int32
    )
    indices = np.where(valid, indices, 0).astype(np.int32)
    return LocalityMap(
        token_shape=(height_t, width_t),
        cluster_shape=(h, w),
        lambda_window=(lam_h, lam_w),
        indices=_frozen(indices),
        valid=_frozen(valid),
    )


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


def _check_consistent(z: TokenGrid, s: ClusterGrid, locality: LocalityMap) -> None:
    if z.channels != s.channels:
        raise ParameterError(f"channel mismatch: tokens {z.channels} vs clusters {s.channels}")
    if locality.token_shape != (z.height_t, z.width_t):
        raise ParameterError(
            f"locality map built for tokens {locality.token_shape}, got {(z.height_t, z.width_t)}"
        )
    if locality.cluster_shape != (s.height_c, s.width_c):
        raise ParameterError(
            f"locality map built for clusters {locality.cluster_shape}, "
            f"got {(s.height_c, s.width_c)}"
        )


def masked_softmax_rows(logits: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Row-wise softmax over valid entries only (max-subtracted); padding gets 0."""
    shifted = np.where(valid, logits, -np.inf)
    row_max = shifted.max(axis=1, keepdims=True)
    expd = np.exp(shifted - row_max)
    expd[~valid] = 0.0
    return expd / expd.sum(axis=1, keepdims=True)


def candidate_sq_distances(
    tokens: np.ndarray, centers: np.ndarray, indices: np.ndarray
) -> np.ndarray:
    """Squared euclidean distance from each token to each of its candidate centers (float64)."""
    diff = tokens[:, None, :].astype(np.float64) - centers[indices].astype(np.float64)
    return np.einsum("nlc,nlc->nl", diff, diff)


def e_step(z: TokenGrid, s: ClusterGrid, locality: LocalityMap, tau: float) -> AssignmentWeights:
    """Soft-assign tokens to their candidate clusters: softmax of -d^2/tau per token."""
    if not tau > 0:
        raise ParameterError(f"tau must be > 0, got {tau}")
    _check_consistent(z, s, locality)
    d2 = candidate_sq_distances(z.tokens(), s.tokens(), locality.indices)
    q = masked_softmax_rows(-d2 / float(tau), locality.valid)
    return AssignmentWeights(map=locality, weights=_frozen(q.astype(np.float32)))


def m_step(z: TokenGrid, q: AssignmentWeights, previous: ClusterGrid) -> ClusterGrid:
    """Recompute centers as mass-normalized weighted token means.

    Cluster i with total assignment mass below ``EMPTY_CLUSTER_MASS`` keeps its
    previous center; every other center is a convex combination of tokens and
    therefore stays inside the per-channel hull of ``z``.
    """
    locality = q.map
    _check_consistent(z, previous, locality)
    n_clusters = locality.n_clusters
    idx = locality.indices.reshape(-1)
    wmat = np.where(locality.valid, q.weights.astype(np.float64), 0.0)  # (N, L_max)

    mass = np.bincount(idx, weights=wmat.reshape(-1), minlength=n_clusters)
    tokens = z.tokens()
    sums = np.empty((n_clusters, z.channels), dtype=np.float64)
    for c in range(z.channels):
        contrib = wmat * tokens[:, c, None].astype(np.float64)
        sums[:, c] = np.bincount(idx, weights=contrib.reshape(-1), minlength=n_clusters)

    keep = mass < EMPTY_CLUSTER_MASS
    safe_mass = np.where(keep, 1.0, mass)
    centers = (sums / safe_mass[:, None]).astype(np.float32)
    if np.any(keep):
        centers[keep] = previous.tokens()[keep]
    return ClusterGrid(centers.reshape(previous.height_c, previous.width_c, z.channels))


def token_clustering(z: TokenGrid, cfg: ClusteringConfig) -> tuple[ClusterGrid, LocalityMap]:
    """Full clustering layer: pooled initialization plus ``kappa`` E/M rounds.

    Returns the final center grid and the locality map so reconstruction can
    reuse the same candidate sets.
    """
    locality = build_locality_map(
        z.height_t, z.width_t, cfg.target_h, cfg.target_w, cfg.lambda_window
    )
    centers = adaptive_average_pool(z, cfg.target_h, cfg.target_w)
    for _ in range(cfg.kappa):
        q = e_step(z, centers, locality, cfg.tau)
        centers = m_step(z, q, centers)
    return centers, locality
