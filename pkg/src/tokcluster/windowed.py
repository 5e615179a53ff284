"""Windowed variants for shifted-window transformers.

Token clustering and reconstruction are applied independently inside
non-overlapping ``K x K`` windows (``K x K -> k x k`` and back); windows never
exchange information. The relative-position-embedding table used by window
attention is resized per head from side ``2K - 1`` to ``2k - 1`` so pre-trained
biases remain usable at the clustered window size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusteringConfig, build_locality_map, token_clustering
from .grid import ClusterGrid, ParameterError, TokenGrid, resize_array_bilinear
from .reconstruction import ReconstructionConfig, compute_relations, reconstruct


@dataclass(frozen=True)
class WindowBatch:
    """Row-major list of square windows cut from one grid."""

    windows: tuple[TokenGrid, ...]
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or len(self.windows) != self.rows * self.cols:
            raise ParameterError(
                f"batch needs rows*cols={self.rows * self.cols} windows, got {len(self.windows)}"
            )
        side = self.windows[0].height_t
        ch = self.windows[0].channels
        for win in self.windows:
            if win.height_t != side or win.width_t != side or win.channels != ch:
                raise ParameterError("all windows must be square with identical shape")

    @property
    def window_side(self) -> int:
        return self.windows[0].height_t

    @property
    def channels(self) -> int:
        return self.windows[0].channels

    @property
    def grid_shape(self) -> tuple[int, int]:
        """Token dimensions of the merged grid."""
        return (self.rows * self.window_side, self.cols * self.window_side)


def partition_windows(src: TokenGrid, window: int) -> WindowBatch:
    """Cut a grid into non-overlapping ``window x window`` tiles, row-major."""
    if window < 1:
        raise ParameterError(f"window side must be >= 1, got {window}")
    if src.height_t % window != 0 or src.width_t % window != 0:
        raise ParameterError(
            f"grid {src.height_t}x{src.width_t} is not divisible by window {window}"
        )
    rows = src.height_t // window
    cols = src.width_t // window
    tiles = []
    for r in range(rows):
        for c in range(cols):
            tiles.append(
                TokenGrid(src.data[r * window : (r + 1) * window, c * window : (c + 1) * window])
            )
    return WindowBatch(windows=tuple(tiles), rows=rows, cols=cols)


def merge_windows(batch: WindowBatch) -> TokenGrid:
    """Exact inverse of :func:`partition_windows` (also merges clustered batches)."""
    side = batch.window_side
    out = np.empty(
        (batch.rows * side, batch.cols * side, batch.channels), dtype=np.float32
    )
    for r in range(batch.rows):
        for c in range(batch.cols):
            out[r * side : (r + 1) * side, c * side : (c + 1) * side] = batch.windows[
                r * batch.cols + c
            ].data
    return TokenGrid(out)


def window_token_clustering(
    batch: WindowBatch,
    k_side: int,
    lambda_window: tuple[int, int] = (5, 5),
    kappa: int = 5,
    tau: float = 50.0,
) -> WindowBatch:
    """Cluster every window from ``K x K`` down to ``k_side x k_side`` independently."""
    if not (1 <= k_side <= batch.window_side):
        raise ParameterError(
            f"k_side must be in [1, {batch.window_side}], got {k_side}"
        )
    cfg = ClusteringConfig(
        target_h=k_side,
        target_w=k_side,
        lambda_h=lambda_window[0],
        lambda_w=lambda_window[1],
        kappa=kappa,
        tau=tau,
    )
    clustered = []
    for win in batch.windows:
        centers, _ = token_clustering(win, cfg)
        clustered.append(TokenGrid(centers.data))
    return WindowBatch(windows=tuple(clustered), rows=batch.rows, cols=batch.cols)


def window_token_reconstruction(
    pre_batch: WindowBatch,
    clustered_pre_batch: WindowBatch,
    refined_batch: WindowBatch,
    cfg: ReconstructionConfig,
    lambda_window: tuple[int, int] = (5, 5),
) -> WindowBatch:
    """Rebuild ``K x K`` windows from refined ``k x k`` windows, per window.

    ``pre_batch`` / ``clustered_pre_batch`` are the window features before the
    intermediate refinement; relations are estimated on those and applied to
    ``refined_batch``. ``lambda_window`` is only consulted for
    ``candidate_mode='locality'``, where the clustering-time candidate sets are
    rebuilt from the window geometry.
    """
    if not (
        pre_batch.rows == clustered_pre_batch.rows == refined_batch.rows
        and pre_batch.cols == clustered_pre_batch.cols == refined_batch.cols
    ):
        raise ParameterError("window batches have mismatched layouts")
    if clustered_pre_batch.window_side != refined_batch.window_side:
        raise ParameterError("clustered and refined batches have different window sides")

    k_side = clustered_pre_batch.window_side
    big = pre_batch.window_side
    locality = None
    if cfg.candidate_mode == "locality":
        locality = build_locality_map(big, big, k_side, k_side, lambda_window)

    rebuilt = []
    for pre, cpre, refined in zip(
        pre_batch.windows, clustered_pre_batch.windows, refined_batch.windows
    ):
        rel = compute_relations(pre, ClusterGrid(cpre.data), locality, cfg)
        rebuilt.append(TokenGrid(reconstruct(rel, ClusterGrid(refined.data)).data))
    return WindowBatch(windows=tuple(rebuilt), rows=pre_batch.rows, cols=pre_batch.cols)


@dataclass(frozen=True)
class RpeTable:
    """Relative-position bias table: one (side x side) map per attention head, side odd."""

    values: np.ndarray = field(repr=False)  # (side, side, heads) float32

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float32, copy=True)
        if arr.ndim != 3 or arr.shape[0] != arr.shape[1]:
            raise ParameterError(f"RPE table must be (side, side, heads), got {arr.shape}")
        if arr.shape[0] % 2 == 0:
            raise ParameterError(f"RPE table side must be odd, got {arr.shape[0]}")
        if not np.all(np.isfinite(arr)):
            raise ParameterError("RPE table contains NaN or Inf")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def side(self) -> int:
        return self.values.shape[0]

    @property
    def heads(self) -> int:
        return self.values.shape[2]

    @property
    def window_side(self) -> int:
        """The window size K this table serves: side = 2K - 1."""
        return (self.side + 1) // 2


def interpolate_rpe_table(table: RpeTable, k_side: int) -> RpeTable:
    """Resize the bias table for a smaller window: side ``2K-1`` to ``2k-1``, per head.

    Bilinear with corner alignment, so endpoint offsets are preserved and for
    ``k_side >= 2`` the center entry (relative offset 0,0) stays exact.
    """
    big = table.window_side
    if not (1 <= k_side <= big):
        raise ParameterError(f"k_side must be in [1, {big}], got {k_side}")
    out_side = 2 * k_side - 1
    resized = resize_array_bilinear(table.values, out_side, out_side, align_corners=True)
    return RpeTable(values=resized)
