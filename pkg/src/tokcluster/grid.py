"""Dense feature grids and the resampling / similarity primitives built on them.

A *token grid* is an ``H x W`` arrangement of C-channel feature vectors, stored
row-major so token ``p = y * width + x``. A *cluster grid* is the same container
for the reduced ``h x w`` map of cluster centers. Both are immutable: the
backing array is copied on construction and marked read-only, so grids can be
shared freely across threads.

All payloads are 32-bit floats; reductions (means, dot products, variances)
accumulate in 64-bit before rounding back, so results do not depend on
summation order at the 1e-5 level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ParameterError(ValueError):
    """An argument violates an operation's precondition."""


class NonFiniteError(ValueError):
    """A grid payload contains NaN or Inf."""


class _FeatureGrid:
    """Shared machinery of TokenGrid / ClusterGrid: a read-only (H, W, C) float32 array."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float32, order="C", copy=True)
        if arr.ndim != 3:
            raise ParameterError(
                f"{type(self).__name__} expects a (height, width, channels) array, got shape {arr.shape}"
            )
        if arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ParameterError(f"grid dimensions must be >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"{type(self).__name__} payload contains NaN or Inf")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError(f"{type(self).__name__} is immutable")

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def n_positions(self) -> int:
        return self.data.shape[0] * self.data.shape[1]

    def tokens(self) -> np.ndarray:
        """Read-only (N, C) view in row-major token order."""
        return self.data.reshape(self.n_positions, self.channels)

    def __repr__(self):
        h, w, c = self.data.shape
        return f"{type(self).__name__}({h}x{w}x{c})"


class TokenGrid(_FeatureGrid):
    """Full-resolution token feature map: ``height_t x width_t`` tokens of ``channels`` floats."""

    @property
    def height_t(self) -> int:
        return self.data.shape[0]

    @property
    def width_t(self) -> int:
        return self.data.shape[1]


class ClusterGrid(_FeatureGrid):
    """Reduced map of cluster-center features: ``height_c x width_c`` centers."""

    @property
    def height_c(self) -> int:
        return self.data.shape[0]

    @property
    def width_c(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class SimilarityReport:
    """Per-token cosine similarity between two grids of equal shape.

    ``per_token`` holds one value per token position (row-major); positions
    where either input token has zero norm are flagged invalid there (value
    NaN) and excluded from ``mean`` and ``min``.
    """

    per_token: np.ndarray
    valid: np.ndarray
    mean: float
    min: float

    @property
    def n_valid(self) -> int:
        return int(np.count_nonzero(self.valid))


def _pool_bounds(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray]:
    """Adaptive-pooling cell boundaries: cell i covers [floor(i*n/h), ceil((i+1)*n/h))."""
    i = np.arange(n_out, dtype=np.int64)
    start = (i * n_in) // n_out
    end = -((-(i + 1) * n_in) // n_out)  # ceil division
    return start, end


def adaptive_average_pool(src: _FeatureGrid, h: int, w: int) -> ClusterGrid:
    """Average-pool a grid down to ``h x w`` cells.

    Cell (i, j) is the arithmetic mean of source rows [floor(i*H/h), ceil((i+1)*H/h))
    and the analogous column range, which tiles the grid with full coverage
    (adjacent cells may overlap by one row/col when sizes do not divide).
    Pooling a grid to its own size is the identity.
    """
    src_h, src_w = src.data.shape[0], src.data.shape[1]
    if not (1 <= h <= src_h) or not (1 <= w <= src_w):
        raise ParameterError(
            f"pool target ({h}, {w}) out of range for source ({src_h}, {src_w})"
        )
    row_s, row_e = _pool_bounds(src_h, h)
    col_s, col_e = _pool_bounds(src_w, w)
    out = np.empty((h, w, src.channels), dtype=np.float32)
    data = src.data
    for i in range(h):
        rows = data[row_s[i] : row_e[i]]
        for j in range(w):
            block = rows[:, col_s[j] : col_e[j]]
            out[i, j] = block.mean(axis=(0, 1), dtype=np.float64).astype(np.float32)
    return ClusterGrid(out)


def _resize_coords(n_in: int, n_out: int, align_corners: bool) -> np.ndarray:
    if align_corners:
        if n_out == 1:
            return np.zeros(1, dtype=np.float64)
        return np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)
    coords = (np.arange(n_out, dtype=np.float64) + 0.5) * n_in / n_out - 0.5
    return np.clip(coords, 0.0, n_in - 1)


def resize_array_bilinear(
    arr: np.ndarray, out_h: int, out_w: int, align_corners: bool
) -> np.ndarray:
    """Separable bilinear resize of an (H, W, C) array; float64 weights, float32 result."""
    if out_h < 1 or out_w < 1:
        raise ParameterError(f"resize target must be >= 1x1, got ({out_h}, {out_w})")
    in_h, in_w = arr.shape[0], arr.shape[1]
    ys = _resize_coords(in_h, out_h, align_corners)
    xs = _resize_coords(in_w, out_w, align_corners)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    a = arr.astype(np.float64)
    top = a[y0][:, x0] * (1 - wx) + a[y0][:, x1] * wx
    bot = a[y1][:, x0] * (1 - wx) + a[y1][:, x1] * wx
    return (top * (1 - wy) + bot * wy).astype(np.float32)


def bilinear_resize(src: _FeatureGrid, out_h: int, out_w: int, align_corners: bool = False):
    """Bilinear resize of a grid; the output has the same grid type as the input.

    With ``align_corners=True`` corner samples reproduce the corner inputs
    exactly and any function affine in (row, col) is reproduced at the sample
    points; with ``align_corners=False`` samples are placed at pixel centers.
    """
    out = resize_array_bilinear(src.data, out_h, out_w, align_corners)
    return type(src)(out)


def cosine_similarity(a: TokenGrid, b: TokenGrid) -> SimilarityReport:
    """Per-token cosine similarity of channel vectors between two equal-shape grids."""
    if a.data.shape != b.data.shape:
        raise ParameterError(
            f"cosine_similarity needs identical shapes, got {a.data.shape} vs {b.data.shape}"
        )
    ta = a.tokens().astype(np.float64)
    tb = b.tokens().astype(np.float64)
    dot = np.einsum("nc,nc->n", ta, tb)
    na = np.sqrt(np.einsum("nc,nc->n", ta, ta))
    nb = np.sqrt(np.einsum("nc,nc->n", tb, tb))
    valid = (na > 0.0) & (nb > 0.0)
    if not np.any(valid):
        raise ParameterError("cosine_similarity: every token has zero norm in at least one input")
    per_token = np.full(ta.shape[0], np.nan, dtype=np.float32)
    cos = dot[valid] / (na[valid] * nb[valid])
    per_token[valid] = np.clip(cos, -1.0, 1.0).astype(np.float32)
    per_token.flags.writeable = False
    valid.flags.writeable = False
    vals = per_token[valid].astype(np.float64)
    return SimilarityReport(
        per_token=per_token,
        valid=valid,
        mean=float(vals.mean()),
        min=float(vals.min()),
    )
