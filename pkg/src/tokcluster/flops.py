"""Analytic floating-point-operation counts for plain vs. clustered pipelines.

Counts are exact integers under the conventions below; convert to GFLOPs only
for display. The conventions are deliberately explicit because published
numbers rarely state theirs; comparisons against external figures should use
ratios, which are convention-invariant.

Counting conventions (ops per element):
  * multiply-add            2  (one mult + one add)
  * linear  (n,i)->(n,o)    2*n*i*o matmul + n*o bias adds
  * layer norm on (n,C)     n*(8C+4): mean C+1, variance 3C+1, normalize+affine 4C+2
  * attention, h heads      logits 2*n^2*C, scale n^2*h, softmax 5*n^2*h, apply 2*n^2*C
  * GELU                    5 per element
  * residual add            n*C per sub-block
  * softmax over m entries  5*m (max, subtract, exp, accumulate, divide)
  * distance over C chans   2*C per (token, candidate) pair
  * temperature divide      1 per logit
"""

from __future__ import annotations

from dataclasses import dataclass

from .grid import ParameterError
from .minivit import PipelineConfig

CONVENTIONS = (
    "flops conventions: mult-add=2; linear 2*n*i*o + n*o bias; "
    "LN n*(8C+4); attention 4*n^2*C + 6*n^2*heads (scale+softmax); GELU 5/elem; "
    "residual n*C; softmax 5/entry; distance 2*C/pair; temperature divide 1/logit. "
    "GFLOPs = count / 1e9 at display time only."
)


@dataclass(frozen=True)
class ArchSpec:
    """Backbone shape: layer count, width, heads, FFN ratio, and the token grid."""

    layers: int
    channels: int
    heads: int
    mlp_ratio: float
    grid_h: int
    grid_w: int
    window: int | None = None

    def __post_init__(self):
        if min(self.layers, self.channels, self.heads, self.grid_h, self.grid_w) < 1:
            raise ParameterError("all ArchSpec dimensions must be >= 1")
        if self.mlp_ratio <= 0:
            raise ParameterError(f"mlp_ratio must be > 0, got {self.mlp_ratio}")
        if self.channels % self.heads != 0:
            raise ParameterError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.window is not None and self.window < 1:
            raise ParameterError(f"window must be >= 1, got {self.window}")

    @property
    def n_tokens(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def hidden(self) -> int:
        return int(round(self.channels * self.mlp_ratio))

    def to_json_dict(self) -> dict:
        return {
            "layers": self.layers,
            "channels": self.channels,
            "heads": self.heads,
            "mlp_ratio": self.mlp_ratio,
            "grid": [self.grid_h, self.grid_w],
            "window": self.window,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ArchSpec":
        grid = d["grid"]
        return cls(
            layers=int(d["layers"]),
            channels=int(d["channels"]),
            heads=int(d["heads"]),
            mlp_ratio=float(d.get("mlp_ratio", 4.0)),
            grid_h=int(grid[0]),
            grid_w=int(grid[1]),
            window=None if d.get("window") is None else int(d["window"]),
        )


@dataclass(frozen=True)
class FlopsPart:
    component: str
    n_tokens: int
    flops: int


@dataclass(frozen=True)
class FlopsReport:
    """Itemized counts plus the ratio against a named baseline total."""

    parts: tuple[FlopsPart, ...]
    baseline_name: str
    baseline_total: int

    @property
    def total(self) -> int:
        return sum(p.flops for p in self.parts)

    @property
    def ratio(self) -> float:
        return self.total / self.baseline_total

    def to_json_dict(self) -> dict:
        return {
            "conventions": CONVENTIONS,
            "parts": [
                {"component": p.component, "n_tokens": p.n_tokens, "flops": p.flops}
                for p in self.parts
            ],
            "total": self.total,
            "baseline": {"name": self.baseline_name, "total": self.baseline_total},
            "ratio": self.ratio,
        }

    def csv_rows(self) -> list[list]:
        rows = [["component", "n_tokens", "flops"]]
        for p in self.parts:
            rows.append([p.component, p.n_tokens, p.flops])
        rows.append(["total", "", self.total])
        return rows


def flops_layer_norm(n: int, channels: int) -> int:
    return n * (8 * channels + 4)


def transformer_layer_items(n: int, spec: ArchSpec) -> dict[str, int]:
    """Per-component op counts of one layer at ``n`` tokens, under the module conventions."""
    if n < 1:
        raise ParameterError(f"token count must be >= 1, got {n}")
    c = spec.channels
    hid = spec.hidden
    return {
        "ln": 2 * flops_layer_norm(n, c),
        "qkv_out_proj": 4 * (2 * n * c * c) + 4 * n * c,
        "attn_logits_apply": 4 * n * n * c,
        "attn_scale_softmax": 6 * n * n * spec.heads,
        "ffn": (2 * n * c * hid + n * hid) + (2 * n * hid * c + n * c),
        "gelu": 5 * n * hid,
        "residual": 2 * n * c,
    }


def flops_transformer_layer(n: int, spec: ArchSpec) -> int:
    return sum(transformer_layer_items(n, spec).values())


def clustering_items(
    n: int, hw: int, lam: int, kappa: int, channels: int
) -> dict[str, int]:
    """Pooling init plus ``kappa`` E/M rounds; ``lam`` is the candidate count per token."""
    per_iter = {
        "e_distances": 2 * n * lam * channels,
        "e_softmax": 6 * n * lam,  # temperature divide + 5-op softmax per candidate
        "m_mass": n * lam,
        "m_weighted_sum": 2 * n * lam * channels,
        "m_normalize": hw * channels + hw,
    }
    items = {"aap_init": n * channels + hw * channels}
    for key, val in per_iter.items():
        items[key] = val * kappa
    return items


def flops_clustering(n: int, hw: int, lam: int, kappa: int, channels: int) -> int:
    if min(n, hw, lam, channels) < 1 or kappa < 0:
        raise ParameterError("clustering cost needs n, hw, lam, channels >= 1 and kappa >= 0")
    return sum(clustering_items(n, hw, lam, kappa, channels).values())


def reconstruction_items(
    n: int, hw: int, k_or_lam: int, channels: int, mode: str = "knn_global"
) -> dict[str, int]:
    if mode == "knn_global":
        return {
            "distances": 2 * n * hw * channels,
            "topk_select": n * hw,
            "softmax": 6 * n * k_or_lam,
            "weighted_sum": 2 * n * k_or_lam * channels,
        }
    if mode == "locality":
        return {
            "distances": 2 * n * k_or_lam * channels,
            "softmax": 6 * n * k_or_lam,
            "weighted_sum": 2 * n * k_or_lam * channels,
        }
    raise ParameterError(f"unknown reconstruction mode {mode!r}")


def flops_reconstruction(
    n: int, hw: int, k_or_lam: int, channels: int, mode: str = "knn_global"
) -> int:
    if min(n, hw, k_or_lam, channels) < 1:
        raise ParameterError("reconstruction cost needs all sizes >= 1")
    return sum(reconstruction_items(n, hw, k_or_lam, channels, mode).values())


def flops_pipeline(cfg: PipelineConfig, spec: ArchSpec) -> FlopsReport:
    """Itemized pipeline cost; the baseline is always the plain L-layer pass."""
    if cfg.total_layers != spec.layers:
        raise ParameterError(
            f"pipeline layers {cfg.total_layers} != arch layers {spec.layers}"
        )
    n = spec.n_tokens
    per_layer_full = flops_transformer_layer(n, spec)
    baseline_total = spec.layers * per_layer_full

    if cfg.mode == "plain":
        parts = (FlopsPart("transformer_layers_full", n, baseline_total),)
        return FlopsReport(parts=parts, baseline_name="plain", baseline_total=baseline_total)

    hw = cfg.clustering.target_h * cfg.clustering.target_w
    lam = cfg.clustering.lambda_h * cfg.clustering.lambda_w
    recon_mode = cfg.reconstruction.candidate_mode
    k_or_lam = cfg.reconstruction.k if recon_mode == "knn_global" else lam
    parts = (
        FlopsPart("transformer_layers_full", n, (cfg.alpha + cfg.gamma) * per_layer_full),
        FlopsPart("transformer_layers_reduced", hw, cfg.beta * flops_transformer_layer(hw, spec)),
        FlopsPart(
            "token_clustering",
            n,
            flops_clustering(n, hw, lam, cfg.clustering.kappa, spec.channels),
        ),
        FlopsPart(
            "token_reconstruction",
            n,
            flops_reconstruction(n, hw, k_or_lam, spec.channels, recon_mode),
        ),
    )
    return FlopsReport(parts=parts, baseline_name="plain", baseline_total=baseline_total)
