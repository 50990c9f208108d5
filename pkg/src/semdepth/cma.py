"""Cross-task multi-embedding attention between the depth and segmentation decoders.

Per pixel, each head embeds the target feature as key and value and the
reference feature as query.  The head scores key.query / sqrt(C') are
normalised across heads (softmax for H > 1, identity for H = 1) and weight the
value embeddings, which are summed over heads, projected back to C channels,
and fused with the original target through two 3x3 convolutions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Conv2d, Module


@dataclass
class CmaConfig:
    heads: int = 4
    embed_ratio: float = 2.0
    layers: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        self.layers = tuple(int(v) for v in self.layers)
        if self.heads < 1:
            raise ValueError("heads must be >= 1")
        if self.embed_ratio <= 0:
            raise ValueError("embed_ratio must be positive")

    @property
    def normalization(self) -> str:
        return "identity" if self.heads == 1 else "softmax"

    def embed_dim(self, channels: int) -> int:
        return max(1, int(round(channels * self.embed_ratio)))


class HeadEmbeddings(Module):
    """Parameters of one attention direction: per-head query/key/value 1x1 maps
    stacked along the output channels, the shared output projection, and the
    two fusion convolutions."""

    def __init__(self, channels: int, heads: int = 4, embed_dim: int | None = None):
        self.channels = channels
        self.heads = heads
        self.embed_dim = embed_dim or 2 * channels
        E = heads * self.embed_dim
        self.query = Conv2d(channels, E, 1, bias=False)
        self.key = Conv2d(channels, E, 1, bias=False)
        self.value = Conv2d(channels, E, 1, bias=False)
        self.project = Conv2d(self.embed_dim, channels, 1, bias=False)
        self.fuse1 = Conv2d(2 * channels, channels, 3)
        self.fuse2 = Conv2d(channels, channels, 3)

    @classmethod
    def from_config(cls, channels: int, config: CmaConfig) -> "HeadEmbeddings":
        return cls(channels, config.heads, config.embed_dim(channels))

    def split_heads(self, t: Tensor) -> Tensor:
        N, _, h, w = t.shape
        return t.reshape(N, self.heads, self.embed_dim, h, w)


def _check_spatial(target: Tensor, reference: Tensor):
    if target.shape[0] != reference.shape[0] or target.shape[2:] != reference.shape[2:]:
        raise ValueError(f"spatial mismatch: {target.shape} vs {reference.shape}")


def attention_scores(target, reference, emb: HeadEmbeddings) -> Tensor:
    """(N, H, h, w) scores key(target) . query(reference) / sqrt(C')."""
    target, reference = ad.as_tensor(target), ad.as_tensor(reference)
    _check_spatial(target, reference)
    k = emb.split_heads(emb.key(target))
    q = emb.split_heads(emb.query(reference))
    return (k * q).sum(axis=2) / np.sqrt(emb.embed_dim)


def normalize_scores(scores, rho: str = "softmax") -> Tensor:
    if rho == "identity":
        return ad.as_tensor(scores)
    if rho == "softmax":
        return ad.softmax(scores, axis=1)
    raise ValueError(f"unknown normalisation {rho!r}")


def refine_features(target, reference, emb: HeadEmbeddings, rho: str | None = None) -> Tensor:
    """Refined target F' = sum_h rho(A_h) * value_h(target), shape (N, C', h, w)."""
    target = ad.as_tensor(target)
    rho = rho or ("identity" if emb.heads == 1 else "softmax")
    weights = normalize_scores(attention_scores(target, reference, emb), rho)
    N, H, h, w = weights.shape
    v = emb.split_heads(emb.value(target))
    return (v * weights.reshape(N, H, 1, h, w)).sum(axis=1)


def fuse(original, refined, emb: HeadEmbeddings) -> Tensor:
    """Two 3x3 convolutions (ELU between) over [project(F'), original]."""
    original, refined = ad.as_tensor(original), ad.as_tensor(refined)
    if original.shape[1] != emb.channels or refined.shape[1] != emb.embed_dim:
        raise ValueError("channel mismatch between features and embeddings")
    x = ad.concat([emb.project(refined), original], axis=1)
    return emb.fuse2(ad.elu(emb.fuse1(x)))


def cma(target, reference, emb: HeadEmbeddings, rho: str | None = None) -> Tensor:
    return fuse(target, refine_features(target, reference, emb, rho), emb)


class BidirectionalCma(Module):
    """Two independent attention directions reading the same input pair."""

    def __init__(self, channels: int, config: CmaConfig | None = None):
        config = config or CmaConfig()
        self.depth_target = HeadEmbeddings.from_config(channels, config)
        self.seg_target = HeadEmbeddings.from_config(channels, config)

    def __call__(self, depth_features, seg_features) -> tuple[Tensor, Tensor]:
        return cma_bidirectional(depth_features, seg_features, self.depth_target, self.seg_target)


def cma_bidirectional(depth_features, seg_features, depth_emb: HeadEmbeddings,
                      seg_emb: HeadEmbeddings) -> tuple[Tensor, Tensor]:
    depth_features, seg_features = ad.as_tensor(depth_features), ad.as_tensor(seg_features)
    if depth_features.shape != seg_features.shape:
        raise ValueError(f"shape mismatch: {depth_features.shape} vs {seg_features.shape}")
    out_d = cma(depth_features, seg_features, depth_emb)
    out_s = cma(seg_features, depth_features, seg_emb)
    return out_d, out_s
