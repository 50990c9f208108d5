"""Semantics-guided triplet loss on decoder feature maps.

Every interior pixel of a label map anchors a K x K patch.  Patch members
sharing the anchor's class are positives, the rest negatives.  A patch counts
as a boundary patch when it has more than ``threshold`` of each; only those
patches contribute a margin hinge on mean normalised-feature distances.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class SgtConfig:
    patch_size: int = 5
    margin: float = 0.3
    threshold: int | None = None  # None means patch_size - 1
    layers: tuple[int, ...] = (1, 2, 3)
    weight: float = 0.1

    def __post_init__(self):
        if self.threshold is None:
            self.threshold = self.patch_size - 1
        self.layers = tuple(int(v) for v in self.layers)
        if self.patch_size < 3 or self.patch_size % 2 == 0:
            raise ValueError("patch_size must be odd and >= 3")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if not 0 <= self.threshold < self.patch_size ** 2 - 1:
            raise ValueError("threshold must lie in [0, K*K - 1)")


@dataclass
class PatchTripletSet:
    anchor: tuple[int, int]
    positives: np.ndarray  # (P, 2) row/col indices
    negatives: np.ndarray
    is_boundary: bool


def _offsets(K: int) -> np.ndarray:
    r = K // 2
    return np.array([(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)])


def sample_patch_triplets(label: np.ndarray, config: SgtConfig) -> list[PatchTripletSet]:
    """One triplet set per interior pixel, row-major."""
    label = np.asarray(label)
    K, r = config.patch_size, config.patch_size // 2
    H, W = label.shape
    if H < K or W < K:
        raise ValueError(f"label map {label.shape} smaller than a {K}x{K} patch")
    offs = _offsets(K)
    offs = offs[np.any(offs != 0, axis=1)]
    out = []
    for y in range(r, H - r):
        for x in range(r, W - r):
            members = offs + (y, x)
            same = label[members[:, 0], members[:, 1]] == label[y, x]
            pos, neg = members[same], members[~same]
            out.append(PatchTripletSet((y, x), pos, neg,
                                       bool(len(pos) > config.threshold and len(neg) > config.threshold)))
    return out


def resample_labels(labels: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resampling of (..., H, W) class ids to ``size``."""
    labels = np.asarray(labels)
    H, W = labels.shape[-2:]
    if (H, W) == tuple(size):
        return labels
    ri = np.minimum(((np.arange(size[0]) + 0.5) * H / size[0]).astype(int), H - 1)
    ci = np.minimum(((np.arange(size[1]) + 0.5) * W / size[1]).astype(int), W - 1)
    return labels[..., ri, :][..., ci]


def patch_masks(labels: np.ndarray, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Positive/negative membership masks of shape (N, K*K, Hc, Wc); the centre slot is false."""
    labels = np.asarray(labels)
    N, H, W = labels.shape
    r = K // 2
    Hc, Wc = H - 2 * r, W - 2 * r
    anchor = labels[:, r:r + Hc, r:r + Wc]
    pos = np.empty((N, K * K, Hc, Wc), dtype=bool)
    for k, (dy, dx) in enumerate(_offsets(K)):
        pos[:, k] = labels[:, r + dy:r + dy + Hc, r + dx:r + dx + Wc] == anchor
    neg = ~pos
    pos[:, (K * K) // 2] = False
    return pos, neg


def boundary_mask(labels: np.ndarray, config: SgtConfig) -> np.ndarray:
    pos, neg = patch_masks(labels, config.patch_size)
    T = config.threshold
    return (pos.sum(axis=1) > T) & (neg.sum(axis=1) > T)


def count_boundary_patches(label: np.ndarray, config: SgtConfig) -> int:
    label = np.asarray(label)
    if label.ndim == 2:
        label = label[None]
    return int(boundary_mask(label, config).sum())


def extract_patches(x, K: int) -> Tensor:
    """(N, C, H, W) -> (N, C, K*K, H-K+1, W-K+1) stack of shifted views."""
    x = ad.as_tensor(x)
    N, C, H, W = x.shape
    Hc, Wc = H - K + 1, W - K + 1
    out = np.empty((N, C, K * K, Hc, Wc), dtype=x.dtype)
    for k in range(K * K):
        ky, kx = divmod(k, K)
        out[:, :, k] = x.data[:, :, ky:ky + Hc, kx:kx + Wc]

    def _bw(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        for k in range(K * K):
            ky, kx = divmod(k, K)
            gx[:, :, ky:ky + Hc, kx:kx + Wc] += g[:, :, k]
        return (gx,)
    return Tensor._make(out, (x,), _bw)


def patch_distances(features, labels: np.ndarray, K: int) -> tuple[Tensor, Tensor, np.ndarray, np.ndarray]:
    """Mean anchor-positive and anchor-negative distances for every interior pixel.

    ``features`` must already be L2-normalised along channels.  Returns
    ``(d_plus, d_minus, n_pos, n_neg)`` each of shape (N, Hc, Wc); a distance
    whose set is empty is reported as 0 alongside a zero count.
    """
    features = ad.as_tensor(features)
    pos, neg = patch_masks(labels, K)
    patches = extract_patches(features, K)
    centre = patches[:, :, (K * K) // 2:(K * K) // 2 + 1]
    diff = patches - centre
    dist = ad.sqrt((diff * diff).sum(axis=1))                       # (N, K*K, Hc, Wc)
    n_pos, n_neg = pos.sum(axis=1), neg.sum(axis=1)
    d_plus = (dist * pos.astype(dist.dtype)).sum(axis=1) / np.maximum(n_pos, 1).astype(dist.dtype)
    d_minus = (dist * neg.astype(dist.dtype)).sum(axis=1) / np.maximum(n_neg, 1).astype(dist.dtype)
    return d_plus, d_minus, n_pos, n_neg


def patch_triplet_loss(d_plus, d_minus, margin: float) -> Tensor:
    """max(0, d+ + m - d-)."""
    return ad.relu(ad.as_tensor(d_plus) + margin - ad.as_tensor(d_minus))


def sgt_loss(features, labels: np.ndarray, config: SgtConfig) -> Tensor:
    """Mean hinge over boundary patches of one decoder layer.

    ``labels`` are class ids (N, H, W) at any resolution; they are resampled to
    the feature map's resolution.
    """
    features = ad.as_tensor(features)
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels[None]
    labels = resample_labels(labels, features.shape[-2:])
    K = config.patch_size
    normed = ad.l2_normalize(features, axis=1)
    d_plus, d_minus, n_pos, n_neg = patch_distances(normed, labels, K)
    T = config.threshold
    active = ((n_pos > T) & (n_neg > T)).astype(features.dtype)
    hinge = patch_triplet_loss(d_plus, d_minus, config.margin)
    count = float(active.sum())
    return (hinge * active).sum() / max(count, 1.0)
