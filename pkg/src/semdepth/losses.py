"""Self-supervision losses: SSIM + L1 photometric error, minimum reprojection
with auto-masking, edge-aware smoothness, segmentation cross-entropy."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

logger = logging.getLogger(__name__)

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass
class LossWeights:
    alpha: float = 0.85
    beta: float = 0.001
    gamma: float = 0.3
    delta: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if min(self.beta, self.gamma, self.delta) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class ReprojectionBundle:
    """Per-reference-frame loss maps of shape (N, 1, H, W) plus validity masks."""
    warped: Sequence[Tensor]
    identity: Sequence[Tensor]
    valid: Sequence[np.ndarray] = field(default_factory=list)


def _check_same(a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def ssim(a, b) -> Tensor:
    """Per-pixel SSIM over 3x3 reflect-padded windows."""
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    _check_same(a, b)

    def pool(t):
        return ad.avg_pool3x3(ad.pad2d(t, 1, "reflect"))

    mu_a, mu_b = pool(a), pool(b)
    var_a = pool(a * a) - mu_a * mu_a
    var_b = pool(b * b) - mu_b * mu_b
    cov = pool(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return num / den


def photometric_loss(target, warped, alpha: float = 0.85) -> Tensor:
    """alpha * (1 - SSIM) / 2 + (1 - alpha) * |target - warped|, averaged over channels.

    Returns an (N, 1, H, W) map.
    """
    target, warped = ad.as_tensor(target), ad.as_tensor(warped)
    _check_same(target, warped)
    l1 = ad.abs(target - warped).mean(axis=1, keepdims=True)
    if alpha == 0:
        return l1
    s = ((1 - ssim(target, warped)) * 0.5).mean(axis=1, keepdims=True)
    return alpha * s + (1 - alpha) * l1


def min_reprojection_automask(bundle: ReprojectionBundle, reduction: str = "included") -> tuple[Tensor, np.ndarray]:
    """Masked mean of the per-pixel minimum warped loss.

    A pixel counts only if some reference frame projects validly onto it and
    its minimum warped loss is strictly below the minimum identity loss.
    Returns ``(loss, included)``.

    ``reduction="included"`` averages over included pixels only; an empty
    inclusion set yields a zero loss.  ``reduction="all"`` averages over every
    pixel, excluded ones contributing their (constant) identity loss, so that
    excluding a pixel is never cheaper than reconstructing it.
    """
    if reduction not in ("included", "all"):
        raise ValueError(f"unknown reduction {reduction!r}")
    warped = list(bundle.warped)
    if not warped or len(bundle.identity) != len(warped):
        raise ValueError("bundle needs one warped and one identity map per reference frame")
    valid = list(bundle.valid) or [np.ones(w.shape, dtype=bool) for w in warped]
    valid = [np.asarray(v, dtype=bool).reshape(w.shape) for v, w in zip(valid, warped)]
    big = np.finfo(warped[0].dtype).max / 4

    best = ad.where(valid[0], warped[0], big)
    any_valid = valid[0].copy()
    for w, v in zip(warped[1:], valid[1:]):
        best = ad.minimum(best, ad.where(v, w, big))
        any_valid |= v
    ident = np.minimum.reduce([ad.as_tensor(t).data for t in bundle.identity])
    included = any_valid & (best.data < ident)
    if reduction == "all":
        return ad.where(included, best, ident).mean(), included
    count = int(included.sum())
    if count == 0:
        logger.debug("auto-mask excluded every pixel")
        return ad.tsum(ad.where(included, best, 0.0)), included
    return ad.tsum(ad.where(included, best, 0.0)) / count, included


def smoothness_loss(disparity, image) -> Tensor:
    """Edge-aware smoothness of mean-normalised disparity, forward differences."""
    disparity, image = ad.as_tensor(disparity), ad.as_tensor(image)
    H, W = disparity.shape[-2:]
    if H < 2 or W < 2:
        raise ValueError("smoothness needs at least 2 pixels along each axis")
    d = disparity / disparity.mean(axis=(2, 3), keepdims=True)
    dx = ad.abs(d[..., :, 1:] - d[..., :, :-1])
    dy = ad.abs(d[..., 1:, :] - d[..., :-1, :])
    img = image.data
    ix = np.abs(img[..., :, 1:] - img[..., :, :-1]).mean(axis=1, keepdims=True)
    iy = np.abs(img[..., 1:, :] - img[..., :-1, :]).mean(axis=1, keepdims=True)
    return (dx * np.exp(-ix)).mean() + (dy * np.exp(-iy)).mean()


def cross_entropy_loss(logits, labels: np.ndarray, ignore_id: int = 255) -> Tensor:
    """Mean over non-ignored pixels of -log softmax(logits)[label]."""
    logits = ad.as_tensor(logits)
    labels = np.asarray(labels)
    N, C = logits.shape[:2]
    if labels.shape != (N,) + logits.shape[2:]:
        raise ValueError(f"labels {labels.shape} do not match logits {logits.shape}")
    keep = labels != ignore_id
    if ((labels[keep] < 0) | (labels[keep] >= C)).any():
        raise ValueError("label out of range")
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    lab = np.where(keep, labels, 0)
    np.put_along_axis(onehot, lab[:, None], 1.0, axis=1)
    onehot *= keep[:, None]
    nll = -(ad.log_softmax(logits, axis=1) * onehot).sum()
    return nll / max(int(keep.sum()), 1)


def total_loss(photometric, smoothness=0.0, cross_entropy=0.0, sgt=(), weights: LossWeights | None = None) -> Tensor:
    """photometric + beta * smoothness + gamma * cross_entropy + delta * sum(sgt)."""
    w = weights or LossWeights()
    out = ad.as_tensor(photometric)
    if w.beta:
        out = out + w.beta * ad.as_tensor(smoothness)
    if w.gamma:
        out = out + w.gamma * ad.as_tensor(cross_entropy)
    if w.delta:
        terms = [sgt] if isinstance(sgt, (Tensor, float, int)) else list(sgt)
        for t in terms:
            out = out + w.delta * ad.as_tensor(t)
    return out
