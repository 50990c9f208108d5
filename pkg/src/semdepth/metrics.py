"""Depth and segmentation evaluation."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rms: float
    rms_log: float
    delta1: float
    delta2: float
    delta3: float

    def as_dict(self) -> dict:
        return asdict(self)

    def as_tuple(self) -> tuple:
        return tuple(asdict(self).values())


def compute_depth_errors(gt: np.ndarray, pred: np.ndarray) -> np.ndarray:
    """The seven metrics for flat arrays of matched positive depths."""
    thresh = np.maximum(gt / pred, pred / gt)
    d1 = (thresh < 1.25).mean()
    d2 = (thresh < 1.25 ** 2).mean()
    d3 = (thresh < 1.25 ** 3).mean()
    rms = np.sqrt(((gt - pred) ** 2).mean())
    rms_log = np.sqrt(((np.log(gt) - np.log(pred)) ** 2).mean())
    abs_rel = (np.abs(gt - pred) / gt).mean()
    sq_rel = ((gt - pred) ** 2 / gt).mean()
    return np.array([abs_rel, sq_rel, rms, rms_log, d1, d2, d3])


def evaluate_depth(pred_depth, gt_depth, cap: float = 100.0, min_depth: float = 0.1,
                   median_scaling: bool = True) -> DepthMetrics:
    """Per-image median scaling, clamp to [min_depth, cap], mean of per-image metrics.

    Inputs are (H, W) or (N, H, W); ground truth outside (0, cap] is ignored.
    """
    pred = np.asarray(pred_depth, dtype=np.float64)
    gt = np.asarray(gt_depth, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
    rows = []
    for p, g in zip(pred.reshape(len(pred), -1), gt.reshape(len(gt), -1)):
        mask = (g > 0) & (g <= cap)
        if not mask.any():
            continue
        p, g = p[mask], g[mask]
        if (p <= 0).any():
            raise ValueError("predicted depth must be positive")
        if median_scaling:
            p = p * (np.median(g) / np.median(p))
        p = np.clip(p, min_depth, cap)
        rows.append(compute_depth_errors(g, p))
    if not rows:
        raise ValueError("no valid ground-truth pixels")
    return DepthMetrics(*np.mean(rows, axis=0).tolist())


def confusion_matrix(pred_ids, gt_ids, num_classes: int) -> np.ndarray:
    pred = np.asarray(pred_ids).ravel()
    gt = np.asarray(gt_ids).ravel()
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth differ in size")
    if (pred < 0).any() or (pred >= num_classes).any() or (gt < 0).any() or (gt >= num_classes).any():
        raise ValueError("class id out of range")
    return np.bincount(gt * num_classes + pred, minlength=num_classes ** 2).reshape(num_classes, num_classes)


def evaluate_seg(pred_ids, gt_ids, num_classes: int) -> float:
    """Mean IoU over the classes present in the ground truth."""
    cm = confusion_matrix(pred_ids, gt_ids, num_classes)
    tp = np.diag(cm).astype(np.float64)
    gt_count = cm.sum(axis=1)
    pred_count = cm.sum(axis=0)
    present = gt_count > 0
    if not present.any():
        raise ValueError("no class present in ground truth")
    iou = tp[present] / (gt_count[present] + pred_count[present] - tp[present])
    return float(iou.mean())


def edge_map(values: np.ndarray, percentile: float = 95.0) -> np.ndarray:
    """Pixels whose forward-difference gradient magnitude exceeds the given percentile."""
    v = np.asarray(values, dtype=np.float64)
    gx = np.zeros_like(v)
    gy = np.zeros_like(v)
    gx[:, :-1] = v[:, 1:] - v[:, :-1]
    gy[:-1, :] = v[1:, :] - v[:-1, :]
    mag = np.hypot(gx, gy)
    return mag > np.percentile(mag, percentile)


def label_boundaries(labels: np.ndarray) -> np.ndarray:
    lab = np.asarray(labels)
    edge = np.zeros(lab.shape, dtype=bool)
    edge[:, :-1] |= lab[:, 1:] != lab[:, :-1]
    edge[:-1, :] |= lab[1:, :] != lab[:-1, :]
    return edge


def _dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    H, W = mask.shape
    out = np.zeros_like(mask)
    padded = np.pad(mask, radius)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy * dy + dx * dx <= radius * radius:
                out |= padded[radius + dy:radius + dy + H, radius + dx:radius + dx + W]
    return out


def boundary_fscore(pred_edges: np.ndarray, gt_edges: np.ndarray, tolerance: int = 2) -> float:
    """F-score of edge maps, matching within a Euclidean ``tolerance`` in pixels."""
    pred_edges = np.asarray(pred_edges, dtype=bool)
    gt_edges = np.asarray(gt_edges, dtype=bool)
    if not pred_edges.any() or not gt_edges.any():
        return 0.0
    precision = (pred_edges & _dilate(gt_edges, tolerance)).sum() / pred_edges.sum()
    recall = (gt_edges & _dilate(pred_edges, tolerance)).sum() / gt_edges.sum()
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def depth_edge_fscore(disparity: np.ndarray, semantics: np.ndarray, percentile: float = 95.0,
                      tolerance: int = 2) -> float:
    """Agreement between strong disparity edges and semantic boundaries."""
    return boundary_fscore(edge_map(disparity, percentile), label_boundaries(semantics), tolerance)
