"""Pinhole projection, rigid-motion reprojection and bilinear warping.

Pixel coordinates put pixel centres on integers: column ``x`` in ``[0, W-1]``
and row ``y`` in ``[0, H-1]``.  Poses map points from the target camera frame
into the reference camera frame, ``X_ref = R X_tgt + t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse(self) -> np.ndarray:
        return np.array([[1.0 / self.fx, 0.0, -self.cx / self.fx],
                         [0.0, 1.0 / self.fy, -self.cy / self.fy],
                         [0.0, 0.0, 1.0]])

    def scaled(self, sx: float, sy: float) -> "CameraIntrinsics":
        """Intrinsics for an image resized by (sx, sy), keeping pixel centres aligned."""
        return CameraIntrinsics(self.fx * sx, self.fy * sy,
                                (self.cx + 0.5) * sx - 0.5, (self.cy + 0.5) * sy - 0.5)


@dataclass(frozen=True)
class PoseSE3:
    axis_angle: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "axis_angle", np.asarray(self.axis_angle, dtype=np.float64).reshape(3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls()

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "PoseSE3":
        return cls(rotation_to_axis_angle(T[:3, :3]), T[:3, 3].copy())

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.axis_angle, self.translation])

    def matrix(self) -> np.ndarray:
        return pose_to_matrix(self)

    def inverse(self) -> "PoseSE3":
        R = axis_angle_to_rotation(self.axis_angle)
        return PoseSE3(-self.axis_angle, -R.T @ self.translation)


def axis_angle_to_rotation(r) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    theta2 = float(r @ r)
    S = np.array([[0.0, -r[2], r[1]], [r[2], 0.0, -r[0]], [-r[1], r[0], 0.0]])
    if theta2 < 1e-12:
        # series limit: sin(t)/t -> 1 - t^2/6, (1 - cos t)/t^2 -> 1/2 - t^2/24
        a, b = 1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0
    else:
        theta = np.sqrt(theta2)
        a = np.sin(theta) / theta
        b = 2.0 * np.sin(theta / 2.0) ** 2 / theta2
    return np.eye(3) + a * S + b * (S @ S)


def rotation_to_axis_angle(R: np.ndarray) -> np.ndarray:
    cos_t = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_t)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-8:
        return 0.5 * w
    if np.pi - theta < 1e-6:
        # near pi the antisymmetric part vanishes; take the axis from R + I
        M = (R + np.eye(3)) / 2.0
        k = int(np.argmax(np.diag(M)))
        axis = M[:, k] / np.sqrt(M[k, k])
        return theta * axis
    return theta / (2.0 * np.sin(theta)) * w


def pose_to_matrix(pose: PoseSE3) -> np.ndarray:
    """4x4 homogeneous transform from axis-angle rotation and translation."""
    T = np.eye(4)
    T[:3, :3] = axis_angle_to_rotation(pose.axis_angle)
    T[:3, 3] = pose.translation
    return T


def pose_tensor(poses) -> Tensor:
    """Stack PoseSE3 objects, or pass through an (N, 6) tensor or array, as an (N, 6) tensor."""
    if isinstance(poses, Tensor):
        return poses
    if isinstance(poses, np.ndarray):
        return Tensor(poses.reshape(-1, 6))
    if isinstance(poses, PoseSE3):
        poses = [poses]
    return Tensor(np.stack([p.vector for p in poses]))


def rotation_from_axis_angle(r: Tensor) -> Tensor:
    """Differentiable Rodrigues map for an (N, 3) tensor of axis-angle vectors."""
    N = r.shape[0]
    theta2 = (r * r).sum(axis=1, keepdims=True)
    theta = ad.sqrt(theta2)
    a = ad.sin(theta) / theta
    half = ad.sin(theta * 0.5)
    b = 2.0 * half * half / (theta * theta)
    rx, ry, rz = r[:, 0:1], r[:, 1:2], r[:, 2:3]
    zero = Tensor(np.zeros((N, 1)))
    S = ad.concat([zero, -rz, ry, rz, zero, -rx, -ry, rx, zero], axis=1).reshape(N, 3, 3)
    eye = Tensor(np.eye(3))
    return eye + a.reshape(N, 1, 1) * S + b.reshape(N, 1, 1) * (S @ S)


def invert_pose_vector(pose) -> Tensor:
    """Differentiable inverse of (N, 6) axis-angle + translation poses: (-r, -R(r)^T t)."""
    pose = pose_tensor(pose)
    N = pose.shape[0]
    r = pose[:, 0:3]
    R = rotation_from_axis_angle(r)
    t = pose[:, 3:6].reshape(N, 3, 1)
    t_inv = -(R.transpose(0, 2, 1) @ t)
    return ad.concat([-r, t_inv.reshape(N, 3)], axis=1)


def pixel_grid(height: int, width: int) -> np.ndarray:
    """(3, H*W) homogeneous pixel coordinates, row-major, last row all ones."""
    ys, xs = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64),
                         indexing="ij")
    return np.stack([xs.ravel(), ys.ravel(), np.ones(height * width)])


def reproject(grid: np.ndarray, depth, K: CameraIntrinsics, pose) -> tuple[Tensor, np.ndarray]:
    """Project every target pixel into the reference view.

    Returns ``(coords, valid)`` with ``coords`` of shape (N, H, W, 2) holding
    (x, y) in the reference image and ``valid`` false where the point lands
    behind the camera or outside the reference image.
    """
    depth = ad.as_tensor(depth)
    if depth.ndim == 3:
        depth = depth.reshape(depth.shape[0], 1, *depth.shape[1:])
    N, _, H, W = depth.shape
    if grid.shape != (3, H * W):
        raise ValueError(f"pixel grid {grid.shape} does not match depth {depth.shape}")
    if (depth.data <= 0).any():
        raise ValueError("depth must be strictly positive")
    pose = pose_tensor(pose)
    if pose.shape[0] == 1 and N > 1:
        pose = ad.concat([pose] * N, axis=0)
    rays = Tensor(K.inverse @ grid)                                  # (3, HW)
    cam = depth.reshape(N, 1, H * W) * rays                          # (N, 3, HW)
    R = rotation_from_axis_angle(pose[:, 0:3])
    t = pose[:, 3:6].reshape(N, 3, 1)
    proj = Tensor(K.matrix) @ (R @ cam + t)                          # (N, 3, HW)
    z = proj[:, 2]
    in_front = z.data > 1e-6
    z_safe = ad.where(in_front, z, 1.0)
    x = proj[:, 0] / z_safe
    y = proj[:, 1] / z_safe
    valid = in_front & (x.data >= -0.5) & (x.data <= W - 0.5) & (y.data >= -0.5) & (y.data <= H - 0.5)
    coords = ad.stack([x, y], axis=-1).reshape(N, H, W, 2)
    return coords, valid.reshape(N, H, W)


def bilinear_warp(source, coords) -> Tensor:
    """Sample ``source`` (N, C, H, W) at ``coords`` (N, Ho, Wo, 2) with clamp-to-edge borders."""
    source, coords = ad.as_tensor(source), ad.as_tensor(coords)
    N, C, H, W = source.shape
    _, Ho, Wo, _ = coords.shape
    if coords.shape[0] != N or coords.shape[-1] != 2:
        raise ValueError(f"coords {coords.shape} incompatible with source {source.shape}")
    cx, cy = coords.data[..., 0], coords.data[..., 1]
    x = np.clip(cx, 0, W - 1)
    y = np.clip(cy, 0, H - 1)
    x0 = np.minimum(np.floor(x), max(W - 2, 0)).astype(np.int64)
    y0 = np.minimum(np.floor(y), max(H - 2, 0)).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    wx = (x - x0).astype(source.dtype)[:, None]
    wy = (y - y0).astype(source.dtype)[:, None]
    flat = source.data.reshape(N, C, H * W)

    def gather(yi, xi):
        idx = (yi * W + xi).reshape(N, 1, Ho * Wo)
        return np.take_along_axis(flat, np.broadcast_to(idx, (N, C, Ho * Wo)), axis=2).reshape(N, C, Ho, Wo)

    v00, v01, v10, v11 = gather(y0, x0), gather(y0, x1), gather(y1, x0), gather(y1, x1)
    top = v00 + wx * (v01 - v00)
    bot = v10 + wx * (v11 - v10)
    out = top + wy * (bot - top)
    x_free = ((cx >= 0) & (cx <= W - 1))[:, None]
    y_free = ((cy >= 0) & (cy <= H - 1))[:, None]

    def _bw(g):
        gs = gc = None
        if source.requires_grad:
            gs = np.zeros(N * C * H * W, dtype=g.dtype)
            base = (np.arange(N * C) * H * W).reshape(N, C, 1, 1)
            for yi, xi, w in ((y0, x0, (1 - wy) * (1 - wx)), (y0, x1, (1 - wy) * wx),
                              (y1, x0, wy * (1 - wx)), (y1, x1, wy * wx)):
                idx = base + (yi * W + xi)[:, None]
                gs += np.bincount(idx.ravel(), weights=(g * w).ravel(), minlength=gs.size).astype(g.dtype)
            gs = gs.reshape(N, C, H, W)
        if coords.requires_grad:
            dx = ((1 - wy) * (v01 - v00) + wy * (v11 - v10)) * x_free
            dy = (bot - top) * y_free
            gc = np.stack([(g * dx).sum(axis=1), (g * dy).sum(axis=1)], axis=-1)
        return gs, gc
    return Tensor._make(out, (source, coords), _bw)
