"""Tensor files, PPM/PFM images, key=value configs and the dataset directory layout.

Tensor file layout (little-endian):
    b"FSRE" | uint32 version | uint32 count |
    count x (uint32 name_len | name utf-8 | uint32 rank | rank x uint32 extent | float32 data)
"""
from __future__ import annotations

import os
import struct
from dataclasses import fields
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, PoseSE3

MAGIC = b"FSRE"
VERSION = 1
MANIFEST = "manifest.txt"


class CheckpointError(ValueError):
    """Raised for corrupt, truncated or incompatible tensor files."""


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- tensors

def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated payload while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def uint(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if len(r.buf) < 12:
        raise CheckpointError("corrupt header: file too short")
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("corrupt header: bad magic")
    version = r.uint("version")
    if version != VERSION:
        raise CheckpointError(f"version mismatch: file {version}, expected {VERSION}")
    out = {}
    for _ in range(r.uint("count")):
        try:
            name = r.take(r.uint("name length"), "name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError("corrupt tensor name") from e
        rank = r.uint(f"{name} rank")
        shape = tuple(r.uint(f"{name} extent") for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(r.take(4 * count, f"{name} data"), dtype="<f4")
        out[name] = data.reshape(shape).astype(np.float32)
    if r.pos != len(r.buf):
        raise CheckpointError("trailing bytes after last tensor")
    return out


# ---------------------------------------------------------------- images

def write_ppm(path, image: np.ndarray) -> None:
    """(3, H, W) or (H, W, 3) floats in [0, 1], or a (H, W) map normalised to its range."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        lo, hi = img.min(), img.max()
        img = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
        img = np.repeat(img[..., None], 3, axis=2)
    elif img.shape[0] == 3 and img.shape[-1] != 3:
        img = img.transpose(1, 2, 0)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"cannot write shape {image.shape} as PPM")
    H, W, _ = img.shape
    data = np.clip(np.round(img * 255), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{W} {H}\n255\n".encode("ascii") + data.tobytes())


def read_ppm(path) -> np.ndarray:
    """Binary PPM to (3, H, W) float32 in [0, 1]."""
    with open(path, "rb") as fh:
        buf = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PPM header")
        tokens.append(buf[start:pos])
    pos += 1
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM (P6)")
    W, H, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM supported")
    data = np.frombuffer(buf, dtype=np.uint8, count=H * W * 3, offset=pos) if len(buf) - pos >= H * W * 3 else None
    if data is None:
        raise ValueError(f"{path}: truncated PPM data")
    return (data.reshape(H, W, 3).transpose(2, 0, 1) / 255.0).astype(np.float32)


def write_pfm(path, values: np.ndarray) -> None:
    """Single-channel little-endian PFM (rows stored bottom to top)."""
    v = np.asarray(values, dtype="<f4")
    if v.ndim != 2:
        raise ValueError("PFM writer expects a 2-D map")
    H, W = v.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{W} {H}\n-1\n".encode("ascii") + np.ascontiguousarray(v[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header != b"Pf":
            raise ValueError(f"{path}: only single-channel PFM supported")
        W, H = (int(t) for t in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(), dtype=dtype, count=H * W)
    return data.reshape(H, W)[::-1].astype(np.float32)


# ---------------------------------------------------------------- configs

def parse_config(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _convert(value: str, current):
    if isinstance(current, bool):
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, tuple):
        items = [s for s in value.replace(",", " ").split() if s]
        kind = type(current[0]) if current else float
        return tuple(kind(s) for s in items)
    if current is None:
        return None if value.lower() == "none" else float(value)
    return value


def apply_config(obj_type, values: dict[str, str], **overrides):
    """Build a dataclass from string values; unknown keys are an error."""
    default = obj_type(**overrides)
    known = {f.name for f in fields(obj_type)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = dict(overrides)
    for key, value in values.items():
        try:
            kwargs[key] = _convert(value, getattr(default, key))
        except ValueError as e:
            raise ConfigError(f"{key}: {e}") from e
    return obj_type(**kwargs)


def load_config(path, obj_type, **overrides):
    return apply_config(obj_type, parse_config(Path(path).read_text()), **overrides)


# ---------------------------------------------------------------- dataset

def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def write_dataset(out_dir, samples) -> None:
    """One sub-directory per sample, plus a manifest line per sample:
    prev cur next tensors fx fy cx cy pose_prev(6) pose_next(6)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, s in enumerate(samples):
        sub = f"{i:05d}"
        (out / sub).mkdir(exist_ok=True)
        names = [f"{sub}/{n}.ppm" for n in ("prev", "cur", "next")]
        for name, frame in zip(names, s.frames):
            write_ppm(out / name, frame)
        tensor_name = f"{sub}/gt.fsre"
        save_tensors(out / tensor_name, {"depth": s.gt_depth, "semantics": s.gt_semantics})
        K = s.intrinsics
        lines.append(" ".join(names + [tensor_name]) + " " +
                     _fmt([K.fx, K.fy, K.cx, K.cy]) + " " +
                     _fmt(s.pose_prev.vector) + " " + _fmt(s.pose_next.vector))
    (out / MANIFEST).write_text("\n".join(lines) + "\n")


def read_dataset(data_dir) -> list:
    from .synthetic import SceneSample

    root = Path(data_dir)
    manifest = root / MANIFEST
    if not manifest.exists():
        raise FileNotFoundError(f"no {MANIFEST} in {root}")
    samples = []
    for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 20:
            raise ValueError(f"{manifest}:{lineno}: expected 20 fields, got {len(parts)}")
        frames = tuple(read_ppm(root / p) for p in parts[:3])
        gt = load_tensors(root / parts[3])
        nums = [float(v) for v in parts[4:]]
        samples.append(SceneSample(
            frames=frames,
            gt_depth=gt["depth"],
            gt_semantics=gt["semantics"].astype(np.int64),
            pose_prev=PoseSE3(np.array(nums[4:7]), np.array(nums[7:10])),
            pose_next=PoseSE3(np.array(nums[10:13]), np.array(nums[13:16])),
            intrinsics=CameraIntrinsics(*nums[:4]),
        ))
    if not samples:
        raise ValueError(f"{manifest}: empty dataset")
    return samples
