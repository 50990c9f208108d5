"""Verification suites: float64 gradient checks and brute-force oracle comparisons.

Gradient cases draw random small instances and compare analytic gradients with
central differences.  Piecewise-smooth ops (bilinear sampling, min, hinge,
auto-mask) are only differentiable away from their kinks, so instances closer
than a safety gap to a kink are redrawn.

Oracle cases recompute each quantity with explicit per-pixel Python loops that
share no code with the vectorised implementation.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .cma import CmaConfig, HeadEmbeddings, attention_scores, cma, cma_bidirectional, fuse, normalize_scores, refine_features
from .geometry import CameraIntrinsics, bilinear_warp, pixel_grid, reproject, rotation_from_axis_angle
from .losses import (ReprojectionBundle, cross_entropy_loss, min_reprojection_automask, photometric_loss,
                     smoothness_loss, ssim, total_loss)
from .metrics import evaluate_depth, evaluate_seg
from .networks import DepthSegNet, PoseNet, ToyBackboneConfig
from .sgt import SgtConfig, extract_patches, patch_distances, sgt_loss

GRAD_TOL = 1e-4
ORACLE_TOL = 1e-6
MODULES = ("geometry", "losses", "sgt", "cma", "networks")


@dataclass
class CheckResult:
    name: str
    module: str
    instances: int
    worst: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.worst < self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.module:<9} {self.name:<28} n={self.instances:<3} "
                f"worst={self.worst:.2e} tol={self.tolerance:.0e} {self.seconds:.2f}s")


def _far_from_integers(values: np.ndarray, gap: float) -> bool:
    frac = np.abs(values - np.round(values))
    return bool(frac.min() > gap)


def _coords_inside(rng, N, Ho, Wo, H, W):
    """Sampling coordinates strictly inside the image and away from lattice lines."""
    x = rng.integers(0, W - 1, (N, Ho, Wo)) + rng.uniform(0.05, 0.95, (N, Ho, Wo))
    y = rng.integers(0, H - 1, (N, Ho, Wo)) + rng.uniform(0.05, 0.95, (N, Ho, Wo))
    return np.stack([x, y], axis=-1)


# ---------------------------------------------------------------- gradient cases
# Each case maps an rng to (function, list of float64 input arrays or tensors, probes per tensor).

def _g_warp_case(rng):
    src = rng.uniform(size=(2, 3, 5, 6))
    coords = _coords_inside(rng, 2, 4, 5, 5, 6)
    proj = rng.normal(size=(2, 3, 4, 5))
    return (lambda s, c: (bilinear_warp(s, c) * proj).sum()), [src, coords], None


def _small_camera():
    return CameraIntrinsics(6.0, 6.0, 3.5, 2.5)


def _g_reproject_case(rng):
    """Warp through reproject: gradients reach depth and pose."""
    K = _small_camera()
    H, W = 5, 7
    grid = pixel_grid(H, W)
    for _ in range(1000):
        depth = rng.uniform(4.0, 8.0, (2, 1, H, W))
        pose = np.concatenate([rng.normal(0, 0.02, (2, 3)), rng.normal(0, 0.1, (2, 3))], axis=1)
        coords, _ = reproject(grid, depth, K, ad.Tensor(pose))
        c = coords.data
        if (_far_from_integers(c, 0.02) and c[..., 0].min() > 0.05 and c[..., 0].max() < W - 1.05
                and c[..., 1].min() > 0.05 and c[..., 1].max() < H - 1.05):
            break
    src = rng.uniform(size=(2, 3, H, W))
    proj = rng.normal(size=(2, 3, H, W))

    def f(d, p):
        coords, _ = reproject(grid, d, K, p)
        return (bilinear_warp(src, coords) * proj).sum()
    return f, [depth, pose], None


def _g_rotation_case(rng):
    r = rng.normal(0, 0.5, (3, 3))
    proj = rng.normal(size=(3, 3, 3))
    return (lambda a: (rotation_from_axis_angle(a) * proj).sum()), [r], None


def _g_ssim_case(rng):
    a, b = rng.uniform(size=(2, 2, 2, 5, 6))
    proj = rng.normal(size=a.shape)
    return (lambda x, y: (ssim(x, y) * proj).sum()), [a, b], None


def _g_photometric_case(rng):
    a, b = rng.uniform(size=(2, 2, 3, 5, 6))
    proj = rng.normal(size=(2, 1, 5, 6))
    for _ in range(100):
        if np.abs(a - b).min() > 1e-3:
            break
        b = rng.uniform(size=a.shape)
    return (lambda x, y: (photometric_loss(x, y) * proj).sum()), [a, b], None


def _g_automask_case(rng):
    shape = (2, 1, 4, 5)
    for _ in range(1000):
        warped = [rng.uniform(size=shape) for _ in range(2)]
        ident = [rng.uniform(size=shape) for _ in range(2)]
        valid = [rng.uniform(size=shape) > 0.2 for _ in range(2)]
        best = np.minimum(np.where(valid[0], warped[0], np.inf), np.where(valid[1], warped[1], np.inf))
        gaps = [np.abs(warped[0] - warped[1]), np.abs(best - np.minimum(*ident))]
        if min(g[np.isfinite(g)].min() for g in gaps) > 1e-3:
            break
    return (lambda a, b: min_reprojection_automask(ReprojectionBundle([a, b], ident, valid))[0]), warped, None


def _g_smoothness_case(rng):
    disp = rng.uniform(0.2, 1.0, (2, 1, 5, 6))
    image = rng.uniform(size=(2, 3, 5, 6))
    return (lambda d: smoothness_loss(d, image)), [disp], None


def _g_cross_entropy_case(rng):
    logits = rng.normal(size=(2, 4, 3, 4))
    labels = rng.integers(0, 4, (2, 3, 4))
    labels[rng.uniform(size=labels.shape) < 0.1] = 255
    labels[0, 0, 0] = 1
    return (lambda x: cross_entropy_loss(x, labels)), [logits], None


def _g_total_case(rng):
    terms = [rng.uniform(size=()) for _ in range(5)]
    return (lambda a, b, c, d, e: total_loss(a, b, c, [d, e])), terms, None


def _g_sgt_case(rng):
    config = SgtConfig(patch_size=3, threshold=2, margin=0.3)
    for _ in range(1000):
        feats = rng.normal(size=(2, 4, 6, 7))
        labels = rng.integers(0, 2, (2, 6, 7))
        with ad.no_grad():
            normed = ad.l2_normalize(ad.Tensor(feats), axis=1)
            dp, dm, _, _ = patch_distances(normed, labels, 3)
        if np.abs(dp.data + config.margin - dm.data).min() > 1e-3:
            break
    return (lambda f: sgt_loss(f, labels, config)), [feats], None


def _g_sgt_k5_case(rng):
    config = SgtConfig()
    for _ in range(1000):
        feats = rng.normal(size=(1, 3, 8, 9))
        labels = np.zeros((1, 8, 9), dtype=int)
        labels[:, :, rng.integers(3, 6):] = 1
        labels[:, rng.integers(3, 5):, :2] = 2
        with ad.no_grad():
            normed = ad.l2_normalize(ad.Tensor(feats), axis=1)
            dp, dm, _, _ = patch_distances(normed, labels, 5)
        if np.abs(dp.data + config.margin - dm.data).min() > 1e-3:
            break
    return (lambda f: sgt_loss(f, labels, config)), [feats], None


def _g_patches_case(rng):
    x = rng.normal(size=(2, 2, 6, 5))
    proj = rng.normal(size=(2, 2, 9, 4, 3))
    return (lambda a: (extract_patches(a, 3) * proj).sum()), [x], None


def _g_l2norm_case(rng):
    x = rng.normal(size=(2, 3, 4, 4))
    proj = rng.normal(size=x.shape)
    return (lambda a: (ad.l2_normalize(a, axis=1) * proj).sum()), [x], None


def _cma_embeddings(rng, channels, heads, embed_dim=None):
    emb = HeadEmbeddings(channels, heads, embed_dim)
    emb.initialize(int(rng.integers(1 << 30)))
    for p in emb.parameters():
        p.data = p.data + rng.normal(0, 0.1, p.shape)
    return emb


def _g_scores_case(rng):
    emb = _cma_embeddings(rng, 3, 2, 4)
    t, r = rng.normal(size=(2, 2, 3, 3, 4))
    proj = rng.normal(size=(2, 2, 3, 4))
    return (lambda a, b: (attention_scores(a, b, emb) * proj).sum()), [t, r], None


def _g_softmax_heads_case(rng):
    s = rng.normal(size=(2, 4, 3, 3))
    proj = rng.normal(size=s.shape)
    return (lambda a: (normalize_scores(a, "softmax") * proj).sum()), [s], None


def _g_refine_case(rng):
    heads = int(rng.choice([1, 2, 4]))
    emb = _cma_embeddings(rng, 3, heads, 4)
    t, r = rng.normal(size=(2, 2, 3, 3, 4))
    proj = rng.normal(size=(2, 4, 3, 4))
    return (lambda a, b: (refine_features(a, b, emb) * proj).sum()), [t, r], None


def _g_fusion_case(rng):
    emb = _cma_embeddings(rng, 3, 2, 4)
    orig = rng.normal(size=(2, 3, 4, 4))
    refined = rng.normal(size=(2, 4, 4, 4))
    proj = rng.normal(size=orig.shape)
    return (lambda a, b: (fuse(a, b, emb) * proj).sum()), [orig, refined], None


def _g_cma_params_case(rng):
    emb = _cma_embeddings(rng, 3, 4, 6)
    t, r = rng.normal(size=(2, 1, 3, 3, 4))
    proj = rng.normal(size=(1, 3, 3, 4))
    params = emb.parameters()
    return (lambda *ps: (cma(t, r, emb) * proj).sum()), params, 8


def _g_cma_bidirectional_case(rng):
    d_emb = _cma_embeddings(rng, 3, 2, 4)
    s_emb = _cma_embeddings(rng, 3, 2, 4)
    d, s = rng.normal(size=(2, 2, 3, 3, 3))
    pd, ps = rng.normal(size=(2, 2, 3, 3, 3))

    def f(a, b):
        od, os_ = cma_bidirectional(a, b, d_emb, s_emb)
        return (od * pd).sum() + (os_ * ps).sum()
    return f, [d, s], None


def _g_conv_case(rng):
    stride = int(rng.choice([1, 2]))
    k = int(rng.choice([1, 3]))
    mode = str(rng.choice(["zero", "reflect"]))
    x = rng.normal(size=(2, 3, 6, 5))
    weight = rng.normal(size=(4, 3, k, k))
    bias = rng.normal(size=4)
    out_shape = ad.conv2d(x, weight, bias, stride=stride, pad_mode=mode).shape
    proj = rng.normal(size=out_shape)
    return (lambda a, b, c: (ad.conv2d(a, b, c, stride=stride, pad_mode=mode) * proj).sum()), \
        [x, weight, bias], None


def _g_resample_case(rng):
    x = rng.normal(size=(1, 2, 3, 4))
    proj = rng.normal(size=(1, 2, 6, 8))
    return (lambda a: (ad.upsample_nearest(a, 2) * proj).sum() + ad.elu(a).sum()), [x], None


def _tiny_backbone():
    return ToyBackboneConfig(height=16, width=32, stem_channels=2, encoder_channels=(3, 3, 4, 4),
                             decoder_channels=(4, 4, 3, 3, 2), num_classes=3)


def _g_network_case(rng):
    """Whole shared-encoder network with attention: gradients of a random projection of both heads."""
    model = DepthSegNet(_tiny_backbone(), CmaConfig(heads=2, layers=(0, 1, 2)))
    model.initialize(int(rng.integers(1 << 30)))
    image = rng.uniform(size=(1, 3, 16, 32))
    pd = rng.normal(size=(1, 1, 16, 32))
    ps = rng.normal(size=(1, 3, 16, 32))

    def f(*params):
        out = model(image)
        return (out.disparity * pd).sum() + (out.logits * ps).sum()
    return f, model.parameters(), 1


def _g_network_input_case(rng):
    model = DepthSegNet(_tiny_backbone(), CmaConfig(heads=4, layers=(0, 1, 2)))
    model.initialize(int(rng.integers(1 << 30)))
    image = rng.uniform(size=(1, 3, 16, 32))
    pd = rng.normal(size=(1, 1, 16, 32))
    return (lambda x: (model(x).disparity * pd).sum()), [image], 20


def _g_posenet_case(rng):
    net = PoseNet((3, 3, 4, 4))
    net.initialize(int(rng.integers(1 << 30)))
    a, b = rng.uniform(size=(2, 1, 3, 16, 16))
    proj = rng.normal(size=(1, 6))
    return (lambda *ps: (net(a, b) * proj).sum()), net.parameters(), 2


GRAD_CASES: dict[str, list[tuple[str, Callable]]] = {
    "geometry": [("bilinear_warp", _g_warp_case), ("reproject+warp", _g_reproject_case),
                 ("rotation_from_axis_angle", _g_rotation_case)],
    "losses": [("ssim", _g_ssim_case), ("photometric_loss", _g_photometric_case),
               ("min_reprojection_automask", _g_automask_case), ("smoothness_loss", _g_smoothness_case),
               ("cross_entropy_loss", _g_cross_entropy_case), ("total_loss", _g_total_case)],
    "sgt": [("sgt_loss K=3", _g_sgt_case), ("sgt_loss K=5", _g_sgt_k5_case),
            ("extract_patches", _g_patches_case), ("l2_normalize", _g_l2norm_case)],
    "cma": [("attention_scores", _g_scores_case), ("softmax over heads", _g_softmax_heads_case),
            ("refine_features", _g_refine_case), ("fusion", _g_fusion_case),
            ("cma parameters", _g_cma_params_case), ("cma_bidirectional", _g_cma_bidirectional_case)],
    "networks": [("conv2d", _g_conv_case), ("upsample+elu", _g_resample_case),
                 ("depth+seg network params", _g_network_case), ("depth network input", _g_network_input_case),
                 ("pose network params", _g_posenet_case)],
}


def run_gradient_checks(module: str = "all", instances: int = 20, seed: int = 0,
                        tolerance: float = GRAD_TOL) -> list[CheckResult]:
    if module != "all" and module not in GRAD_CASES:
        raise ValueError(f"unknown module {module!r}; choose from all, {', '.join(GRAD_CASES)}")
    modules = list(GRAD_CASES) if module == "all" else [module]
    results = []
    with ad.precision(np.float64):
        for mod in modules:
            for name, make in GRAD_CASES[mod]:
                rng = np.random.default_rng([seed, sum(map(ord, name))])
                worst = 0.0
                t0 = time.perf_counter()
                for i in range(instances):
                    f, inputs, coords = make(rng)
                    worst = max(worst, ad.gradient_check(f, inputs, coords=coords, seed=i))
                results.append(CheckResult(name, mod, instances, worst, tolerance, time.perf_counter() - t0))
    return results


# ---------------------------------------------------------------- brute-force oracles

def _median(values):
    v = sorted(values)
    n = len(v)
    return v[n // 2] if n % 2 else 0.5 * (v[n // 2 - 1] + v[n // 2])


def oracle_depth_metrics(pred, gt, cap, min_depth):
    rows = []
    for p_img, g_img in zip(pred, gt):
        pairs = [(float(p), float(g)) for p, g in zip(np.ravel(p_img), np.ravel(g_img)) if 0 < g <= cap]
        scale = _median([g for _, g in pairs]) / _median([p for p, _ in pairs])
        acc = [0.0] * 7
        for p, g in pairs:
            q = min(max(p * scale, min_depth), cap)
            ratio = max(g / q, q / g)
            acc[0] += abs(g - q) / g
            acc[1] += (g - q) ** 2 / g
            acc[2] += (g - q) ** 2
            acc[3] += (math.log(g) - math.log(q)) ** 2
            acc[4] += ratio < 1.25
            acc[5] += ratio < 1.25 ** 2
            acc[6] += ratio < 1.25 ** 3
        n = len(pairs)
        row = [a / n for a in acc]
        row[2] = math.sqrt(row[2])
        row[3] = math.sqrt(row[3])
        rows.append(row)
    return [sum(r[k] for r in rows) / len(rows) for k in range(7)]


def oracle_miou(pred, gt, num_classes):
    ious = []
    for c in range(num_classes):
        tp = fp = fn = 0
        for p, g in zip(np.ravel(pred), np.ravel(gt)):
            tp += p == c and g == c
            fp += p == c and g != c
            fn += p != c and g == c
        if tp + fn > 0:
            ious.append(tp / (tp + fp + fn))
    return sum(ious) / len(ious)


def oracle_bilinear(source, coords):
    N, C, H, W = source.shape
    _, Ho, Wo, _ = coords.shape
    out = np.zeros((N, C, Ho, Wo))
    for n in range(N):
        for i in range(Ho):
            for j in range(Wo):
                x = min(max(coords[n, i, j, 0], 0.0), W - 1.0)
                y = min(max(coords[n, i, j, 1], 0.0), H - 1.0)
                x0, y0 = min(int(math.floor(x)), W - 2), min(int(math.floor(y)), H - 2)
                ax, ay = x - x0, y - y0
                for c in range(C):
                    s = source[n, c]
                    out[n, c, i, j] = ((1 - ay) * ((1 - ax) * s[y0, x0] + ax * s[y0, x0 + 1])
                                       + ay * ((1 - ax) * s[y0 + 1, x0] + ax * s[y0 + 1, x0 + 1]))
    return out


def oracle_automask(warped, identity, valid):
    total, count = 0.0, 0
    for idx in np.ndindex(*warped[0].shape):
        candidates = [w[idx] for w, v in zip(warped, valid) if v[idx]]
        if not candidates:
            continue
        best = min(candidates)
        if best < min(t[idx] for t in identity):
            total += best
            count += 1
    return total / count if count else 0.0


def oracle_sgt(features, labels, K, margin, threshold):
    """Loop over anchors and patch members with explicit distances."""
    N, C, H, W = features.shape
    r = K // 2
    hinges = []
    for n in range(N):
        f = features[n]
        norms = [[math.sqrt(sum(f[c, y, x] ** 2 for c in range(C)) + 1e-8) for x in range(W)] for y in range(H)]
        for y in range(r, H - r):
            for x in range(r, W - r):
                pos, neg = [], []
                for dy in range(-r, r + 1):
                    for dx in range(-r, r + 1):
                        if dy == 0 and dx == 0:
                            continue
                        yy, xx = y + dy, x + dx
                        d2 = sum((f[c, yy, xx] / norms[yy][xx] - f[c, y, x] / norms[y][x]) ** 2 for c in range(C))
                        dist = math.sqrt(d2 + 1e-8)
                        (pos if labels[n, yy, xx] == labels[n, y, x] else neg).append(dist)
                if len(pos) > threshold and len(neg) > threshold:
                    hinges.append(max(0.0, sum(pos) / len(pos) + margin - sum(neg) / len(neg)))
    return sum(hinges) / len(hinges) if hinges else 0.0


def oracle_attention(target, reference, emb: HeadEmbeddings):
    """Per-pixel matrix form of the refined feature F' (before projection)."""
    N, C, H, W = target.shape
    Hh, E = emb.heads, emb.embed_dim
    Wq = emb.query.weight.data[:, :, 0, 0].reshape(Hh, E, C)
    Wk = emb.key.weight.data[:, :, 0, 0].reshape(Hh, E, C)
    Wv = emb.value.weight.data[:, :, 0, 0].reshape(Hh, E, C)
    out = np.zeros((N, E, H, W))
    for n in range(N):
        for y in range(H):
            for x in range(W):
                ft, fr = target[n, :, y, x], reference[n, :, y, x]
                scores = [float((Wk[h] @ ft) @ (Wq[h] @ fr)) / math.sqrt(E) for h in range(Hh)]
                if Hh == 1:
                    weights = scores
                else:
                    m = max(scores)
                    ex = [math.exp(s - m) for s in scores]
                    weights = [e / sum(ex) for e in ex]
                out[n, :, y, x] = sum(weights[h] * (Wv[h] @ ft) for h in range(Hh))
    return out


def _o_depth(rng):
    shape = (int(rng.integers(1, 3)), int(rng.integers(2, 6)), int(rng.integers(2, 6)))
    gt = rng.uniform(0.5, 120.0, shape)
    gt[rng.uniform(size=shape) < 0.15] = 0.0
    gt.reshape(shape[0], -1)[:, 0] = rng.uniform(1, 50, shape[0])
    pred = rng.uniform(0.05, 150.0, shape)
    got = evaluate_depth(pred, gt, cap=100.0, min_depth=0.1).as_tuple()
    want = oracle_depth_metrics(pred, gt, 100.0, 0.1)
    return max(abs(a - b) / max(1.0, abs(b)) for a, b in zip(got, want))


def _o_seg(rng):
    n = int(rng.integers(2, 6))
    pred = rng.integers(0, n, (8, 8))
    gt = rng.integers(0, n, (8, 8))
    return abs(evaluate_seg(pred, gt, n) - oracle_miou(pred, gt, n))


def _o_warp(rng):
    N, C, H, W = 2, 2, int(rng.integers(2, 6)), int(rng.integers(2, 6))
    src = rng.uniform(size=(N, C, H, W))
    coords = np.stack([rng.uniform(-1.5, W + 0.5, (N, 3, 4)), rng.uniform(-1.5, H + 0.5, (N, 3, 4))], axis=-1)
    return float(np.abs(bilinear_warp(src, coords).data - oracle_bilinear(src, coords)).max())


def _o_automask(rng):
    shape = (2, 1, 3, 4)
    refs = int(rng.integers(1, 4))
    warped = [rng.uniform(size=shape) for _ in range(refs)]
    identity = [rng.uniform(size=shape) for _ in range(refs)]
    valid = [rng.uniform(size=shape) > 0.3 for _ in range(refs)]
    got = float(min_reprojection_automask(ReprojectionBundle(warped, identity, valid))[0].data)
    return abs(got - oracle_automask(warped, identity, valid))


def _o_sgt(rng):
    K = int(rng.choice([3, 5]))
    T = int(rng.integers(0, K))
    H, W = int(rng.integers(K, K + 4)), int(rng.integers(K, K + 4))
    feats = rng.normal(size=(2, 3, H, W))
    labels = rng.integers(0, int(rng.integers(1, 4)), (2, H, W))
    config = SgtConfig(patch_size=K, threshold=T, margin=float(rng.uniform(0.1, 0.5)))
    got = float(sgt_loss(feats, labels, config).data)
    return abs(got - oracle_sgt(feats, labels, K, config.margin, T))


def _o_attention(rng, heads):
    C = int(rng.integers(2, 4))
    emb = _cma_embeddings(rng, C, heads, int(rng.integers(2, 5)))
    t, r = rng.normal(size=(2, 2, C, 3, 3))
    got = refine_features(t, r, emb).data
    return float(np.abs(got - oracle_attention(t, r, emb)).max())


ORACLE_CASES: list[tuple[str, str, Callable]] = [
    ("sgt", "sgt_loss", _o_sgt),
    ("losses", "min_reprojection_automask", _o_automask),
    ("cma", "attention H=1", lambda rng: _o_attention(rng, 1)),
    ("cma", "attention H=2", lambda rng: _o_attention(rng, 2)),
    ("cma", "attention H=4", lambda rng: _o_attention(rng, 4)),
    ("geometry", "bilinear_warp", _o_warp),
    ("metrics", "evaluate_depth", _o_depth),
    ("metrics", "evaluate_seg", _o_seg),
]


def run_oracle_checks(instances: int = 50, seed: int = 0, tolerance: float = ORACLE_TOL) -> list[CheckResult]:
    results = []
    with ad.precision(np.float64):
        for module, name, case in ORACLE_CASES:
            rng = np.random.default_rng([seed, sum(map(ord, name))])
            t0 = time.perf_counter()
            worst = max(case(rng) for _ in range(instances))
            results.append(CheckResult(name, module, instances, worst, tolerance, time.perf_counter() - t0))
    return results
