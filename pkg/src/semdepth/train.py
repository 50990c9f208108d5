"""Training loop, optimiser, evaluation helpers and the ablation runner."""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .cma import CmaConfig
from .geometry import bilinear_warp, invert_pose_vector, pixel_grid, reproject
from .io import save_tensors
from .losses import (LossWeights, ReprojectionBundle, cross_entropy_loss, min_reprojection_automask,
                     photometric_loss, smoothness_loss, total_loss)
from .metrics import DepthMetrics, depth_edge_fscore, evaluate_depth, evaluate_seg
from .networks import DepthSegNet, ToyBackboneConfig
from .sgt import SgtConfig, sgt_loss
from .synthetic import NUM_CLASSES, SceneSample, corrupt_labels

logger = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    """Raised when a loss component becomes NaN or infinite."""


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 4
    learning_rate: float = 1.5e-4
    lr_decay: float = 0.1
    milestones: tuple[int, ...] = (10, 15)
    warmup_steps: int = 0            # linear learning-rate ramp over the first steps
    pose_lr_scale: float = 10.0      # learning-rate multiplier for the pose network
    alpha: float = 0.85
    beta: float = 0.001
    gamma: float = 0.3
    delta: float = 0.1
    sgt_patch_size: int = 5
    sgt_margin: float = 0.3
    sgt_threshold: int = -1          # negative means patch_size - 1
    sgt_layers: tuple[int, ...] = (1, 2, 3)
    cma_heads: int = 4
    cma_embed_ratio: float = 2.0
    cma_layers: tuple[int, ...] = (0, 1, 2)
    automask_reduction: str = "all"  # or "included"
    label_jitter: int = 1
    label_flip_rate: float = 0.01
    min_depth: float = 0.1
    max_depth: float = 100.0
    eval_cap: float = 100.0
    seed: int = 0

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        self.sgt_layers = tuple(int(v) for v in self.sgt_layers)
        self.cma_layers = tuple(int(v) for v in self.cma_layers)
        if self.epochs < 0 or self.batch_size < 1 or self.warmup_steps < 0:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate <= 0 or self.pose_lr_scale <= 0 or not 0 < self.lr_decay <= 1:
            raise ValueError("learning rate must be positive and decay in (0, 1]")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError("milestones must be strictly increasing")
        self.loss_weights   # validates the weights

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta, self.gamma, self.delta)

    @property
    def sgt_config(self) -> SgtConfig:
        T = None if self.sgt_threshold < 0 else self.sgt_threshold
        return SgtConfig(self.sgt_patch_size, self.sgt_margin, T, self.sgt_layers, self.delta)

    @property
    def cma_config(self) -> CmaConfig | None:
        if not self.cma_layers:
            return None
        return CmaConfig(self.cma_heads, self.cma_embed_ratio, self.cma_layers)

    def learning_rate_at(self, epoch: int, step: int | None = None) -> float:
        """Step decay at the epoch milestones; ``step`` counts optimiser steps for the warm-up."""
        lr = self.learning_rate * self.lr_decay ** sum(epoch >= m for m in self.milestones)
        if step is not None and step < self.warmup_steps:
            lr *= (step + 1) / self.warmup_steps
        return lr


# Ablation variants: baseline, + cross-entropy, + triplet, + attention, full.
ABLATIONS = {
    "a": dict(gamma=0.0, delta=0.0, cma_layers=()),
    "b": dict(delta=0.0, cma_layers=()),
    "c": dict(cma_layers=()),
    "d": dict(delta=0.0),
    "e": dict(),
}


def ablation_config(variant: str, base: TrainConfig | None = None) -> TrainConfig:
    if variant not in ABLATIONS:
        raise ValueError(f"unknown ablation variant {variant!r}")
    return replace(base or TrainConfig(), **ABLATIONS[variant])


class Adam:
    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8, scales=None):
        self.params = list(params)
        self.lr = lr
        self.scales = [1.0] * len(self.params) if scales is None else list(scales)
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v, s in zip(self.params, self.m, self.v, self.scales):
            g = p.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data -= (s * self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def build_model(config: TrainConfig, height: int = 64, width: int = 192) -> DepthSegNet:
    backbone = ToyBackboneConfig(height=height, width=width, num_classes=NUM_CLASSES,
                                 min_depth=config.min_depth, max_depth=config.max_depth)
    model = DepthSegNet(backbone, config.cma_config, with_seg=config.gamma > 0)
    model.initialize(config.seed)
    return model


@dataclass
class Batch:
    target: np.ndarray          # (N, 3, H, W)
    refs: list                  # [(N, 3, H, W) prev, next]
    labels: np.ndarray          # (N, H, W) pseudo-labels
    intrinsics: object


def pseudo_labels(samples: Sequence[SceneSample], config: TrainConfig) -> list[np.ndarray]:
    """Corrupted copies of the exact labels, fixed per sample for the whole run."""
    return [corrupt_labels(s.gt_semantics, config.label_jitter, config.label_flip_rate,
                           NUM_CLASSES, seed=config.seed * 100003 + i)
            for i, s in enumerate(samples)]


def make_batch(samples: Sequence[SceneSample], labels: Sequence[np.ndarray], index) -> Batch:
    picked = [samples[i] for i in index]
    K = picked[0].intrinsics
    if any(s.intrinsics != K for s in picked):
        raise ValueError("all samples in a batch must share intrinsics")
    stack = lambda k: np.stack([s.frames[k] for s in picked])
    return Batch(stack(1), [stack(0), stack(2)], np.stack([labels[i] for i in index]), K)


def predict_reference_pose(model: DepthSegNet, target, ref, earlier: bool) -> ad.Tensor:
    """T_{target -> ref}.  The pose network always sees its pair in temporal order,
    so it only ever predicts forward motion; the earlier frame's pose is inverted."""
    if earlier:
        return invert_pose_vector(model.predict_pose(ref, target))
    return model.predict_pose(target, ref)


def compute_losses(model: DepthSegNet, batch: Batch, config: TrainConfig) -> dict[str, ad.Tensor]:
    """Every loss term for one batch, plus the weighted total under ``total``."""
    w = config.loss_weights
    need_seg = w.gamma > 0 or bool(model.cma)
    out = model(batch.target, with_seg=need_seg)
    disp = out.disparity
    depth = 1.0 / disp
    N, _, H, W = disp.shape
    grid = pixel_grid(H, W)
    warped, identity, valid = [], [], []
    for k, ref in enumerate(batch.refs):
        pose = predict_reference_pose(model, batch.target, ref, earlier=(k == 0))
        coords, ok = reproject(grid, depth, batch.intrinsics, pose)
        warped.append(photometric_loss(batch.target, bilinear_warp(ref, coords), w.alpha))
        with ad.no_grad():
            identity.append(photometric_loss(batch.target, ref, w.alpha))
        valid.append(ok[:, None])
    photometric, _ = min_reprojection_automask(ReprojectionBundle(warped, identity, valid),
                                               config.automask_reduction)
    terms = {"photometric": photometric, "smoothness": smoothness_loss(disp, batch.target)}
    if w.gamma > 0:
        terms["cross_entropy"] = cross_entropy_loss(out.logits, batch.labels)
    sgt_terms = []
    if w.delta > 0:
        sc = config.sgt_config
        for l in sc.layers:
            t = sgt_loss(out.depth_features[l], batch.labels, sc)
            terms[f"sgt{l}"] = t
            sgt_terms.append(t)
    terms["total"] = total_loss(terms["photometric"], terms["smoothness"],
                                terms.get("cross_entropy", 0.0), sgt_terms, w)
    for name, t in terms.items():
        if not np.isfinite(t.data).all():
            raise NonFiniteLossError(f"loss component {name!r} is not finite")
    return terms


def train_step(model: DepthSegNet, optimizer: Adam, batch: Batch, config: TrainConfig) -> dict[str, float]:
    model.zero_grad()
    terms = compute_losses(model, batch, config)
    ad.backward(terms["total"])
    optimizer.step()
    return {k: float(v.data) for k, v in terms.items()}


def predict_depth(model: DepthSegNet, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """(N, 3, H, W) images to (N, H, W) depth."""
    out = []
    with ad.no_grad():
        for i in range(0, len(images), batch_size):
            disp = model(images[i:i + batch_size], with_seg=False).disparity
            out.append(1.0 / disp.data[:, 0])
    return np.concatenate(out)


def predict_segmentation(model: DepthSegNet, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
    out = []
    with ad.no_grad():
        for i in range(0, len(images), batch_size):
            out.append(model(images[i:i + batch_size], with_seg=True).logits.data.argmax(axis=1))
    return np.concatenate(out)


@dataclass
class EvalResult:
    depth: DepthMetrics
    edge_fscore: float
    miou: float | None = None

    def as_dict(self) -> dict:
        d = self.depth.as_dict()
        d["edge_fscore"] = self.edge_fscore
        if self.miou is not None:
            d["miou"] = self.miou
        return d


def evaluate_model(model: DepthSegNet, samples: Sequence[SceneSample], cap: float = 100.0) -> EvalResult:
    images = np.stack([s.target for s in samples])
    depth = predict_depth(model, images)
    gt = np.stack([s.gt_depth for s in samples])
    metrics = evaluate_depth(depth, gt, cap=cap, min_depth=model.config.min_depth)
    fscore = float(np.mean([depth_edge_fscore(1.0 / d, s.gt_semantics) for d, s in zip(depth, samples)]))
    miou = None
    if model.seg_decoder is not None:
        pred = predict_segmentation(model, images)
        miou = float(np.mean([evaluate_seg(p, s.gt_semantics, NUM_CLASSES) for p, s in zip(pred, samples)]))
    return EvalResult(metrics, fscore, miou)


@dataclass
class TrainResult:
    model: DepthSegNet
    history: list = field(default_factory=list)
    seconds: float = 0.0


LOG_FIELDS = ("epoch", "lr", "seconds", "total", "photometric", "smoothness", "cross_entropy",
              "sgt1", "sgt2", "sgt3", "abs_rel", "edge_fscore")


def format_log_line(row: dict) -> str:
    return "\t".join(f"{k}={row[k]:.6g}" if isinstance(row[k], float) else f"{k}={row[k]}"
                     for k in LOG_FIELDS if k in row)


def train(config: TrainConfig, samples: Sequence[SceneSample], out_dir=None,
          eval_samples: Sequence[SceneSample] | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Deterministic training run.  Writes ``model.fsre`` and ``train.log`` into ``out_dir`` if given.

    Evaluation after each epoch uses ``eval_samples`` when supplied.
    """
    if not samples:
        raise ValueError("empty dataset")
    H, W = samples[0].gt_depth.shape
    model = build_model(config, H, W)
    named = list(model.named_parameters())
    opt = Adam([p for _, p in named], config.learning_rate,
               scales=[config.pose_lr_scale if n.startswith("pose_net.") else 1.0 for n, _ in named])
    labels = pseudo_labels(samples, config)
    rng = np.random.default_rng([config.seed, 7])
    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "train.log", "w")
    result = TrainResult(model)
    start = time.perf_counter()
    try:
        for epoch in range(config.epochs):
            opt.lr = config.learning_rate_at(epoch)
            order = rng.permutation(len(samples))
            sums: dict[str, float] = {}
            steps = 0
            t0 = time.perf_counter()
            for i in range(0, len(order) - config.batch_size + 1, config.batch_size):
                opt.lr = config.learning_rate_at(epoch, opt.t)
                vals = train_step(model, opt, make_batch(samples, labels, order[i:i + config.batch_size]), config)
                for k, v in vals.items():
                    sums[k] = sums.get(k, 0.0) + v
                steps += 1
            row = {"epoch": epoch + 1, "lr": opt.lr, "seconds": time.perf_counter() - t0}
            row.update({k: v / max(steps, 1) for k, v in sums.items()})
            if eval_samples:
                ev = evaluate_model(model, eval_samples, config.eval_cap)
                row["abs_rel"] = ev.depth.abs_rel
                row["edge_fscore"] = ev.edge_fscore
            result.history.append(row)
            line = format_log_line(row)
            logger.info(line)
            if log_fh:
                log_fh.write(line + "\n")
                log_fh.flush()
            if on_epoch:
                on_epoch(row)
    finally:
        if log_fh:
            log_fh.close()
    result.seconds = time.perf_counter() - start
    if out is not None:
        save_tensors(out / "model.fsre", model.state_dict())
        (out / "config.txt").write_text(config_to_text(config))
    return result


def config_to_text(config: TrainConfig) -> str:
    lines = []
    for k, v in asdict(config).items():
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- ablation runner

@dataclass
class AblationSetup:
    variants: tuple[str, ...] = ("a", "b", "c", "d", "e")
    seeds: tuple[int, ...] = (0, 1, 2)
    train_samples: int = 200
    train_seed: int = 0
    eval_samples: int = 32
    eval_seed: int = 10_000
    scene: dict = field(default_factory=dict)        # extra SceneSpec fields
    overrides: dict = field(default_factory=dict)    # extra TrainConfig fields for every run


# modules whose code can change a training or evaluation number
NUMERIC_MODULES = ("autodiff", "cma", "geometry", "io", "losses", "metrics", "networks", "nn", "sgt",
                   "synthetic", "train")


def source_fingerprint() -> str:
    """Hash of the numeric modules; a cached ablation is stale once any of them changes."""
    h = hashlib.sha256()
    for name in NUMERIC_MODULES:
        path = Path(__file__).with_name(f"{name}.py")
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def _setup_key(setup: AblationSetup) -> str:
    blob = json.dumps(asdict(setup), sort_keys=True) + source_fingerprint()
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def run_ablation(setup: AblationSetup | None = None, cache_path=None,
                 on_run: Callable[[str, int, dict], None] | None = None) -> dict:
    """Train every (variant, seed) pair and evaluate it on a held-out set.

    Returns ``{"key": ..., "runs": {variant: {seed: metrics}}}``.  With
    ``cache_path`` finished runs are stored after each one and reused as long
    as the source and setup are unchanged, so an interrupted sweep resumes.
    """
    from .synthetic import make_dataset

    setup = setup or AblationSetup()
    key = _setup_key(setup)
    cache = {"key": key, "setup": asdict(setup), "runs": {}}
    path = Path(cache_path) if cache_path is not None else None
    if path is not None and path.exists():
        stored = json.loads(path.read_text())
        if stored.get("key") == key:
            cache = stored
    pending = [(v, s) for s in setup.seeds for v in setup.variants
               if str(s) not in cache["runs"].get(v, {})]
    if not pending:
        return cache
    train_set = make_dataset(setup.train_samples, seed=setup.train_seed, **setup.scene)
    eval_set = make_dataset(setup.eval_samples, seed=setup.eval_seed, **setup.scene)
    for variant, seed in pending:
        config = ablation_config(variant, replace(TrainConfig(**setup.overrides), seed=seed))
        result = train(config, train_set)
        ev = evaluate_model(result.model, eval_set, config.eval_cap)
        row = ev.as_dict()
        row["seconds"] = result.seconds
        row["history"] = [{k: v for k, v in h.items()} for h in result.history]
        cache["runs"].setdefault(variant, {})[str(seed)] = row
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps(cache, indent=1))
            tmp.replace(path)
        if on_run:
            on_run(variant, seed, row)
    return cache
