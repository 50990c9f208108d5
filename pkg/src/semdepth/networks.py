"""Shared-encoder depth/segmentation network with CMA hooks, and a pose network."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cma import BidirectionalCma, CmaConfig, HeadEmbeddings, cma
from .geometry import PoseSE3
from .nn import Conv2d, Module

NUM_BLOCKS = 5
IMAGE_MEAN, IMAGE_STD = 0.45, 0.225


@dataclass
class ToyBackboneConfig:
    height: int = 64
    width: int = 192
    stem_channels: int = 8
    encoder_channels: tuple[int, ...] = (16, 32, 64, 128)
    decoder_channels: tuple[int, ...] = (128, 64, 32, 16, 8)
    num_classes: int = 6
    min_depth: float = 0.1
    max_depth: float = 100.0

    def __post_init__(self):
        self.encoder_channels = tuple(self.encoder_channels)
        self.decoder_channels = tuple(self.decoder_channels)
        if self.height % 16 or self.width % 16:
            raise ValueError("input size must be divisible by 16")
        if len(self.encoder_channels) != 4 or len(self.decoder_channels) != NUM_BLOCKS:
            raise ValueError("need 4 encoder stages and 5 decoder blocks")

    @property
    def skip_channels(self) -> tuple[int, ...]:
        return (self.stem_channels,) + self.encoder_channels

    def block_size(self, l: int) -> tuple[int, int]:
        f = 2 ** (NUM_BLOCKS - 1 - l)
        return self.height // f, self.width // f


@dataclass
class NetworkOutputs:
    disparity: Tensor | None = None
    logits: Tensor | None = None
    depth_features: list = field(default_factory=list)
    seg_features: list = field(default_factory=list)
    pose: Tensor | None = None


def normalize_image(image) -> Tensor:
    return (ad.as_tensor(image) - IMAGE_MEAN) / IMAGE_STD


class Encoder(Module):
    def __init__(self, config: ToyBackboneConfig, in_channels: int = 3):
        self.stem = Conv2d(in_channels, config.stem_channels, 3)
        self.stages = []
        cin = config.stem_channels
        for c in config.encoder_channels:
            self.stages.append([Conv2d(cin, c, 3, stride=2), Conv2d(c, c, 3)])
            cin = c

    def __call__(self, image) -> list[Tensor]:
        image = ad.as_tensor(image)
        if image.shape[-2] % 16 or image.shape[-1] % 16:
            raise ValueError("input size must be divisible by 16")
        x = ad.elu(self.stem(normalize_image(image)))
        pyramid = [x]
        for down, conv in self.stages:
            x = ad.elu(conv(ad.elu(down(x))))
            pyramid.append(x)
        return pyramid


class Decoder(Module):
    """Five upsampling blocks; block l runs at 1/2^(4-l) of the input resolution."""

    def __init__(self, config: ToyBackboneConfig, out_channels: int):
        skips = config.skip_channels
        dec = config.decoder_channels
        self.blocks = []
        for l in range(NUM_BLOCKS):
            cin = skips[-1] if l == 0 else dec[l - 1] + skips[NUM_BLOCKS - 1 - l]
            self.blocks.append(Conv2d(cin, dec[l], 3))
        self.head = Conv2d(dec[-1], out_channels, 3, init_scale=0.1)

    def block(self, l: int, previous: Tensor | None, pyramid: list[Tensor]) -> Tensor:
        if l == 0:
            x = pyramid[-1]
        else:
            up = ad.upsample_nearest(previous, 2)
            skip = pyramid[NUM_BLOCKS - 1 - l]
            if up.shape[2:] != skip.shape[2:]:
                raise ValueError(f"block {l}: feature {up.shape} does not match skip {skip.shape}")
            x = ad.concat([up, skip], axis=1)
        return ad.elu(self.blocks[l](x))


def _decode(decoder: Decoder, pyramid, partner_features=None, cma_modules=None):
    features = []
    x = None
    for l in range(NUM_BLOCKS):
        x = decoder.block(l, x, pyramid)
        if cma_modules and l in cma_modules:
            if partner_features is None:
                raise ValueError("CMA attached but no partner features supplied")
            x = cma(x, partner_features[l], cma_modules[l])
        features.append(x)
    return x, features


def decode_depth(decoder: Decoder, pyramid, config: ToyBackboneConfig,
                 partner_features=None, cma_modules: dict[int, HeadEmbeddings] | None = None):
    """Disparity in [1/max_depth, 1/min_depth] plus per-block features."""
    x, features = _decode(decoder, pyramid, partner_features, cma_modules)
    return disparity_from_logits(decoder.head(x), config), features


def decode_seg(decoder: Decoder, pyramid, partner_features=None,
               cma_modules: dict[int, HeadEmbeddings] | None = None):
    x, features = _decode(decoder, pyramid, partner_features, cma_modules)
    return decoder.head(x), features


def disparity_from_logits(logits, config: ToyBackboneConfig) -> Tensor:
    lo, hi = 1.0 / config.max_depth, 1.0 / config.min_depth
    return lo + (hi - lo) * ad.sigmoid(logits)


class PoseNet(Module):
    def __init__(self, channels: tuple[int, ...] = (16, 32, 64, 64)):
        self.convs = []
        cin = 6
        for c in channels:
            self.convs.append(Conv2d(cin, c, 3, stride=2))
            cin = c
        # small initial motion keeps early flows inside the reach of bilinear-warp gradients
        self.out = Conv2d(cin, 6, 1, init_scale=0.1)

    def __call__(self, image_a, image_b) -> Tensor:
        """(N, 6) axis-angle + translation, network output scaled by 0.01."""
        image_a, image_b = ad.as_tensor(image_a), ad.as_tensor(image_b)
        if image_a.shape != image_b.shape:
            raise ValueError(f"frame shapes differ: {image_a.shape} vs {image_b.shape}")
        x = ad.concat([normalize_image(image_a), normalize_image(image_b)], axis=1)
        for conv in self.convs:
            x = ad.elu(conv(x))
        return self.out(x).mean(axis=(2, 3)) * 0.01


def pose_from_vector(vec) -> PoseSE3:
    v = np.asarray(vec.data if isinstance(vec, Tensor) else vec, dtype=np.float64).reshape(6)
    return PoseSE3(v[:3], v[3:])


class DepthSegNet(Module):
    """Shared encoder, depth and segmentation decoders, optional bidirectional CMA."""

    def __init__(self, config: ToyBackboneConfig | None = None, cma_config: CmaConfig | None = None,
                 with_seg: bool = True):
        self.config = config or ToyBackboneConfig()
        self.cma_config = cma_config
        cma_layers = cma_config.layers if cma_config is not None else ()
        self.with_seg = with_seg or bool(cma_layers)
        self.encoder = Encoder(self.config)
        self.depth_decoder = Decoder(self.config, 1)
        self.seg_decoder = Decoder(self.config, self.config.num_classes) if self.with_seg else None
        self.cma = {l: BidirectionalCma(self.config.decoder_channels[l], cma_config) for l in cma_layers}
        self.pose_net = PoseNet()

    def encode(self, image) -> list[Tensor]:
        return self.encoder(image)

    def __call__(self, image, with_seg: bool | None = None) -> NetworkOutputs:
        pyramid = self.encode(image)
        run_seg = self.with_seg if with_seg is None else (with_seg and self.with_seg)
        if self.cma:
            run_seg = True
        if not run_seg:
            disp, feats = decode_depth(self.depth_decoder, pyramid, self.config)
            return NetworkOutputs(disparity=disp, depth_features=feats)
        xd = xs = None
        dfeats, sfeats = [], []
        for l in range(NUM_BLOCKS):
            xd = self.depth_decoder.block(l, xd, pyramid)
            xs = self.seg_decoder.block(l, xs, pyramid)
            if l in self.cma:
                xd, xs = self.cma[l](xd, xs)
            dfeats.append(xd)
            sfeats.append(xs)
        disp = disparity_from_logits(self.depth_decoder.head(xd), self.config)
        logits = self.seg_decoder.head(xs)
        return NetworkOutputs(disparity=disp, logits=logits, depth_features=dfeats, seg_features=sfeats)

    def predict_pose(self, image_a, image_b) -> Tensor:
        return self.pose_net(image_a, image_b)
