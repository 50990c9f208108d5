import numpy as np
import pytest

from semdepth import autodiff as ad
from semdepth.cma import CmaConfig
from semdepth.losses import cross_entropy_loss
from semdepth.networks import DepthSegNet, PoseNet, ToyBackboneConfig, pose_from_vector
from semdepth.train import Adam

TINY = dict(height=16, width=32, stem_channels=4, encoder_channels=(4, 4, 8, 8), decoder_channels=(8, 8, 4, 4, 4))


def _net(cma=True, seed=0, **kw):
    net = DepthSegNet(ToyBackboneConfig(**{**TINY, **kw}), CmaConfig(heads=2) if cma else None)
    net.initialize(seed)
    return net


def test_pyramid_and_block_shapes(rng):
    net = DepthSegNet(ToyBackboneConfig(), None, with_seg=False)
    net.initialize(0)
    pyr = net.encode(rng.uniform(size=(1, 3, 64, 192)))
    assert [p.shape[2:] for p in pyr] == [(64, 192), (32, 96), (16, 48), (8, 24), (4, 12)]
    assert [ToyBackboneConfig().block_size(l) for l in range(5)] == [(4, 12), (8, 24), (16, 48), (32, 96), (64, 192)]


def test_indivisible_input():
    with pytest.raises(ValueError):
        ToyBackboneConfig(height=60)
    with pytest.raises(ValueError):
        _net()(np.zeros((1, 3, 20, 32)))


def test_outputs_and_disparity_bounds(rng):
    net = _net()
    out = net(rng.uniform(size=(2, 3, 16, 32)))
    assert out.disparity.shape == (2, 1, 16, 32)
    assert out.logits.shape == (2, 6, 16, 32)
    assert out.disparity.data.min() >= 0.01 - 1e-7 and out.disparity.data.max() <= 10 + 1e-6
    assert len(out.depth_features) == 5 and len(out.seg_features) == 5


def test_extreme_head_saturates_within_bounds():
    net = _net(cma=False)
    for bias, bound in ((1e3, 10.0), (-1e3, 0.01)):
        net.depth_decoder.head.bias.data[:] = bias
        np.testing.assert_allclose(net(np.zeros((1, 3, 16, 32))).disparity.data, bound, rtol=1e-5)


def test_deterministic_and_zero_image(rng):
    net = _net()
    img = rng.uniform(size=(1, 3, 16, 32))
    assert np.array_equal(net(img).disparity.data, net(img).disparity.data)
    out = net(np.zeros((1, 3, 16, 32)))
    assert np.isfinite(out.disparity.data).all() and np.isfinite(out.logits.data).all()


def test_without_cma_decoders_are_independent(rng):
    net = _net(cma=False)
    img = rng.uniform(size=(1, 3, 16, 32))
    before = net(img)
    for p in net.seg_decoder.parameters():
        p.data = p.data + 1.0
    after = net(img)
    assert np.array_equal(before.disparity.data, after.disparity.data)
    for p in net.depth_decoder.parameters():
        p.data = p.data + 1.0
    assert np.array_equal(after.logits.data, net(img).logits.data)


def test_cross_entropy_reaches_depth_decoder_only_with_cma(rng):
    img = rng.uniform(size=(1, 3, 16, 32))
    labels = rng.integers(0, 6, (1, 16, 32))
    for with_cma, expect in ((True, True), (False, False)):
        net = _net(cma=with_cma)
        net.zero_grad()
        ad.backward(cross_entropy_loss(net(img).logits, labels))
        flow = any(np.abs(p.grad).sum() > 0 for p in net.depth_decoder.parameters()
                   if p is not net.depth_decoder.head.weight and p is not net.depth_decoder.head.bias)
        assert flow == expect


def test_no_dead_parameters(rng):
    from semdepth.synthetic import make_dataset
    from semdepth.train import TrainConfig, build_model, compute_losses, make_batch
    samples = make_dataset(2, seed=0, height=32, width=64)
    cfg = TrainConfig(sgt_threshold=1, sgt_patch_size=3)
    model = build_model(cfg, 32, 64)
    batch = make_batch(samples, [s.gt_semantics for s in samples], [0, 1])
    model.zero_grad()
    ad.backward(compute_losses(model, batch, cfg)["total"])
    dead = [n for n, p in model.named_parameters() if not np.any(p.grad)]
    assert dead == []


def test_nan_free_over_random_draws(rng):
    net = _net(cma=True)
    img = rng.uniform(size=(1, 3, 16, 32))
    for seed in range(1000):
        net.initialize(seed)
        out = net(img)
        assert np.isfinite(out.disparity.data).all() and np.isfinite(out.logits.data).all()


def test_pose_net_outputs(rng):
    pose = PoseNet()
    pose.initialize(0)
    a, b = rng.uniform(size=(2, 2, 3, 16, 32))
    v = pose(a, b)
    assert v.shape == (2, 6) and np.isfinite(v.data).all()
    assert pose_from_vector(v.data[0]).translation.shape == (3,)
    with pytest.raises(ValueError):
        pose(a, b[..., :16])


def test_static_pairs_give_near_zero_pose():
    from semdepth.synthetic import make_dataset
    from semdepth.train import TrainConfig, train
    static = []
    for s in make_dataset(4, seed=2, height=32, width=64):
        s.frames = (s.target, s.target, s.target)
        static.append(s)
    cfg = TrainConfig(epochs=2, batch_size=2, gamma=0, delta=0, cma_layers=())
    model = train(cfg, static).model
    with ad.no_grad():
        t = model.predict_pose(static[0].target[None], static[0].target[None]).data[0, 3:]
    assert np.linalg.norm(t) < 0.05


def test_overfit_single_image_segmentation(rng):
    net = _net(cma=False)
    img = rng.uniform(size=(1, 3, 16, 32)).astype(np.float32)
    labels = np.zeros((1, 16, 32), int)
    labels[:, 8:] = 1
    labels[:, :, 20:] = 2
    opt = Adam(net.parameters(), 1e-2)
    for _ in range(150):
        net.zero_grad()
        ad.backward(cross_entropy_loss(net(img).logits, labels))
        opt.step()
    assert (net(img).logits.data.argmax(axis=1) == labels).mean() == 1.0
