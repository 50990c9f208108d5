import numpy as np
import pytest

from semdepth import autodiff as ad
from semdepth.autodiff import Tensor
from semdepth.losses import (SSIM_C1, LossWeights, ReprojectionBundle, cross_entropy_loss,
                             min_reprojection_automask, photometric_loss, smoothness_loss, ssim, total_loss)


def _const(v, shape=(1, 3, 6, 6)):
    return np.full(shape, v)


def test_ssim_identical_is_one(f64, rng):
    a = rng.uniform(size=(1, 3, 8, 8))
    np.testing.assert_allclose(ssim(a, a).data, 1.0, atol=1e-12)


def test_ssim_constant_closed_form(f64):
    s = ssim(_const(0.2), _const(0.8)).data
    expected = (2 * 0.2 * 0.8 + SSIM_C1) / (0.2 ** 2 + 0.8 ** 2 + SSIM_C1)
    np.testing.assert_allclose(s, expected, atol=1e-12)


def test_ssim_symmetric_and_bounded(f64, rng):
    a, b = rng.uniform(size=(2, 2, 3, 8, 8))
    np.testing.assert_allclose(ssim(a, b).data, ssim(b, a).data, atol=1e-6)
    assert (np.abs(ssim(a, b).data) <= 1 + 1e-12).all()


def test_ssim_shape_mismatch():
    with pytest.raises(ValueError):
        ssim(np.zeros((1, 3, 4, 4)), np.zeros((1, 3, 4, 5)))


def test_photometric_identities(f64, rng):
    a, b = rng.uniform(size=(2, 1, 3, 8, 8))
    np.testing.assert_allclose(photometric_loss(a, a).data, 0.0, atol=1e-12)
    np.testing.assert_allclose(photometric_loss(a, b, alpha=0).data, np.abs(a - b).mean(1, keepdims=True))
    assert (photometric_loss(a, b).data >= 0).all()


def test_photometric_constant_pair(f64):
    s = (2 * 0.2 * 0.8 + SSIM_C1) / (0.2 ** 2 + 0.8 ** 2 + SSIM_C1)
    got = photometric_loss(_const(0.2), _const(0.8), 0.85).data
    np.testing.assert_allclose(got, 0.85 * (1 - s) / 2 + 0.15 * 0.6, atol=1e-12)


def _maps(*vals):
    return [Tensor(np.full((1, 1, 2, 2), v)) for v in vals]


def test_automask_min_and_pass(f64):
    loss, inc = min_reprojection_automask(ReprojectionBundle(_maps(0.1, 0.3), _maps(0.5, 0.5)))
    assert float(loss.data) == pytest.approx(0.1)
    assert inc.all()


def test_automask_static_scene_is_zero(f64):
    loss, inc = min_reprojection_automask(ReprojectionBundle(_maps(0.4, 0.4), _maps(0.4, 0.6)))
    assert float(loss.data) == 0.0 and not inc.any()


def test_automask_static_pair_end_to_end(f64, rng):
    img = rng.uniform(size=(1, 3, 8, 8))
    warped = [photometric_loss(img, img)] * 2
    loss, inc = min_reprojection_automask(ReprojectionBundle(warped, warped))
    assert float(loss.data) == 0.0 and not inc.any()


def test_automask_all_reduction(f64):
    loss, _ = min_reprojection_automask(ReprojectionBundle(_maps(0.1, 0.3), _maps(0.5, 0.05)), "all")
    assert float(loss.data) == pytest.approx(0.05)
    loss, _ = min_reprojection_automask(ReprojectionBundle(_maps(0.1, 0.3), _maps(0.5, 0.5)), "all")
    assert float(loss.data) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        min_reprojection_automask(ReprojectionBundle(_maps(0.1), _maps(0.5)), "median")


def test_automask_invalid_pixels_excluded(f64):
    valid = [np.array([[True, False], [False, False]]).reshape(1, 1, 2, 2)] * 2
    loss, inc = min_reprojection_automask(ReprojectionBundle(_maps(0.1, 0.2), _maps(0.5, 0.5), valid))
    assert inc.sum() == 1 and float(loss.data) == pytest.approx(0.1)


def test_smoothness_constant_is_zero(f64, rng):
    assert float(smoothness_loss(np.full((1, 1, 5, 6), 3.0), rng.uniform(size=(1, 3, 5, 6))).data) == 0.0


def test_smoothness_ramp_closed_form(f64):
    W, s = 8, 0.5
    d = (1.0 + s * np.arange(W))[None, None, None].repeat(4, axis=2)
    got = float(smoothness_loss(d, np.zeros((1, 3, 4, W))).data)
    assert got == pytest.approx(s / d.mean())


def test_smoothness_edge_aware_and_scale_invariant(f64):
    d = np.ones((1, 1, 4, 6))
    d[..., 3:] = 2.0
    edge = np.zeros((1, 3, 4, 6))
    edge[..., 3:] = 1.0
    flat = np.zeros((1, 3, 4, 6))
    assert float(smoothness_loss(d, edge).data) < float(smoothness_loss(d, flat).data)
    assert float(smoothness_loss(d * 7.3, edge).data) == pytest.approx(float(smoothness_loss(d, edge).data))
    with pytest.raises(ValueError):
        smoothness_loss(np.ones((1, 1, 1, 6)), np.zeros((1, 3, 1, 6)))


def test_cross_entropy_values(f64):
    logits = np.zeros((1, 2, 1, 1))
    logits[0, 0] = 1.0
    assert float(cross_entropy_loss(logits, np.zeros((1, 1, 1), int)).data) == pytest.approx(-np.log(np.e / (np.e + 1)))
    assert float(cross_entropy_loss(np.zeros((1, 6, 3, 3)), np.zeros((1, 3, 3), int)).data) == pytest.approx(np.log(6))
    sharp = np.full((1, 3, 2, 2), -20.0)
    sharp[:, 1] = 20.0
    assert float(cross_entropy_loss(sharp, np.ones((1, 2, 2), int)).data) < 1e-3


def test_cross_entropy_ignore_and_range(f64):
    logits = np.zeros((1, 2, 1, 2))
    logits[0, 0, 0, 0] = 1.0
    labels = np.array([[[0, 255]]])
    assert float(cross_entropy_loss(logits, labels).data) == pytest.approx(0.31326168751822286)
    with pytest.raises(ValueError):
        cross_entropy_loss(logits, np.array([[[0, 2]]]))


def test_total_loss_arithmetic(f64):
    w = LossWeights(0.85, 0.001, 0.3, 0.1)
    assert float(total_loss(0.5, 1.0, 2.0, [0.3], w).data) == pytest.approx(1.131)
    assert float(total_loss(0.0, 0.0, 0.0, [0.0], w).data) == 0.0
    assert float(total_loss(0.7, 5.0, 9.0, [4.0], LossWeights(0.85, 0, 0, 0)).data) == pytest.approx(0.7)


def test_loss_weight_validation():
    with pytest.raises(ValueError):
        LossWeights(alpha=1.5)
    with pytest.raises(ValueError):
        LossWeights(beta=-1)


def test_loss_gradients(f64, rng):
    a, b = rng.uniform(0.1, 0.9, size=(2, 1, 3, 6, 6))
    assert ad.gradient_check(lambda x: photometric_loss(a, x).mean(), b) < 1e-4
    disp = rng.uniform(0.5, 2, size=(1, 1, 6, 6))
    assert ad.gradient_check(lambda d: smoothness_loss(d, a), disp) < 1e-4
    logits = rng.normal(size=(1, 4, 3, 3))
    assert ad.gradient_check(lambda z: cross_entropy_loss(z, rng_labels), logits) < 1e-4


rng_labels = np.random.default_rng(0).integers(0, 4, size=(1, 3, 3))
