import numpy as np
import pytest

from dkwarp.grads import (
    audit_instance,
    finite_difference_audit,
    grad_flow,
    grad_image,
    grad_kernel,
    grad_offset,
    linear_image_instance,
    random_instance,
    relative_error,
    warp_backward,
)
from dkwarp.warp import GEOMETRY, identity_kernels, quadrant_weights, warp_frame, zero_offsets


def pixel_args(inst):
    return inst.x, inst.y, inst.reference, inst.flow, inst.kernels, inst.offsets


def interior_instance(rng, size=12):
    """Random instance with every sample position well inside the frame."""
    inst = random_instance(rng, size=size)
    inst.x = inst.y = size // 2
    inst.flow[:, inst.y, inst.x] = np.mod(inst.flow[:, inst.y, inst.x], 1.0)
    return inst


def test_constant_image_kills_offset_grads(rng):
    inst = random_instance(rng)
    inst.reference[:] = 0.42
    assert not grad_offset(*pixel_args(inst)).any()
    assert not warp_backward(np.ones((8, 8)), inst.reference, inst.flow, inst.kernels, inst.offsets).d_offsets.any()


def test_constant_image_flow_grad_is_weight_slope():
    # the output c * sum(wb * wk) still moves with theta, so the flow gradient need not vanish
    img = np.full((5, 5), 0.6)
    flow = np.zeros((2, 5, 5))
    flow[:, 2, 2] = (0.3, 0.8)
    dfx, dfy = grad_flow(2, 2, img, flow, identity_kernels(5, 5), zero_offsets(5, 5))
    assert dfx == pytest.approx(-0.6 * (1 - 0.8))
    assert dfy == pytest.approx(-0.6 * (1 - 0.3))


def test_linear_image_offset_grad_is_slope(rng):
    inst = interior_instance(rng)
    ys, xs = np.mgrid[0:12, 0:12].astype(np.float64)
    inst.reference = 0.3 * xs - 0.2 * ys + 1.0
    g = grad_offset(*pixel_args(inst), upstream=2.0)
    tx, ty = inst.flow[:, inst.y, inst.x]
    wb = quadrant_weights(tx, ty)
    from dkwarp.warp import classify_quadrant, QUADRANT_INDEX

    for r, p in enumerate(GEOMETRY.relative_coords):
        dp = inst.offsets[r, inst.y, inst.x], inst.offsets[16 + r, inst.y, inst.x]
        w = wb[QUADRANT_INDEX[classify_quadrant(p, dp, tx, ty)]] * inst.kernels[r, inst.y, inst.x]
        assert g[r, 0] == pytest.approx(2.0 * w * 0.3, rel=1e-12, abs=1e-15)
        assert g[r, 1] == pytest.approx(2.0 * w * -0.2, rel=1e-12, abs=1e-15)


def test_kernel_grad_identity():
    img = np.arange(25.0).reshape(5, 5) / 25
    flow = np.zeros((2, 5, 5))
    g = grad_kernel(2, 3, img, flow, identity_kernels(5, 5), zero_offsets(5, 5))
    for r, (px, py) in enumerate(GEOMETRY.relative_coords):
        if px <= 0 and py <= 0:
            assert g[r] == img[3 + py, 2 + px]
        else:
            assert g[r] == 0.0
    assert g[GEOMETRY.index(0, 0)] == img[3, 2]


def test_kernel_grad_constant_image(rng):
    inst = random_instance(rng)
    inst.reference[:] = 0.8
    g = grad_kernel(*pixel_args(inst), upstream=-1.5)
    ones = grad_kernel(inst.x, inst.y, np.ones_like(inst.reference), inst.flow, inst.kernels, inst.offsets)
    np.testing.assert_allclose(g, -1.5 * 0.8 * ones, rtol=1e-15)


def test_image_grad_identity():
    img = np.zeros((5, 5))
    g = grad_image(1, 2, img, np.zeros((2, 5, 5)), identity_kernels(5, 5), zero_offsets(5, 5), upstream=3.0)
    expected = np.zeros((5, 5))
    expected[2, 1] = 3.0
    assert np.array_equal(g, expected)


def test_image_grad_half_pixel():
    h = w = 6
    k = np.zeros((16, h, w))
    k[GEOMETRY.index(0, 0), 2, 2] = 0.8
    o = zero_offsets(h, w)
    o[GEOMETRY.index(0, 0), 2, 2] = 0.5
    o[16 + GEOMETRY.index(0, 0), 2, 2] = 0.5
    flow = np.zeros((2, h, w))
    flow[:, 2, 2] = 0.7  # both 0.5 offsets stay in TL (0.5 <= 0.7)
    wb = 0.3 * 0.3
    g = grad_image(2, 2, np.zeros((h, w)), flow, k, o, upstream=2.0)
    expected = 0.25 * wb * 0.8 * 2.0
    np.testing.assert_allclose(g[2:4, 2:4], expected, rtol=1e-15)
    assert np.count_nonzero(g) == 4


def test_flow_grad_all_tl():
    rng = np.random.default_rng(5)
    h = w = 8
    img = rng.uniform(size=(h, w))
    flow = np.zeros((2, h, w))
    k = rng.normal(size=(16, h, w))
    o = np.zeros((32, h, w))
    for r, (px, py) in enumerate(GEOMETRY.relative_coords):
        o[r] = -px - 0.5
        o[16 + r] = -py - 0.5
    x = y = 4
    # every sample sits at (x - 0.5, y - 0.5), the mean of four pixels
    val = img[3:5, 3:5].mean()
    dfx, dfy = grad_flow(x, y, img, flow, k, o, upstream=1.5)
    assert dfx == pytest.approx(-1.5 * k[:, y, x].sum() * val, rel=1e-12)
    assert dfy == pytest.approx(-1.5 * k[:, y, x].sum() * val, rel=1e-12)


def test_zero_kernels_annihilate(rng):
    inst = random_instance(rng)
    inst.kernels[:] = 0.0
    args = pixel_args(inst)
    assert not grad_offset(*args).any()
    assert not grad_image(*args).any()
    assert grad_flow(*args) == (0.0, 0.0)
    assert grad_kernel(*args).any()


@pytest.mark.parametrize("seed", range(5))
def test_random_fd_match(seed):
    errs = audit_instance(random_instance(np.random.default_rng(seed)))
    assert errs["offsets"] < 1e-6
    assert errs["flow"] < 1e-6
    assert errs["kernels"] < 1e-8
    assert errs["image"] < 1e-6


def test_linear_image_audit():
    rep = finite_difference_audit(trials=10, generator=linear_image_instance)
    assert rep.max_error["offsets"] < 1e-9


def test_audit_deterministic():
    a = finite_difference_audit(trials=5, seed=3)
    b = finite_difference_audit(trials=5, seed=3)
    assert a.max_error == b.max_error
    assert a.lines() == b.lines()


def test_audit_validation():
    with pytest.raises(ValueError):
        finite_difference_audit(trials=0)
    with pytest.raises(ValueError):
        finite_difference_audit(step=0.0)
    with pytest.raises(ValueError):
        finite_difference_audit(trials=1, step=0.5)


def test_coarse_step_relaxes_thresholds():
    rep = finite_difference_audit(trials=3, step=1e-1)
    assert set(rep.thresholds.values()) == {1e-2}
    assert rep.ok


def test_relative_error():
    assert relative_error([0.0], [0.0]) == 0.0
    assert relative_error([1.0, 2.0], [1.0, 2.2]) == pytest.approx(0.2 / 2.2)


def test_backward_matches_per_pixel(rng):
    h, w = 7, 9
    img = rng.uniform(size=(h, w))
    flow = rng.uniform(-3, 3, (2, h, w))
    k = rng.normal(size=(16, h, w))
    o = rng.uniform(-1.5, 1.5, (32, h, w))
    up = rng.normal(size=(h, w))
    g = warp_backward(up, img, flow, k, o)
    d_img = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            a = (x, y, img, flow, k, o)
            np.testing.assert_allclose(g.d_kernels[:, y, x], grad_kernel(*a, upstream=up[y, x]), atol=1e-13)
            go = grad_offset(*a, upstream=up[y, x])
            np.testing.assert_allclose(g.d_offsets[:16, y, x], go[:, 0], atol=1e-13)
            np.testing.assert_allclose(g.d_offsets[16:, y, x], go[:, 1], atol=1e-13)
            np.testing.assert_allclose(g.d_flow[:, y, x], grad_flow(*a, upstream=up[y, x]), atol=1e-13)
            d_img += grad_image(*a, upstream=up[y, x])
    np.testing.assert_allclose(g.d_image, d_img, atol=1e-12)


def test_backward_frame_fd(rng):
    """Directional derivative of <upstream, warp(...)> along random directions."""
    C, h, w = 3, 8, 8
    img = rng.uniform(size=(C, h, w))
    flow = rng.uniform(-2, 2, (2, h, w))
    k = rng.normal(size=(16, h, w))
    o = rng.uniform(-1, 1, (32, h, w))
    up = rng.normal(size=(C, h, w))
    g = warp_backward(up, img, flow, k, o)

    def L(img=img, flow=flow, k=k, o=o):
        return float(np.sum(up * warp_frame(img, flow, k, o)))

    # exactly linear in image and kernels: a unit step is exact
    d = rng.normal(size=img.shape)
    assert (L(img=img + d) - L(img=img - d)) / 2 == pytest.approx(np.sum(g.d_image * d), rel=1e-10)
    d = rng.normal(size=k.shape)
    assert (L(k=k + d) - L(k=k - d)) / 2 == pytest.approx(np.sum(g.d_kernels * d), rel=1e-10)
    # offsets and flow are piecewise smooth; a tiny step rarely meets a kink
    eps = 1e-7
    d = rng.normal(size=o.shape)
    fd = (L(o=o + eps * d) - L(o=o - eps * d)) / (2 * eps)
    assert fd == pytest.approx(np.sum(g.d_offsets * d), rel=1e-6)
    d = rng.normal(size=flow.shape)
    fd = (L(flow=flow + eps * d) - L(flow=flow - eps * d)) / (2 * eps)
    assert fd == pytest.approx(np.sum(g.d_flow * d), rel=1e-6)


def test_backward_rgb_sums_channels(rng):
    h = w = 6
    img = rng.uniform(size=(3, h, w))
    flow = rng.uniform(-1, 1, (2, h, w))
    k = rng.normal(size=(16, h, w))
    o = rng.uniform(-1, 1, (32, h, w))
    up = rng.normal(size=(3, h, w))
    g = warp_backward(up, img, flow, k, o)
    parts = [warp_backward(up[c], img[c], flow, k, o) for c in range(3)]
    np.testing.assert_allclose(g.d_kernels, sum(p.d_kernels for p in parts), atol=1e-13)
    np.testing.assert_allclose(g.d_offsets, sum(p.d_offsets for p in parts), atol=1e-13)
    np.testing.assert_allclose(g.d_flow, sum(p.d_flow for p in parts), atol=1e-13)
    np.testing.assert_allclose(g.d_image, np.stack([p.d_image for p in parts]), atol=1e-13)


def test_backward_partition_independent(rng, monkeypatch):
    import dkwarp.warp as warp_mod

    h, w = 30, 10
    img = rng.uniform(size=(3, h, w))
    flow = rng.uniform(-2, 2, (2, h, w))
    k = rng.normal(size=(16, h, w))
    o = rng.uniform(-1, 1, (32, h, w))
    up = rng.normal(size=(3, h, w))
    monkeypatch.setattr(warp_mod, "CHUNK_ROWS", 8)
    a = warp_backward(up, img, flow, k, o, workers=1)
    b = warp_backward(up, img, flow, k, o, workers=4)
    for name in ("d_offsets", "d_kernels", "d_image", "d_flow"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
