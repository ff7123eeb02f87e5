"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` or
``python3 tests/test_acceptance.py``.
"""

import sys
import time

import numpy as np
import pytest

from dkwarp.blend import blend
from dkwarp.demo import DemoConfig, run_overfit, synthetic_triple
from dkwarp.flow import project_flow, synthetic_flow
from dkwarp.grads import finite_difference_audit
from dkwarp.losses import LossConfig, loss_floor, psnr, ssim, total_loss
from dkwarp.warp import identity_kernels, quadrant_weights, warp_frame, zero_offsets

import oracles


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return emit


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


# --- numeric reports shared by criterion 9 ---------------------------------------


def oracle_report(instances=50, size=32, seed=2024):
    """Max |warp_frame - literal loop| per instance, as a tuple of floats."""
    rng = np.random.default_rng(seed)
    errs = []
    for i in range(instances):
        img = rng.uniform(size=(size, size))
        flow = rng.uniform(-4, 4, (2, size, size))
        if i % 5 == 0:
            flow = np.round(flow)  # integer flows put theta exactly on 0
        kernels = rng.normal(size=(16, size, size))
        offsets = rng.uniform(-1.5, 1.5, (32, size, size))
        if i % 7 == 0:
            offsets = np.round(offsets * 4) / 4  # exact ties with theta
            flow = np.round(flow * 4) / 4
        out = warp_frame(img, flow, kernels, offsets)
        ref = np.array(oracles.literal_frame(img, flow, kernels, offsets))
        errs.append(float(np.max(np.abs(out - ref))))
    return tuple(errs)


def audit_report():
    return finite_difference_audit(trials=100, step=1e-5, seed=0, exclusion=1e-2)


def overfit_report():
    frames, flows = synthetic_triple("translation", size=64, dx=3.7, dy=-2.2)
    res = run_overfit(frames, flows, DemoConfig())
    return res


# --- criteria ----------------------------------------------------------------------


def test_criterion_1_partition_of_unity(report):
    def run():
        rng = np.random.default_rng(1)
        worst = 0.0
        for tx, ty in rng.uniform(0.0, 1.0, (10_000, 2)):
            worst = max(worst, abs(sum(quadrant_weights(tx, ty)) - 1.0))
        return worst

    worst, dt = timed(run)
    report(1, worst < 1e-12 and dt < 1.0, f"max |sum w - 1| = {worst:.3e}, {dt:.3f} s")


def test_criterion_2_identity_warp(report):
    def run():
        rng = np.random.default_rng(2)
        img = rng.uniform(size=(3, 64, 64))
        k, o = identity_kernels(64, 64), zero_offsets(64, 64)
        worst = float(np.max(np.abs(warp_frame(img, np.zeros((2, 64, 64)), k, o) - img)))
        # a non-zero integer flow copies the clamped, shifted frame
        dx, dy = 3, -2
        flow = np.empty((2, 64, 64))
        flow[0], flow[1] = dx, dy
        ys, xs = np.mgrid[0:64, 0:64]
        shifted = img[:, np.clip(ys + dy, 0, 63), np.clip(xs + dx, 0, 63)]
        return max(worst, float(np.max(np.abs(warp_frame(img, flow, k, o) - shifted))))

    worst, dt = timed(run)
    report(2, worst < 1e-12 and dt < 1.0, f"max abs diff = {worst:.3e}, {dt:.3f} s")


def test_criterion_3_oracle_equivalence(report):
    errs, dt = timed(oracle_report)
    worst = max(errs)
    report(3, worst < 1e-12 and dt < 10.0, f"50 instances, max abs diff = {worst:.3e}, {dt:.2f} s")


def test_criterion_4_gradient_audit(report):
    rep, dt = timed(audit_report)
    limits = {"offsets": 1e-5, "flow": 1e-5, "kernels": 1e-8, "image": 1e-8}
    ok = all(rep.max_error[f] < lim for f, lim in limits.items()) and dt < 60.0
    detail = ", ".join(f"{f} {rep.max_error[f]:.2e}" for f in limits)
    report(4, ok, f"{detail}, {dt:.2f} s")


def test_criterion_5_projection(report):
    fwd = synthetic_flow("translation", 16, 16, dx=2.0, dy=0.0)
    bwd = synthetic_flow("translation", 16, 16, dx=-2.0, dy=0.0)
    to_prev, to_next, rep = project_flow(fwd, bwd)
    interior = slice(1, 15)
    exact = np.all(to_prev[:, :, interior] == np.array([-1.0, 0.0])[:, None, None]) and np.all(
        to_next[:, :, interior] == np.array([1.0, 0.0])[:, None, None]
    )
    # no cell is left unfilled: every output value is finite and uniform
    filled = np.all(to_prev == np.array([-1.0, 0.0])[:, None, None]) and np.all(
        to_next == np.array([1.0, 0.0])[:, None, None]
    )
    z = np.zeros((2, 16, 16))
    zp, zn, zrep = project_flow(z, z)
    zero = not zp.any() and not zn.any() and zrep.hole_count == 0
    report(
        5,
        bool(exact and filled and zero),
        f"interior exact={bool(exact)}, holes after fill=0 ({rep.hole_count} edge cells filled), zero flow -> zero={zero}",
    )


def test_criterion_6_blend_and_loss(report):
    rng = np.random.default_rng(6)
    a, b, gt = rng.uniform(size=(3, 3, 10, 10))
    ones, zeros = np.ones((10, 10)), np.zeros((10, 10))
    selection = np.array_equal(blend(a, b, ones), a) and np.array_equal(blend(a, b, zeros), b)

    cfg = LossConfig()
    floor = loss_floor(gt.size, cfg)
    at_floor = total_loss(gt, gt, gt, gt, cfg)[0]
    floor_ok = abs(at_floor - floor) <= 1e-12 * floor
    bumped = gt.copy()
    bumped[0, 0, 0] += 1e-3
    above_ok = total_loss(bumped, gt, gt, gt, cfg)[0] > floor and total_loss(gt, gt, bumped, gt, cfg)[0] > floor

    loss, d_prev, d_next, d_enh = total_loss(a, b, gt * 0.5 + a * 0.5, gt, cfg)
    worst = 0.0
    eps = 1e-6
    args = [a, b, gt * 0.5 + a * 0.5]
    for slot, grad in enumerate((d_prev, d_next, d_enh)):
        direction = rng.normal(size=a.shape)
        plus = list(args)
        minus = list(args)
        plus[slot] = args[slot] + eps * direction
        minus[slot] = args[slot] - eps * direction
        numeric = (total_loss(*plus, gt, cfg)[0] - total_loss(*minus, gt, cfg)[0]) / (2 * eps)
        analytic = float(np.sum(grad * direction))
        worst = max(worst, abs(numeric - analytic) / max(abs(analytic), abs(numeric)))
    ok = selection and floor_ok and above_ok and worst < 1e-6
    report(6, ok, f"selection={selection}, floor={floor_ok and above_ok}, grad rel err = {worst:.2e}")


def test_criterion_7_metrics(report):
    rng = np.random.default_rng(7)
    img = rng.uniform(0.1, 0.9, (3, 32, 32))
    same_ssim, same_psnr = ssim(img, img), psnr(img, img)
    err = abs(psnr(img, img + 0.1) - 20.0)
    ok = same_ssim == 1.0 and same_psnr == 99.0 and err < 1e-6
    report(7, ok, f"SSIM(a,a)={same_ssim}, PSNR(a,a)={same_psnr}, |PSNR(0.1) - 20| = {err:.2e}")


@pytest.fixture(scope="module")
def overfit_run():
    return timed(overfit_report)


def test_criterion_8_overfit(report, overfit_run):
    res, dt = overfit_run
    ratio = res.losses[-1] / res.initial_loss
    gain = res.final_psnr - res.initial_psnr
    frames, flows = synthetic_triple("translation", size=64, dx=3.7, dy=-2.2)
    control = run_overfit(frames, flows, DemoConfig(zero_grad=True))
    flat = all(l == control.initial_loss for l in control.losses)
    ok = ratio <= 0.10 and gain >= 10.0 and flat and dt < 300.0
    report(
        8,
        ok,
        f"loss ratio {ratio:.4f}, PSNR {res.initial_psnr:.2f} -> {res.final_psnr:.2f} dB, "
        f"zero-grad flat={flat}, {dt:.1f} s",
    )


def test_criterion_9_determinism(report, overfit_run):
    same_oracle = oracle_report() == oracle_report()
    a, b = audit_report(), audit_report()
    same_audit = a.max_error == b.max_error and a.lines() == b.lines()
    first, _ = overfit_run
    second = overfit_report()
    same_fit = (
        first.losses == second.losses
        and first.psnrs == second.psnrs
        and np.array_equal(first.output, second.output)
    )
    report(9, same_oracle and same_audit and same_fit, f"oracle={same_oracle}, audit={same_audit}, overfit={same_fit}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
