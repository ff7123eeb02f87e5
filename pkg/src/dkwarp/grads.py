"""Backward pass of the deformable warp and a finite-difference audit.

Quadrant classification and ``floor(f)`` are held fixed when
differentiating; only the smooth factors (bilinear sampling, quadrant
coefficients, kernel coefficients) carry gradient.  Coordinates that were
clamped to the border contribute nothing along the clamped axis.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import bilinear_corners
from .warp import (
    GEOMETRY,
    _Layout,
    check_inputs,
    classify_quadrant,
    fractional_parts,
    map_chunks,
    quadrant_weights,
    QUADRANT_INDEX,
    synthesize_pixel,
)

FAMILIES = ("offsets", "kernels", "image", "flow")
THRESHOLDS = {"offsets": 1e-5, "kernels": 1e-8, "image": 1e-8, "flow": 1e-5}
COARSE_STEP = 1e-3
COARSE_THRESHOLD = 1e-2


@dataclass
class WarpGradients:
    d_offsets: np.ndarray
    d_kernels: np.ndarray
    d_image: np.ndarray
    d_flow: np.ndarray


def _corners(plane, qx, qy):
    """Corner values ``(TL, TR, BL, BR)``, indices and fractions at one position."""
    h, w = plane.shape
    x0, x1, y0, y1, tx, ty = (np.asarray(v).item() for v in bilinear_corners(h, w, qx, qy))
    vals = (plane[y0, x0], plane[y0, x1], plane[y1, x0], plane[y1, x1])
    return vals, (x0, x1, y0, y1), tx, ty


def _points(x, y, reference, flow, kernels, offsets, geometry):
    """Yield per-reference-point quantities for target ``(x, y)``."""
    tx, ty, (bx, by) = fractional_parts(flow[0, y, x], flow[1, y, x], x, y)
    wb = quadrant_weights(tx, ty)
    R = geometry.R
    for r, (px, py) in enumerate(geometry.relative_coords):
        dpx, dpy = offsets[r, y, x], offsets[R + r, y, x]
        quad = classify_quadrant((px, py), (dpx, dpy), tx, ty)
        yield r, quad, wb[QUADRANT_INDEX[quad]], kernels[r, y, x], (bx + px + dpx, by + py + dpy), (tx, ty)


def grad_offset(x, y, reference, flow, kernels, offsets, upstream=1.0, geometry=GEOMETRY):
    """``(R, 2)`` array of (d/d dx, d/d dy) per reference point at target ``(x, y)``."""
    out = np.zeros((geometry.R, 2))
    for r, _, wb, wk, (qx, qy), _ in _points(x, y, reference, flow, kernels, offsets, geometry):
        (i_tl, i_tr, i_bl, i_br), _, lu, lv = _corners(reference, qx, qy)
        # -(1-lv) I_TL + (1-lv) I_TR - lv I_BL + lv I_BR, grouped so a flat patch gives exactly 0
        du = (1 - lv) * (i_tr - i_tl) + lv * (i_br - i_bl)
        dv = (1 - lu) * (i_bl - i_tl) + lu * (i_br - i_tr)
        out[r] = upstream * wb * wk * du, upstream * wb * wk * dv
    return out


def grad_kernel(x, y, reference, flow, kernels, offsets, upstream=1.0, geometry=GEOMETRY):
    out = np.zeros(geometry.R)
    for r, _, wb, _, (qx, qy), _ in _points(x, y, reference, flow, kernels, offsets, geometry):
        (i_tl, i_tr, i_bl, i_br), _, tx, ty = _corners(reference, qx, qy)
        val = (1 - tx) * (1 - ty) * i_tl + tx * (1 - ty) * i_tr + (1 - tx) * ty * i_bl + tx * ty * i_br
        out[r] = upstream * wb * val
    return out


def grad_image(x, y, reference, flow, kernels, offsets, upstream=1.0, geometry=GEOMETRY):
    """Dense ``(H, W)`` map holding this target's contributions to d_image."""
    out = np.zeros_like(reference)
    for _, _, wb, wk, (qx, qy), _ in _points(x, y, reference, flow, kernels, offsets, geometry):
        _, (x0, x1, y0, y1), tx, ty = _corners(reference, qx, qy)
        g = upstream * wb * wk
        out[y0, x0] += g * (1 - tx) * (1 - ty)
        out[y0, x1] += g * tx * (1 - ty)
        out[y1, x0] += g * (1 - tx) * ty
        out[y1, x1] += g * tx * ty
    return out


def grad_flow(x, y, reference, flow, kernels, offsets, upstream=1.0, geometry=GEOMETRY):
    """``(dfx, dfy)`` through the fractional part of the flow only."""
    dfx = dfy = 0.0
    for _, quad, _, wk, (qx, qy), (tx, ty) in _points(x, y, reference, flow, kernels, offsets, geometry):
        (i_tl, i_tr, i_bl, i_br), _, sx, sy = _corners(reference, qx, qy)
        val = (1 - sx) * (1 - sy) * i_tl + sx * (1 - sy) * i_tr + (1 - sx) * sy * i_bl + sx * sy * i_br
        right = quad in ("TR", "BR")
        below = quad in ("BL", "BR")
        dwx = (1.0 if right else -1.0) * (ty if below else 1 - ty)
        dwy = (1.0 if below else -1.0) * (tx if right else 1 - tx)
        dfx += dwx * wk * val
        dfy += dwy * wk * val
    return upstream * dfx, upstream * dfy


def warp_backward(upstream, reference, flow, kernels, offsets, geometry=GEOMETRY, workers=1):
    """Pull ``upstream`` (shaped like the warp output) back to every warp input.

    Kernels, offsets and flow are shared across colour channels, so their
    gradients sum over channels.
    """
    squeeze = np.ndim(reference) == 2
    reference, flow, kernels, offsets = check_inputs(reference, flow, kernels, offsets, geometry)
    upstream = np.asarray(upstream, dtype=np.float64)
    if squeeze:
        upstream = upstream[None]
    if upstream.shape != reference.shape:
        raise ValueError(f"upstream {upstream.shape} does not match output {reference.shape}")
    C, H, W = reference.shape
    R = geometry.R

    def band(lo, hi):
        lay = _Layout(flow, offsets, geometry, lo, hi)
        g = upstream[:, lo:hi]
        d_k = np.zeros((R, hi - lo, W))
        d_o = np.zeros((2 * R, hi - lo, W))
        d_f = np.zeros((2, hi - lo, W))
        idx, wts = [], []
        tx, ty = lay.theta_x, lay.theta_y
        for r in range(R):
            qx, qy, right, below, wb = lay.point(r)
            x0, x1, y0, y1, sx, sy = bilinear_corners(H, W, qx, qy)
            i_tl = reference[:, y0, x0]
            i_tr = reference[:, y0, x1]
            i_bl = reference[:, y1, x0]
            i_br = reference[:, y1, x1]
            val = (1 - sx) * (1 - sy) * i_tl + sx * (1 - sy) * i_tr + (1 - sx) * sy * i_bl + sx * sy * i_br
            gv = (g * val).sum(axis=0)
            wk = kernels[r, lo:hi]
            d_k[r] = wb * gv
            dwx = np.where(right, 1.0, -1.0) * np.where(below, ty, 1 - ty)
            dwy = np.where(below, 1.0, -1.0) * np.where(right, tx, 1 - tx)
            d_f[0] += dwx * wk * gv
            d_f[1] += dwy * wk * gv
            du = (1 - sy) * (i_tr - i_tl) + sy * (i_br - i_bl)
            dv = (1 - sx) * (i_bl - i_tl) + sx * (i_br - i_tr)
            coef = wb * wk
            d_o[r] = coef * (g * du).sum(axis=0)
            d_o[R + r] = coef * (g * dv).sum(axis=0)
            gc = coef * g
            for yy, xx, bw in (
                (y0, x0, (1 - sx) * (1 - sy)),
                (y0, x1, sx * (1 - sy)),
                (y1, x0, (1 - sx) * sy),
                (y1, x1, sx * sy),
            ):
                idx.append((yy * W + xx).ravel())
                wts.append((gc * bw).reshape(C, -1))
        idx = np.concatenate(idx)
        wts = np.concatenate(wts, axis=1)
        d_img = np.stack([np.bincount(idx, weights=wts[c], minlength=H * W) for c in range(C)])
        return d_k, d_o, d_f, d_img

    parts = map_chunks(band, H, workers)
    d_image = np.zeros((C, H * W))
    for part in parts:  # fixed chunk order keeps the reduction reproducible
        d_image += part[3]
    grads = WarpGradients(
        d_offsets=np.concatenate([p[1] for p in parts], axis=1),
        d_kernels=np.concatenate([p[0] for p in parts], axis=1),
        d_image=d_image.reshape(C, H, W),
        d_flow=np.concatenate([p[2] for p in parts], axis=1),
    )
    if squeeze:
        grads.d_image = grads.d_image[0]
    return grads


# --- finite-difference audit -------------------------------------------------


@dataclass
class Instance:
    reference: np.ndarray
    flow: np.ndarray
    kernels: np.ndarray
    offsets: np.ndarray
    x: int
    y: int

    def value(self):
        return synthesize_pixel(self.x, self.y, self.reference, self.flow, self.kernels, self.offsets)


def _away_from(rng, low, high, bad, margin):
    """Uniform draw on [low, high) keeping ``margin`` from every point in ``bad``."""
    while True:
        v = rng.uniform(low, high)
        if all(abs(v - b) >= margin for b in bad(v)):
            return v


def random_instance(rng, exclusion=1e-2, size=8, geometry=GEOMETRY):
    """Random warp instance whose target pixel sits away from every kink.

    Kinks are: the flow crossing an integer, a reference point changing
    quadrant, and a sample position crossing an integer grid line.
    """
    h = w = size
    reference = rng.uniform(0.0, 1.0, (h, w))
    flow = rng.uniform(-2.0, 2.0, (2, h, w))
    kernels = rng.normal(0.0, 1.0, (geometry.R, h, w))
    offsets = rng.uniform(-1.0, 1.0, (2 * geometry.R, h, w))
    x, y = int(rng.integers(0, w)), int(rng.integers(0, h))
    theta = []
    for axis in range(2):
        fl = float(rng.integers(-2, 2))
        t = rng.uniform(exclusion, 1.0 - exclusion)
        flow[axis, y, x] = fl + t
        theta.append(flow[axis, y, x] - fl)
    for r, p in enumerate(geometry.relative_coords):
        for axis in range(2):
            # offset d: p + d away from theta, frac(d) away from 0 and 1
            def bad(d, p=p[axis], t=theta[axis]):
                return (t - p, np.floor(d), np.floor(d) + 1.0)

            offsets[axis * geometry.R + r, y, x] = _away_from(rng, -1.0, 1.0, bad, exclusion)
    return Instance(reference, flow, kernels, offsets, x, y)


def linear_image_instance(rng, exclusion=1e-2, size=8, slope=0.3, geometry=GEOMETRY):
    """Random instance whose reference image is ``slope * x`` plus a row ramp."""
    inst = random_instance(rng, exclusion, size, geometry)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    inst.reference = slope * xs + 0.1 * ys
    return inst


def _central(f, arr, idx, step):
    old = arr[idx]
    arr[idx] = old + step
    fp = f()
    arr[idx] = old - step
    fm = f()
    arr[idx] = old
    return (fp - fm) / (2.0 * step)


def relative_error(analytic, numeric):
    """Norm-wise relative error ``|a - n|_inf / max(|a|_inf, |n|_inf)``; 0 if both vanish."""
    analytic = np.ravel(analytic)
    numeric = np.ravel(numeric)
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / scale)


def audit_instance(inst, step=1e-5, geometry=GEOMETRY):
    """Relative error between analytic and central-difference gradients, per family."""
    args = (inst.x, inst.y, inst.reference, inst.flow, inst.kernels, inst.offsets)
    f = inst.value
    R = geometry.R
    x, y = inst.x, inst.y
    analytic = {
        "offsets": grad_offset(*args).T.ravel(),
        "kernels": grad_kernel(*args),
        "image": grad_image(*args).ravel(),
        "flow": np.array(grad_flow(*args)),
    }
    numeric = {
        "offsets": np.array([_central(f, inst.offsets, (c, y, x), step) for c in range(2 * R)]),
        "kernels": np.array([_central(f, inst.kernels, (c, y, x), step) for c in range(R)]),
        "image": np.array(
            [_central(f, inst.reference, idx, step) for idx in np.ndindex(inst.reference.shape)]
        ),
        "flow": np.array([_central(f, inst.flow, (c, y, x), step) for c in range(2)]),
    }
    return {k: relative_error(analytic[k], numeric[k]) for k in FAMILIES}


@dataclass
class AuditReport:
    trials: int
    step: float
    max_error: dict
    thresholds: dict

    def passed(self, family):
        return self.max_error[family] < self.thresholds[family]

    @property
    def ok(self):
        return all(self.passed(k) for k in FAMILIES)

    def lines(self):
        return [
            f"{k:<8} trials={self.trials} max_rel_err={self.max_error[k]:.3e} "
            f"threshold={self.thresholds[k]:.0e} {'PASS' if self.passed(k) else 'FAIL'}"
            for k in FAMILIES
        ]


def finite_difference_audit(trials=100, step=1e-5, seed=0, generator=random_instance, exclusion=1e-2):
    """Worst relative FD error per input family over ``trials`` seeded instances.

    The exclusion zone is widened to ``2 * step`` for coarse steps so that a
    central difference never straddles a kink.  Steps above ``COARSE_STEP``
    relax every threshold to ``COARSE_THRESHOLD``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not step > 0:
        raise ValueError("step must be > 0")
    rng = np.random.default_rng(seed)
    exclusion = max(exclusion, 2.0 * step)
    if exclusion >= 0.25:
        raise ValueError(f"step {step} too large: no kink-free instances exist")
    worst = dict.fromkeys(FAMILIES, 0.0)
    for _ in range(trials):
        errs = audit_instance(generator(rng, exclusion), step)
        for k in FAMILIES:
            worst[k] = max(worst[k], errs[k])
    thresholds = dict(THRESHOLDS)
    if step > COARSE_STEP:
        thresholds = dict.fromkeys(FAMILIES, COARSE_THRESHOLD)
    return AuditReport(trials, step, worst, thresholds)
