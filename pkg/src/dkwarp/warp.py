"""Deformable kernel-region warp (forward pass).

Each target pixel ``A = (x, y)`` is located on the reference frame at
``A' = A + f(A)``.  A 4x4 region of reference points ``p_r`` is laid out
around the integer corner ``A + floor(f(A))``, every point is shifted by its
own learned offset, sampled bilinearly, and weighted by a per-point kernel
coefficient times a quadrant bilinear coefficient derived from the
fractional part of ``A'``::

    I_hat(A) = sum_r  wb_r * wk_r * I_B(A + floor(f(A)) + p_r + dp_r)

Quadrants are decided by comparing ``p_r + dp_r`` with the fractional part
``theta`` on each axis; ties (``==``) fall left/top.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math

import numpy as np

from .tensor import as_fieldmap, bilinear_sample, sample

TL, TR, BL, BR = "TL", "TR", "BL", "BR"

# Rows per work unit.  Fixed so that results do not depend on worker count.
CHUNK_ROWS = 64


@dataclass(frozen=True)
class KernelGeometry:
    r: int = 4
    relative_coords: tuple = field(init=False)

    def __post_init__(self):
        if self.r not in (2, 4, 6):
            raise ValueError(f"kernel side must be one of 2, 4, 6; got {self.r}")
        lo = 1 - self.r // 2
        coords = tuple((px, py) for px in range(lo, lo + self.r) for py in range(lo, lo + self.r))
        object.__setattr__(self, "relative_coords", coords)

    @property
    def R(self):
        return self.r * self.r

    def index(self, px, py):
        """Channel holding reference point ``(px, py)`` (x-major order)."""
        lo = 1 - self.r // 2
        return (px - lo) * self.r + (py - lo)


GEOMETRY = KernelGeometry(4)


def fractional_parts(fx, fy, x=0, y=0):
    """Split the displaced position ``(x + fx, y + fy)`` into ``(theta_x, theta_y, (bx, by))``.

    ``bx = x + floor(fx)`` and ``theta_x = fx - floor(fx)`` lies in [0, 1).
    """
    if not (math.isfinite(fx) and math.isfinite(fy)):
        raise ValueError(f"non-finite flow vector ({fx}, {fy})")
    out = []
    for f in (fx, fy):
        fl = math.floor(f)
        t = f - fl
        if t >= 1.0:  # f slightly below an integer rounds the fraction up to 1
            fl, t = fl + 1, 0.0
        out.append((t, fl))
    (tx, flx), (ty, fly) = out
    return tx, ty, (x + flx, y + fly)


def quadrant_weights(theta_x, theta_y):
    """Bilinear coefficients ``(w_TL, w_TR, w_BL, w_BR)`` for fractional position theta."""
    if not (0.0 <= theta_x < 1.0 and 0.0 <= theta_y < 1.0):
        raise ValueError(f"theta must lie in [0, 1)^2, got ({theta_x}, {theta_y})")
    return (
        (1 - theta_x) * (1 - theta_y),
        theta_x * (1 - theta_y),
        (1 - theta_x) * theta_y,
        theta_x * theta_y,
    )


def classify_quadrant(p, dp, theta_x, theta_y):
    right = p[0] + dp[0] > theta_x
    below = p[1] + dp[1] > theta_y
    if below:
        return BR if right else BL
    return TR if right else TL


QUADRANT_INDEX = {TL: 0, TR: 1, BL: 2, BR: 3}


def check_inputs(reference, flow, kernels, offsets, geometry=GEOMETRY):
    """Validate and convert warp inputs; returns ``(reference, flow, kernels, offsets)``.

    ``reference`` may be ``(H, W)`` or ``(C, H, W)``; it is returned with
    the channel axis present.
    """
    reference = as_fieldmap(reference, name="reference")
    flow = as_fieldmap(flow, channels=2, name="flow")
    kernels = as_fieldmap(kernels, channels=geometry.R, name="kernels")
    offsets = as_fieldmap(offsets, channels=2 * geometry.R, name="offsets")
    hw = reference.shape[1:]
    for name, arr in (("flow", flow), ("kernels", kernels), ("offsets", offsets)):
        if arr.shape[1:] != hw:
            raise ValueError(f"{name} is {arr.shape[1:]} but reference is {hw}")
    return reference, flow, kernels, offsets


def synthesize_pixel(x, y, reference, flow, kernels, offsets, geometry=GEOMETRY):
    """Synthesize the value at integer target ``(x, y)`` from a single plane."""
    h, w = reference.shape
    if not (0 <= x < w and 0 <= y < h):
        raise ValueError(f"target ({x}, {y}) outside {w}x{h} frame")
    tx, ty, (bx, by) = fractional_parts(flow[0, y, x], flow[1, y, x], x, y)
    wb = quadrant_weights(tx, ty)
    R = geometry.R
    total = 0.0
    for r, (px, py) in enumerate(geometry.relative_coords):
        dpx, dpy = offsets[r, y, x], offsets[R + r, y, x]
        quad = classify_quadrant((px, py), (dpx, dpy), tx, ty)
        total += wb[QUADRANT_INDEX[quad]] * kernels[r, y, x] * bilinear_sample(
            reference, bx + px + dpx, by + py + dpy
        )
    return total


def split_flow(flow):
    """Per-pixel integer base offset and fractional parts of a flow field."""
    fl = np.floor(flow)
    theta = flow - fl
    wrap = theta >= 1.0
    fl[wrap] += 1.0
    theta[wrap] = 0.0
    return fl, theta


def row_chunks(height):
    return [(y0, min(y0 + CHUNK_ROWS, height)) for y0 in range(0, height, CHUNK_ROWS)]


def map_chunks(fn, height, workers=1):
    chunks = row_chunks(height)
    if workers <= 1 or len(chunks) == 1:
        return [fn(lo, hi) for lo, hi in chunks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda c: fn(*c), chunks))


class _Layout:
    """Per-reference-point sample positions and quadrant coefficients for a row band."""

    def __init__(self, flow, offsets, geometry, lo, hi):
        _, _, w = flow.shape
        ys, xs = np.mgrid[lo:hi, 0:w].astype(np.float64)
        fl, theta = split_flow(flow[:, lo:hi])
        self.theta_x, self.theta_y = theta
        self.base_x = xs + fl[0]
        self.base_y = ys + fl[1]
        self.geometry = geometry
        self.offsets = offsets[:, lo:hi]

    def point(self, r):
        """``(qx, qy, right, below, wb)`` for reference point ``r``."""
        px, py = self.geometry.relative_coords[r]
        dx = self.offsets[r]
        dy = self.offsets[self.geometry.R + r]
        right = px + dx > self.theta_x
        below = py + dy > self.theta_y
        wb = np.where(right, self.theta_x, 1 - self.theta_x) * np.where(
            below, self.theta_y, 1 - self.theta_y
        )
        return self.base_x + px + dx, self.base_y + py + dy, right, below, wb


def warp_frame(reference, flow, kernels, offsets, geometry=GEOMETRY, workers=1):
    """Warp every channel of ``reference`` to the target frame.

    Returns an array shaped like ``reference``.
    """
    squeeze = np.ndim(reference) == 2
    reference, flow, kernels, offsets = check_inputs(reference, flow, kernels, offsets, geometry)

    def band(lo, hi):
        lay = _Layout(flow, offsets, geometry, lo, hi)
        out = np.zeros((reference.shape[0], hi - lo, reference.shape[2]))
        for r in range(geometry.R):
            qx, qy, _, _, wb = lay.point(r)
            out += (wb * kernels[r, lo:hi]) * sample(reference, qx, qy)
        return out

    out = np.concatenate(map_chunks(band, reference.shape[1], workers), axis=1)
    return out[0] if squeeze else out


def identity_kernels(height, width, geometry=GEOMETRY):
    k = np.zeros((geometry.R, height, width))
    k[geometry.index(0, 0)] = 1.0
    return k


def zero_offsets(height, width, geometry=GEOMETRY):
    return np.zeros((2 * geometry.R, height, width))
