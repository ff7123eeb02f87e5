"""Flow projection onto the intermediate frame, hole filling, synthetic flows."""

from dataclasses import dataclass

import numpy as np

from .tensor import as_fieldmap

# Intermediate frame sits halfway between the two references.
TIME = 0.5


@dataclass(frozen=True)
class ProjectionReport:
    hole_count: int
    collision_count: int


def round_half_away(v):
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def _scatter(flow):
    """Project one reference-anchored flow onto frame t.

    Every source pixel ``y`` sends ``-TIME * v`` to the cell nearest
    ``y + TIME * v``.  Returns the averaged field, the count map and the
    number of cells with two or more candidates.
    """
    _, h, w = flow.shape
    ys, xs = np.mgrid[0:h, 0:w]
    tx = round_half_away(xs + TIME * flow[0])
    ty = round_half_away(ys + TIME * flow[1])
    inside = (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
    cell = (ty[inside] * w + tx[inside]).astype(np.int64)
    counts = np.bincount(cell, minlength=h * w).reshape(h, w)
    out = np.zeros_like(flow)
    for c in range(2):
        sums = np.bincount(cell, weights=-TIME * flow[c][inside], minlength=h * w)
        out[c] = sums.reshape(h, w)
    hit = counts > 0
    out[:, hit] /= counts[hit]
    return out, counts, int(np.count_nonzero(counts >= 2))


def fill_holes(flow, hole_mask):
    """Fill holes by repeated 8-neighbour averaging, from the hole borders inward.

    Each pass fills every hole that touches at least one known cell, using
    only values known before the pass.  A field with no known cells becomes
    zero flow.
    """
    flow = np.array(flow, dtype=np.float64)
    holes = np.array(hole_mask, dtype=bool)
    if holes.shape != flow.shape[1:]:
        raise ValueError(f"hole mask shape {holes.shape} does not match flow {flow.shape[1:]}")
    if holes.all():
        return np.zeros_like(flow)
    h, w = holes.shape
    while holes.any():
        known = np.pad(~holes, 1).astype(np.float64)
        vals = np.pad(np.where(holes, 0.0, flow), ((0, 0), (1, 1), (1, 1)))
        count = np.zeros((h, w))
        total = np.zeros_like(flow)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                count += known[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
                total += vals[:, 1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        ready = holes & (count > 0)
        flow[:, ready] = total[:, ready] / count[ready]
        holes &= ~ready
    return flow


def project_flow(f_prev_to_next, f_next_to_prev):
    """Turn the bidirectional reference flows into flows anchored at frame t.

    Returns ``(f_t_to_prev, f_t_to_next, report)``; the report counts holes
    (before filling) and collision cells over both outputs.
    """
    fwd = as_fieldmap(f_prev_to_next, channels=2, name="f_prev_to_next")
    bwd = as_fieldmap(f_next_to_prev, channels=2, name="f_next_to_prev")
    if fwd.shape != bwd.shape:
        raise ValueError(f"flow dimension mismatch: {fwd.shape} vs {bwd.shape}")
    to_prev, n_prev, coll_prev = _scatter(fwd)
    to_next, n_next, coll_next = _scatter(bwd)
    holes_prev = n_prev == 0
    holes_next = n_next == 0
    report = ProjectionReport(
        hole_count=int(holes_prev.sum() + holes_next.sum()),
        collision_count=coll_prev + coll_next,
    )
    return fill_holes(to_prev, holes_prev), fill_holes(to_next, holes_next), report


def translation_flow(dx, dy, height, width):
    out = np.empty((2, height, width))
    out[0] = dx
    out[1] = dy
    return out


def rotation_flow(center, radians, height, width):
    """Displacement carrying each pixel to its position rotated about ``center``."""
    cx, cy = center
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    c, s = np.cos(radians), np.sin(radians)
    ox, oy = xs - cx, ys - cy
    # written as displacement so a zero angle yields exactly zero flow
    return np.stack([(c - 1.0) * ox - s * oy, s * ox + (c - 1.0) * oy])


def synthetic_flow(kind, height, width, **params):
    """``kind`` is ``"translation"`` (dx, dy) or ``"rotation"`` (center, radians)."""
    if height < 1 or width < 1:
        raise ValueError("flow dimensions must be positive")
    if kind == "translation":
        out = translation_flow(params.get("dx", 0.0), params.get("dy", 0.0), height, width)
    elif kind == "rotation":
        center = params.get("center", ((width - 1) / 2, (height - 1) / 2))
        out = rotation_flow(center, params.get("radians", 0.0), height, width)
    else:
        raise ValueError(f"unknown synthetic flow kind {kind!r}")
    if not np.all(np.isfinite(out)):
        raise ValueError("synthetic flow parameters must be finite")
    return out
