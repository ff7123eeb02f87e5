"""Occlusion-weighted blending of the two warped frames."""

import numpy as np


def _check(warped_prev, warped_next, occ):
    warped_prev = np.asarray(warped_prev, dtype=np.float64)
    warped_next = np.asarray(warped_next, dtype=np.float64)
    occ = np.asarray(occ, dtype=np.float64)
    if warped_prev.shape != warped_next.shape:
        raise ValueError(f"warped frames differ in shape: {warped_prev.shape} vs {warped_next.shape}")
    if occ.ndim == 3:
        if occ.shape[0] != 1:
            raise ValueError(f"occlusion map must have one channel, got {occ.shape[0]}")
        occ = occ[0]
    if occ.shape != warped_prev.shape[-2:]:
        raise ValueError(f"occlusion map {occ.shape} does not match frames {warped_prev.shape[-2:]}")
    if not np.all((occ >= 0.0) & (occ <= 1.0)):
        raise ValueError("occlusion map values must lie in [0, 1]")
    return warped_prev, warped_next, occ


def blend(warped_prev, warped_next, occ):
    """``occ * prev + (1 - occ) * next``; ``occ`` broadcasts over colour channels."""
    warped_prev, warped_next, occ = _check(warped_prev, warped_next, occ)
    return occ * warped_prev + (1.0 - occ) * warped_next


def blend_grads(upstream, warped_prev, warped_next, occ):
    """Returns ``(d_prev, d_next, d_occ)``; ``d_occ`` is summed over colour channels."""
    warped_prev, warped_next, occ = _check(warped_prev, warped_next, occ)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != warped_prev.shape:
        raise ValueError(f"upstream {upstream.shape} does not match frames {warped_prev.shape}")
    d_occ = upstream * (warped_prev - warped_next)
    if d_occ.ndim == 3:
        d_occ = d_occ.sum(axis=0)
    return upstream * occ, upstream * (1.0 - occ), d_occ


def clamp_occlusion(occ):
    return np.clip(occ, 0.0, 1.0)
