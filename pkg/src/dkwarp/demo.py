"""Desk-scale overfit: fit per-pixel kernels, offsets and occlusion by gradient descent.

The full differentiable chain is warp -> blend -> Charbonnier loss, with the
enhancement stage taken as identity (the blended frame is the output).
"""

from dataclasses import dataclass, field
import logging

import numpy as np

from .blend import blend, blend_grads
from .flow import rotation_flow, translation_flow
from .grads import warp_backward
from .losses import LossConfig, psnr, ssim, total_loss
from .tensor import sample
from .warp import GEOMETRY, identity_kernels, warp_frame, zero_offsets

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DemoConfig:
    iterations: int = 500
    step_size: float = 1e-3
    seed: int = 0
    log_every: int = 50
    max_halvings: int = 40
    zero_grad: bool = False
    workers: int = 1
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")


@dataclass
class TrainableMaps:
    kernels_prev: np.ndarray
    kernels_next: np.ndarray
    offsets_prev: np.ndarray
    offsets_next: np.ndarray
    occ_logits: np.ndarray

    NAMES = ("kernels_prev", "kernels_next", "offsets_prev", "offsets_next", "occ_logits")

    def arrays(self):
        return [getattr(self, n) for n in self.NAMES]

    def axpy(self, alpha, other):
        """``self + alpha * other`` as a new set of maps."""
        return TrainableMaps(*(a + alpha * b for a, b in zip(self.arrays(), other.arrays())))

    def zeros_like(self):
        return TrainableMaps(*(np.zeros_like(a) for a in self.arrays()))

    @property
    def occlusion(self):
        return 1.0 / (1.0 + np.exp(-self.occ_logits[0]))


def init_maps(height, width, seed=0, jitter=0.0, geometry=GEOMETRY):
    """Identity warp (one-hot kernels at the (0, 0) point, zero offsets), occlusion 0.5.

    ``jitter`` adds seeded Gaussian noise to every map; the default of zero
    gives the exact identity configuration.
    """
    if height < 1 or width < 1:
        raise ValueError("map dimensions must be positive")
    maps = TrainableMaps(
        identity_kernels(height, width, geometry),
        identity_kernels(height, width, geometry),
        zero_offsets(height, width, geometry),
        zero_offsets(height, width, geometry),
        np.zeros((1, height, width)),
    )
    if jitter:
        rng = np.random.default_rng(seed)
        maps = maps.axpy(jitter, TrainableMaps(*(rng.normal(size=a.shape) for a in maps.arrays())))
    return maps


def forward(maps, i_prev, i_next, f_prev, f_next, workers=1):
    """Returns ``(F_prev, F_next, occlusion, blended)``."""
    w_prev = warp_frame(i_prev, f_prev, maps.kernels_prev, maps.offsets_prev, workers=workers)
    w_next = warp_frame(i_next, f_next, maps.kernels_next, maps.offsets_next, workers=workers)
    occ = maps.occlusion
    return w_prev, w_next, occ, blend(w_prev, w_next, occ)


def loss_and_grad(maps, frames, flows, cfg, need_grad=True):
    """Total loss, its gradient w.r.t. every trainable map, and the blended frame."""
    i_prev, i_gt, i_next = frames
    f_prev, f_next = flows
    w_prev, w_next, occ, out = forward(maps, i_prev, i_next, f_prev, f_next, cfg.workers)
    loss, d_prev, d_next, d_out = total_loss(w_prev, w_next, out, i_gt, cfg.loss)
    if not need_grad:
        return loss, None, out
    b_prev, b_next, b_occ = blend_grads(d_out, w_prev, w_next, occ)
    g_prev = warp_backward(d_prev + b_prev, i_prev, f_prev, maps.kernels_prev, maps.offsets_prev, workers=cfg.workers)
    g_next = warp_backward(d_next + b_next, i_next, f_next, maps.kernels_next, maps.offsets_next, workers=cfg.workers)
    grad = TrainableMaps(
        g_prev.d_kernels,
        g_next.d_kernels,
        g_prev.d_offsets,
        g_next.d_offsets,
        (b_occ * occ * (1.0 - occ))[None],
    )
    return loss, grad, out


@dataclass
class DemoResult:
    maps: TrainableMaps
    losses: list
    psnrs: list
    initial_loss: float
    initial_psnr: float
    final_psnr: float
    final_ssim: float
    output: np.ndarray

    def trace_lines(self):
        return [f"{i}\t{l:.10e}\t{p:.6f}" for i, (l, p) in enumerate(zip(self.losses, self.psnrs), 1)]


class DivergenceError(RuntimeError):
    pass


def run_overfit(frames, flows, cfg=DemoConfig(), maps=None):
    """Backtracking gradient descent on the total loss.

    A step that would raise the loss is rejected and the step size halved;
    the trace therefore never increases.  ``losses[i]`` is the loss after
    iteration ``i + 1``.
    """
    i_prev, i_gt, i_next = (np.asarray(f, dtype=np.float64) for f in frames)
    frames = (i_prev, i_gt, i_next)
    if not (i_prev.shape == i_gt.shape == i_next.shape):
        raise ValueError("frame dimensions differ")
    h, w = i_prev.shape[-2:]
    if maps is None:
        maps = init_maps(h, w, cfg.seed)
    loss, grad, out = loss_and_grad(maps, frames, flows, cfg)
    initial_loss = loss
    initial_psnr = psnr(out, i_gt)
    step = cfg.step_size
    losses, psnrs = [], []
    for it in range(1, cfg.iterations + 1):
        if cfg.zero_grad:
            grad = maps.zeros_like()
        for _ in range(cfg.max_halvings):
            cand = maps.axpy(-step, grad)
            c_loss, _, c_out = loss_and_grad(cand, frames, flows, cfg, need_grad=False)
            if c_loss <= loss:
                maps, loss, out = cand, c_loss, c_out
                if not cfg.zero_grad:
                    _, grad, _ = loss_and_grad(maps, frames, flows, cfg)
                break
            step *= 0.5
        if not np.isfinite(loss) or loss > 10.0 * initial_loss:
            raise DivergenceError(f"loss {loss} at iteration {it} exceeds 10x initial {initial_loss}")
        losses.append(loss)
        psnrs.append(psnr(out, i_gt))
        if cfg.log_every and it % cfg.log_every == 0:
            log.info("iter %d loss %.6e psnr %.3f step %.3e", it, loss, psnrs[-1], step)
    return DemoResult(maps, losses, psnrs, initial_loss, initial_psnr, psnrs[-1], ssim(out, i_gt), out)


# --- synthetic data ------------------------------------------------------------


def pattern(height, width, seed=0, components=6):
    """Smooth random RGB pattern in [0, 1] built from low-frequency sinusoids."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    img = np.zeros((3, height, width))
    for c in range(3):
        for _ in range(components):
            period = rng.uniform(10.0, 32.0)
            angle = rng.uniform(0.0, np.pi)
            phase = rng.uniform(0.0, 2 * np.pi)
            img[c] += np.sin(2 * np.pi * (np.cos(angle) * xs + np.sin(angle) * ys) / period + phase)
    img -= img.min(axis=(1, 2), keepdims=True)
    img /= img.max(axis=(1, 2), keepdims=True)
    return img


def _resample(base, flow):
    _, h, w = base.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return sample(base, xs + flow[0], ys + flow[1])


def synthetic_triple(kind="translation", size=64, seed=0, dx=3.7, dy=-2.2, radians=0.1):
    """Frames ``(I_prev, I_gt, I_next)`` and exact flows ``(f_t_to_prev, f_t_to_next)``.

    The base pattern is frame t-1; the middle and last frames are bilinear
    resamplings of it at half and full motion.
    """
    base = pattern(size, size, seed)
    if kind == "translation":
        f_prev = translation_flow(-dx / 2, -dy / 2, size, size)
        f_next = translation_flow(dx / 2, dy / 2, size, size)
        f_full = translation_flow(-dx, -dy, size, size)
    elif kind == "rotation":
        center = ((size - 1) / 2, (size - 1) / 2)
        f_prev = rotation_flow(center, -radians / 2, size, size)
        f_next = rotation_flow(center, radians / 2, size, size)
        f_full = rotation_flow(center, -radians, size, size)
    else:
        raise ValueError(f"unknown synthetic motion {kind!r}")
    frames = (base, _resample(base, f_prev), _resample(base, f_full))
    return frames, (f_prev, f_next)
