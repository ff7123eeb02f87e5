"""Charbonnier training objective and PSNR / SSIM metrics."""

from dataclasses import dataclass
import math

import numpy as np

PSNR_CAP = 99.0


@dataclass(frozen=True)
class LossConfig:
    lambda_w: float = 1.0
    lambda_e: float = 0.5
    eps: float = 1e-6

    def __post_init__(self):
        if self.lambda_w < 0 or self.lambda_e < 0:
            raise ValueError("loss weights must be non-negative")
        if not self.eps > 0:
            raise ValueError("Charbonnier eps must be positive")


def charbonnier(x, eps=1e-6):
    """``sqrt(x**2 + eps**2)`` and its derivative ``x / sqrt(x**2 + eps**2)``."""
    phi = np.sqrt(np.square(x) + eps * eps)
    return phi, x / phi


def _same_shape(*arrays):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"dimension mismatch: {sorted(shapes)}")


def total_loss(f_prev, f_next, enhanced, gt, cfg=LossConfig()):
    """Warped loss on the average of both warped frames plus enhancement loss.

    Sums jointly over every pixel and channel.  Returns
    ``(loss, d_f_prev, d_f_next, d_enhanced)``.
    """
    f_prev, f_next, enhanced, gt = (np.asarray(a, dtype=np.float64) for a in (f_prev, f_next, enhanced, gt))
    _same_shape(f_prev, f_next, enhanced, gt)
    phi_w, dphi_w = charbonnier(0.5 * (f_prev + f_next) - gt, cfg.eps)
    phi_e, dphi_e = charbonnier(enhanced - gt, cfg.eps)
    loss = cfg.lambda_w * float(np.sum(phi_w)) + cfg.lambda_e * float(np.sum(phi_e))
    d_avg = 0.5 * cfg.lambda_w * dphi_w
    return loss, d_avg, d_avg.copy(), cfg.lambda_e * dphi_e


def loss_floor(n, cfg=LossConfig()):
    return (cfg.lambda_w + cfg.lambda_e) * n * cfg.eps


def psnr(a, b, peak=1.0):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    if not peak > 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean(np.square(a - b)))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def gaussian_window(size=11, sigma=1.5):
    t = np.arange(size) - (size - 1) / 2
    g = np.exp(-(t * t) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    n = len(g)
    h, w = img.shape
    rows = sum(g[k] * img[k : h - n + 1 + k] for k in range(n))
    return sum(g[k] * rows[:, k : w - n + 1 + k] for k in range(n))


def _gray(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        img = img.mean(axis=0)
    return img


def ssim(a, b, peak=1.0, size=11, sigma=1.5):
    """Mean SSIM over the valid region of an 11x11 Gaussian window.

    Colour inputs ``(C, H, W)`` are reduced to grey by averaging channels.
    """
    a = _gray(a)
    b = _gray(b)
    _same_shape(a, b)
    if min(a.shape) < size:
        raise ValueError(f"image {a.shape} smaller than the {size}x{size} SSIM window")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    g = gaussian_window(size, sigma)
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def format_metrics(psnr_db, ssim_value):
    return f"PSNR: {psnr_db:.4f} dB\nSSIM: {ssim_value:.4f}"
