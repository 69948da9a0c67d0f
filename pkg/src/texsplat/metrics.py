"""Image quality metrics, texture-resolution reports and render timing.

PSNR uses peak 1.0 on normalized images.  SSIM uses an 11x11 Gaussian
window (sigma 1.5), standard constants, valid-window cropping (no padding)
and channel averaging; ``ssim_and_grad`` additionally returns the exact
gradient with respect to the first image so the training loss can reuse
the same definition.
"""

import csv
import time
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

PSNR_CAP_DB = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("image shapes differ")
    return a, b


def psnr(a, b):
    """Peak signal-to-noise ratio in dB, peak 1.0; identical images cap at 100."""
    a, b = _check_pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _ssim_window():
    r = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * SSIM_SIGMA**2))
    win = np.outer(g, g)
    return win / win.sum()


def _channels(img):
    if img.ndim == 2:
        return [img]
    return [img[:, :, c] for c in range(img.shape[2])]


def ssim(a, b):
    """Mean structural similarity, channel-averaged."""
    return ssim_and_grad(a, b)[0]


def ssim_and_grad(a, b):
    """SSIM and its exact gradient with respect to ``a``.

    Local statistics come from valid-mode convolution with the Gaussian
    window; the gradient back-propagates each windowed moment through the
    adjoint (full-mode) convolution.  The window is symmetric so no kernel
    flip is needed.
    """
    a, b = _check_pair(a, b)
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ValueError("image smaller than the SSIM window")
    win = _ssim_window()
    grad = np.zeros_like(a)
    chans_a = _channels(a)
    chans_b = _channels(b)
    total = 0.0
    for c, (x, y) in enumerate(zip(chans_a, chans_b)):
        mu_x = convolve2d(x, win, mode="valid")
        mu_y = convolve2d(y, win, mode="valid")
        m_xx = convolve2d(x * x, win, mode="valid")
        m_yy = convolve2d(y * y, win, mode="valid")
        m_xy = convolve2d(x * y, win, mode="valid")
        s_xx = m_xx - mu_x * mu_x
        s_yy = m_yy - mu_y * mu_y
        s_xy = m_xy - mu_x * mu_y

        A1 = 2.0 * mu_x * mu_y + SSIM_C1
        A2 = 2.0 * s_xy + SSIM_C2
        B1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1
        B2 = s_xx + s_yy + SSIM_C2
        S = (A1 * A2) / (B1 * B2)
        total += S.mean()

        # dS per map entry, then chain the raw moments back through the
        # adjoint convolution.
        scale = 1.0 / (S.size * len(chans_a))
        dS_dmu_x = 2.0 * (mu_y * A2 - S * mu_x * B2) / (B1 * B2)
        dS_dsxx = -S / B2
        dS_dsxy = 2.0 * A1 / (B1 * B2)
        g_mu = scale * (dS_dmu_x - 2.0 * mu_x * dS_dsxx - mu_y * dS_dsxy)
        g_mxx = scale * dS_dsxx
        g_mxy = scale * dS_dsxy
        gx = (
            convolve2d(g_mu, win, mode="full")
            + 2.0 * x * convolve2d(g_mxx, win, mode="full")
            + y * convolve2d(g_mxy, win, mode="full")
        )
        if a.ndim == 2:
            grad += gx
        else:
            grad[:, :, c] = gx
    return total / len(chans_a), grad


@dataclass
class ResolutionHistogram:
    counts: dict  # (width, height) -> count
    percents: dict  # (width, height) -> percent of splats
    one_by_one: int
    square_gt1: int
    non_square: int

    @property
    def total(self):
        return sum(self.counts.values())


def resolution_histogram(scene) -> ResolutionHistogram:
    """Tally texture resolutions over a scene's atlas."""
    counts = {}
    one = square = nonsq = 0
    atlas = scene.textures
    for w, h in zip(atlas.widths, atlas.heights):
        key = (int(w), int(h))
        counts[key] = counts.get(key, 0) + 1
        if key == (1, 1):
            one += 1
        elif key[0] == key[1]:
            square += 1
        else:
            nonsq += 1
    n = max(scene.n, 1)
    percents = {k: 100.0 * v / n for k, v in counts.items()}
    return ResolutionHistogram(
        counts=counts,
        percents=percents,
        one_by_one=one,
        square_gt1=square,
        non_square=nonsq,
    )


@dataclass
class TimingReport:
    fps: float
    ms_per_frame: float
    train_minutes: float = None


def timing_report(scene, cam, n_frames=3, render_fn=None) -> TimingReport:
    """Wall-clock render timing: one warm-up frame, then the mean of n_frames."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if render_fn is None:
        from .rasterizer import render as render_fn
    render_fn(scene, cam)
    t0 = time.perf_counter()
    for _ in range(n_frames):
        render_fn(scene, cam)
    ms = 1000.0 * (time.perf_counter() - t0) / n_frames
    return TimingReport(fps=1000.0 / ms, ms_per_frame=ms)


def write_histogram_csv(path, hist: ResolutionHistogram):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["width", "height", "count", "percent"])
        for (w, h) in sorted(hist.counts):
            out.writerow([w, h, hist.counts[(w, h)], repr(hist.percents[(w, h)])])


def write_metrics_csv(path, rows):
    """rows: iterable of (iter, psnr, ssim, mem_bytes)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["iter", "psnr", "ssim", "mem_bytes"])
        for it, p, s, m in rows:
            out.writerow([it, repr(float(p)), repr(float(s)), int(m)])


def write_timing_csv(path, rep: TimingReport):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["fps", "ms_per_frame"])
        out.writerow([repr(rep.fps), repr(rep.ms_per_frame)])
