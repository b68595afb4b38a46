"""MSE / PSNR / SSIM on latent grids, and the adaptive re-inversion depth."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgument
from .grid import LatentGrid
from .maskgen import EditMask

PSNR_CAP = 99.0
SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    mse: float
    ssim: float
    region: str = "whole"  # whole | masked | unmasked

    def to_dict(self) -> dict:
        return asdict(self)


def _pair(a: LatentGrid, b: LatentGrid) -> tuple[np.ndarray, np.ndarray]:
    if a.shape != b.shape:
        raise InvalidArgument(f"shape mismatch: {a.shape} vs {b.shape}")
    return a.f64(), b.f64()


def _select(diff: np.ndarray, region: EditMask | None) -> np.ndarray:
    if region is None:
        return diff
    if region.data.shape != diff.shape[1:]:
        raise InvalidArgument(f"region {region.data.shape} does not match grid {diff.shape[1:]}")
    return diff[:, region.data]


def mse(a: LatentGrid, b: LatentGrid, region: EditMask | None = None) -> float:
    x, y = _pair(a, b)
    sel = _select(x - y, region)
    if sel.size == 0:
        return 0.0
    return float(np.mean(sel**2))


def dynamic_range(a: LatentGrid, b: LatentGrid) -> float:
    """Joint max - min of both grids (1.0 if both are one constant)."""
    hi = max(float(a.data.max()), float(b.data.max()))
    lo = min(float(a.data.min()), float(b.data.min()))
    return hi - lo if hi > lo else 1.0


def psnr_from_mse(err: float, peak: float) -> float:
    if err == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak**2 / err))


def psnr(a: LatentGrid, b: LatentGrid, peak: float | None = None, region: EditMask | None = None) -> float:
    peak = dynamic_range(a, b) if peak is None else peak
    if not peak > 0:
        raise InvalidArgument(f"peak must be > 0, got {peak}")
    return psnr_from_mse(mse(a, b, region), peak)


def _ssim_plane(x: np.ndarray, y: np.ndarray, data_range: float, window: int) -> float:
    win = min(window, x.shape[0], x.shape[1])
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    wx = sliding_window_view(x, (win, win))
    wy = sliding_window_view(y, (win, win))
    mx = wx.mean(axis=(-2, -1))
    my = wy.mean(axis=(-2, -1))
    vx = (wx**2).mean(axis=(-2, -1)) - mx**2
    vy = (wy**2).mean(axis=(-2, -1)) - my**2
    cov = (wx * wy).mean(axis=(-2, -1)) - mx * my
    num = (2 * mx * my + c1) * (2 * cov + c2)
    den = (mx**2 + my**2 + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def ssim(a: LatentGrid, b: LatentGrid, data_range: float | None = None, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over all valid 8x8 windows (uniform weights), averaged over channels."""
    x, y = _pair(a, b)
    data_range = dynamic_range(a, b) if data_range is None else data_range
    return float(np.mean([_ssim_plane(x[c], y[c], data_range, window) for c in range(x.shape[0])]))


def metric_report(a: LatentGrid, b: LatentGrid, region: EditMask | None = None, tag: str = "whole", peak=None) -> MetricReport:
    peak = dynamic_range(a, b) if peak is None else peak
    err = mse(a, b, region)
    # SSIM needs full windows, so it is always reported over the whole grid
    return MetricReport(psnr=psnr_from_mse(err, peak), mse=err, ssim=ssim(a, b, peak), region=tag)


def compute_t_R(
    t_R1: int,
    t_R2: int,
    area_ratio: float,
    psnr_mid: float,
    psnr_recon: float,
    alpha_R: float = 0.5,
    beta_R: float = 0.5,
    printed_sign: bool = False,
) -> int:
    """Re-inversion depth interpolated inside [t_R1, t_R2].

    blend = alpha_R * area_ratio + beta_R * (1 - clamp(psnr_mid / psnr_recon, 0, 1)),
    t_R = round(t_R1 + (t_R2 - t_R1) * blend), clamped to the range.
    ``printed_sign=True`` uses (t_R1 - t_R2) instead and skips the clamp; it
    exists only to document what that variant produces.
    """
    if t_R1 >= t_R2:
        raise InvalidArgument(f"need t_R1 < t_R2, got {t_R1}, {t_R2}")
    if not psnr_recon > 0:
        raise InvalidArgument(f"psnr_recon must be > 0, got {psnr_recon}")
    ratio = min(max(psnr_mid / psnr_recon, 0.0), 1.0)
    blend = alpha_R * area_ratio + beta_R * (1.0 - ratio)
    if printed_sign:
        return int(math.floor(t_R1 + (t_R1 - t_R2) * blend + 0.5))
    t_R = int(math.floor(t_R1 + (t_R2 - t_R1) * blend + 0.5))
    return min(max(t_R, t_R1), t_R2)
