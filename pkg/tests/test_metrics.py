import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from conftest import random_grid
from latentforge.errors import InvalidArgument
from latentforge.grid import LatentGrid, grid_new
from latentforge.maskgen import rect_mask
from latentforge.metrics import PSNR_CAP, compute_t_R, dynamic_range, metric_report, mse, psnr, psnr_from_mse, ssim


def test_mse_basics(grid):
    assert mse(grid, grid) == 0.0
    shifted = LatentGrid(grid.f64() + 2.0)
    assert mse(shifted, grid) == pytest.approx(4.0, abs=1e-5)


def test_mse_direct_summation():
    a, b = random_grid((2, 8, 8), 1), random_grid((2, 8, 8), 2)
    x, y = a.f64().ravel().tolist(), b.f64().ravel().tolist()
    ref = sum((p - q) ** 2 for p, q in zip(x, y)) / len(x)
    assert abs(mse(a, b) - ref) <= 1e-10


def test_mse_region():
    a = grid_new(1, 8, 8, 0.0)
    data = np.zeros((1, 8, 8))
    data[:, :4, :4] = 3.0
    b = LatentGrid(data)
    m = rect_mask(0, 0, 4, 4, res=(8, 8))
    assert mse(a, b, m) == 9.0 and mse(a, b, m.inverted()) == 0.0


def test_psnr_values(grid):
    assert psnr(grid, grid) == PSNR_CAP
    assert psnr_from_mse(0.01, 1.0) == pytest.approx(20.0)
    assert psnr_from_mse(1.0, 1.0) == 0.0
    with pytest.raises(InvalidArgument):
        psnr(grid, grid, peak=0.0)


@settings(max_examples=20, deadline=None)
@given(s1=st.integers(0, 10_000), s2=st.integers(0, 10_000))
def test_psnr_symmetric(s1, s2):
    a, b = random_grid((1, 8, 8), s1), random_grid((1, 8, 8), s2)
    assert psnr(a, b) == psnr(b, a)
    assert dynamic_range(a, b) == dynamic_range(b, a)


def test_ssim_identity_and_sign():
    a = random_grid((1, 16, 16), 3)
    assert abs(ssim(a, a) - 1.0) < 1e-9
    # zero mean inside every 8x8 window, so only the structure term carries the sign
    yy, xx = np.mgrid[0:16, 0:16]
    board = np.where((yy + xx) % 2 == 0, 1.0, -1.0)[None] * (1.0 + 0.5 * (yy // 8))[None]
    assert ssim(LatentGrid(board), LatentGrid(-board)) < 0


def test_ssim_window_oracle():
    a, b = random_grid((2, 20, 20), 4), random_grid((2, 20, 20), 5, scale=0.5)
    rng = dynamic_range(a, b)
    ref = np.mean([oracles.ssim_windows(a.f64()[c], b.f64()[c], rng) for c in range(2)])
    assert abs(ssim(a, b) - ref) <= 1e-6


def test_metric_report_fields(grid):
    r = metric_report(grid, LatentGrid(grid.f64() * 0.9), rect_mask(0, 0, 32, 32), "masked")
    assert r.region == "masked" and r.mse > 0 and r.psnr < PSNR_CAP and -1 <= r.ssim <= 1


def test_t_R_blend_zero_is_lower_end():
    assert compute_t_R(10, 30, 0.0, 35.0, 35.0) == 10


def test_t_R_reported_optima():
    # blend = 0.5 * ratio + 0.5 * (1 - mid/recon)
    assert compute_t_R(10, 30, 0.5, 25.0, 50.0) == 20  # blend 0.5
    assert compute_t_R(30, 50, 0.4, 30.0, 50.0) == 38  # blend 0.2 + 0.2 = 0.4


def test_t_R_printed_sign_leaves_range():
    assert compute_t_R(10, 30, 0.5, 25.0, 50.0, printed_sign=True) == 0


@settings(max_examples=100, deadline=None)
@given(
    lo=st.integers(1, 40),
    width=st.integers(1, 40),
    ratio=st.floats(0, 1),
    mid=st.floats(0, 120),
    recon=st.floats(0.1, 120),
    ar=st.floats(0, 2),
    br=st.floats(0, 2),
)
def test_t_R_always_in_range(lo, width, ratio, mid, recon, ar, br):
    t = compute_t_R(lo, lo + width, ratio, mid, recon, ar, br)
    assert lo <= t <= lo + width


def test_t_R_monotone_on_grid():
    grid = np.linspace(0, 1, 100)
    by_area = [compute_t_R(30, 50, r, 30.0, 40.0) for r in grid]
    by_gap = [compute_t_R(30, 50, 0.2, 40.0 * (1 - g), 40.0) for g in grid]
    assert all(b >= a for a, b in zip(by_area, by_area[1:]))
    assert all(b >= a for a, b in zip(by_gap, by_gap[1:]))


def test_t_R_rejects():
    with pytest.raises(InvalidArgument):
        compute_t_R(30, 30, 0.1, 1, 1)
    with pytest.raises(InvalidArgument):
        compute_t_R(10, 30, 0.1, 1, 0)
