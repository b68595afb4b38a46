"""2-D Fourier analysis of latents and Gaussian band attenuation.

Spectra are stored DC-centered (fft-shifted) with unitary normalization,
so sum(|z|^2) == sum(|F|^2) per channel.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, NumericError
from .grid import LatentGrid, read_complex, write_complex

IMAG_TOLERANCE = 1e-5
BANDS = ("low", "high")


@dataclass(frozen=True, eq=False)
class Spectrum:
    data: np.ndarray  # complex128, (C, H, W), DC at (H//2, W//2)
    real_origin: bool = True

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.complex128)
        if arr.ndim != 3:
            raise InvalidArgument(f"spectrum must be 3-D, got shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True, eq=False)
class FrequencyFilter:
    data: np.ndarray  # real (H, W) in [0, 1]
    kind: str
    sigma: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


def fft2(grid: LatentGrid) -> Spectrum:
    f = np.fft.fft2(grid.f64(), norm="ortho", axes=(1, 2))
    return Spectrum(np.fft.fftshift(f, axes=(1, 2)))


def ifft2(spectrum: Spectrum) -> LatentGrid:
    z = np.fft.ifft2(np.fft.ifftshift(spectrum.data, axes=(1, 2)), norm="ortho", axes=(1, 2))
    if spectrum.real_origin:
        residue = float(np.abs(z.imag).max())
        if residue >= IMAG_TOLERANCE:
            raise NumericError(
                f"inverse transform has imaginary residue {residue:.3g}; spectrum is not Hermitian"
            )
    return LatentGrid(z.real)


def normalized_radius(height: int, width: int) -> np.ndarray:
    """Distance from the DC bin, scaled so the nearest spectrum edge sits at 1."""
    y = np.arange(height) - height // 2
    x = np.arange(width) - width // 2
    scale = min(height, width) / 2.0
    return np.hypot(y[:, None], x[None, :]) / scale


def gaussian_filters(height: int, width: int, sigma: float) -> tuple[FrequencyFilter, FrequencyFilter]:
    """Peak-normalized Gaussian low-pass and its complement high-pass."""
    if not sigma > 0:
        raise InvalidArgument(f"sigma must be > 0, got {sigma}")
    r = normalized_radius(height, width)
    low = np.exp(-(r**2) / (2.0 * sigma**2))
    high = 1.0 - low
    return FrequencyFilter(low, "low", sigma), FrequencyFilter(high, "high", sigma)


def attenuate(
    spectrum: Spectrum,
    low: FrequencyFilter,
    high: FrequencyFilter,
    alpha: float,
    band: str,
) -> Spectrum:
    """Scale one frequency band of ``spectrum`` by ``alpha``.

    band="low" gives alpha*(f*L) + f*H, band="high" gives f*L + alpha*(f*H).
    Evaluated as f - (1 - alpha)*(f*band_filter), which is the same expression
    under L + H = 1 and is exact at alpha = 1.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InvalidArgument(f"alpha must lie in [0, 1], got {alpha}")
    if band not in BANDS:
        raise InvalidArgument(f"band must be one of {BANDS}, got {band!r}")
    if low.shape != high.shape or low.shape != spectrum.shape[1:]:
        raise InvalidArgument(
            f"filter shapes {low.shape}/{high.shape} do not match spectrum {spectrum.shape[1:]}"
        )
    f = spectrum.data
    scaled = low.data if band == "low" else high.data
    return Spectrum(f - (1.0 - alpha) * (f * scaled), real_origin=spectrum.real_origin)


def band_energy(spectrum: Spectrum, filt: FrequencyFilter) -> float:
    return float(np.sum(np.abs(spectrum.data * filt.data) ** 2))


def frequency_attenuated_latent(z: LatentGrid, sigma: float, alpha: float, band: str) -> LatentGrid:
    low, high = gaussian_filters(z.height, z.width, sigma)
    return ifft2(attenuate(fft2(z), low, high, alpha, band))


def spectrum_write(spectrum: Spectrum, path) -> None:
    write_complex(spectrum.data, path)


def spectrum_read(path) -> Spectrum:
    return Spectrum(read_complex(path))
