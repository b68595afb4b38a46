"""Latent refinement inside the edit mask: high-band attenuation plus scaled noise."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgument
from .grid import LatentGrid, Rng, sample_gaussian
from .maskgen import EditMask, area_ratio
from .spectral import frequency_attenuated_latent


@dataclass(frozen=True)
class RefineParams:
    alpha: float | None = None  # None: derive from the mask area
    alpha_min: float = 0.5
    alpha_max: float = 0.9
    noise_std: float = 1.0
    filter_sigma: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if not self.filter_sigma > 0:
            raise InvalidArgument(f"filter_sigma must be > 0, got {self.filter_sigma}")
        if self.noise_std < 0:
            raise InvalidArgument(f"noise_std must be >= 0, got {self.noise_std}")
        if not 0 <= self.alpha_min <= self.alpha_max <= 1:
            raise InvalidArgument(f"need 0 <= alpha_min <= alpha_max <= 1, got {self.alpha_min}, {self.alpha_max}")
        if self.alpha is not None and not 0 <= self.alpha <= 1:
            raise InvalidArgument(f"alpha must lie in [0, 1], got {self.alpha}")

    def resolved(self, mask: EditMask) -> "RefineParams":
        if self.alpha is not None:
            return self
        return replace(self, alpha=compute_alpha(area_ratio(mask), self.alpha_min, self.alpha_max))


def compute_alpha(ratio: float, alpha_min: float = 0.5, alpha_max: float = 0.9) -> float:
    """Linear ramp from alpha_min at an empty mask to alpha_max at half the frame, flat after."""
    if not 0 <= ratio <= 1:
        raise InvalidArgument(f"area ratio must lie in [0, 1], got {ratio}")
    if ratio <= 0.5:
        return alpha_min + 2 * (alpha_max - alpha_min) * ratio
    return alpha_max


def refine_latent(z_T: LatentGrid, mask: EditMask, params: RefineParams) -> LatentGrid:
    """z_T outside the mask; low-passed z_T plus (1 - alpha)-scaled noise inside.

    The attenuation is computed on the full grid and only then masked in.
    """
    if (mask.height, mask.width) != (z_T.height, z_T.width):
        raise InvalidArgument(f"mask {mask.height}x{mask.width} does not match latent {z_T.height}x{z_T.width}")
    params = params.resolved(mask)
    alpha = params.alpha
    z_high = frequency_attenuated_latent(z_T, params.filter_sigma, alpha, "high")
    noise = sample_gaussian(z_T.shape, params.noise_std, Rng(params.seed))
    inside = z_high.f64() + noise.f64() * (1.0 - alpha)
    inside = inside.astype(np.float32)
    return LatentGrid(np.where(mask.data[None], inside, z_T.data))
