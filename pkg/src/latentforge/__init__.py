"""Diffusion-latent editing on toy latent grids.

Deterministic (DDIM) inversion and sampling, Gaussian band filtering of the
noise latent, cross-attention masks, key/value injection and the metrics
used to score a three-branch edit.
"""
from .config import DenoiserConfig, MaskConfig, PipelineConfig, ScheduleConfig, load_config
from .denoiser import (
    AnalyticDenoiser,
    FeatureCache,
    FeatureControl,
    HybridDenoiser,
    ToyAttentionDenoiser,
    analytic_eps,
    embed_prompt,
    make_denoiser,
    render_world,
    toy_attention_eps,
)
from .errors import (
    ConfigError,
    DenoiserError,
    FormatError,
    InjectionMiss,
    InvalidArgument,
    LatentForgeError,
    NumericError,
    PhaseError,
    StageError,
)
from .grid import LatentGrid, Rng, grid_new, grid_read, grid_write, image_export, sample_gaussian
from .maskgen import EditMask, TrigramScorer, area_ratio, extract_mask, rect_mask, select_edited_words
from .metrics import MetricReport, compute_t_R, mse, psnr, ssim
from .pipeline import EditReport, Pipeline, SourceResult, edit, frequency_sweep, mask_size_ablation, run_source_branch
from .refine import RefineParams, compute_alpha, refine_latent
from .scheduler import NoiseSchedule, cfg_combine, ddim_invert_step, ddim_step, invert_loop, make_schedule, reinvert, sample_loop
from .spectral import Spectrum, attenuate, fft2, frequency_attenuated_latent, gaussian_filters, ifft2

__version__ = "0.1.0"
