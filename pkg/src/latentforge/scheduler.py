"""Deterministic DDIM stepping, inversion and trajectory loops.

Step indices run t = 1..T with z_0 the clean latent; ``alpha_cumprod[0]`` is
pinned to 1 so both the sampling and the inversion update are defined at
the first step.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .denoiser import FeatureControl, PromptEmbedding, as_prompt, null_prompt
from .errors import DenoiserError, InvalidArgument, LatentForgeError
from .grid import LatentGrid, grid_write

SCHEDULE_KINDS = ("linear", "scaled-linear")

StepHook = Callable[[int, LatentGrid, "np.ndarray | None"], None]


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    alpha_cumprod: np.ndarray  # length T + 1, index 0 is the clean end
    kind: str = "custom"
    base_steps: int = 0
    strict: bool = True

    def __post_init__(self):
        a = np.array(self.alpha_cumprod, dtype=np.float64)
        if a.ndim != 1 or a.size < 2:
            raise InvalidArgument("alpha_cumprod needs at least two entries (t = 0 and t = 1)")
        if a[0] != 1.0:
            raise InvalidArgument(f"alpha_cumprod[0] must be 1, got {a[0]}")
        if not (np.all(a > 0) and np.all(a <= 1)):
            raise InvalidArgument("alpha_cumprod values must lie in (0, 1]")
        steps = np.diff(a)
        if self.strict and not np.all(steps < 0):
            raise InvalidArgument("alpha_cumprod must be strictly decreasing")
        if not np.all(steps <= 0):
            raise InvalidArgument("alpha_cumprod must be non-increasing")
        a.flags.writeable = False
        object.__setattr__(self, "alpha_cumprod", a)

    @property
    def T(self) -> int:
        return self.alpha_cumprod.size - 1

    def check_step(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise InvalidArgument(f"step t={t} outside [1, {self.T}]")


def make_schedule(
    T: int = 50,
    kind: str = "scaled-linear",
    beta_start: float = 0.00085,
    beta_end: float = 0.012,
    base_steps: int = 1000,
) -> NoiseSchedule:
    """Training-grid betas, cumulative product, then a uniform stride down to T steps.

    DDIM step k maps to training index round(k * base_steps / T) - 1, so the
    last step always lands on the fully-diffused end of the training grid.
    """
    if kind not in SCHEDULE_KINDS:
        raise InvalidArgument(f"kind must be one of {SCHEDULE_KINDS}, got {kind!r}")
    if not 0 < beta_start < beta_end < 1:
        raise InvalidArgument(f"need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}")
    if not 1 <= T <= base_steps:
        raise InvalidArgument(f"need 1 <= T <= base_steps, got T={T}, base_steps={base_steps}")
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, base_steps)
    else:
        betas = np.linspace(np.sqrt(beta_start), np.sqrt(beta_end), base_steps) ** 2
    train = np.cumprod(1.0 - betas)
    idx = np.rint(np.arange(1, T + 1) * base_steps / T).astype(int) - 1
    return NoiseSchedule(np.concatenate([[1.0], train[idx]]), kind=kind, base_steps=base_steps)


def _check_pair(a: LatentGrid, b: LatentGrid) -> None:
    if a.shape != b.shape:
        raise InvalidArgument(f"shape mismatch: {a.shape} vs {b.shape}")


def ddim_step(z_t: LatentGrid, eps_hat: LatentGrid, t: int, sched: NoiseSchedule) -> LatentGrid:
    """One deterministic sampling update z_t -> z_{t-1}."""
    sched.check_step(t)
    _check_pair(z_t, eps_hat)
    a_t, a_prev = sched.alpha_cumprod[t], sched.alpha_cumprod[t - 1]
    coef_eps = np.sqrt(a_prev) * (np.sqrt(1.0 / a_prev - 1.0) - np.sqrt(1.0 / a_t - 1.0))
    return LatentGrid(np.sqrt(a_prev / a_t) * z_t.f64() + coef_eps * eps_hat.f64())


def ddim_invert_step(z_prev: LatentGrid, eps_hat: LatentGrid, t: int, sched: NoiseSchedule) -> LatentGrid:
    """One inversion update z*_{t-1} -> z*_t, with eps_hat evaluated at z*_{t-1}."""
    sched.check_step(t)
    _check_pair(z_prev, eps_hat)
    a_t, a_prev = sched.alpha_cumprod[t], sched.alpha_cumprod[t - 1]
    coef_eps = np.sqrt(a_t) * (np.sqrt(1.0 / a_t - 1.0) - np.sqrt(1.0 / a_prev - 1.0))
    return LatentGrid(np.sqrt(a_t / a_prev) * z_prev.f64() + coef_eps * eps_hat.f64())


def cfg_combine(eps_uncond: LatentGrid, eps_cond: LatentGrid, scale: float) -> LatentGrid:
    _check_pair(eps_uncond, eps_cond)
    if scale == 1:
        return eps_cond
    u = eps_uncond.f64()
    return LatentGrid(u + scale * (eps_cond.f64() - u))


@dataclass
class Trajectory:
    direction: str  # "denoising" or "inverting"
    steps: list[tuple[int, LatentGrid]] = field(default_factory=list)

    def append(self, t: int, z: LatentGrid) -> None:
        if self.steps:
            last = self.steps[-1][0]
            ok = t < last if self.direction == "denoising" else t > last
            if not ok:
                raise InvalidArgument(f"step {t} breaks {self.direction} order after {last}")
            if z.shape != self.steps[-1][1].shape:
                raise InvalidArgument("all grids in a trajectory must share one shape")
        self.steps.append((t, z))

    @property
    def final(self) -> LatentGrid:
        return self.steps[-1][1]

    @property
    def timesteps(self) -> list[int]:
        return [t for t, _ in self.steps]

    def at(self, t: int) -> LatentGrid:
        for s, z in self.steps:
            if s == t:
                return z
        raise KeyError(t)

    def __len__(self) -> int:
        return len(self.steps)

    def dump(self, directory) -> list[Path]:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for t, z in self.steps:
            p = out / f"{self.direction}_t{t:04d}.flxl"
            grid_write(z, p)
            paths.append(p)
        return paths


def _predict(denoiser, z, t, prompt, sched, control):
    try:
        return denoiser.predict(z, t, prompt, sched, control)
    except LatentForgeError:
        raise
    except Exception as exc:
        raise DenoiserError(f"denoiser failed at step t={t}: {exc}", t) from exc


def sample_loop(
    denoiser,
    z_start: LatentGrid,
    prompt: PromptEmbedding | str,
    cfg_scale: float,
    start_t: int,
    sched: NoiseSchedule,
    control: FeatureControl | None = None,
    hooks: Sequence[StepHook] = (),
) -> Trajectory:
    """Denoise from ``start_t`` down to 0.

    With cfg_scale == 1 the denoiser is called once per step; otherwise an
    extra unconditional call is combined by classifier-free guidance. A
    recording ``control`` sees only the conditional call; a replaying one is
    applied to both.
    """
    if not 0 <= start_t <= sched.T:
        raise InvalidArgument(f"start_t={start_t} outside [0, {sched.T}]")
    if cfg_scale < 1:
        raise InvalidArgument(f"cfg_scale must be >= 1, got {cfg_scale}")
    prompt = as_prompt(prompt)
    guided = cfg_scale != 1
    uncond = null_prompt() if guided else None
    uncond_control = control if control is not None and control.mode == "replay" else None

    traj = Trajectory("denoising", [(start_t, z_start)])
    z = z_start
    for t in range(start_t, 0, -1):
        cond = _predict(denoiser, z, t, prompt, sched, control)
        eps = cond.eps
        if guided:
            un = _predict(denoiser, z, t, uncond, sched, uncond_control)
            eps = cfg_combine(un.eps, cond.eps, cfg_scale)
        for hook in hooks:
            hook(t, z, cond.maps)
        z = ddim_step(z, eps, t, sched)
        traj.append(t - 1, z)
    return traj


def invert_loop(
    denoiser,
    z_0: LatentGrid,
    p_src: PromptEmbedding | str,
    p_tar: PromptEmbedding | str,
    sched: NoiseSchedule,
    hooks: Sequence[StepHook] = (),
) -> tuple[Trajectory, np.ndarray | None]:
    """DDIM inversion at guidance 1, conditioned on ``p_src``.

    Returns the trajectory z*_1..z*_T and, for attention backends, the
    cross-attention maps of ``p_tar`` stacked as (h, w, N_tar, T); the map
    for step t is taken from the evaluation at z*_{t-1}. Backends without
    attention return ``None`` for the maps.
    """
    p_src, p_tar = as_prompt(p_src), as_prompt(p_tar)
    same = p_src.words == p_tar.words
    capture = getattr(denoiser, "has_attention", False)
    traj = Trajectory("inverting")
    maps = []
    z = z_0
    for t in range(1, sched.T + 1):
        out = _predict(denoiser, z, t, p_src, sched, None)
        step_maps = out.maps
        if capture and not same:
            step_maps = _predict(denoiser, z, t, p_tar, sched, None).maps
        if capture:
            maps.append(step_maps)
        for hook in hooks:
            hook(t, z, step_maps)
        z = ddim_invert_step(z, out.eps, t, sched)
        traj.append(t, z)
    stacked = np.stack(maps, axis=-1) if capture else None
    return traj, stacked


def reinvert(
    z_mid_0: LatentGrid,
    p_tar: PromptEmbedding | str,
    t_R: int,
    sched: NoiseSchedule,
    denoiser,
) -> LatentGrid:
    """Partial inversion of an edited latent for ``t_R`` steps at guidance 1."""
    if not 1 <= t_R <= sched.T:
        raise InvalidArgument(f"t_R={t_R} outside [1, {sched.T}]")
    p_tar = as_prompt(p_tar)
    z = z_mid_0
    for t in range(1, t_R + 1):
        out = _predict(denoiser, z, t, p_tar, sched, None)
        z = ddim_invert_step(z, out.eps, t, sched)
    return z


def relative_l2(a: LatentGrid, b: LatentGrid) -> float:
    """||a - b|| / ||b||."""
    ref = b.f64()
    return float(np.linalg.norm(a.f64() - ref) / np.linalg.norm(ref))
