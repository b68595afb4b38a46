"""Three-branch editing: source reconstruction with feature recording, target
generation from the refined latent, then re-inversion and retarget sampling
with key/value injection. Also hosts the frequency sweep and the ablations.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .config import PipelineConfig
from .denoiser import FeatureCache, FeatureControl, make_denoiser, render_world, unique_words
from .errors import InvalidArgument, LatentForgeError, StageError
from .grid import LatentGrid, Rng, grid_read, grid_write, image_export
from .maskgen import (
    EditMask,
    TrigramScorer,
    area_ratio,
    extract_mask,
    mask_read_pgm,
    mask_write_pgm,
    rect_mask,
    resample_mask,
    select_edited_words,
    word_indices,
)
from .metrics import compute_t_R, dynamic_range, metric_report, psnr
from .refine import refine_latent
from .scheduler import invert_loop, make_schedule, reinvert, sample_loop
from .spectral import frequency_attenuated_latent

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ("band", "alpha", "psnr_db", "mse", "ssim")


class SourceResult(NamedTuple):
    recon: LatentGrid
    cache: FeatureCache
    z_T: LatentGrid
    maps: np.ndarray | None  # (h, w, N_tar, T)


@dataclass
class EditReport:
    alpha: float
    t_R: int
    t_R_inputs: dict
    mask: dict
    edited_words: list
    metrics: dict
    artifacts: dict
    config: dict
    timings: dict = field(default_factory=dict)

    def to_dict(self, timings: bool = True) -> dict:
        out = asdict(self)
        if not timings:
            out.pop("timings")
        return out


def _region_metrics(ref: LatentGrid, other: LatentGrid, mask: EditMask) -> dict:
    peak = dynamic_range(ref, other)
    return {
        "whole": metric_report(ref, other, None, "whole", peak).to_dict(),
        "masked": metric_report(ref, other, mask, "masked", peak).to_dict(),
        "unmasked": metric_report(ref, other, mask.inverted(), "unmasked", peak).to_dict(),
    }


class Pipeline:
    """Holds the schedule, backend and source latent for one configuration.

    The source branch depends only on the source latent and prompts, so it is
    computed once and shared by sweeps that vary the mask or t_R.
    """

    def __init__(self, config: PipelineConfig):
        self.config = config
        sc = config.schedule
        self.sched = make_schedule(sc.T, sc.kind, sc.beta_start, sc.beta_end, sc.base_steps)
        dc = config.denoiser
        self.vocabulary = unique_words(config.p_src.split() + config.p_tar.split())
        self.shape = tuple(dc.shape)
        self.denoiser = make_denoiser(
            dc.backend, self.vocabulary, self.shape, dc.sigma0_sq, dc.seed, dc.patch, dc.dim, dc.gain
        )
        self.world = render_world(self.vocabulary, self.shape, dc.sigma0_sq)
        self._z0: LatentGrid | None = None
        self._source: SourceResult | None = None

    # -- inputs ---------------------------------------------------------------

    def source_latent(self) -> LatentGrid:
        if self._z0 is None:
            if self.config.source_latent:
                z0 = grid_read(self.config.source_latent)
                if z0.shape != self.shape:
                    raise InvalidArgument(f"source latent shape {z0.shape} != configured {self.shape}")
            else:
                z0 = self.world.sample(Rng(self.config.seed), self.config.p_src.split())
            self._z0 = z0
        return self._z0

    # -- branches -------------------------------------------------------------

    def run_source_branch(self) -> SourceResult:
        if self._source is not None:
            return self._source
        cfg = self.config
        z0 = self.source_latent()
        traj, maps = invert_loop(self.denoiser, z0, cfg.p_src, cfg.p_tar, self.sched)
        z_T = traj.final
        cache = FeatureCache()
        control = None
        if getattr(self.denoiser, "has_attention", False):
            control = FeatureControl("record", cache, frozenset(cfg.inject_layers))
        recon = sample_loop(self.denoiser, z_T, cfg.p_src, cfg.cfg_source, self.sched.T, self.sched, control).final
        cache.freeze()
        self._source = SourceResult(recon, cache, z_T, maps)
        return self._source

    def run_target_branch(self, z_prime_T: LatentGrid) -> LatentGrid:
        """Edit from the refined latent at edit guidance, without injection."""
        return sample_loop(
            self.denoiser, z_prime_T, self.config.p_tar, self.config.cfg_edit, self.sched.T, self.sched
        ).final

    def run_retarget_branch(self, I_mid: LatentGrid, cache: FeatureCache, t_R: int, inject: bool | None = None) -> LatentGrid:
        """Re-invert for t_R steps, then resample with the source step-t features at every step t."""
        if not 1 <= t_R <= self.sched.T:
            raise InvalidArgument(f"t_R={t_R} outside [1, {self.sched.T}]")
        cfg = self.config
        inject = cfg.inject if inject is None else inject
        z_re = reinvert(I_mid, cfg.p_tar, t_R, self.sched, self.denoiser)
        control = None
        if inject and getattr(self.denoiser, "has_attention", False):
            if not cache.frozen:
                raise InvalidArgument("retarget branch needs a frozen (fully recorded) cache")
            control = FeatureControl("replay", cache, frozenset(cfg.inject_layers))
        return sample_loop(self.denoiser, z_re, cfg.p_tar, cfg.cfg_edit, t_R, self.sched, control).final

    # -- mask -----------------------------------------------------------------

    def build_mask(self, z0: LatentGrid, maps) -> tuple[EditMask, list[str]]:
        mc = self.config.mask
        res = (self.shape[1], self.shape[2])
        if mc.source == "rect":
            return rect_mask(*mc.rect, res=res), []
        if mc.source == "file":
            return resample_mask(mask_read_pgm(mc.path), res), []
        if maps is None:
            raise InvalidArgument("attention masks need a backend with attention (attention or hybrid)")
        scorer = TrigramScorer(mc.caption or self.config.p_src)
        words = select_edited_words(self.config.p_src, self.config.p_tar, z0, scorer, mc.word_set)
        idx = word_indices(self.config.p_tar.split(), words)
        if not idx:
            log.warning("no edited words selected; using an empty mask")
            return EditMask(np.zeros(res, dtype=bool)), words
        return extract_mask(maps[..., 0], idx, mc.threshold, res), words

    # -- full edit ------------------------------------------------------------

    def edit(self, t_R: int | None = None, mask: EditMask | None = None, output_dir=None) -> EditReport:
        cfg = self.config
        out_dir = Path(output_dir or cfg.output_dir) if (output_dir or cfg.output_dir) else None
        artifacts: dict[str, str] = {}
        timings: dict[str, float] = {}

        def emit(name: str, grid: LatentGrid) -> None:
            if out_dir is None:
                return
            out_dir.mkdir(parents=True, exist_ok=True)
            p = out_dir / f"{name}.flxl"
            grid_write(grid, p)
            image_export(grid, out_dir / f"{name}.pgm", 0)
            artifacts[name] = str(p)

        @contextmanager
        def stage(name: str):
            start = time.perf_counter()
            try:
                yield
            except StageError:
                raise
            except LatentForgeError as exc:
                raise StageError(name, exc) from exc
            finally:
                timings[name] = time.perf_counter() - start

        with stage("source"):
            z0 = self.source_latent()
            emit("z0", z0)
            src = self.run_source_branch()
            emit("z_T", src.z_T)
            emit("recon", src.recon)
        with stage("mask"):
            if mask is not None:
                edit_mask, words = resample_mask(mask, (self.shape[1], self.shape[2])), []
            else:
                edit_mask, words = self.build_mask(z0, src.maps)
            if out_dir is not None:
                out_dir.mkdir(parents=True, exist_ok=True)
                mask_write_pgm(edit_mask, out_dir / "mask.pgm")
                artifacts["mask"] = str(out_dir / "mask.pgm")
        with stage("refine"):
            params = cfg.refine.resolved(edit_mask)
            z_prime = refine_latent(src.z_T, edit_mask, params)
            emit("z_prime_T", z_prime)
        with stage("target"):
            mid = self.run_target_branch(z_prime)
            emit("mid", mid)
        with stage("t_R"):
            ratio = area_ratio(edit_mask)
            psnr_mid, psnr_recon = psnr(z0, mid), psnr(z0, src.recon)
            lo, hi = cfg.tr_range
            chosen = t_R if t_R is not None else cfg.t_R
            if chosen is None:
                chosen = compute_t_R(lo, hi, ratio, psnr_mid, psnr_recon, cfg.alpha_R, cfg.beta_R)
        with stage("retarget"):
            tar = self.run_retarget_branch(mid, src.cache, chosen)
            emit("tar", tar)

        report = EditReport(
            alpha=float(params.alpha),
            t_R=int(chosen),
            t_R_inputs={
                "range": [lo, hi],
                "area_ratio": ratio,
                "psnr_mid": psnr_mid,
                "psnr_recon": psnr_recon,
                "forced": t_R is not None or cfg.t_R is not None,
            },
            mask={
                "source": "override" if mask is not None else cfg.mask.source,
                "area_edit": edit_mask.area_edit,
                "area_total": edit_mask.area_total,
                "area_ratio": ratio,
                "degenerate": edit_mask.degenerate,
            },
            edited_words=list(words),
            metrics={
                "src_recon": _region_metrics(z0, src.recon, edit_mask),
                "src_mid": _region_metrics(z0, mid, edit_mask),
                "src_tar": _region_metrics(z0, tar, edit_mask),
            },
            artifacts=artifacts,
            config=cfg.to_dict(),
            timings=timings,
        )
        self.last_outputs = {"z0": z0, "z_T": src.z_T, "z_prime_T": z_prime, "recon": src.recon, "mid": mid, "tar": tar, "mask": edit_mask}
        if out_dir is not None:
            (out_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
        return report

    # -- experiments ----------------------------------------------------------

    def frequency_sweep(self, alphas, z0: LatentGrid | None = None) -> list[dict]:
        """Attenuate one band of the inverted latent by each alpha and reconstruct.

        Rows compare each reconstruction to the source latent (whole grid,
        no mask, guidance 1).
        """
        alphas = [float(a) for a in alphas]
        if any(not 0 <= a <= 1 for a in alphas):
            raise InvalidArgument(f"alphas must lie in [0, 1], got {alphas}")
        cfg = self.config
        z0 = self.source_latent() if z0 is None else z0
        traj, _ = invert_loop(self.denoiser, z0, cfg.p_src, cfg.p_src, self.sched)
        rows = []
        for band in ("high", "low"):
            for a in alphas:
                z_a = frequency_attenuated_latent(traj.final, cfg.refine.filter_sigma, a, band)
                rec = sample_loop(self.denoiser, z_a, cfg.p_src, cfg.cfg_source, self.sched.T, self.sched).final
                m = metric_report(z0, rec)
                rows.append({"band": band, "alpha": a, "psnr_db": m.psnr, "mse": m.mse, "ssim": m.ssim})
        return rows

    def mask_size_ablation(self, rects) -> list[dict]:
        res = (self.shape[1], self.shape[2])
        runs = []
        for r in rects:
            mask = r if isinstance(r, EditMask) else rect_mask(*r, res=res)
            rep = self.edit(mask=mask, output_dir=None)
            runs.append(
                {
                    "rect": None if isinstance(r, EditMask) else list(r),
                    "area_ratio": rep.mask["area_ratio"],
                    "alpha": rep.alpha,
                    "t_R": rep.t_R,
                    "unmasked_psnr": rep.metrics["src_tar"]["unmasked"]["psnr"],
                    "unmasked_mse": rep.metrics["src_tar"]["unmasked"]["mse"],
                    "masked_mse": rep.metrics["src_tar"]["masked"]["mse"],
                    "whole_psnr": rep.metrics["src_tar"]["whole"]["psnr"],
                }
            )
        return runs

    def t_r_ablation(self, values, mask: EditMask | None = None) -> list[dict]:
        rows = []
        for t_R in values:
            rep = self.edit(t_R=int(t_R), mask=mask, output_dir=None)
            m = rep.metrics["src_tar"]
            rows.append(
                {
                    "t_R": rep.t_R,
                    "whole_psnr": m["whole"]["psnr"],
                    "masked_mse": m["masked"]["mse"],
                    "unmasked_mse": m["unmasked"]["mse"],
                    "ssim": m["whole"]["ssim"],
                }
            )
        return rows


def preservation_within_growth(runs: list[dict]) -> bool:
    """True when, ordered by mask area, unmasked MSE grows no faster than the mask area."""
    ordered = sorted((r for r in runs if r["area_ratio"] > 0), key=lambda r: r["area_ratio"])
    for a, b in zip(ordered, ordered[1:]):
        if a["unmasked_mse"] > 0 and b["unmasked_mse"] / a["unmasked_mse"] > b["area_ratio"] / a["area_ratio"]:
            return False
    return True


def run_source_branch(config: PipelineConfig) -> SourceResult:
    return Pipeline(config).run_source_branch()


def edit(config: PipelineConfig) -> EditReport:
    return Pipeline(config).edit()


def frequency_sweep(z_0: LatentGrid | None, alphas, config: PipelineConfig) -> list[dict]:
    return Pipeline(config).frequency_sweep(alphas, z_0)


def mask_size_ablation(config: PipelineConfig, rects) -> list[dict]:
    return Pipeline(config).mask_size_ablation(rects)


def rows_to_csv(rows: list[dict], columns=SWEEP_COLUMNS) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row[k] for k in columns})
    return buf.getvalue()
