"""Command-line entry point: ``latentforge <command> --config C.json``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import PipelineConfig, load_config
from .errors import (
    InjectionMiss,
    InvalidArgument,
    LatentForgeError,
    NumericError,
    StageError,
)
from .grid import grid_read, grid_write, image_export
from .maskgen import load_rects, mask_read_pgm, mask_write_pgm, rect_from_json, rect_mask
from .metrics import metric_report
from .pipeline import Pipeline, preservation_within_growth, rows_to_csv
from .scheduler import invert_loop

log = logging.getLogger("latentforge")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INJECTION = 0, 2, 3, 4


def parse_alphas(text: str) -> list[float]:
    """Comma list; a literal "..." between two values extends their spacing up to the last value."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if "..." not in parts:
        return [float(p) for p in parts]
    i = parts.index("...")
    if i < 2 or i != len(parts) - 2:
        raise InvalidArgument(f"cannot expand alpha list {text!r}; use a,b,...,c")
    head = [float(p) for p in parts[:i]]
    step, last = head[-1] - head[-2], float(parts[-1])
    if step <= 0:
        raise InvalidArgument(f"alpha list must increase: {text!r}")
    n = int(round((last - head[0]) / step))
    return [round(head[0] + k * step, 12) for k in range(n + 1)]


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig.from_dict({})
    if args.command in ("invert", "reconstruct", "edit") and args.out:
        cfg = cfg.replace(output_dir=args.out)
    return cfg


def _out_dir(cfg: PipelineConfig, fallback: str = "latentforge_out") -> Path:
    path = Path(cfg.output_dir or fallback)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_invert(args) -> int:
    cfg = _config(args)
    pipe = Pipeline(cfg)
    out = _out_dir(cfg)
    traj, maps = invert_loop(pipe.denoiser, pipe.source_latent(), cfg.p_src, cfg.p_tar, pipe.sched)
    grid_write(traj.final, out / "z_T.flxl")
    result = {"z_T": str(out / "z_T.flxl")}
    if maps is not None:
        np.save(out / "maps.npy", maps)
        result["maps"] = str(out / "maps.npy")
        result["maps_shape"] = list(maps.shape)
    print(json.dumps(result, indent=2))
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    cfg = _config(args)
    pipe = Pipeline(cfg)
    out = _out_dir(cfg)
    src = pipe.run_source_branch()
    grid_write(src.recon, out / "recon.flxl")
    image_export(src.recon, out / "recon.pgm", 0)
    report = {"recon": str(out / "recon.flxl"), "metrics": metric_report(pipe.source_latent(), src.recon).to_dict()}
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_edit(args) -> int:
    cfg = _config(args)
    if cfg.output_dir is None:
        cfg = cfg.replace(output_dir="latentforge_out")
    report = Pipeline(cfg).edit()
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def cmd_sweep_freq(args) -> int:
    cfg = _config(args)
    rows = Pipeline(cfg).frequency_sweep(parse_alphas(args.alphas))
    text = rows_to_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep_mask(args) -> int:
    cfg = _config(args)
    pipe = Pipeline(cfg)
    res = (pipe.shape[1], pipe.shape[2])
    masks = []
    for rec in load_rects(args.rects):
        rec = dict(rec)
        rec.setdefault("res", list(res))
        masks.append(rect_from_json(rec))
    runs = pipe.mask_size_ablation(masks)
    print(json.dumps({"runs": runs, "preservation_within_growth": preservation_within_growth(runs)}, indent=2))
    return EXIT_OK


def cmd_make_mask(args) -> int:
    cfg = _config(args)
    pipe = Pipeline(cfg)
    if args.mode == "rect":
        if not args.rect:
            raise InvalidArgument("--mode rect needs --rect x0,y0,x1,y1")
        coords = [int(v) for v in args.rect.split(",")]
        if len(coords) != 4:
            raise InvalidArgument("--rect needs four integers")
        mask = rect_mask(*coords, res=(pipe.shape[1], pipe.shape[2]))
        words = []
    else:
        pipe = Pipeline(cfg.replace(mask=replace(cfg.mask, source="attention")))
        mask, words = pipe.build_mask(pipe.source_latent(), pipe.run_source_branch().maps)
    mask_write_pgm(mask, args.out)
    print(json.dumps({"out": args.out, "area_edit": mask.area_edit, "area_total": mask.area_total, "words": words, "degenerate": mask.degenerate}))
    return EXIT_OK


def cmd_metrics(args) -> int:
    a, b = grid_read(args.a), grid_read(args.b)
    region = mask_read_pgm(args.mask) if args.mask else None
    report = {"whole": metric_report(a, b, None, "whole", args.peak).to_dict()}
    if region is not None:
        report["masked"] = metric_report(a, b, region, "masked", args.peak).to_dict()
        report["unmasked"] = metric_report(a, b, region.inverted(), "unmasked", args.peak).to_dict()
    print(json.dumps(report, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentforge", description="Latent-grid editing with a toy diffusion backend.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config; defaults apply when omitted")
        p.set_defaults(func=func)
        return p

    p = with_config("invert", cmd_invert, "invert the source latent; writes z_T.flxl and maps.npy")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p = with_config("reconstruct", cmd_reconstruct, "source branch only; writes recon and metrics")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p = with_config("edit", cmd_edit, "full three-branch edit; writes report.json and artifacts")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p = with_config("sweep-freq", cmd_sweep_freq, "band attenuation sweep as CSV")
    p.add_argument("--alphas", default="0,0.2,...,1")
    p.add_argument("--out", help="also write the CSV here")
    p = with_config("sweep-mask", cmd_sweep_mask, "edit once per rectangle in a JSON list")
    p.add_argument("--rects", required=True)
    p = with_config("make-mask", cmd_make_mask, "write an edit mask PGM")
    p.add_argument("--mode", choices=("attention", "rect"), required=True)
    p.add_argument("--rect", help="x0,y0,x1,y1 for --mode rect")
    p.add_argument("--out", required=True)
    p = sub.add_parser("metrics", help="MSE/PSNR/SSIM between two FLXL grids")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--mask")
    p.add_argument("--peak", type=float)
    p.set_defaults(func=cmd_metrics)
    return parser


def exit_code(exc: BaseException) -> int:
    while isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, InjectionMiss):
        return EXIT_INJECTION
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    return EXIT_CONFIG


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (LatentForgeError, OSError) as exc:
        print(f"latentforge: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
