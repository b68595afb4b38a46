#!/usr/bin/env python3
"""Sweep the re-inversion depth t_R for a fixed quarter-frame edit.

    python3 scripts/t_r_ablation.py --values 10,20,30,38,50
"""
import argparse
import csv
import sys
from pathlib import Path

from latentforge.config import PipelineConfig, load_config
from latentforge.maskgen import rect_mask
from latentforge.pipeline import Pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--values", default="10,20,30,38,50")
    ap.add_argument("--out", default="results/t_r_ablation.csv")
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else PipelineConfig()
    pipe = Pipeline(cfg)
    h, w = pipe.shape[1:]
    rows = pipe.t_r_ablation([int(v) for v in args.values.split(",")], rect_mask(0, 0, w // 2, h // 2, res=(h, w)))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    writer = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)


if __name__ == "__main__":
    main()
