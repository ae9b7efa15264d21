#!/usr/bin/env python3
"""Prediction-churn and gradient-conflict diagnostics.

Trains plain CE and CE+review runs under view augmentation, then reports
(a) the rank correlation between per-class adjacent-epoch divergence and
class rarity, (b) how much the review loss shrinks that divergence, and
(c) the per-epoch conflict-fraction profile of a KR+KS run.
"""

from __future__ import annotations

import argparse
import csv
import shlex
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy import stats

from ltreflect import cli, trainer


def read_class_kl(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in row[1:]] for row in rows[1:]])


def read_conflict_fraction(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["conflict_fraction"]) for r in rows])


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", type=Path, default=Path("diag_out"))
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--sigma-aug", type=float, default=0.3)
    args = ap.parse_args()

    args.workdir.mkdir(parents=True, exist_ok=True)
    data_path = args.workdir / "default.ltds"
    if not data_path.exists():
        cli.main(shlex.split(f"synth --seed 0 --out {data_path}"))

    base = trainer.TrainConfig(sigma_aug=args.sigma_aug)
    ce_tables, kr_tables, conflict = [], [], []
    for seed in range(args.seeds):
        for name, kw in (("ce", {}), ("kr", {"use_kr": True}),
                         ("krks", {"use_kr": True, "use_ks": True})):
            out = args.workdir / name / f"seed{seed}"
            trainer.run_experiment(replace(base, seed=seed, **kw), data_path, out)
        ce_tables.append(read_class_kl(args.workdir / "ce" / f"seed{seed}" / "class_kl.csv"))
        kr_tables.append(read_class_kl(args.workdir / "kr" / f"seed{seed}" / "class_kl.csv"))
        conflict.append(read_conflict_fraction(args.workdir / "krks" / f"seed{seed}" / "metrics.csv"))

    per_class = np.nanmean(np.stack([np.nanmean(t, axis=0) for t in ce_tables]), axis=0)
    rho, pvalue = stats.spearmanr(np.arange(per_class.size), per_class)
    ce_mean = float(np.mean([np.nanmean(t) for t in ce_tables]))
    kr_mean = float(np.mean([np.nanmean(t) for t in kr_tables]))
    cf = np.mean(np.stack(conflict), axis=0)

    print(f"adjacent-epoch KL vs rarity rank: spearman {rho:.3f} (p={pvalue:.2g})")
    print("per-class mean KL:", " ".join(f"{v:.4f}" for v in per_class))
    print(f"mean KL: ce {ce_mean:.4f} -> +review {kr_mean:.4f}")
    print(f"conflict fraction (KR+KS, no correction): mean {cf.mean():.3f}, "
          f"nonzero in {(cf > 0).mean():.0%} of epochs")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
