"""Command-line front end.

Commands: synth (write a long-tail dataset pair), train (one run),
ablate (2^3 component grid), analyze-kl / analyze-conflicts (post-hoc
summaries of a run directory). Exit codes: 0 success, 2 usage error,
1 runtime error. Every run echoes its fully resolved flag line, which can
be fed back verbatim to reproduce the run.
"""

from __future__ import annotations

import argparse
import json
import shlex
import sys
from pathlib import Path

import numpy as np

from . import data, trainer
from .errors import FormatError, NumericError, ParameterError, StateError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ltreflect",
        description="Long-tail training engine with review/summary/correction regularizers.",
    )
    sub = parser.add_subparsers(dest="cmd")

    p = sub.add_parser("synth", help="synthesize a long-tail train set and balanced test set")
    p.add_argument("--classes", type=int, default=20)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--n-max", type=int, default=200, help="largest class count")
    p.add_argument("--if", dest="imbalance_factor", type=float, default=100.0,
                   help="imbalance factor n_max/n_min")
    p.add_argument("--class-sep", type=float, default=3.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--pairs", type=int, default=4,
                   help="number of head/tail pairs with overlapping centers; "
                        "pair i couples head class i with the mid-tail class C//2+i, "
                        "placing the paired tails inside the few-shot bucket")
    p.add_argument("--overlap", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-size", type=int, default=50, help="balanced test samples per class")
    p.add_argument("--out", required=True, help="train file path; test split goes to <stem>.test<ext>")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one configuration")
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="run the 2^3 {KR,KS,KC} component grid")
    _add_train_flags(p, components=False)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=1, help="number of seeds per cell (base --seed, consecutive)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("analyze-kl", help="summarize the per-class divergence series of a run")
    p.add_argument("--run", required=True, help="run directory holding class_kl.csv")
    p.add_argument("--out", default=None, help="output JSON (default <run>/kl_analysis.json)")
    p.set_defaults(func=cmd_analyze_kl)

    p = sub.add_parser("analyze-conflicts", help="summarize the conflict series of a run")
    p.add_argument("--run", required=True, help="run directory holding conflicts.csv")
    p.add_argument("--out", default=None, help="output JSON (default <run>/conflict_analysis.json)")
    p.set_defaults(func=cmd_analyze_conflicts)

    return parser


def _add_train_flags(p: argparse.ArgumentParser, components: bool = True) -> None:
    p.add_argument("--data", required=True, help="train dataset file")
    p.add_argument("--test-data", default=None, help="test dataset file (default: <data stem>.test<ext>)")
    p.add_argument("--ltr", choices=["ce", "bsce"], default="ce")
    if components:
        p.add_argument("--kr", action="store_true", help="enable review distillation")
        p.add_argument("--ks", action="store_true", help="enable similarity soft labels")
        p.add_argument("--kc", action="store_true", help="enable conflict projection")
        p.add_argument("--mse-ablation", action="store_true",
                       help="replace the review KL with direct logit MSE")
    p.add_argument("--tau", type=float, default=2.0)
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma-aug", type=float, default=0.0)
    p.add_argument("--hidden", type=int, default=32, help="hidden width (0 = linear model)")


def _config_from_args(args) -> trainer.TrainConfig:
    return trainer.TrainConfig(
        ltr_loss=args.ltr,
        use_kr=getattr(args, "kr", False),
        use_ks=getattr(args, "ks", False),
        use_kc=getattr(args, "kc", False),
        use_mse_ablation=getattr(args, "mse_ablation", False),
        tau=args.tau,
        alpha=args.alpha,
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        momentum=args.momentum,
        sigma_aug=args.sigma_aug,
        seed=args.seed,
        hidden_dim=args.hidden,
    )


def train_echo(cfg: trainer.TrainConfig, data_path, out_dir, test_path=None) -> str:
    """The resolved flag line; feeding it back reproduces the run."""
    parts = ["train", "--data", str(data_path), "--out", str(out_dir), "--ltr", cfg.ltr_loss]
    for flag, on in (
        ("--kr", cfg.use_kr),
        ("--ks", cfg.use_ks),
        ("--kc", cfg.use_kc),
        ("--mse-ablation", cfg.use_mse_ablation),
    ):
        if on:
            parts.append(flag)
    parts += [
        "--tau", repr(cfg.tau),
        "--alpha", repr(cfg.alpha),
        "--epochs", str(cfg.epochs),
        "--batch", str(cfg.batch_size),
        "--lr", repr(cfg.lr),
        "--momentum", repr(cfg.momentum),
        "--seed", str(cfg.seed),
        "--sigma-aug", repr(cfg.sigma_aug),
        "--hidden", str(cfg.hidden_dim),
    ]
    if test_path is not None:
        parts += ["--test-data", str(test_path)]
    return shlex.join(parts)


def cmd_synth(args) -> int:
    counts = data.longtail_counts(args.classes, args.n_max, args.imbalance_factor)
    if args.pairs < 0 or 2 * args.pairs > args.classes:
        raise ParameterError(f"--pairs must be in [0, {args.classes // 2}]")
    pairs = [(i, args.classes // 2 + i, args.overlap) for i in range(args.pairs)]
    train = data.synth_gaussians(
        args.classes, args.dim, counts,
        class_sep=args.class_sep, noise_sigma=args.noise,
        similarity_pairs=pairs, seed=args.seed, name="train",
    )
    test = data.synth_gaussians(
        args.classes, args.dim, np.full(args.classes, args.test_size, dtype=np.int64),
        class_sep=args.class_sep, noise_sigma=args.noise,
        similarity_pairs=pairs, seed=args.seed, noise_seed=args.seed + 1, name="test",
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    test_out = trainer.default_test_path(out)
    data.save_dataset(train, out)
    data.save_dataset(test, test_out)
    echo = shlex.join(
        [
            "synth",
            "--classes", str(args.classes),
            "--dim", str(args.dim),
            "--n-max", str(args.n_max),
            "--if", repr(args.imbalance_factor),
            "--class-sep", repr(args.class_sep),
            "--noise", repr(args.noise),
            "--pairs", str(args.pairs),
            "--overlap", repr(args.overlap),
            "--seed", str(args.seed),
            "--test-size", str(args.test_size),
            "--out", str(out),
        ]
    )
    print(echo)
    print(
        f"wrote {out} ({train.num_samples} samples, counts {counts[0]}..{counts[-1]}) "
        f"and {test_out} ({test.num_samples} samples)"
    )
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    echo = train_echo(cfg, args.data, args.out, args.test_data)
    print(echo)
    summary = trainer.run_experiment(
        cfg, args.data, args.out, test_path=args.test_data, echo=echo
    )
    final = summary["final"]
    print(
        f"final: acc_all={final['acc_all']:.4f} acc_many={final['acc_many']:.4f} "
        f"acc_medium={final['acc_medium']:.4f} acc_few={final['acc_few']:.4f}"
    )
    return 0


def cmd_ablate(args) -> int:
    base = _config_from_args(args)
    seeds = [base.seed + i for i in range(args.seeds)]
    rows = trainer.run_ablation_grid(
        base, args.data, args.out, seeds, test_path=args.test_data
    )
    for row in rows:
        print(
            f"kr={row['kr']} ks={row['ks']} kc={row['kc']} "
            f"acc_all={row['mean_acc_all']:.4f} acc_few={row['mean_acc_few']:.4f}"
        )
    return 0


def _read_csv_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    import csv as _csv

    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        rows = list(reader)
    return rows[0], rows[1:]


def cmd_analyze_kl(args) -> int:
    from scipy import stats

    run = Path(args.run)
    header, rows = _read_csv_rows(run / "class_kl.csv")
    if not rows:
        raise StateError(f"no divergence rows recorded in {run / 'class_kl.csv'}")
    table = np.array([[float(v) for v in r[1:]] for r in rows])
    per_class_mean = np.nanmean(table, axis=0)
    # classes are stored in decreasing-count order, so the class index is
    # already the rarity rank
    usable = ~np.isnan(per_class_mean)
    rho, pvalue = stats.spearmanr(
        np.arange(len(per_class_mean))[usable], per_class_mean[usable]
    )
    payload = {
        "epochs": len(rows),
        "per_class_mean_kl": [float(v) for v in per_class_mean],
        "mean_kl": float(np.nanmean(per_class_mean)),
        "spearman_rarity": float(rho),
        "spearman_pvalue": float(pvalue),
    }
    out = Path(args.out) if args.out else run / "kl_analysis.json"
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(
        f"mean adjacent-epoch KL {payload['mean_kl']:.5f}, "
        f"rarity-rank spearman {payload['spearman_rarity']:.3f} -> {out}"
    )
    return 0


def cmd_analyze_conflicts(args) -> int:
    run = Path(args.run)
    header, rows = _read_csv_rows(run / "conflicts.csv")
    if not rows:
        raise StateError(f"no conflict rows recorded in {run / 'conflicts.csv'}")
    layers: dict[str, list[int]] = {}
    fractions: dict[int, float] = {}
    for epoch, name, flag, fraction in rows:
        layers.setdefault(name, []).append(int(flag))
        fractions[int(epoch)] = float(fraction)
    series = [fractions[e] for e in sorted(fractions)]
    payload = {
        "epochs": len(series),
        "per_layer_conflict_rate": {k: float(np.mean(v)) for k, v in layers.items()},
        "fraction_mean": float(np.mean(series)),
        "fraction_nonzero_share": float(np.mean([f > 0 for f in series])),
    }
    out = Path(args.out) if args.out else run / "conflict_analysis.json"
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(
        f"conflict fraction mean {payload['fraction_mean']:.3f}, "
        f"nonzero in {payload['fraction_nonzero_share']:.0%} of epochs -> {out}"
    )
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "cmd", None) is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        if getattr(args, "kr", False) and getattr(args, "mse_ablation", False):
            raise ParameterError("--kr conflicts with --mse-ablation")
        return args.func(args)
    except ParameterError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, StateError, NumericError, OSError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
