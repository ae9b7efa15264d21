"""Training orchestration: per-batch loss assembly, two-pass backward,
conflict-corrected updates, per-epoch memory refresh, evaluation buckets,
and the on-disk run artifacts (metrics/conflicts/divergence CSVs).
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import conflict, data, losses, nn, reflect
from .errors import NumericError, ParameterError

METRIC_COLUMNS = [
    "epoch",
    "acc_all",
    "acc_many",
    "acc_medium",
    "acc_few",
    "loss_ltr",
    "loss_kr",
    "loss_ks",
    "conflict_fraction",
]


@dataclass
class TrainConfig:
    ltr_loss: str = "ce"  # ce | bsce
    use_kr: bool = False
    use_ks: bool = False
    use_kc: bool = False
    use_mse_ablation: bool = False
    tau: float = 2.0
    alpha: float = 0.9
    epochs: int = 40
    batch_size: int = 16
    lr: float = 0.05
    momentum: float = 0.9
    sigma_aug: float = 0.0
    seed: int = 0
    hidden_dim: int = 32  # 0 = linear classifier
    normalize_soft_labels: bool = False  # rescale soft-target rows to unit mass

    def __post_init__(self):
        if self.ltr_loss not in ("ce", "bsce"):
            raise ParameterError(f"ltr_loss must be 'ce' or 'bsce', got {self.ltr_loss!r}")
        if self.use_mse_ablation and self.use_kr:
            raise ParameterError("use_mse_ablation excludes use_kr")
        if not (0.0 <= self.alpha <= 1.0):
            raise ParameterError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.tau < 1.0:
            raise ParameterError(f"tau must be >= 1, got {self.tau}")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ParameterError("epochs and batch_size must be positive")
        if self.lr <= 0:
            raise ParameterError(f"lr must be positive, got {self.lr}")
        if not (0.0 <= self.momentum < 1.0):
            raise ParameterError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.sigma_aug < 0:
            raise ParameterError(f"sigma_aug must be >= 0, got {self.sigma_aug}")
        if self.hidden_dim < 0:
            raise ParameterError(f"hidden_dim must be >= 0, got {self.hidden_dim}")


@dataclass
class EpochMetrics:
    epoch: int
    acc_all: float = float("nan")
    acc_many: float = float("nan")
    acc_medium: float = float("nan")
    acc_few: float = float("nan")
    loss_ltr: float = 0.0
    loss_kr: float = 0.0
    loss_ks: float = 0.0
    loss_total: float = 0.0
    conflict_fraction: float = 0.0
    layer_conflict_rates: dict[str, float] = field(default_factory=dict)


@dataclass
class TrainerState:
    params: nn.ModelParams
    velocity: np.ndarray
    shuffle_rng: np.random.Generator
    augment_rng: np.random.Generator
    epoch: int = 0
    cache: reflect.EpochCache | None = None
    centers: reflect.ClassCenters | None = None
    soft_labels: reflect.SoftLabels | None = None


def rng_streams(seed: int) -> tuple[np.random.Generator, ...]:
    """Independent (init, shuffle, augment) streams so ablations that share
    a seed also share init, batch order, and augmentation noise."""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)


def init_state(cfg: TrainConfig, dataset: data.Dataset) -> TrainerState:
    init_rng, shuffle_rng, augment_rng = rng_streams(cfg.seed)
    params = nn.init_params(dataset.dim, dataset.num_classes, cfg.hidden_dim, init_rng)
    return TrainerState(
        params=params,
        velocity=np.zeros(params.num_params),
        shuffle_rng=shuffle_rng,
        augment_rng=augment_rng,
    )


def assemble_batch_losses(
    cfg: TrainConfig,
    logits: np.ndarray,
    indices: np.ndarray,
    labels: np.ndarray,
    class_counts: np.ndarray,
    cache: reflect.EpochCache | None,
    soft_labels: reflect.SoftLabels | None,
):
    """Returns (ltr, kr, ks, total). kr/ks are None while inactive (warm-up
    epoch has no cache, so both regularizers contribute nothing)."""
    if cfg.ltr_loss == "bsce":
        ltr = losses.bsce_loss(logits, labels, class_counts)
    else:
        ltr = losses.ce_loss(logits, labels)
    kr = ks = None
    if cache is not None:
        if cfg.use_kr:
            kr = reflect.kr_batch_loss(cache, indices, logits, cfg.tau)
        elif cfg.use_mse_ablation:
            kr = reflect.mse_batch_loss(cache, indices, logits)
        if cfg.use_ks and soft_labels is not None:
            ks = losses.soft_ce(logits, soft_labels.y_hat[labels])
    total = ltr.value
    total += kr.value if kr is not None else 0.0
    total += ks.value if ks is not None else 0.0
    return ltr, kr, ks, total


def train_epoch(
    state: TrainerState,
    dataset: data.Dataset,
    cfg: TrainConfig,
    test: data.Dataset | None = None,
    split: dict[str, np.ndarray] | None = None,
    on_step=None,
) -> tuple[TrainerState, EpochMetrics]:
    """One shuffled pass; refreshes the prediction cache and class centers
    at the end. Accuracy fields are filled when a test set is supplied."""
    n = dataset.num_samples
    lr = cfg.lr * (1.0 - state.epoch / cfg.epochs)
    order = state.shuffle_rng.permutation(n)
    next_cache = reflect.empty_cache(n, dataset.num_classes, state.epoch)
    store = reflect.FeatureStore(dataset.num_classes)
    spans = state.params.layer_spans()
    layer_hits = np.zeros(len(spans))
    sums = {"ltr": 0.0, "kr": 0.0, "ks": 0.0, "total": 0.0, "conflict": 0.0}
    batches = 0
    aux_batches = 0

    for start in range(0, n, cfg.batch_size):
        idx = order[start : start + cfg.batch_size]
        x = data.augment(dataset.features[idx], cfg.sigma_aug, state.augment_rng)
        y = dataset.labels[idx]
        rec = nn.forward(state.params, x)
        ltr, kr, ks, total = assemble_batch_losses(
            cfg, rec.logits, idx, y, dataset.class_counts, state.cache, state.soft_labels
        )
        for name, out in (("ltr", ltr), ("kr", kr), ("ks", ks)):
            if out is not None and not np.isfinite(out.value):
                raise NumericError(
                    f"non-finite {name} loss at epoch {state.epoch}, batch {batches}"
                )

        g_ltr = nn.backward(state.params, rec, ltr.dlogits)
        g_aux = None
        conflicted = False
        if kr is not None or ks is not None:
            aux_dlogits = np.zeros_like(rec.logits)
            if kr is not None:
                aux_dlogits += kr.dlogits
            if ks is not None:
                aux_dlogits += ks.dlogits
            g_aux = nn.backward(state.params, rec, aux_dlogits)
            pair = conflict.GradPair(g_ltr=g_ltr, g_aux=g_aux, layer_spans=spans)
            stats = conflict.conflict_stats(pair)
            layer_hits += stats.conflicted
            sums["conflict"] += stats.fraction
            aux_batches += 1
            if cfg.use_kc:
                g_update, conflicted = conflict.project_if_conflict(pair)
            else:
                g_update = g_ltr + g_aux
        else:
            g_update = g_ltr

        nn.sgd_step(state.params, g_update, lr, cfg.momentum, state.velocity)
        reflect.cache_update(next_cache, idx, rec.logits, y)
        store.add(y, rec.features)

        sums["ltr"] += ltr.value
        sums["kr"] += kr.value if kr is not None else 0.0
        sums["ks"] += ks.value if ks is not None else 0.0
        sums["total"] += total
        if on_step is not None:
            on_step(
                {
                    "epoch": state.epoch,
                    "batch": batches,
                    "g_ltr": g_ltr,
                    "g_aux": g_aux,
                    "g_update": g_update,
                    "conflicted": conflicted,
                }
            )
        batches += 1

    state.cache = next_cache
    state.centers = reflect.class_centers_median(store.drain())
    if state.centers.valid.all():
        state.soft_labels = reflect.build_soft_labels(
            state.centers, cfg.alpha, normalize=cfg.normalize_soft_labels
        )
    else:
        state.soft_labels = None

    metrics = EpochMetrics(
        epoch=state.epoch,
        loss_ltr=sums["ltr"] / batches,
        loss_kr=sums["kr"] / batches,
        loss_ks=sums["ks"] / batches,
        loss_total=sums["total"] / batches,
        conflict_fraction=sums["conflict"] / aux_batches if aux_batches else 0.0,
        layer_conflict_rates=(
            {name: float(hits / aux_batches) for (name, _, _), hits in zip(spans, layer_hits)}
            if aux_batches
            else {}
        ),
    )
    if test is not None and split is not None:
        for key, value in evaluate(state.params, test, split).items():
            setattr(metrics, key, value)
    state.epoch += 1
    return state, metrics


def evaluate(
    params: nn.ModelParams, test_set: data.Dataset, split: dict[str, np.ndarray]
) -> dict[str, float]:
    """Top-1 accuracy overall and per many/medium/few bucket. Buckets come
    from the *training* class counts; acc_all averages over samples, not
    over buckets. Empty buckets report NaN."""
    if test_set.num_samples == 0:
        raise ParameterError("empty test set")
    logits = nn.forward(params, test_set.features.astype(np.float64)).logits
    correct = logits.argmax(axis=1) == test_set.labels
    out = {"acc_all": float(correct.mean())}
    for bucket in ("many", "medium", "few"):
        rows = np.isin(test_set.labels, split[bucket])
        out[f"acc_{bucket}"] = float(correct[rows].mean()) if rows.any() else float("nan")
    return out


def default_test_path(dataset_path) -> Path:
    """data/foo.ltds -> data/foo.test.ltds (the synth command's convention)."""
    p = Path(dataset_path)
    if p.suffix:
        return p.with_suffix(".test" + p.suffix)
    return Path(str(p) + ".test")


def _fmt(value) -> str:
    return repr(float(value))


def write_metrics_csv(path, history: list[EpochMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for m in history:
            writer.writerow(
                [str(m.epoch)] + [_fmt(getattr(m, col)) for col in METRIC_COLUMNS[1:]]
            )


def write_conflicts_csv(path, rows) -> None:
    """rows = (epoch, layer_name, conflicted 0/1, epoch conflict fraction)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "layer_name", "conflicted", "fraction"])
        for epoch, name, flag, fraction in rows:
            writer.writerow([str(epoch), name, str(int(flag)), _fmt(fraction)])


def run_experiment(
    cfg: TrainConfig, dataset_path, out_dir, test_path=None, echo: str | None = None
) -> dict:
    """Full training run; writes metrics.csv, conflicts.csv, class_kl.csv,
    similarity.csv, summary.json (and config.echo when the caller provides
    the resolved flag line). Returns the summary record."""
    train_path = Path(dataset_path)
    if not train_path.exists():
        raise FileNotFoundError(f"dataset file not found: {train_path}")
    tp = Path(test_path) if test_path is not None else default_test_path(train_path)
    if not tp.exists():
        raise FileNotFoundError(f"test dataset file not found: {tp}")
    train = data.load_dataset(train_path)
    test = data.load_dataset(tp)
    split = data.split_classes(train.class_counts)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    state = init_state(cfg, train)
    history: list[EpochMetrics] = []
    kl_rows = []
    conflict_rows = []
    prev_test_logits = None
    for _ in range(cfg.epochs):
        state, metrics = train_epoch(state, train, cfg, test=test, split=split)
        history.append(metrics)
        test_logits = nn.forward(state.params, test.features.astype(np.float64)).logits
        if prev_test_logits is not None:
            kl_rows.append(
                (
                    metrics.epoch,
                    reflect.per_class_adjacent_kl(
                        prev_test_logits,
                        test_logits,
                        test.labels,
                        num_classes=train.num_classes,
                    ),
                )
            )
        prev_test_logits = test_logits
        for name, rate in metrics.layer_conflict_rates.items():
            conflict_rows.append(
                (metrics.epoch, name, 1 if rate >= 0.5 else 0, metrics.conflict_fraction)
            )

    write_metrics_csv(out / "metrics.csv", history)
    write_conflicts_csv(out / "conflicts.csv", conflict_rows)
    reflect.write_class_kl_series(out / "class_kl.csv", kl_rows)
    if state.soft_labels is not None:
        reflect.write_matrix_csv(out / "similarity.csv", state.soft_labels.M)
    if echo is not None:
        (out / "config.echo").write_text(echo + "\n")

    final = history[-1]
    summary = {
        "config": asdict(cfg),
        "dataset": str(train_path),
        "test_dataset": str(tp),
        "epochs_run": len(history),
        "final": {col: getattr(final, col) for col in METRIC_COLUMNS},
        "echo": echo,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


GRID_CELLS = [
    (kr, ks, kc) for kr in (False, True) for ks in (False, True) for kc in (False, True)
]


def run_ablation_grid(
    base_cfg: TrainConfig, dataset_path, out_dir, seeds, test_path=None
) -> list[dict]:
    """All 2^3 component combinations, each over the given seeds; one
    aggregated row per cell, also written to ablation.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for kr, ks, kc in GRID_CELLS:
        cell_name = f"kr{int(kr)}_ks{int(ks)}_kc{int(kc)}"
        finals = []
        for seed in seeds:
            cfg = replace(base_cfg, use_kr=kr, use_ks=ks, use_kc=kc, seed=seed)
            summary = run_experiment(
                cfg, dataset_path, out / cell_name / f"seed{seed}", test_path=test_path
            )
            finals.append(summary["final"])
        row = {"kr": int(kr), "ks": int(ks), "kc": int(kc), "seeds": len(finals)}
        for key in ("acc_all", "acc_many", "acc_medium", "acc_few"):
            row[f"mean_{key}"] = float(np.mean([f[key] for f in finals]))
        rows.append(row)
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        header = list(rows[0].keys())
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [str(row[h]) if isinstance(row[h], int) else _fmt(row[h]) for h in header]
            )
    return rows
