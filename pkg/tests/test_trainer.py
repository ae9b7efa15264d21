import json

import numpy as np
import pytest

from ltreflect import data, nn, reflect, trainer
from ltreflect.errors import NumericError, ParameterError

from oracles import baseline_run


def tiny_sets(seed=0, classes=5, dim=6):
    counts = data.longtail_counts(classes, 40, 10.0)
    pairs = [(0, classes - 1, 0.8)]
    train = data.synth_gaussians(classes, dim, counts, 3.0, 1.0, pairs, seed=seed)
    test = data.synth_gaussians(
        classes, dim, np.full(classes, 10), 3.0, 1.0, pairs, seed=seed, noise_seed=seed + 1
    )
    return train, test, data.split_classes(train.class_counts)


def tiny_cfg(**kw):
    base = dict(epochs=5, batch_size=16, lr=0.3, hidden_dim=8, sigma_aug=0.1, seed=3)
    base.update(kw)
    return trainer.TrainConfig(**base)


def same_float(a, b):
    return a == b or (isinstance(a, float) and np.isnan(a) and np.isnan(b))


def metrics_equal(a, b):
    for field in ("epoch", "acc_all", "acc_many", "acc_medium", "acc_few",
                  "loss_ltr", "loss_kr", "loss_ks", "loss_total", "conflict_fraction"):
        if not same_float(getattr(a, field), getattr(b, field)):
            return False
    return a.layer_conflict_rates == b.layer_conflict_rates


# --- config validation ----------------------------------------------------------


def test_config_rejects_kr_with_mse_ablation():
    with pytest.raises(ParameterError):
        trainer.TrainConfig(use_kr=True, use_mse_ablation=True)


@pytest.mark.parametrize(
    "kw",
    [
        {"ltr_loss": "focal"},
        {"alpha": 1.5},
        {"tau": 0.5},
        {"lr": 0.0},
        {"momentum": 1.0},
        {"sigma_aug": -0.1},
        {"epochs": 0},
    ],
)
def test_config_rejects_bad_values(kw):
    with pytest.raises(ParameterError):
        trainer.TrainConfig(**kw)


# --- reduction and warm-up --------------------------------------------------------


@pytest.mark.parametrize("ltr", ["ce", "bsce"])
def test_all_components_off_matches_plain_baseline_bitwise(ltr):
    train, test, split = tiny_sets()
    cfg = tiny_cfg(ltr_loss=ltr)
    expected = baseline_run(cfg, train, test, split)

    state = trainer.init_state(cfg, train)
    for epoch in range(cfg.epochs):
        state, metrics = trainer.train_epoch(state, train, cfg, test=test, split=split)
        ref_loss, ref_accs = expected[epoch]
        assert metrics.loss_ltr == ref_loss
        for key, value in ref_accs.items():
            assert same_float(getattr(metrics, key), value)
        assert metrics.loss_kr == 0.0 and metrics.loss_ks == 0.0


def test_warm_up_epoch_contributes_no_regularization():
    train, test, split = tiny_sets()
    on = tiny_cfg(use_kr=True, use_ks=True, use_kc=True, epochs=2)
    off = tiny_cfg(epochs=2)

    state_on = trainer.init_state(on, train)
    state_off = trainer.init_state(off, train)
    state_on, m_on = trainer.train_epoch(state_on, train, on)
    state_off, m_off = trainer.train_epoch(state_off, train, off)
    assert m_on.loss_kr == 0.0 and m_on.loss_ks == 0.0
    assert np.array_equal(
        nn.flatten_params(state_on.params), nn.flatten_params(state_off.params)
    )
    # second epoch: the cache exists, regularizers switch on
    state_on, m_on2 = trainer.train_epoch(state_on, train, on)
    assert m_on2.loss_kr > 0.0 or m_on2.loss_ks > 0.0


def test_two_runs_identical_metrics_stream():
    train, test, split = tiny_sets()
    cfg = tiny_cfg(use_kr=True, use_ks=True, use_kc=True)

    def collect():
        state = trainer.init_state(cfg, train)
        out = []
        for _ in range(cfg.epochs):
            state, m = trainer.train_epoch(state, train, cfg, test=test, split=split)
            out.append(m)
        return out

    for a, b in zip(collect(), collect()):
        assert metrics_equal(a, b)


# --- loss bookkeeping ----------------------------------------------------------------


def test_reported_losses_decompose():
    train, test, split = tiny_sets()
    cfg = tiny_cfg(use_kr=True, use_ks=True)
    state = trainer.init_state(cfg, train)
    for _ in range(cfg.epochs):
        state, m = trainer.train_epoch(state, train, cfg)
        assert abs(m.loss_total - (m.loss_ltr + m.loss_kr + m.loss_ks)) < 1e-9


def test_mse_ablation_replaces_the_review_divergence():
    train, test, split = tiny_sets()
    kr_cfg = tiny_cfg(use_kr=True, epochs=3)
    mse_cfg = tiny_cfg(use_mse_ablation=True, epochs=3)

    def second_epoch_aux(cfg):
        state = trainer.init_state(cfg, train)
        state, _ = trainer.train_epoch(state, train, cfg)
        state, m = trainer.train_epoch(state, train, cfg)
        return m.loss_kr

    kr_val = second_epoch_aux(kr_cfg)
    mse_val = second_epoch_aux(mse_cfg)
    assert kr_val > 0.0 and mse_val > 0.0
    assert kr_val != mse_val  # different matching functions, same filter


def test_non_finite_loss_aborts_with_diagnostic():
    train, test, split = tiny_sets()
    cfg = tiny_cfg(use_mse_ablation=True, lr=1e30, epochs=4)
    state = trainer.init_state(cfg, train)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(NumericError):
            for _ in range(cfg.epochs):
                state, _ = trainer.train_epoch(state, train, cfg)


# --- conflict correction in the loop ---------------------------------------------------


def test_kc_update_never_opposes_task_gradient():
    from ltreflect.conflict import cos_angle

    train, test, split = tiny_sets()
    cfg = tiny_cfg(use_kr=True, use_ks=True, use_kc=True)
    state = trainer.init_state(cfg, train)
    seen_aux = 0

    def check(step):
        nonlocal seen_aux
        if step["g_aux"] is None:
            return
        seen_aux += 1
        assert cos_angle(step["g_update"] - step["g_ltr"], step["g_ltr"]) >= -1e-9

    for _ in range(cfg.epochs):
        state, _ = trainer.train_epoch(state, train, cfg, on_step=check)
    assert seen_aux > 0


def test_kr_rows_for_previously_wrong_samples_get_zero_gradient():
    train, test, split = tiny_sets()
    cfg = tiny_cfg(use_kr=True)
    state = trainer.init_state(cfg, train)
    state, _ = trainer.train_epoch(state, train, cfg)  # builds the cache
    cache = state.cache
    wrong = ~cache.correct_mask
    if not wrong.any():
        pytest.skip("previous epoch classified everything correctly")
    idx = np.flatnonzero(wrong)[:4]
    out = reflect.kr_batch_loss(cache, idx, np.zeros((len(idx), train.num_classes)), cfg.tau)
    assert np.array_equal(out.dlogits, np.zeros_like(out.dlogits))


# --- evaluation -----------------------------------------------------------------------


def test_evaluate_oracle_model_is_perfect():
    classes, dim = 4, 5
    counts = np.full(classes, 30)
    train = data.synth_gaussians(classes, dim, counts, 50.0, 1e-3, seed=1)
    test = data.synth_gaussians(
        classes, dim, np.full(classes, 20), 50.0, 1e-3, seed=1, noise_seed=2
    )
    split = data.split_classes(train.class_counts)
    centers = np.stack(
        [train.features[train.labels == c].mean(axis=0) for c in range(classes)]
    ).astype(np.float64)
    params = nn.ModelParams(
        layers=[(centers, -0.5 * (centers**2).sum(axis=1))], hidden_dim=0
    )
    accs = trainer.evaluate(params, test, split)
    assert accs["acc_all"] == 1.0


def test_evaluate_constant_model_hits_chance():
    classes = 5
    test = data.synth_gaussians(classes, 4, np.full(classes, 40), 1.0, 1.0, seed=2)
    split = data.split_classes(np.full(classes, 500))
    bias = np.zeros(classes)
    bias[0] = 1.0
    params = nn.ModelParams(layers=[(np.zeros((classes, 4)), bias)], hidden_dim=0)
    accs = trainer.evaluate(params, test, split)
    assert accs["acc_all"] == 1.0 / classes


def test_evaluate_random_model_two_classes_binomial():
    test = data.synth_gaussians(2, 4, np.array([5000, 5000]), 0.0, 1.0, seed=3)
    split = data.split_classes(np.array([5000, 5000]))
    params = nn.init_params(4, 2, 0, np.random.default_rng(4))
    accs = trainer.evaluate(params, test, split)
    assert abs(accs["acc_all"] - 0.5) < 3 * np.sqrt(0.25 / 10_000)


def test_evaluate_rejects_empty_test_set():
    train, test, split = tiny_sets()
    empty = data.Dataset(
        features=np.zeros((0, train.dim), dtype=np.float32),
        labels=np.zeros(0, dtype=np.int64),
        class_counts=np.zeros(train.num_classes, dtype=np.int64),
    )
    params = nn.init_params(train.dim, train.num_classes, 0, np.random.default_rng(0))
    with pytest.raises(ParameterError):
        trainer.evaluate(params, empty, split)


# --- experiment artifacts --------------------------------------------------------------


def write_tiny_pair(tmp_path, seed=0):
    train, test, _ = tiny_sets(seed=seed)
    train_path = tmp_path / "tiny.ltds"
    data.save_dataset(train, train_path)
    data.save_dataset(test, trainer.default_test_path(train_path))
    return train_path


def test_run_experiment_writes_artifacts(tmp_path):
    train_path = write_tiny_pair(tmp_path)
    cfg = tiny_cfg(use_kr=True, use_ks=True, use_kc=True, epochs=3)
    summary = trainer.run_experiment(cfg, train_path, tmp_path / "run", echo="train --demo")
    for name in ("metrics.csv", "conflicts.csv", "class_kl.csv", "summary.json", "config.echo"):
        assert (tmp_path / "run" / name).exists()
    header = (tmp_path / "run" / "metrics.csv").read_text().splitlines()[0]
    assert header == ",".join(trainer.METRIC_COLUMNS)
    assert summary["final"]["epoch"] == 2
    loaded = json.loads((tmp_path / "run" / "summary.json").read_text())
    assert loaded["config"]["use_kr"] is True


def test_run_experiment_is_deterministic_on_disk(tmp_path):
    train_path = write_tiny_pair(tmp_path)
    cfg = tiny_cfg(use_kr=True, use_ks=True, epochs=3)
    trainer.run_experiment(cfg, train_path, tmp_path / "a", echo="x")
    trainer.run_experiment(cfg, train_path, tmp_path / "b", echo="x")
    for name in ("metrics.csv", "conflicts.csv", "class_kl.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_run_experiment_missing_dataset_names_path(tmp_path):
    cfg = tiny_cfg()
    with pytest.raises(FileNotFoundError, match="nowhere.ltds"):
        trainer.run_experiment(cfg, tmp_path / "nowhere.ltds", tmp_path / "run")


def test_ablation_grid_emits_eight_rows(tmp_path):
    train_path = write_tiny_pair(tmp_path)
    base = tiny_cfg(epochs=2)
    rows = trainer.run_ablation_grid(base, train_path, tmp_path / "grid", seeds=[0])
    assert len(rows) == 8
    assert {(r["kr"], r["ks"], r["kc"]) for r in rows} == {
        (kr, ks, kc) for kr in (0, 1) for ks in (0, 1) for kc in (0, 1)
    }
    assert (tmp_path / "grid" / "ablation.csv").exists()
