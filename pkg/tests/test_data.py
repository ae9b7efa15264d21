import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltreflect import data
from ltreflect.errors import FormatError, ParameterError


# --- count profile -----------------------------------------------------------


def test_counts_balanced_when_if_is_one():
    counts = data.longtail_counts(10, 200, 1.0)
    assert np.array_equal(counts, np.full(10, 200))


def test_counts_two_class_closed_form():
    assert np.array_equal(data.longtail_counts(2, 100, 100.0), [100, 1])


def test_counts_cifar_style_profile():
    counts = data.longtail_counts(100, 500, 100.0)
    assert counts[0] == 500
    assert counts[-1] == 5


def test_counts_reject_bad_imbalance():
    with pytest.raises(ParameterError):
        data.longtail_counts(10, 100, 0.5)


@given(
    st.integers(2, 60),
    st.integers(10, 2000),
    st.floats(1.0, 500.0, allow_nan=False),
)
def test_counts_non_increasing_with_matching_extremes(classes, n_max, factor):
    if n_max < factor:
        n_max = int(factor) + 1
    counts = data.longtail_counts(classes, n_max, factor)
    assert (np.diff(counts) <= 0).all()
    assert counts[0] == n_max
    # the smallest count is the ideal n_max/IF up to one rounding unit
    assert counts[-1] == max(1, int(np.floor(n_max / factor + 0.5)))


# --- synthesis -----------------------------------------------------------------


def test_synth_separable_limit_is_perfectly_classifiable():
    counts = np.full(5, 30)
    ds = data.synth_gaussians(5, 8, counts, class_sep=50.0, noise_sigma=1e-6, seed=3)
    # independent oracle: nearest estimated class mean
    means = np.stack([ds.features[ds.labels == c].mean(axis=0) for c in range(5)])
    dists = ((ds.features[:, None, :] - means[None]) ** 2).sum(axis=2)
    assert (dists.argmin(axis=1) == ds.labels).mean() == 1.0


def test_synth_full_overlap_collapses_pair_centers():
    counts = np.full(4, 50)
    ds = data.synth_gaussians(
        4, 6, counts, class_sep=5.0, noise_sigma=1e-9, similarity_pairs=[(0, 3, 1.0)], seed=4
    )
    head = ds.features[ds.labels == 0].mean(axis=0)
    tail = ds.features[ds.labels == 3].mean(axis=0)
    assert np.allclose(head, tail, atol=1e-6)


def test_synth_default_config_is_seed_deterministic():
    counts = data.longtail_counts(20, 500, 100.0)
    pairs = [(i, 19 - i, 0.8) for i in range(4)]
    a = data.synth_gaussians(20, 32, counts, 3.0, 1.0, pairs, seed=7)
    b = data.synth_gaussians(20, 32, counts, 3.0, 1.0, pairs, seed=7)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)


def test_synth_independent_noise_seed_shares_centers_only():
    counts = np.full(3, 40)
    a = data.synth_gaussians(3, 4, counts, 10.0, 0.5, seed=5)
    b = data.synth_gaussians(3, 4, counts, 10.0, 0.5, seed=5, noise_seed=6)
    assert not np.array_equal(a.features, b.features)
    for c in range(3):
        assert np.allclose(
            a.features[a.labels == c].mean(axis=0),
            b.features[b.labels == c].mean(axis=0),
            atol=0.5,
        )


def test_synth_rejects_tiny_dim():
    with pytest.raises(ParameterError):
        data.synth_gaussians(3, 1, np.full(3, 5))


# --- class splits ----------------------------------------------------------------


def test_split_all_many():
    part = data.split_classes(np.full(6, 500))
    assert np.array_equal(part["many"], np.arange(6))
    assert part["medium"].size == 0 and part["few"].size == 0


def test_split_threshold_edges():
    part = data.split_classes([101, 100, 20, 19])
    assert np.array_equal(part["many"], [0])
    assert np.array_equal(part["medium"], [1, 2])
    assert np.array_equal(part["few"], [3])


def test_split_single_few_class():
    part = data.split_classes([5])
    assert np.array_equal(part["few"], [0])


@given(st.lists(st.integers(1, 1000), min_size=1, max_size=40))
def test_split_is_a_partition(counts):
    part = data.split_classes(sorted(counts, reverse=True))
    merged = np.concatenate([part["many"], part["medium"], part["few"]])
    assert sorted(merged.tolist()) == list(range(len(counts)))


# --- augmentation ------------------------------------------------------------------


def test_augment_zero_sigma_is_identity():
    batch = np.random.default_rng(0).normal(size=(8, 3))
    out = data.augment(batch, 0.0, seed=1)
    assert np.array_equal(out, batch)
    assert out is not batch


def test_augment_fixed_seed_reproduces():
    batch = np.zeros((4, 4))
    a = data.augment(batch, 0.3, seed=9)
    b = data.augment(batch, 0.3, seed=9)
    assert np.array_equal(a, b)


def test_augment_noise_scale_monte_carlo():
    batch = np.zeros((10_000, 8))
    out = data.augment(batch, 0.1, seed=10)
    stds = (out - batch).std(axis=0)
    assert np.all(np.abs(stds - 0.1) < 0.005)  # within 5% of 0.1


# --- persistence ---------------------------------------------------------------------


def make_dataset(seed=0, classes=4):
    counts = data.longtail_counts(classes, 40, 10.0)
    return data.synth_gaussians(classes, 5, counts, 4.0, 1.0, seed=seed)


def test_save_load_round_trip(tmp_path):
    ds = make_dataset()
    path = tmp_path / "ds.ltds"
    data.save_dataset(ds, path)
    loaded = data.load_dataset(path)
    assert np.array_equal(loaded.features, ds.features)
    assert np.array_equal(loaded.labels, ds.labels)
    assert np.array_equal(loaded.class_counts, ds.class_counts)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_save_load_round_trip_property(tmp_path_factory, seed):
    ds = make_dataset(seed=seed, classes=3)
    path = tmp_path_factory.mktemp("rt") / "ds.ltds"
    data.save_dataset(ds, path)
    loaded = data.load_dataset(path)
    assert np.array_equal(loaded.features, ds.features)
    assert np.array_equal(loaded.labels, ds.labels)


def test_load_rejects_bad_magic(tmp_path):
    ds = make_dataset()
    path = tmp_path / "ds.ltds"
    data.save_dataset(ds, path)
    blob = bytearray(path.read_bytes())
    blob[0:4] = b"XXXX"
    path.write_bytes(blob)
    with pytest.raises(FormatError) as err:
        data.load_dataset(path)
    assert err.value.offset == 0


def test_load_rejects_truncation(tmp_path):
    ds = make_dataset()
    path = tmp_path / "ds.ltds"
    data.save_dataset(ds, path)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(FormatError):
        data.load_dataset(path)


def test_load_rejects_count_mismatch(tmp_path):
    ds = make_dataset()
    path = tmp_path / "ds.ltds"
    data.save_dataset(ds, path)
    blob = bytearray(path.read_bytes())
    # bump the last class count so sum(counts) != N
    count_off = 20 + 4 * ds.num_samples * ds.dim + 4 * ds.num_samples
    last_off = count_off + 4 * (ds.num_classes - 1)
    old = int.from_bytes(blob[last_off : last_off + 4], "little")
    blob[last_off : last_off + 4] = (old + 1).to_bytes(4, "little")
    path.write_bytes(blob)
    with pytest.raises(FormatError) as err:
        data.load_dataset(path)
    assert err.value.offset == count_off


def test_dataset_invariants_rejected_in_memory():
    with pytest.raises(ParameterError):
        data.Dataset(
            features=np.zeros((3, 2), dtype=np.float32),
            labels=np.array([0, 0, 1]),
            class_counts=np.array([1, 2]),  # ascending counts + frequency mismatch
        )
