import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from errors import DimensionMismatchError, EmptyDatasetError, InvalidConfigError
from models import (
    BoundedInterval,
    ContextDataset,
    LinearCoefficients,
    SplitPlan,
    ols_fit,
    predict_linear,
    read_dataset,
    split,
    write_dataset,
)


def _dataset(n=10, seed=0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.uniform(0, 1, (n, 2))])
    Y = np.column_stack([X @ np.array([1.0, 2.0, -1.0]), rng.uniform(1, 2, n)])
    return ContextDataset(X, Y, ("alpha", "beta"))


def test_predict_linear_single_and_batch():
    w = LinearCoefficients([1.0, 2.0])
    assert predict_linear(w, [1.0, 3.0]) == pytest.approx(7.0)
    assert predict_linear(w, np.array([[1.0, 0.0], [1.0, 1.0]])) == pytest.approx([1.0, 3.0])


def test_predict_linear_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        predict_linear([1.0, 2.0], [1.0, 2.0, 3.0])


def test_bounded_interval_validation_and_clip():
    b = BoundedInterval(0.0, 2.0)
    assert b.clip(3.0) == 2.0
    assert b.clip(-1.0) == 0.0
    assert b.width == 2.0
    with pytest.raises(InvalidConfigError):
        BoundedInterval(1.0, 0.0)
    with pytest.raises(InvalidConfigError):
        BoundedInterval(0.0, np.inf)


def test_dataset_validation():
    with pytest.raises(DimensionMismatchError):
        ContextDataset(np.ones((3, 2)), np.ones((2, 1)))
    with pytest.raises(EmptyDatasetError):
        ContextDataset(np.ones((0, 2)), np.ones((0, 1)))
    data = _dataset()
    assert data.outcome("beta").shape == (10,)
    with pytest.raises(DimensionMismatchError):
        data.outcome("gamma")


def test_dataset_arrays_are_read_only():
    data = _dataset()
    with pytest.raises(ValueError):
        data.contexts[0, 0] = 5.0


def test_ols_recovers_noiseless_coefficients():
    w = ols_fit(_dataset(), 0)
    assert w.w == pytest.approx([1.0, 2.0, -1.0], abs=1e-9)
    assert not w.rank_deficient


def test_ols_rank_deficient_returns_minimum_norm():
    X = np.column_stack([np.ones(4), np.ones(4)])
    data = ContextDataset(X, np.full((4, 1), 2.0))
    w = ols_fit(data)
    assert w.rank_deficient
    assert w.w == pytest.approx([1.0, 1.0])


def test_ols_matches_sampling_theory():
    rng = np.random.default_rng(7)
    n = 200
    x = rng.uniform(0, 2, n)
    X = np.column_stack([np.ones(n), x])
    y = 5 + 3 * x + rng.normal(0, 1, n)
    w = ols_fit(ContextDataset(X, y[:, None])).w
    se = np.sqrt(np.diag(np.linalg.inv(X.T @ X)))
    assert np.all(np.abs(w - [5.0, 3.0]) <= 3 * se)


def test_split_partitions_each_bin():
    data = _dataset(n=25)
    plan = SplitPlan(bin_size=10, train_fraction=0.8, repeats=2, seed=3)
    splits = split(data, plan)
    assert len(splits) == 4
    for s in splits:
        assert len(s.train) == 8 and len(s.test) == 2
        both = np.sort(np.concatenate([s.train_index, s.test_index]))
        assert both == pytest.approx(np.arange(10) + 10 * s.bin_index)
        assert np.all(np.diff(s.train_index) > 0)


def test_split_is_reproducible():
    data = _dataset(n=20)
    plan = SplitPlan(bin_size=10, repeats=3, seed=11)
    first = [s.test_index.tolist() for s in split(data, plan)]
    second = [s.test_index.tolist() for s in split(data, plan)]
    assert first == second


def test_split_rejects_oversized_bins():
    with pytest.raises(InvalidConfigError):
        split(_dataset(n=5), SplitPlan(bin_size=10))


@given(st.integers(min_value=2, max_value=60), st.floats(min_value=0.05, max_value=0.95))
def test_split_plan_sizes_are_consistent(bin_size, fraction):
    plan = SplitPlan(bin_size=bin_size, train_fraction=fraction, repeats=1)
    data = _dataset(n=bin_size)
    if not 0 < plan.train_size < bin_size:
        with pytest.raises(InvalidConfigError):
            split(data, plan)
        return
    (s,) = split(data, plan)
    assert len(s.train) + len(s.test) == bin_size


def test_dataset_csv_roundtrip(tmp_path):
    data = _dataset()
    path = tmp_path / "data.csv"
    write_dataset(data, path)
    back = read_dataset(path)
    assert back.outcome_names == ("alpha", "beta")
    assert back.contexts == pytest.approx(data.contexts)
    assert back.outcomes == pytest.approx(data.outcomes)


def test_read_dataset_requires_feature_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(InvalidConfigError):
        read_dataset(path)
