# models.py
"""Shared data model: contextual datasets, linear predictors, bounds and splits."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass

import numpy as np
import pandas as pd

from errors import DimensionMismatchError, EmptyDatasetError, InvalidConfigError

logger = logging.getLogger("ctxopt.models")

FEATURE_COLUMN = re.compile(r"^x\d+$")

# A context vector is a 1-D float array; the first entry is the intercept 1.0.
ContextVector = np.ndarray


def _frozen(values, ndim):
    arr = np.array(values, dtype=float, ndmin=ndim)
    arr.setflags(write=False)
    return arr


# ----- Core domain -----

@dataclass(frozen=True)
class BoundedInterval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise InvalidConfigError(f"bounds must be finite, got [{self.lo}, {self.hi}]")
        if self.lo > self.hi:
            raise InvalidConfigError(f"empty interval [{self.lo}, {self.hi}]")
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def scale(self) -> float:
        return max(abs(self.lo), abs(self.hi), 1e-12)

    def clip(self, value):
        return np.clip(value, self.lo, self.hi)

    def contains(self, value, tol: float = 0.0):
        return (np.asarray(value) >= self.lo - tol) & (np.asarray(value) <= self.hi + tol)

    def scaled(self, factor: float) -> "BoundedInterval":
        return BoundedInterval(self.lo * factor, self.hi * factor)


@dataclass(frozen=True, eq=False)
class LinearCoefficients:
    w: np.ndarray
    rank_deficient: bool = False  # set by ols_fit when the normal matrix is singular

    def __post_init__(self):
        w = _frozen(self.w, 1)
        if w.ndim != 1:
            raise DimensionMismatchError(f"coefficients must be a vector, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise InvalidConfigError("coefficients must be finite")
        object.__setattr__(self, "w", w)

    def __len__(self):
        return self.w.shape[0]

    def __repr__(self):
        return f"<LinearCoefficients {np.array2string(self.w, precision=4)}>"

    def scaled(self, factor: float) -> "LinearCoefficients":
        return LinearCoefficients(self.w * factor, self.rank_deficient)


@dataclass(frozen=True, eq=False)
class ContextDataset:
    contexts: np.ndarray                  # N x p, first column conventionally 1.0
    outcomes: np.ndarray                  # N x m
    outcome_names: tuple[str, ...] = ()

    def __post_init__(self):
        contexts = _frozen(self.contexts, 2)
        outcomes = _frozen(self.outcomes, 2)
        if contexts.shape[0] == 0 or contexts.size == 0:
            raise EmptyDatasetError("dataset has no samples")
        if outcomes.shape[0] != contexts.shape[0]:
            if outcomes.shape[1] == contexts.shape[0] and outcomes.shape[0] == 1:
                outcomes = _frozen(outcomes.T, 2)
            else:
                raise DimensionMismatchError(
                    f"{contexts.shape[0]} contexts but {outcomes.shape[0]} outcomes"
                )
        if not np.all(np.isfinite(contexts)):
            raise InvalidConfigError("contexts must be finite")
        names = tuple(self.outcome_names) or tuple(f"y{j + 1}" for j in range(outcomes.shape[1]))
        if len(names) != outcomes.shape[1]:
            raise DimensionMismatchError(
                f"{len(names)} outcome names for {outcomes.shape[1]} outcome columns"
            )
        object.__setattr__(self, "contexts", contexts)
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "outcome_names", names)

    def __len__(self):
        return self.contexts.shape[0]

    def __repr__(self):
        return f"<ContextDataset N={len(self)} p={self.feature_dim} outcomes={self.outcome_names}>"

    @property
    def feature_dim(self) -> int:
        return self.contexts.shape[1]

    @property
    def outcome_dim(self) -> int:
        return self.outcomes.shape[1]

    def outcome(self, key) -> np.ndarray:
        if isinstance(key, str):
            try:
                key = self.outcome_names.index(key)
            except ValueError:
                raise DimensionMismatchError(f"no outcome named {key!r}") from None
        if not 0 <= key < self.outcome_dim:
            raise DimensionMismatchError(f"outcome index {key} out of range")
        return self.outcomes[:, key]

    def subset(self, index) -> "ContextDataset":
        index = np.asarray(index)
        return ContextDataset(self.contexts[index], self.outcomes[index], self.outcome_names)

    def with_outcomes(self, outcomes, names=None) -> "ContextDataset":
        return ContextDataset(self.contexts, outcomes, names or self.outcome_names)


@dataclass(frozen=True)
class SplitPlan:
    bin_size: int = 200
    train_fraction: float = 0.8
    repeats: int = 5
    seed: int = 0

    def __post_init__(self):
        if int(self.bin_size) != self.bin_size or self.bin_size < 2:
            raise InvalidConfigError(f"bin_size must be an integer >= 2, got {self.bin_size}")
        if not 0.0 < self.train_fraction < 1.0:
            raise InvalidConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if int(self.repeats) != self.repeats or self.repeats < 1:
            raise InvalidConfigError(f"repeats must be >= 1, got {self.repeats}")

    @classmethod
    def from_config(cls, config) -> "SplitPlan":
        return cls(
            bin_size=config.SPLIT_BIN_SIZE,
            train_fraction=config.SPLIT_TRAIN_FRACTION,
            repeats=config.SPLIT_REPEATS,
            seed=config.SPLIT_SEED,
        )

    @property
    def train_size(self) -> int:
        return int(round(self.train_fraction * self.bin_size))


@dataclass(frozen=True, eq=False)
class Split:
    bin_index: int
    repeat: int
    train: ContextDataset
    test: ContextDataset
    train_index: np.ndarray   # absolute sample positions
    test_index: np.ndarray

    def __iter__(self):
        return iter((self.train, self.test))


# ----- Operations -----

def predict_linear(w, x):
    """Return w^T x for one context, or the vector of predictions for a matrix of contexts."""
    coef = w.w if isinstance(w, LinearCoefficients) else np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != coef.shape[0]:
        raise DimensionMismatchError(
            f"coefficients have length {coef.shape[0]}, context has length {x.shape[-1]}"
        )
    if x.ndim == 1:
        return float(coef @ x)
    return x @ coef


def ols_fit(data: ContextDataset, target_index=0) -> LinearCoefficients:
    """Least-squares fit of one outcome column on the contexts.

    Rank-deficient designs get the minimum-norm solution and ``rank_deficient=True``.
    """
    if len(data) == 0:
        raise EmptyDatasetError("cannot fit on an empty dataset")
    y = data.outcome(target_index)
    w, _, rank, _ = np.linalg.lstsq(data.contexts, y, rcond=None)
    singular = rank < data.feature_dim
    if singular:
        logger.warning(
            "Singular normal matrix, returning the minimum-norm solution",
            extra={"rank": int(rank), "feature_dim": data.feature_dim},
        )
    return LinearCoefficients(w, rank_deficient=bool(singular))


def split(data: ContextDataset, plan: SplitPlan) -> list[Split]:
    """Consecutive bins of ``plan.bin_size`` samples, each split ``plan.repeats`` times.

    A trailing partial bin is dropped. Train and test keep the original sample order.
    """
    n_bins = len(data) // plan.bin_size
    if n_bins == 0:
        raise InvalidConfigError(
            f"bin_size {plan.bin_size} exceeds the dataset size {len(data)}"
        )
    leftover = len(data) - n_bins * plan.bin_size
    if leftover:
        logger.info("Dropping trailing partial bin", extra={"samples": leftover})

    n_train = plan.train_size
    if not 0 < n_train < plan.bin_size:
        raise InvalidConfigError(
            f"train fraction {plan.train_fraction} leaves an empty train or test set"
        )

    splits = []
    for b in range(n_bins):
        start = b * plan.bin_size
        for r in range(plan.repeats):
            rng = np.random.default_rng([plan.seed, b, r])
            order = rng.permutation(plan.bin_size)
            train_idx = np.sort(order[:n_train]) + start
            test_idx = np.sort(order[n_train:]) + start
            splits.append(Split(
                bin_index=b,
                repeat=r,
                train=data.subset(train_idx),
                test=data.subset(test_idx),
                train_index=train_idx,
                test_index=test_idx,
            ))
    return splits


# ----- CSV import / export -----

def read_dataset(path, outcome_names=None) -> ContextDataset:
    """Read ``x1..xp`` feature columns followed by outcome columns."""
    frame = pd.read_csv(path)
    feature_cols = [c for c in frame.columns if FEATURE_COLUMN.match(str(c).strip())]
    outcome_cols = [c for c in frame.columns if c not in feature_cols and c != "hour"]
    if not feature_cols:
        raise InvalidConfigError(f"{path}: no feature columns named x1..xp")
    if outcome_names is not None:
        missing = [n for n in outcome_names if n not in outcome_cols]
        if missing:
            raise InvalidConfigError(f"{path}: missing outcome columns {missing}")
        outcome_cols = list(outcome_names)
    if not outcome_cols:
        raise InvalidConfigError(f"{path}: no outcome columns")
    try:
        contexts = frame[feature_cols].to_numpy(dtype=float)
        outcomes = frame[outcome_cols].to_numpy(dtype=float)
    except (TypeError, ValueError) as exc:
        raise InvalidConfigError(f"{path}: non-numeric entry ({exc})") from exc
    return ContextDataset(contexts, outcomes, tuple(str(c) for c in outcome_cols))


def write_dataset(data: ContextDataset, path) -> None:
    frame = pd.DataFrame(data.contexts, columns=[f"x{j + 1}" for j in range(data.feature_dim)])
    for j, name in enumerate(data.outcome_names):
        frame[name] = data.outcomes[:, j]
    frame.to_csv(path, index=False)
