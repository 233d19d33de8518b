# market.py
"""Residual demand curves from bid/offer stacks, their linear fit, and a synthetic market."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from config import Config
from errors import (
    DimensionMismatchError,
    EmptyDatasetError,
    InvalidConfigError,
    NonpositiveSlopeError,
    WindowNotCoveredError,
)
from models import ContextDataset

logger = logging.getLogger("ctxopt.market")


def _blocks(values, side):
    arr = np.array(values, dtype=float).reshape(-1, 2) if len(values) else np.zeros((0, 2))
    if np.any(arr[:, 0] <= 0):
        raise InvalidConfigError(f"{side} quantities must be positive")
    if not np.all(np.isfinite(arr)):
        raise InvalidConfigError(f"{side} blocks must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class BidStack:
    buys: np.ndarray    # rows (quantity MW, price)
    sells: np.ndarray

    def __post_init__(self):
        buys, sells = _blocks(self.buys, "buy"), _blocks(self.sells, "sell")
        if buys.shape[0] + sells.shape[0] == 0:
            raise EmptyDatasetError("bid stack has no blocks")
        object.__setattr__(self, "buys", buys)
        object.__setattr__(self, "sells", sells)


@dataclass(frozen=True, eq=False)
class ResidualDemandCurve:
    """``r(p) = sum of buys priced >= p  -  sum of sells priced <= p``."""
    buy_prices: np.ndarray       # ascending
    buy_above: np.ndarray        # buy_above[j] = sum of buys at buy_prices[j:]
    sell_prices: np.ndarray      # ascending
    sell_below: np.ndarray       # sell_below[j] = sum of sells at sell_prices[:j]
    breakpoints: np.ndarray = field(init=False)

    def __post_init__(self):
        prices = np.union1d(self.buy_prices, self.sell_prices)
        object.__setattr__(self, "breakpoints", prices)

    @property
    def total_demand(self) -> float:
        return float(self.buy_above[0])

    @property
    def total_supply(self) -> float:
        return float(self.sell_below[-1])

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        demand = self.buy_above[np.searchsorted(self.buy_prices, p, side="left")]
        supply = self.sell_below[np.searchsorted(self.sell_prices, p, side="right")]
        return demand - supply

    def left_limit(self, p):
        """``r`` just below ``p``: buys at ``p`` count, sells at ``p`` do not."""
        p = np.asarray(p, dtype=float)
        demand = self.buy_above[np.searchsorted(self.buy_prices, p, side="left")]
        supply = self.sell_below[np.searchsorted(self.sell_prices, p, side="left")]
        return demand - supply

    def steps(self) -> pd.DataFrame:
        return pd.DataFrame({"price": self.breakpoints, "residual_demand": self(self.breakpoints)})

    def covers(self, delta: float) -> bool:
        """True when the inverse price is defined for every quantity in ``[0, delta]``."""
        return self.total_supply > 0 and self.total_demand >= delta

    def inverse_price(self, q):
        """Highest price at which the residual demand still reaches ``q``."""
        q = np.asarray(q, dtype=float)
        prices = self.breakpoints
        reach = self.left_limit(prices)
        # reach is nonincreasing in price; the answer is the last breakpoint with reach >= q
        idx = np.searchsorted(-reach, -q, side="right") - 1
        if np.any(idx < 0):
            raise WindowNotCoveredError("quantity exceeds the total residual demand")
        return prices[idx]


def residual_demand(stack: BidStack) -> ResidualDemandCurve:
    buys = stack.buys[np.argsort(stack.buys[:, 1], kind="stable")]
    sells = stack.sells[np.argsort(stack.sells[:, 1], kind="stable")]
    buy_above = np.concatenate([np.cumsum(buys[::-1, 0])[::-1], [0.0]])
    sell_below = np.concatenate([[0.0], np.cumsum(sells[:, 0])])
    return ResidualDemandCurve(buys[:, 1], buy_above, sells[:, 1], sell_below)


@dataclass(frozen=True)
class FittedInverseDemand:
    alpha: float
    beta: float
    delta: float
    fit_rmse: float
    grid_size: int = Config.MARKET_GRID_SIZE

    def __post_init__(self):
        if not self.beta > 0:
            raise NonpositiveSlopeError(f"fitted slope must be positive, got {self.beta}")
        if not self.delta > 0:
            raise InvalidConfigError(f"window width must be positive, got {self.delta}")

    def price(self, q):
        return self.alpha - self.beta * np.asarray(q, dtype=float)


def fit_inverse_demand(curve, delta: float = Config.MARKET_DELTA_MW,
                       grid_size: int = Config.MARKET_GRID_SIZE) -> FittedInverseDemand:
    """Least-squares line ``p = alpha - beta q`` through the inverse curve on a uniform grid over ``[0, delta]``.

    ``curve`` provides ``covers(delta)`` and ``inverse_price(q)``.
    """
    if not delta > 0:
        raise InvalidConfigError(f"window width must be positive, got {delta}")
    if int(grid_size) != grid_size or grid_size < 2:
        raise InvalidConfigError(f"grid size must be an integer >= 2, got {grid_size}")
    if not curve.covers(delta):
        raise WindowNotCoveredError(f"residual demand does not span [0, {delta:g}]")
    q = np.linspace(0.0, delta, int(grid_size))
    p = np.asarray(curve.inverse_price(q), dtype=float)
    design = np.column_stack([np.ones_like(q), q])
    (intercept, slope), *_ = np.linalg.lstsq(design, p, rcond=None)
    if not slope < 0:
        raise NonpositiveSlopeError(f"inverse demand rises over the window (slope {slope:.6g})")
    rmse = float(np.sqrt(np.mean((design @ [intercept, slope] - p) ** 2)))
    return FittedInverseDemand(float(intercept), float(-slope), float(delta), rmse, int(grid_size))


def fit_hours(stacks: dict, delta: float = Config.MARKET_DELTA_MW,
              grid_size: int = Config.MARKET_GRID_SIZE) -> dict:
    """Fit every hour; hours whose window is uncovered or whose slope is not negative are skipped."""
    fits, uncovered, rising = {}, 0, 0
    for hour in sorted(stacks):
        try:
            fits[hour] = fit_inverse_demand(residual_demand(stacks[hour]), delta, grid_size)
        except WindowNotCoveredError:
            uncovered += 1
        except NonpositiveSlopeError:
            rising += 1
    if uncovered or rising:
        logger.warning("Skipped market hours", extra={
            "uncovered": uncovered, "nonpositive_slope": rising, "fitted": len(fits),
        })
    return fits


def fit_market_dataset(stacks: dict, features: dict | None = None,
                       delta: float = Config.MARKET_DELTA_MW,
                       grid_size: int = Config.MARKET_GRID_SIZE) -> ContextDataset:
    """One sample per fitted hour: its features (or just an intercept) and outcomes ``(alpha, beta)``."""
    fits = fit_hours(stacks, delta, grid_size)
    if not fits:
        raise EmptyDatasetError("no hour could be fitted")
    hours = list(fits)
    if features is None:
        X = np.ones((len(hours), 1))
    else:
        missing = [h for h in hours if h not in features]
        if missing:
            raise DimensionMismatchError(f"no features for hours {missing[:5]}")
        X = np.vstack([np.asarray(features[h], dtype=float) for h in hours])
    outcomes = np.array([[fits[h].alpha, fits[h].beta] for h in hours])
    return ContextDataset(X, outcomes, ("alpha", "beta"))


# ----- Synthetic market -----

@dataclass(frozen=True)
class MarketSynthConfig:
    """Synthetic hours with ``gamma = a^T x + noise`` for the reference costs ``c1, c2``.

    Contexts are ``(1, u_1, ..., u_{p-1})`` with ``u`` uniform on ``[feature_low, feature_high]``.
    Slopes are log-normal around ``beta_mean``, tilted by the first feature.
    """
    a: tuple = (0.5, 1.0, -0.5)
    noise_scale: float = 0.1
    feature_low: float = 0.0
    feature_high: float = 1.0
    beta_mean: float = 1.0
    beta_log_sd: float = 0.25
    beta_context_coupling: float = 0.0
    c1: float = 1.0
    c2: float = 0.1

    def __post_init__(self):
        a = tuple(float(v) for v in self.a)
        if not a or not np.all(np.isfinite(a)):
            raise InvalidConfigError("coefficient vector a must be nonempty and finite")
        object.__setattr__(self, "a", a)
        if self.noise_scale < 0 or self.beta_log_sd < 0:
            raise InvalidConfigError("noise scales must be nonnegative")
        if not self.feature_low < self.feature_high:
            raise InvalidConfigError("feature range is empty")
        if not self.beta_mean > 0:
            raise InvalidConfigError("beta_mean must be positive")
        if not (self.c1 > 0 and self.c2 > 0):
            raise InvalidConfigError("reference costs must be positive")

    @property
    def feature_dim(self) -> int:
        return len(self.a)

    @classmethod
    def from_dict(cls, values: dict) -> "MarketSynthConfig":
        known = {k: v for k, v in values.items() if k in cls.__dataclass_fields__}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise InvalidConfigError(f"unknown generator settings {unknown}")
        if "a" in known:
            known["a"] = tuple(known["a"])
        return cls(**known)


def synthesize_market(cfg: MarketSynthConfig, n: int, seed: int = 0) -> ContextDataset:
    if int(n) != n or n < 1:
        raise InvalidConfigError(f"sample count must be a positive integer, got {n}")
    rng = np.random.default_rng(seed)
    p = cfg.feature_dim
    U = rng.uniform(cfg.feature_low, cfg.feature_high, size=(n, p - 1))
    X = np.column_stack([np.ones(n), U])
    gamma = X @ np.asarray(cfg.a) + cfg.noise_scale * rng.standard_normal(n)
    tilt = 0.0
    if p > 1 and cfg.beta_context_coupling:
        mid = 0.5 * (cfg.feature_low + cfg.feature_high)
        tilt = cfg.beta_context_coupling * (U[:, 0] - mid)
    beta = cfg.beta_mean * np.exp(
        cfg.beta_log_sd * rng.standard_normal(n) - 0.5 * cfg.beta_log_sd ** 2 + tilt
    )
    alpha = gamma * (beta + cfg.c2) + cfg.c1
    return ContextDataset(X, np.column_stack([alpha, beta]), ("alpha", "beta"))


# ----- CSV input -----

def read_bid_stacks(path) -> dict:
    """``side,quantity_mw,price`` rows, optionally with an ``hour`` column; one stack per hour."""
    frame = pd.read_csv(path)
    missing = [c for c in ("side", "quantity_mw", "price") if c not in frame.columns]
    if missing:
        raise InvalidConfigError(f"{path}: missing columns {missing}")
    if "hour" not in frame.columns:
        frame = frame.assign(hour=0)
    side = frame["side"].astype(str).str.strip().str.lower()
    if not side.isin(["buy", "sell"]).all():
        raise InvalidConfigError(f"{path}: side must be 'buy' or 'sell'")
    frame = frame.assign(side=side)
    stacks = {}
    try:
        for hour, rows in frame.groupby("hour", sort=True):
            blocks = {s: rows.loc[rows["side"] == s, ["quantity_mw", "price"]].to_numpy(dtype=float)
                      for s in ("buy", "sell")}
            stacks[hour.item() if hasattr(hour, "item") else hour] = BidStack(blocks["buy"], blocks["sell"])
    except (InvalidConfigError, EmptyDatasetError):
        raise
    except (TypeError, ValueError) as exc:
        raise InvalidConfigError(f"{path}: non-numeric bid entry ({exc})") from exc
    return stacks


def read_hour_features(path) -> dict:
    """``hour,x1..xp`` rows to ``{hour: context}``."""
    frame = pd.read_csv(path)
    if "hour" not in frame.columns:
        raise InvalidConfigError(f"{path}: missing hour column")
    cols = [c for c in frame.columns if c != "hour"]
    return {h.item() if hasattr(h, "item") else h: row
            for h, row in zip(frame["hour"], frame[cols].to_numpy(dtype=float))}
