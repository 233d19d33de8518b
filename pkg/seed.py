# seed.py
"""Write a small demo data directory for the ``ctxopt`` commands."""
import os
import sys

import numpy as np
import pandas as pd

from config import Config
from experiments import illustrative_dataset
from market import MarketSynthConfig, synthesize_market
from models import ContextDataset, write_dataset

NODES = [("north", 1.0, 6.0), ("centre", 1.2, 6.0), ("south", 0.9, 5.0)]
ARCS = [("north", "centre", 0.6), ("centre", "north", 0.6), ("centre", "south", 0.5),
        ("south", "centre", 0.5)]


def _newsvendor(rng, n=400):
    x = rng.uniform(0.0, 2.0, n)
    demand = 5.0 + 3.0 * x + rng.normal(0.0, 1.0, n)
    return ContextDataset(np.column_stack([np.ones(n), x]), demand[:, None], ("demand",))


def _placement(rng, n=400):
    x = rng.uniform(0.0, 1.0, (n, 2))
    X = np.column_stack([np.ones(n), x])
    W = np.array([[4.0, 2.0, 0.0], [3.0, 0.0, 2.0], [2.0, 1.0, 1.0]])
    Y = X @ W.T + rng.normal(0.0, 0.8, (n, len(NODES)))
    return ContextDataset(X, Y, tuple(name for name, _, _ in NODES))


def _bids(rng, hours=24):
    rows = []
    for hour in range(hours):
        level = 40.0 + 15.0 * np.sin(2 * np.pi * hour / 24)
        for _ in range(12):
            rows.append((hour, "buy", rng.uniform(400, 900), level + rng.uniform(-20, 60)))
        for _ in range(10):
            rows.append((hour, "sell", rng.uniform(300, 800), level + rng.uniform(-40, 30)))
    return pd.DataFrame(rows, columns=["hour", "side", "quantity_mw", "price"])


def seed(data_dir=Config.DATA_DIR, seed_value=0):
    os.makedirs(data_dir, exist_ok=True)
    rng = np.random.default_rng(seed_value)

    write_dataset(illustrative_dataset(), os.path.join(data_dir, "illustrative.csv"))
    write_dataset(synthesize_market(MarketSynthConfig(), 1000, seed_value), os.path.join(data_dir, "market.csv"))
    write_dataset(_newsvendor(rng), os.path.join(data_dir, "newsvendor.csv"))
    write_dataset(_placement(rng), os.path.join(data_dir, "placement.csv"))

    pd.DataFrame(NODES, columns=["node", "h", "r_pen"]).to_csv(os.path.join(data_dir, "nodes.csv"), index=False)
    pd.DataFrame(ARCS, columns=["origin", "end", "g"]).to_csv(os.path.join(data_dir, "arcs.csv"), index=False)

    bids = _bids(rng)
    bids.to_csv(os.path.join(data_dir, "bids.csv"), index=False)
    hours = sorted(bids["hour"].unique())
    features = pd.DataFrame({"hour": hours, "x1": 1.0,
                             "x2": [np.sin(2 * np.pi * h / 24) for h in hours]})
    features.to_csv(os.path.join(data_dir, "hour_features.csv"), index=False)

    print(f"Seeded {data_dir}: illustrative, market, newsvendor and placement datasets, "
          f"a 3-node network and {len(hours)} hours of bids.")


if __name__ == "__main__":
    seed(sys.argv[1] if len(sys.argv) > 1 else Config.DATA_DIR)
