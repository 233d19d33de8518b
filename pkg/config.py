# config.py
import os
BASE_DIR = os.path.abspath(os.path.dirname(__file__))


class Config:
    # --- Tolerances ---
    FEASIBILITY_TOL = 1e-7
    OPTIMALITY_TOL = 1e-6
    PSD_TOL = 1e-8
    PIVOT_TOL = 1e-9          # smallest tableau entry accepted as a pivot
    ZERO_INCOME_TOL = 1e-9    # |I| below this counts as a zero-income period

    # --- Iteration caps ---
    LP_MAX_ITER = 20000
    QP_MAX_ITER = 20000
    NEWTON_MAX_ITER = 200
    AL_MAX_OUTER = 25

    # --- Regularized bilevel (BL-R) ---
    EPSILON_SCHEDULE = (1e6, 1e4, 1e2, 1.0, 1e-1, 1e-2, 0.0)
    AL_PENALTY_INIT = 10.0
    AL_PENALTY_GROWTH = 10.0
    AL_PENALTY_MAX = 1e8
    POLISH_MAX_ROUNDS = 50

    # --- Big-M branch-and-bound (BL-M) ---
    BIGM_REL_GAP = 1e-8
    BIGM_ABS_GAP = 1e-9
    BIGM_TIME_LIMIT = 1200.0  # seconds per fit
    BIGM_NODE_LIMIT = 200000
    BIGM_PREDICTION_SCALE = 10.0  # prediction range = scale x data range
    BIGM_MAX_SUBSETS_ROWS = 12    # above this many lower-level rows the dual bound is not enumerated
    BIGM_CAP_TOL = 1e-6           # relative distance to a big-M cap that counts as binding

    # --- Market data ---
    MARKET_DELTA_MW = 5000.0
    MARKET_GRID_SIZE = 512

    # --- Experiment protocol ---
    SPLIT_BIN_SIZE = 200
    SPLIT_TRAIN_FRACTION = 0.8
    SPLIT_REPEATS = 5
    SPLIT_SEED = 2024

    # --- Runtime ---
    WORKERS = int(os.environ.get("CTXOPT_WORKERS", "1"))
    LOG_LEVEL = os.environ.get("CTXOPT_LOG_LEVEL", "WARNING").upper()
    DATA_DIR = os.environ.get("CTXOPT_DATA_DIR", os.path.join(BASE_DIR, "data"))
