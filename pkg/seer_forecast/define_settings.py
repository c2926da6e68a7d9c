"""Provide default constants for models, training, data and perturbations.

Everything here can be overridden through a run-config file, see
``config.py``. The values that come with a comment on the robustness
experiments are the grids and fixed parameters of the corruption sweeps.

"""

# MASTER SETTINGS
# Forecasting protocol: lookback window and the horizons evaluated
LOOKBACK = 96
HORIZONS = (96, 192, 336, 720)

# chronological train:val:test split. (0.7, 0.1, 0.2) for the ETT-like sets
SPLIT_RATIOS = (0.6, 0.2, 0.2)
WINDOW_STRIDE = 1

# Preprocessing
EPS_NORM = 1e-5  # added to the per-channel std in instance normalization
PATCH_LEN = 16
PADDING = 'front-replicate'  # or 'strict'

# Model size
D_MODEL = 64
REDUCTION_RATIO = 0.5  # d_reduced = floor(REDUCTION_RATIO * d_model)
N_HEADS = 4

# Mixture of experts. Eight routed experts did best in the sensitivity study
N_EXPERTS = 8
TOP_K = 2
N_SHARED = 1

# Token filter
TAU = 0.5
SCORE_EPS = 1e-6  # scores are clamped to [SCORE_EPS, 1 - SCORE_EPS]

# Layer normalization inside the attention blocks
EPS_LAYERNORM = 1e-5

# Training. Batches halve on MemoryError, down to MIN_BATCH_SIZE
BATCH_SIZE = 64
MIN_BATCH_SIZE = 8
EPOCHS = 10
PATIENCE = 5
LR = 1e-3
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Metrics
MASE_SEASONALITY = 1
MSMAPE_EPS = 0.1
METRIC_SCALE = 'raw'  # or 'normalized'
METRICS = ('mse', 'mae', 'mase', 'msmape')
ROBUSTBENCH_METRICS = ('mse', 'mae')

# Robustness experiments: the level grids and the fixed parameters of each
# corruption kind
NOISE_RATIOS = (0., 0.01, 0.05, 0.10, 0.15)
NOISE_SCALE = 1.

ANOMALY_RATIOS = (0., 0.01, 0.05, 0.10, 0.15)
ANOMALY_SEGMENT_LEN = 12
OUTLIER_RATIO = 0.005
ANOMALY_SCALE = 2.

MISSING_RATIOS = (0., 0.01, 0.05, 0.10, 0.15)
MISSING_SEGMENT_LEN = 12

SHIFT_SEGMENTS = (0, 1, 3, 5, 10)  # 0 means the clean series
SHIFT_SCALE = 5.

PERTURBATION_KINDS = ('white-noise', 'anomalies', 'missing',
                      'distribution-shift')
DEFAULT_GRIDS = {'white-noise': NOISE_RATIOS,
                 'anomalies': ANOMALY_RATIOS,
                 'missing': MISSING_RATIOS,
                 'distribution-shift': SHIFT_SEGMENTS}

# where perturbations go: 'full' series before splitting, or 'train' only
PERTURB_APPLY_TO = 'full'

# robustbench: 'retrain' one model per level or 'corrupt_test' only
ROBUSTBENCH_MODE = 'retrain'

# Output
OUTPUT_ROOT_ENV = 'SEER_OUTPUT_ROOT'
DEFAULT_OUTPUT_DIR = 'seer_output'
CHECKPOINT_FORMAT = 'seer-checkpoint'
CHECKPOINT_VERSION = 1
