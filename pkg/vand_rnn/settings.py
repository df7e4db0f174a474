"""
Default settings for vand_rnn.
Customize the experiment defaults here; config files and CLI flags override them.
"""

import torch

# Numerics
DTYPE = torch.float64
STD_FLOOR = 1e-8
VARIANCE_FLOOR = 1e-6

# Model Configuration
DEFAULT_LAYERS = 2
DEFAULT_HIDDEN = 100
FORGET_BIAS = 1.0
FORMAT_VERSION = 1

# Regularizer Configuration
CONST_REGULARIZER_VALUE = 1e-2
NOISE_IN_RECURRENCE = False
MASK_CELL_STATE = False

# Optimizer Configuration
DEFAULT_LR = 1e-3
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Training Configuration
DEFAULT_BATCH_SIZE = 50
DEFAULT_EPOCHS = 1000
STEPS_PER_EPOCH = 1
EVAL_EVERY = 50
MAX_OFFSET = 10

# Experiment Matrix
ALL_MODES = ("vanilla", "const_noise", "var_noise", "const_dropout", "var_dropout", "vand")
DEFAULT_SEEDS = tuple(range(20))

# Task Generators
MIN_TASK_STEPS = 100
SEQUENTIAL_WAYPOINTS = 5
SEQUENTIAL_SPEED = 0.02
SEQUENTIAL_DWELL = 30
SEQUENTIAL_OBS_NOISE = 0.01
SEQUENTIAL_JITTER = 0.02
SEQUENTIAL_MAX_TRIES = 1000
SEQUENTIAL_ORACLE_RATIO = 2.0
PERIODIC_MU = 1.0
PERIODIC_DT = 0.05
PERIODIC_OBS_NOISE = 0.02
PERIODIC_ANNULUS = (1.5, 2.5)

# Rollout
ROLLOUT_DIVERGENCE_LIMIT = 100.0
ROLLOUT_RANGE_FACTOR = 2.0

# Acceptance Gates
ADAPTATION_TOLERANCE = 1e-2
ADAPTATION_MIN_FRACTION = 0.5
STABILITY_MIN_SHARE = 0.8

# Command Line
SEED_ENV_VAR = "VAND_SEED"
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3
