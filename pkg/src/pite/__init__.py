"""Prototype-aligned individual treatment effect estimation."""
from .baselines import EstimatorOutput, KNNMatching, OLS1, OLS2
from .dataset import (
    CausalDataset,
    SplitSpec,
    SyntheticConfig,
    generate_synthetic,
    load_csv,
    overlap_diagnostic,
    save_csv,
    split,
)
from .estimator import PITE
from .exceptions import (
    ConfigError,
    GroundTruthUnavailableError,
    NumericError,
    ParseError,
    PITEError,
    ShapeError,
    SingleGroupError,
    SplitError,
    TrainingError,
    UsageError,
)
from .metrics import EvalReport, ate_error, att_error, evaluate, pehe, policy_risk, uniformity
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .prototypes import PrototypeSet
from .trainer import TrainConfig, fit

__version__ = "0.1.0"
