"""Config-driven experiment harness."""
from .config import ExperimentConfig, load_config
from .runner import aggregate, benchmark, generate, report, sweep, train

__all__ = ["ExperimentConfig", "load_config", "aggregate", "benchmark", "generate", "report", "sweep", "train"]
