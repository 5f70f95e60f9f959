"""Configuration, orchestration, persistence and the command line."""
from .config import ExperimentConfig, parse_config
from .runner import RunReport, run

__all__ = ["ExperimentConfig", "RunReport", "parse_config", "run"]
