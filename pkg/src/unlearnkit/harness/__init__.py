"""Config-driven multi-seed experiments, reports and plots."""
from .config import ExperimentConfig, PretrainSpec, load_config
from .runner import Aggregate, CellResult, ExperimentResult, aggregate, run_ablation_grid, run_experiment

__all__ = [
    "Aggregate",
    "CellResult",
    "ExperimentConfig",
    "ExperimentResult",
    "PretrainSpec",
    "aggregate",
    "load_config",
    "run_ablation_grid",
    "run_experiment",
]
