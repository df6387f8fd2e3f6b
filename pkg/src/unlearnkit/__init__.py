"""Machine unlearning toolkit for small Vision Transformers."""
from .data import DatasetBundle, SampleRecord, SyntheticSpec, generate_synthetic, load_manifest, validate_bundle
from .errors import ConfigError, ImageReadError, InputError, NumericalError, UnlearnKitError, ValidationError
from .evaluate import EvalReport, evaluate, mia_from_losses, nomus, select_best_epoch
from .model import ModelState, ViTConfig, build_model, forward
from .unlearn import METHODS, UnlearnMethodConfig, UnlearnRun, run_unlearning

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DatasetBundle",
    "EvalReport",
    "ImageReadError",
    "InputError",
    "METHODS",
    "ModelState",
    "NumericalError",
    "SampleRecord",
    "SyntheticSpec",
    "UnlearnKitError",
    "UnlearnMethodConfig",
    "UnlearnRun",
    "ValidationError",
    "ViTConfig",
    "build_model",
    "evaluate",
    "forward",
    "generate_synthetic",
    "load_manifest",
    "mia_from_losses",
    "nomus",
    "run_unlearning",
    "select_best_epoch",
    "validate_bundle",
]
