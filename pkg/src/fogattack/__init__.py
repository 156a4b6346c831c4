"""Fog-shaped adversarial perturbations built from multi-octave Perlin noise."""

from .attack import AttackConfig, AttackOutcome, baseline_attack, run_attack
from .data import SyntheticDatasetSpec, synth_dataset
from .fog import FogParams
from .model import Model, build_cnn
from .noise import FbmSpec, fbm_field
from .training import TrainConfig, train

__all__ = [
    "AttackConfig", "AttackOutcome", "FbmSpec", "FogParams", "Model",
    "SyntheticDatasetSpec", "TrainConfig", "baseline_attack", "build_cnn",
    "fbm_field", "run_attack", "synth_dataset", "train",
]
__version__ = "0.1.0"
