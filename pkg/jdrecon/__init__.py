"""
Reconstruction of jump-diffusion coefficients from trajectory ensembles.

Simulates jump-diffusion processes with the Euler-Maruyama scheme and learns
their drift, diffusion and jump functions as neural networks by matching
simulated ensembles to observed ones slice by slice in squared Wasserstein-2
distance.
"""

__version__ = "0.1.0"

# Package metadata
__title__ = "jdrecon"
__description__ = "Jump-diffusion coefficient reconstruction with a temporally decoupled W2 loss"
__license__ = "Apache License 2.0"

from .models import (
    Ensemble,
    ErrorReport,
    ExperimentConfig,
    InitialLaw,
    JumpMeasure,
    LossKind,
    PriorMode,
    TimeGrid,
    TrainConfig,
)

__all__ = [
    "Ensemble",
    "ErrorReport",
    "ExperimentConfig",
    "InitialLaw",
    "JumpMeasure",
    "LossKind",
    "PriorMode",
    "TimeGrid",
    "TrainConfig",
    "__version__",
]
