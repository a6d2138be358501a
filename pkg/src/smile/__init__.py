"""Joint hyperspectral unmixing and blind super-resolution on numpy.

Arrays follow the linear mixing model ``Y = A E + N`` with cubes shaped
``H x W x C``, endmembers ``p x C`` and abundances ``H x W x p``.
"""

from .datagen import DatasetSpec, build_dataset, dataset1, dataset2
from .diagnostics import affinity_trace, gradient_geometry, task_affinity, theorem2_check
from .errors import (ConfigError, ContractError, DegenerateDataError, DimensionError,
                     DivergenceError, EvaluationError, GenerationError, SmileError)
from .lmm import mix
from .metrics import MetricsReport, evaluate
from .sr import SrConfig
from .trainer import ScalarizationWeights, TrainConfig, train
from .vca import vca_extract

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "DatasetSpec", "DegenerateDataError", "DimensionError",
    "DivergenceError", "EvaluationError", "GenerationError", "MetricsReport",
    "ScalarizationWeights", "SmileError", "SrConfig", "TrainConfig", "affinity_trace",
    "build_dataset", "dataset1", "dataset2", "evaluate", "gradient_geometry", "mix",
    "task_affinity", "theorem2_check", "train", "vca_extract",
]
