"""Raw-audio classifiers built from two-parameter cosine convolution filters.

The package carries its own small reverse-mode differentiation engine, the
CosCovNN and VQCCM (vector quantisation plus memory) networks, a trainer,
and the greedy per-layer architecture search.
"""
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, batches, load_directory, load_manifest, load_wav, make_synthetic
from .errors import CheckpointError, ConfigError, CosCovError, DataError, NumericError
from .model import Model, ModelConfig, build, compare_parameters, count_parameters
from .search import MockOracle, SearchSpace, greedy_search
from .tensor import Tape, Tensor
from .trainer import TrainConfig, ablation, evaluate, fit, sweep_memory_vq

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "ConfigError", "CosCovError", "DataError", "Dataset", "MockOracle", "Model",
    "ModelConfig", "NumericError", "SearchSpace", "Tape", "Tensor", "TrainConfig", "ablation", "batches",
    "build", "compare_parameters", "count_parameters", "evaluate", "fit", "greedy_search", "load_checkpoint",
    "load_directory", "load_manifest", "load_wav", "make_synthetic", "save_checkpoint", "sweep_memory_vq",
]
