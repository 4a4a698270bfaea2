"""Multi-modal autoencoder embeddings for network traffic."""

__version__ = "0.1.0"

from .adapters import Adapter, AdapterSpec, adapter_for_modality, build_adapter  # noqa: E402
from .entities import EmbeddingMatrix, build_cooccurrence_corpus, embed_entity, train_skipgram  # noqa: E402
from .errors import (  # noqa: E402
    ArgumentError, ConfigError, CorruptionError, DataError, ShapeError, TrafficMAEError, VersionError,
)
from .mae import (  # noqa: E402
    EmbeddingSet, MAEConfig, MAEModel, build_mae, embed_dataset, embed_sample, load_model, save_model,
    train_mae,
)

__all__ = [
    "Adapter", "AdapterSpec", "ArgumentError", "ConfigError", "CorruptionError", "DataError",
    "EmbeddingMatrix", "EmbeddingSet", "MAEConfig", "MAEModel", "ShapeError", "TrafficMAEError",
    "VersionError", "adapter_for_modality", "build_adapter", "build_cooccurrence_corpus", "build_mae",
    "embed_dataset", "embed_entity", "embed_sample", "load_model", "save_model", "train_mae",
    "train_skipgram",
]
