"""Canonical dataset schema, preprocessing, baselines and synthetic data."""

from .features import CONCAT_ORDER, QUANTITY_MODALITIES, FeaturePipeline, build_concat_baseline, record_subnet
from .preprocess import (
    Normalizer, apply_normalizer, balance_coefficient, fit_normalizer, pad_sequences, payload_targets,
    subnet_octets, tokenize_payload,
)
from .records import ENTITY_MODALITIES, MODALITIES, CanonicalRecord, Dataset, load_canonical, save_canonical
from .synthetic import SyntheticSpec, generate_synthetic

__all__ = [
    "CONCAT_ORDER", "ENTITY_MODALITIES", "MODALITIES", "QUANTITY_MODALITIES", "CanonicalRecord",
    "Dataset", "FeaturePipeline", "Normalizer", "SyntheticSpec", "apply_normalizer",
    "balance_coefficient", "build_concat_baseline", "fit_normalizer", "generate_synthetic",
    "load_canonical", "pad_sequences", "payload_targets", "record_subnet", "save_canonical",
    "subnet_octets", "tokenize_payload",
]
