"""Turn records into the numeric arrays each modality consumes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..entities import embed_entities, embed_entity
from ..errors import ConfigError, DataError
from .preprocess import (
    PAYLOAD_LEN, SEQ_CHANNELS, SEQ_LEN, apply_normalizer, fit_normalizer, pad_sequences,
    parse_subnet, payload_targets, subnet_octets, tokenize_payload,
)
from .records import ENTITY_MODALITIES, MODALITIES

# Fixed concatenation order for the raw baseline: entity embeddings, subnet
# octets, statistics, flattened sequences, payload bytes.
CONCAT_ORDER = ("ip", "port", "subnet", "stats", "sequences", "payload")
QUANTITY_MODALITIES = ("stats", "sequences", "payload")


def record_subnet(record, default_prefix=24):
    value = record.entities.get("subnet")
    if value is None:
        ip = record.entities.get("ip")
        if ip is None:
            raise DataError(f"record {record.sample_id!r} has neither subnet nor ip")
        value = f"{ip}/{default_prefix}"
    addr, prefix = parse_subnet(value, default_prefix)
    return subnet_octets(addr, prefix)


def _require(record, modality):
    if modality not in record.modalities():
        raise DataError(f"record {record.sample_id!r} is missing modality {modality!r}")


def build_concat_baseline(record, entity_embeddings, modalities=CONCAT_ORDER, normalizers=None,
                          payload_len=PAYLOAD_LEN, k=SEQ_LEN, channels=SEQ_CHANNELS):
    """Raw multi-modal vector of one record in the fixed :data:`CONCAT_ORDER`.

    ``entity_embeddings`` maps ``"ip"``/``"port"`` to an EmbeddingMatrix.
    Statistics and sequences are z-scored when ``normalizers`` holds a
    fitted normalizer for them, and used as-is otherwise.
    """
    normalizers = normalizers or {}
    parts = []
    for m in CONCAT_ORDER:
        if m not in modalities:
            continue
        _require(record, m)
        if m in ENTITY_MODALITIES:
            if m not in entity_embeddings:
                raise DataError(f"no embedding matrix for entity {m!r}")
            parts.append(embed_entity(entity_embeddings[m], record.entities[m]))
        elif m == "subnet":
            parts.append(record_subnet(record))
        elif m == "stats":
            norm = normalizers.get("stats")
            raw = np.array(list(record.stats.values()), dtype=float)
            parts.append(apply_normalizer(norm, record) if norm is not None else raw)
        elif m == "sequences":
            norm = normalizers.get("sequences")
            if norm is not None:
                parts.append(apply_normalizer(norm, record, k, channels).reshape(-1))
            else:
                parts.append(pad_sequences(record.sequences, k, channels).reshape(-1))
        elif m == "payload":
            parts.append(payload_targets(tokenize_payload(record.payload, payload_len))[0])
    return np.concatenate(parts) if parts else np.zeros(0)


@dataclass
class FeaturePipeline:
    """Frozen preprocessing state: entity matrices, normalizers and shapes."""

    entity_matrices: dict = field(default_factory=dict)
    normalizers: dict = field(default_factory=dict)
    payload_len: int = PAYLOAD_LEN
    seq_len: int = SEQ_LEN
    seq_channels: int = SEQ_CHANNELS

    @classmethod
    def fit(cls, records, modalities, entity_matrices=None, **shape):
        records = list(records)
        entity_matrices = dict(entity_matrices or {})
        for m in ENTITY_MODALITIES:
            if m in modalities and m not in entity_matrices:
                raise ConfigError(f"modality {m!r} needs a trained entity embedding matrix")
        normalizers = {m: fit_normalizer(records, m) for m in ("stats", "sequences") if m in modalities}
        return cls(entity_matrices, normalizers, **shape)

    def stats_dim(self):
        norm = self.normalizers.get("stats")
        return 0 if norm is None else int(norm.mean.size)

    def dims(self, modality):
        """Flat representation width of a modality."""
        if modality in ENTITY_MODALITIES:
            return self.entity_matrices[modality].dim
        return {"subnet": 4, "payload": self.payload_len, "stats": self.stats_dim(),
                "sequences": self.seq_len * self.seq_channels}[modality]

    def arrays(self, records, modalities):
        """Model-ready arrays keyed by modality (plus ``payload_target``/``payload_mask``)."""
        records = list(records)
        out = {}
        for m in modalities:
            if m not in MODALITIES:
                raise ConfigError(f"unknown modality {m!r}")
            for r in records:
                _require(r, m)
            if m in ENTITY_MODALITIES:
                out[m], out[f"{m}_oov"] = embed_entities(self.entity_matrices[m], [r.entities[m] for r in records])
            elif m == "subnet":
                out[m] = np.array([record_subnet(r) for r in records]).reshape(len(records), 4, 1)
            elif m == "payload":
                tokens = np.array([tokenize_payload(r.payload, self.payload_len) for r in records],
                                  dtype=np.int64).reshape(len(records), self.payload_len)
                target, mask = payload_targets(tokens)
                out[m], out["payload_target"], out["payload_mask"] = tokens, target[..., None], mask
            elif m == "stats":
                out[m] = np.array([apply_normalizer(self.normalizers[m], r) for r in records]).reshape(
                    len(records), self.stats_dim())
            elif m == "sequences":
                out[m] = np.array([apply_normalizer(self.normalizers[m], r, self.seq_len, self.seq_channels)
                                   for r in records]).reshape(len(records), self.seq_len, self.seq_channels)
        return out

    def representation(self, records, modality):
        """Flat per-sample vectors of one modality, as fed to single-measurement classifiers."""
        arrs = self.arrays(records, [modality])
        if modality == "payload":
            return arrs["payload_target"][..., 0]
        return arrs[modality].reshape(len(arrs[modality]), -1)

    def concat(self, records, modalities):
        """Raw concatenation baseline for many records (same layout as :func:`build_concat_baseline`)."""
        records = list(records)
        parts = [self.representation(records, m) for m in CONCAT_ORDER if m in modalities]
        return np.concatenate(parts, axis=1) if parts else np.zeros((len(records), 0))


def pack_pipeline(pipeline, prefix="pipeline/"):
    """``(arrays, meta)`` for a fitted :class:`FeaturePipeline`, entity matrices included."""
    from ..entities import pack_matrix

    arrays, meta = {}, {"shape": {"payload_len": pipeline.payload_len, "seq_len": pipeline.seq_len,
                                  "seq_channels": pipeline.seq_channels},
                        "entities": {}, "normalizers": {}}
    # sorted, because the manifest is stored with sorted keys and reloads in that order
    for name, matrix in sorted(pipeline.entity_matrices.items()):
        a, m = pack_matrix(matrix, f"{prefix}entity/{name}/")
        arrays.update(a)
        meta["entities"][name] = m
    for name, norm in sorted(pipeline.normalizers.items()):
        arrays[f"{prefix}norm/{name}/mean"] = norm.mean
        arrays[f"{prefix}norm/{name}/std"] = norm.std
        meta["normalizers"][name] = {"fitted_ids": sorted(norm.fitted_ids)}
    return arrays, meta


def unpack_pipeline(arrays, meta, prefix="pipeline/"):
    from ..entities import unpack_matrix
    from .preprocess import Normalizer

    matrices = {name: unpack_matrix(arrays, m, f"{prefix}entity/{name}/") for name, m in meta["entities"].items()}
    normalizers = {
        name: Normalizer(name, arrays[f"{prefix}norm/{name}/mean"], arrays[f"{prefix}norm/{name}/std"],
                         frozenset(m["fitted_ids"]))
        for name, m in meta["normalizers"].items()
    }
    return FeaturePipeline(matrices, normalizers, **meta["shape"])
