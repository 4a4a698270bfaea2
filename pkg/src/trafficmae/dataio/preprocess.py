"""Per-modality preprocessing of canonical records."""

from __future__ import annotations

import ipaddress
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from ..errors import ArgumentError, DataError, ParseError, ShapeError, StateError

PAYLOAD_LEN = 32
SEQ_LEN = 32
SEQ_CHANNELS = 4
STD_FLOOR = 1e-9


def tokenize_payload(payload, n=PAYLOAD_LEN):
    """Bytes to ``n`` tokens: ``byte + 1``, right-padded with 0, truncated past ``n``."""
    if n < 1:
        raise ArgumentError("payload length must be >= 1")
    raw = np.frombuffer(bytes(payload or b"")[:n], dtype=np.uint8).astype(np.int64) + 1
    out = np.zeros(n, dtype=np.int64)
    out[:raw.size] = raw
    return out


def payload_targets(tokens):
    """Reconstruction targets in ``[0, 1]`` (byte / 255) and the valid-position mask."""
    tokens = np.asarray(tokens)
    mask = tokens > 0
    return np.where(mask, (tokens - 1) / 255.0, 0.0), mask


def pad_sequences(seq, k=SEQ_LEN, channels=SEQ_CHANNELS):
    """Zero-pad / truncate rows to ``k`` and zero-fill missing channels."""
    arr = np.asarray(seq if seq is not None else [], dtype=float)
    if arr.size == 0:
        return np.zeros((k, channels))
    if arr.ndim != 2:
        raise ShapeError(f"sequence must be a matrix, got shape {arr.shape}")
    if arr.shape[1] > channels:
        raise ShapeError(f"sequence has {arr.shape[1]} channels, at most {channels} supported")
    out = np.zeros((k, channels))
    rows = min(k, arr.shape[0])
    out[:rows, :arr.shape[1]] = arr[:rows]
    return out


def parse_subnet(value, default_prefix=24):
    """``"a.b.c.d/p"`` (or a bare address) to ``(address, prefix_len)``."""
    text = str(value)
    if "/" in text:
        addr, prefix = text.split("/", 1)
        try:
            return addr, int(prefix)
        except ValueError:
            raise ParseError(f"malformed prefix in {text!r}") from None
    return text, default_prefix


def subnet_octets(address, prefix_len=24):
    """Four octets scaled to ``[0, 1]`` with octets beyond the prefix zeroed."""
    if prefix_len not in (8, 16, 24, 32):
        raise ArgumentError(f"prefix length must be 8, 16, 24 or 32, got {prefix_len}")
    try:
        ip = ipaddress.IPv4Address(str(address))
    except ValueError:
        raise ParseError(f"malformed IPv4 address {address!r}") from None
    octets = np.frombuffer(ip.packed, dtype=np.uint8).astype(float)
    octets[prefix_len // 8:] = 0.0
    return octets / 255.0


def balance_coefficient(labels):
    """Shannon entropy of the class distribution divided by ``log(#classes)``."""
    counts = np.array(list(Counter(labels).values()), dtype=float)
    if counts.size < 2:
        raise ArgumentError("balance coefficient needs at least two classes")
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum() / math.log(counts.size))


@dataclass
class Normalizer:
    """Per-feature z-score statistics fitted on training records only."""

    modality: str
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    fitted_ids: frozenset = frozenset()

    @property
    def fitted(self):
        return self.mean is not None

    def transform(self, values):
        if not self.fitted:
            raise StateError(f"{self.modality} normalizer used before fitting")
        values = np.asarray(values, dtype=float)
        safe = np.where(self.std < STD_FLOOR, 1.0, self.std)
        return np.where(self.std < STD_FLOOR, 0.0, (values - self.mean) / safe)


def _raw_values(record, modality, k=SEQ_LEN):
    if modality == "stats":
        if record.stats is None:
            raise DataError(f"record {record.sample_id!r} has no stats")
        return np.array(list(record.stats.values()), dtype=float)[None, :]
    if modality == "sequences":
        if record.sequences is None:
            raise DataError(f"record {record.sample_id!r} has no sequences")
        arr = np.asarray(record.sequences, dtype=float)
        return arr[:k] if arr.size else np.zeros((0, 1))
    raise ArgumentError(f"no normalizer for modality {modality!r}")


def fit_normalizer(train_records, modality, fold_plan=None, test_fold=None):
    """Fit z-score statistics on ``train_records``.

    ``stats`` are normalized per named feature; ``sequences`` per channel,
    pooling the first ``k`` time steps of every record.  When a fold plan and
    the held-out fold index are given, any record assigned to that fold
    raises :class:`DataError` (leakage guard).
    """
    records = list(train_records)
    if fold_plan is not None and test_fold is not None:
        leaked = [r.sample_id for r in records if fold_plan.assignments.get(r.sample_id) == test_fold]
        if leaked:
            raise DataError(f"normalizer fit would use {len(leaked)} held-out records, e.g. {leaked[0]!r}")
    rows = [_raw_values(r, modality) for r in records]
    width = max((x.shape[1] for x in rows if x.size), default=0)
    stacked = np.concatenate([pad_channels(x, width) for x in rows if x.size]) if width else np.zeros((0, 0))
    if stacked.shape[0] == 0:
        mean, std = np.zeros(width), np.zeros(width)
    else:
        mean, std = stacked.mean(axis=0), stacked.std(axis=0)
    return Normalizer(modality, mean, std, frozenset(r.sample_id for r in records))


def pad_channels(x, width):
    if x.shape[1] == width:
        return x
    out = np.zeros((x.shape[0], width))
    out[:, :x.shape[1]] = x
    return out


def apply_normalizer(normalizer, record, k=SEQ_LEN, channels=SEQ_CHANNELS):
    """Normalized values for one record (stats vector, or padded ``k x channels`` sequence)."""
    if not normalizer.fitted:
        raise StateError(f"{normalizer.modality} normalizer used before fitting")
    raw = _raw_values(record, normalizer.modality, k)
    if normalizer.modality == "stats":
        return normalizer.transform(raw[0])
    if raw.size == 0:
        return np.zeros((k, channels))
    z = normalizer.transform(pad_channels(raw, normalizer.mean.size))
    return pad_sequences(z, k, channels)
