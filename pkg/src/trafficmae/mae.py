"""Multi-modal autoencoder: adapters plus a symmetric integration module.

The integration module is five dense layers of widths ``l2, l3, l4, l3, l2``.
Its input is the concatenation of every adapter's output; its ``l2``-wide
output is handed to every adapter decoder, whose first layer fans it back
out to that modality.  The ``l4`` bottleneck is the sample embedding.

Training minimizes the sum over modalities of ``w_i * MSE_i`` where ``w_i``
is proportional to the number of features modality ``i`` reconstructs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .adapters import adapter_for_modality
from .errors import ArgumentError, ConfigError, DataError, ShapeError
from .tensor import ops
from .tensor.layers import Dense, Module, Sequential
from .tensor.losses import proportional_weights
from .tensor.optim import Adam
from .tensor.tensor import backward

log = logging.getLogger(__name__)


@dataclass
class MAEConfig:
    l1: int = 32
    l2: int = 512
    l3: int = 256
    l4: int = 64
    epochs: int = 150
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    bottleneck_activation: str = "relu"
    entity_bypass: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("l1", "l2", "l3", "l4", "batch_size"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not self.l2 > self.l3 > self.l4:
            raise ConfigError(f"integration widths must satisfy l2 > l3 > l4, got "
                              f"{self.l2}, {self.l3}, {self.l4}")
        if not isinstance(self.epochs, (int, np.integer)) or self.epochs < 0:
            raise ConfigError(f"epochs must be a non-negative integer, got {self.epochs!r}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr!r}")
        if self.bottleneck_activation not in ("relu", "linear", "tanh", "sigmoid"):
            raise ConfigError(f"unsupported bottleneck activation {self.bottleneck_activation!r}")

    @classmethod
    def from_dict(cls, obj):
        obj = dict(obj or {})
        known = {f.name for f in fields(cls)}
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown MAE config fields: {sorted(extra)}")
        return cls(**obj)

    def to_dict(self):
        return asdict(self)


class MAEModel(Module):
    """Adapters keyed by modality name plus the integration encoder/decoder."""

    def __init__(self, adapters, config, rng=None):
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.config = config
        self.adapters = dict(adapters)
        width = sum(a.out_dim for a in self.adapters.values())
        self.input_width = width
        self.integration_encoder = Sequential([
            Dense(width, config.l2, "relu", rng),
            Dense(config.l2, config.l3, "relu", rng),
            Dense(config.l3, config.l4, config.bottleneck_activation, rng),
        ])
        self.integration_decoder = Sequential([
            Dense(config.l4, config.l3, "relu", rng),
            Dense(config.l3, config.l2, "relu", rng),
        ])
        self.loss_weights = compute_loss_weights(self)
        self.history = []
        self.pipeline = None

    @property
    def modalities(self):
        return tuple(self.adapters)

    @property
    def embedding_dim(self):
        return self.config.l4

    def encode(self, arrays):
        """Bottleneck codes ``[B, l4]`` for a dict of model-ready arrays."""
        parts = [a.encode(a.inputs(arrays)) for a in self.adapters.values()]
        x = parts[0] if len(parts) == 1 else ops.concat(parts, axis=-1)
        return self.integration_encoder(x)

    def forward(self, arrays):
        code = self.encode(arrays)
        shared = self.integration_decoder(code)
        return code, {name: a.decode(shared) for name, a in self.adapters.items()}

    def loss(self, arrays):
        """Weighted reconstruction loss and the per-modality (unweighted) MSE values."""
        _, recon = self.forward(arrays)
        total, per = None, {}
        for name, adapter in self.adapters.items():
            target, mask = adapter.targets(arrays)
            term = adapter.loss(recon[name], target, mask)
            per[name] = float(term.data)
            term = ops.mul(term, self.loss_weights[name])
            total = term if total is None else ops.add(total, term)
        return total, per

    def embed_arrays(self, arrays, batch_size=256):
        n = _batch_len(arrays)
        out = np.zeros((n, self.config.l4))
        for start in range(0, n, batch_size):
            idx = np.arange(start, min(n, start + batch_size))
            out[idx] = self.encode(_take(arrays, idx)).data
        return out


def _batch_len(arrays):
    lengths = {len(v) for v in arrays.values()}
    if len(lengths) != 1:
        raise ShapeError(f"arrays disagree on the number of samples: {sorted(lengths)}")
    return lengths.pop()


def _take(arrays, idx):
    return {k: v[idx] for k, v in arrays.items()}


def assemble_mae(adapters, config=None, rng=None):
    """Build an :class:`MAEModel` from ``(name, adapter)`` pairs (or adapters keyed by source).

    Every adapter must share ``l1`` and take the ``l2``-wide integration
    output as its decoder input.
    """
    config = config or MAEConfig()
    config.validate()
    if isinstance(adapters, dict):
        items = list(adapters.items())
    else:
        items = [a if isinstance(a, tuple) else (a.spec.source, a) for a in adapters]
    if not items:
        raise ConfigError("the autoencoder needs at least one adapter")
    names = [n for n, _ in items]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate adapter names: {names}")
    for name, a in items:
        if a.spec.l1 != config.l1:
            raise ConfigError(f"adapter {name!r} has l1={a.spec.l1}, config says {config.l1}")
        if a.spec.decoder_in != config.l2:
            raise ConfigError(f"adapter {name!r} decoder reads width {a.spec.decoder_in}, "
                              f"the integration output is l2={config.l2}")
    return MAEModel(items, config, rng)


def build_mae(pipeline, modalities, config=None):
    """Default adapters for ``modalities`` wired into a fresh model; all weights from ``config.seed``."""
    config = config or MAEConfig()
    rng = np.random.default_rng(config.seed)
    adapters = [(m, adapter_for_modality(m, pipeline, config.l1, config.l2, config.entity_bypass, rng))
                for m in modalities]
    model = assemble_mae(adapters, config, rng)
    model.pipeline = pipeline
    return model


def compute_loss_weights(model):
    """``{modality: n_i / sum_j n_j}`` over reconstructed feature counts."""
    adapters = model.adapters if isinstance(model, MAEModel) else dict(model)
    names = list(adapters)
    weights = proportional_weights([adapters[n].feature_count for n in names])
    return {n: float(w) for n, w in zip(names, weights)}


def _model_arrays(model, data):
    if isinstance(data, dict):
        return data
    records = list(getattr(data, "records", data))
    if model.pipeline is None:
        raise ConfigError("model has no feature pipeline; pass model-ready arrays instead")
    for r in records:
        present = r.modalities()
        for m in model.modalities:
            if m not in present:
                raise DataError(f"sample {r.sample_id!r} is missing modality {m!r}")
    return model.pipeline.arrays(records, model.modalities)


def train_mae(model, data, config=None, progress=None):
    """Train end to end with Adam; returns the model with ``history`` filled in.

    ``data`` is a Dataset, a list of records or a dict of model-ready arrays.
    Each history entry holds the epoch's sample-weighted mean total loss and
    per-modality MSE.  Shuffling uses its own generator derived from the seed.
    """
    config = config or model.config
    arrays = _model_arrays(model, data)
    n = _batch_len(arrays)
    if n == 0:
        raise DataError("cannot train on an empty dataset")
    opt = Adam(model.parameters(), lr=config.lr)
    rng = np.random.default_rng([config.seed, 1])
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total, per = 0.0, dict.fromkeys(model.modalities, 0.0)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, parts = model.loss(_take(arrays, idx))
            opt.zero_grad()
            backward(loss)
            opt.step()
            total += float(loss.data) * idx.size
            for k, v in parts.items():
                per[k] += v * idx.size
        entry = {"epoch": epoch, "loss": total / n, "modalities": {k: v / n for k, v in per.items()}}
        if not all(math.isfinite(v) for v in [entry["loss"], *entry["modalities"].values()]):
            raise ArgumentError(f"training diverged at epoch {epoch}")
        model.history.append(entry)
        if progress is not None:
            progress(entry)
    return model


def model_hash(model):
    """SHA-256 over the config and every parameter in registration order."""
    h = hashlib.sha256(json.dumps(model.config.to_dict(), sort_keys=True).encode())
    for name, p in model.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return h.hexdigest()


@dataclass
class EmbeddingSet:
    sample_ids: list
    matrix: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.sample_ids):
            raise ShapeError(f"{len(self.sample_ids)} sample ids for a matrix of shape {self.matrix.shape}")
        if not np.all(np.isfinite(self.matrix)):
            raise DataError("embeddings contain non-finite values")

    @property
    def dim(self):
        return self.matrix.shape[1]

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_id"] + [f"e{i}" for i in range(self.dim)])
            for sid, row in zip(self.sample_ids, self.matrix):
                w.writerow([sid] + [format(float(v), ".17g") for v in row])

    @classmethod
    def from_csv(cls, path):
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][:1] != ["sample_id"]:
            raise DataError(f"{path}: missing 'sample_id,e0,...' header")
        width = len(rows[0]) - 1
        ids, values = [], []
        for lineno, row in enumerate(rows[1:], start=2):
            if len(row) != width + 1:
                raise DataError(f"{path}: line {lineno} has {len(row)} fields, expected {width + 1}")
            try:
                values.append([float(v) for v in row[1:]])
            except ValueError:
                raise DataError(f"{path}: line {lineno} holds a non-numeric value") from None
            ids.append(row[0])
        return cls(ids, np.array(values).reshape(len(ids), width))


def embed_sample(model, sample):
    """Eval-mode embedding of one record: a vector of length ``l4``."""
    return model.embed_arrays(_model_arrays(model, [sample]))[0]


def embed_dataset(model, dataset, batch_size=256):
    """:class:`EmbeddingSet` with one row per record, in dataset order."""
    records = list(getattr(dataset, "records", dataset))
    matrix = model.embed_arrays(_model_arrays(model, records), batch_size)
    provenance = {"model_hash": model_hash(model), "config": model.config.to_dict()}
    return EmbeddingSet([r.sample_id for r in records], matrix, provenance)


def save_model(model, path):
    """Write parameters, config, adapter layout, loss weights, history and pipeline."""
    from .dataio.features import pack_pipeline
    from .serialization import write_container

    arrays = {f"param/{name}": p.data for name, p in model.named_parameters()}
    meta = {
        "kind": "mae-model",
        "config": model.config.to_dict(),
        "adapters": [[name, dict(a.spec.options)] for name, a in model.adapters.items()],
        "loss_weights": model.loss_weights,
        "history": model.history,
        "pipeline": None,
    }
    if model.pipeline is not None:
        p_arrays, meta["pipeline"] = pack_pipeline(model.pipeline)
        arrays.update(p_arrays)
    write_container(path, arrays, meta)


def load_model(path):
    """Inverse of :func:`save_model`; parameters are restored bit-exactly."""
    from .adapters import build_adapter
    from .dataio.features import unpack_pipeline
    from .errors import CorruptionError
    from .serialization import read_container

    arrays, meta = read_container(path)
    if meta.get("kind") != "mae-model":
        raise CorruptionError(f"{path} does not hold an autoencoder model")
    config = MAEConfig.from_dict(meta["config"])
    rng = np.random.default_rng(0)
    adapters = [(name, build_adapter(opts, rng)) for name, opts in meta["adapters"]]
    model = assemble_mae(adapters, config, rng)
    params = dict(model.named_parameters())
    stored = {k[len("param/"):] for k in arrays if k.startswith("param/")}
    if stored != set(params):
        raise CorruptionError(f"{path}: stored parameters do not match the described architecture")
    for name, p in params.items():
        value = arrays[f"param/{name}"]
        if value.shape != p.shape:
            raise CorruptionError(f"{path}: parameter {name!r} has shape {value.shape}, expected {p.shape}")
        p.data = value.copy()
    if model.loss_weights != meta["loss_weights"]:
        raise CorruptionError(f"{path}: stored loss weights disagree with the architecture")
    model.history = meta["history"]
    if meta.get("pipeline") is not None:
        model.pipeline = unpack_pipeline(arrays, meta["pipeline"])
    return model
