"""Per-modality adaptation modules.

Each adapter owns an encoder that maps one raw measurement type to an
``l1``-wide vector and a decoder that rebuilds the raw input from a code
vector.  Inside the multi-modal autoencoder the code is the output of the
integration decoder (width ``l2``), so decoders take a configurable input
width ``decoder_in`` that defaults to ``l1`` for standalone use.

Hidden layers use ReLU; every decoder output layer is linear.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ConfigError, ShapeError
from .tensor import ops
from .tensor.layers import GRU, Dense, Conv1D, Embedding, Module, Sequential
from .tensor.losses import mse
from .tensor.tensor import as_tensor

PAYLOAD_VOCAB = 257
ADAPTER_KINDS = ("payload", "statistics", "sequences", "subnet", "entity")


@dataclass(frozen=True)
class AdapterSpec:
    """Static description of an adapter; ``options`` rebuilds it via :func:`build_adapter`."""

    modality: str
    source: str
    input_shape: tuple
    l1: int
    decoder_in: int
    encoder_layers: tuple
    decoder_layers: tuple
    options: dict = field(default_factory=dict, hash=False, compare=True)

    @property
    def layers(self):
        return self.encoder_layers + self.decoder_layers


def _check_dim(name, value, minimum=1):
    if int(value) != value or value < minimum:
        raise ArgumentError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


class Adapter(Module):
    """Encoder/decoder pair for one modality."""

    spec: AdapterSpec

    @property
    def out_dim(self):
        return self.spec.l1

    @property
    def feature_count(self):
        return int(np.prod(self.spec.input_shape))

    @property
    def decoder_output(self):
        """The layer producing the reconstruction (always linear)."""
        return self.decoder.layers[-1]

    def _check_input(self, x):
        shape = tuple(np.shape(x.data if hasattr(x, "data") else x))[1:]
        if shape != tuple(self.spec.input_shape):
            raise ShapeError(f"{self.spec.modality} adapter expects inputs of shape "
                             f"{tuple(self.spec.input_shape)}, got {shape}")

    def _check_code(self, code):
        code = as_tensor(code)
        if code.shape[-1] != self.spec.decoder_in:
            raise ShapeError(f"{self.spec.modality} decoder expects width {self.spec.decoder_in}, "
                             f"got {code.shape[-1]}")
        return code

    def inputs(self, arrays):
        return arrays[self.spec.source]

    def targets(self, arrays):
        """``(target, mask)``; ``mask`` is None when every position counts."""
        return arrays[self.spec.source], None

    def loss(self, reconstruction, target, mask=None):
        return mse(target, reconstruction, mask)

    def encoder_parameters(self):
        return self.encoder.num_parameters()

    def decoder_parameters(self):
        return self.decoder.num_parameters()


class PayloadAdapter(Adapter):
    """Byte tokens -> embedding -> two GRUs -> dense; decoder regresses normalized bytes."""

    def __init__(self, l1=32, length=32, decoder_in=None, source="payload", rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        l1 = _check_dim("l1", l1)
        length = _check_dim("payload length", length)
        decoder_in = _check_dim("decoder_in", decoder_in or l1)
        self.spec = AdapterSpec(
            "payload", source, (length,), l1, decoder_in,
            ("Embedding(257, 64, mask 0)", "GRU(64, sequences)", "GRU(32, last)",
             "Dense(64, relu)", f"Dense({l1}, relu)"),
            (f"Dense({l1}, relu)", "Dense(64, relu)", f"RepeatVector({length})",
             "GRU(64, sequences)", "TimeDistributed(Dense(1, linear))"),
            {"kind": "payload", "l1": l1, "length": length, "decoder_in": decoder_in, "source": source},
        )
        self.encoder = Sequential([
            Embedding(PAYLOAD_VOCAB, 64, mask_value=0, rng=rng),
            GRU(64, 64, return_sequences=True, rng=rng),
            GRU(64, 32, return_sequences=False, rng=rng),
            Dense(32, 64, "relu", rng),
            Dense(64, l1, "relu", rng),
        ])
        self.decoder = Sequential([
            Dense(decoder_in, l1, "relu", rng),
            Dense(l1, 64, "relu", rng),
            GRU(64, 64, return_sequences=True, rng=rng),
            Dense(64, 1, "linear", rng),
        ])

    def encode(self, tokens):
        tokens = np.asarray(tokens)
        self._check_input(tokens)
        emb, gru1, gru2, d1, d2 = self.encoder.layers
        x, mask = emb(tokens)
        h = gru2(gru1(x, mask), mask)
        return d2(d1(h))

    def decode(self, code):
        code = self._check_code(code)
        d1, d2, gru, out = self.decoder.layers
        h = ops.repeat_vector(d2(d1(code)), self.spec.input_shape[0])
        return out(gru(h))

    def targets(self, arrays):
        return arrays["payload_target"], arrays["payload_mask"][..., None]


class StatsAdapter(Adapter):
    """One dense layer each way."""

    def __init__(self, n_stats, l1=32, decoder_in=None, source="stats", rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        n_stats = _check_dim("n_stats", n_stats)
        l1 = _check_dim("l1", l1)
        decoder_in = _check_dim("decoder_in", decoder_in or l1)
        self.spec = AdapterSpec(
            "statistics", source, (n_stats,), l1, decoder_in,
            (f"Dense({l1}, relu)",), (f"Dense({n_stats}, linear)",),
            {"kind": "statistics", "n_stats": n_stats, "l1": l1, "decoder_in": decoder_in, "source": source},
        )
        self.encoder = Sequential([Dense(n_stats, l1, "relu", rng)])
        self.decoder = Sequential([Dense(decoder_in, n_stats, "linear", rng)])

    def encode(self, x):
        self._check_input(x)
        return self.encoder(as_tensor(x))

    def decode(self, code):
        return self.decoder(self._check_code(code))


class EntityAdapter(Adapter):
    """Dense adaptation of a frozen entity embedding.

    With ``bypass=True`` the embedding is passed to the integration module
    unchanged (the encoder has no parameters and ``out_dim == E``).
    """

    def __init__(self, E, l1=32, decoder_in=None, source="ip", bypass=False, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        E = _check_dim("E", E)
        l1 = _check_dim("l1", l1)
        decoder_in = _check_dim("decoder_in", decoder_in or (E if bypass else l1))
        self.bypass = bool(bypass)
        self.spec = AdapterSpec(
            "entity", source, (E,), l1, decoder_in,
            ("Identity",) if bypass else (f"Dense({l1}, relu)",), (f"Dense({E}, linear)",),
            {"kind": "entity", "E": E, "l1": l1, "decoder_in": decoder_in, "source": source,
             "bypass": self.bypass},
        )
        self.encoder = Sequential([] if bypass else [Dense(E, l1, "relu", rng)])
        self.decoder = Sequential([Dense(decoder_in, E, "linear", rng)])

    @property
    def out_dim(self):
        return self.spec.input_shape[0] if self.bypass else self.spec.l1

    def encode(self, x):
        self._check_input(x)
        return self.encoder(as_tensor(x))

    def decode(self, code):
        return self.decoder(self._check_code(code))


class SubnetAdapter(Adapter):
    """GRU encoder over the four scaled octets of a subnet."""

    def __init__(self, l1=32, decoder_in=None, source="subnet", rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        l1 = _check_dim("l1", l1)
        decoder_in = _check_dim("decoder_in", decoder_in or l1)
        self.spec = AdapterSpec(
            "subnet", source, (4, 1), l1, decoder_in,
            ("GRU(32, sequences)", "GRU(32, last)", "Dense(64, relu)", f"Dense({l1}, relu)"),
            (f"Dense({l1}, relu)", "Dense(64, relu)", "RepeatVector(4)", "GRU(32, sequences)",
             "TimeDistributed(Dense(1, linear))"),
            {"kind": "subnet", "l1": l1, "decoder_in": decoder_in, "source": source},
        )
        self.encoder = Sequential([
            GRU(1, 32, return_sequences=True, rng=rng),
            GRU(32, 32, return_sequences=False, rng=rng),
            Dense(32, 64, "relu", rng),
            Dense(64, l1, "relu", rng),
        ])
        self.decoder = Sequential([
            Dense(decoder_in, l1, "relu", rng),
            Dense(l1, 64, "relu", rng),
            GRU(64, 32, return_sequences=True, rng=rng),
            Dense(32, 1, "linear", rng),
        ])

    def encode(self, x):
        self._check_input(x)
        return self.encoder(as_tensor(x))

    def decode(self, code):
        code = self._check_code(code)
        d1, d2, gru, out = self.decoder.layers
        return out(gru(ops.repeat_vector(d2(d1(code)), 4)))


class SequenceAdapter(Adapter):
    """1-D convolutional encoder over a ``k x channels`` packet sequence.

    For ``k = 32`` the valid convolution leaves 30 steps, pooling 15, and the
    flattened width is 480.  The decoder mirrors it with same-padded
    convolutions and two upsamplings before a linear dense to ``k * channels``.
    """

    def __init__(self, k=32, channels=4, l1=32, decoder_in=None, source="sequences", rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        k = _check_dim("k", k)
        channels = _check_dim("channels", channels)
        l1 = _check_dim("l1", l1)
        decoder_in = _check_dim("decoder_in", decoder_in or l1)
        if k < 4:
            # a valid width-3 convolution must leave at least one full pooling window
            raise ShapeError(f"sequence length k={k} is too short for the convolutional adapter (k >= 4)")
        pooled = (k - 2) // 2
        flat = 32 * pooled
        self.pooled = pooled
        self.spec = AdapterSpec(
            "sequences", source, (k, channels), l1, decoder_in,
            ("Conv1D(32, 3, valid, relu)", "MaxPool1D(2)", f"Flatten({flat})", f"Dense({l1}, relu)"),
            (f"Dense({l1}, relu)", f"Dense({flat}, relu)", f"Reshape({pooled}x32)",
             "Conv1D(32, 3, same, relu)", "UpSampling1D(2)", "Conv1D(4, 3, same, relu)",
             "UpSampling1D(2)", f"Flatten({16 * pooled})", f"Dense({k}x{channels}, linear)"),
            {"kind": "sequences", "k": k, "channels": channels, "l1": l1, "decoder_in": decoder_in,
             "source": source},
        )
        self.encoder = Sequential([
            Conv1D(channels, 32, 3, "relu", "valid", rng),
            Dense(flat, l1, "relu", rng),
        ])
        self.decoder = Sequential([
            Dense(decoder_in, l1, "relu", rng),
            Dense(l1, flat, "relu", rng),
            Conv1D(32, 32, 3, "relu", "same", rng),
            Conv1D(32, 4, 3, "relu", "same", rng),
            Dense(16 * pooled, k * channels, "linear", rng),
        ])

    def encode(self, x):
        self._check_input(x)
        conv, dense = self.encoder.layers
        h = ops.maxpool1d(conv(as_tensor(x)), 2, 2)
        return dense(ops.reshape(h, (h.shape[0], -1)))

    def decode(self, code):
        code = self._check_code(code)
        d1, d2, c1, c2, out = self.decoder.layers
        h = ops.reshape(d2(d1(code)), (code.shape[0], self.pooled, 32))
        h = ops.upsample1d(c1(h), 2)
        h = ops.upsample1d(c2(h), 2)
        y = out(ops.reshape(h, (code.shape[0], -1)))
        return ops.reshape(y, (code.shape[0],) + tuple(self.spec.input_shape))


def build_payload_adapter(l1=32, length=32, decoder_in=None, source="payload", rng=None):
    return PayloadAdapter(l1, length, decoder_in, source, rng)


def build_stats_adapter(n_stats, l1=32, decoder_in=None, source="stats", rng=None):
    return StatsAdapter(n_stats, l1, decoder_in, source, rng)


def build_sequence_adapter(k=32, channels=4, l1=32, decoder_in=None, source="sequences", rng=None):
    return SequenceAdapter(k, channels, l1, decoder_in, source, rng)


def build_subnet_adapter(l1=32, decoder_in=None, source="subnet", rng=None):
    return SubnetAdapter(l1, decoder_in, source, rng)


def build_entity_adapter(E, l1=32, decoder_in=None, source="ip", bypass=False, rng=None):
    return EntityAdapter(E, l1, decoder_in, source, bypass, rng)


def build_adapter(options, rng=None):
    """Rebuild an adapter from :attr:`AdapterSpec.options`."""
    opts = dict(options)
    kind = opts.pop("kind", None)
    builders = {
        "payload": PayloadAdapter, "statistics": StatsAdapter, "sequences": SequenceAdapter,
        "subnet": SubnetAdapter, "entity": EntityAdapter,
    }
    if kind not in builders:
        raise ConfigError(f"unknown adapter kind {kind!r}")
    return builders[kind](rng=rng, **opts)


def adapter_for_modality(modality, pipeline, l1=32, decoder_in=None, entity_bypass=False, rng=None):
    """Default adapter for a dataset modality given a fitted feature pipeline."""
    if modality in ("ip", "port"):
        return EntityAdapter(pipeline.dims(modality), l1, decoder_in, modality, entity_bypass, rng)
    if modality == "subnet":
        return SubnetAdapter(l1, decoder_in, modality, rng)
    if modality == "payload":
        return PayloadAdapter(l1, pipeline.payload_len, decoder_in, modality, rng)
    if modality == "stats":
        return StatsAdapter(pipeline.dims(modality), l1, decoder_in, modality, rng)
    if modality == "sequences":
        return SequenceAdapter(pipeline.seq_len, pipeline.seq_channels, l1, decoder_in, modality, rng)
    raise ConfigError(f"no adapter for modality {modality!r}")
