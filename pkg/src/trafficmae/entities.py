"""Context-aware entity vectors (IP addresses, ports) via skip-gram with negative sampling.

Two corpus strategies are supported:

* ``"window"``: one sentence per ``(service_key, time bucket)``; e.g. sender
  IPs that hit the same port within the same 30-minute bucket.
* ``"sender"``: one sentence per sender, the service keys it targeted in time
  order; e.g. the port sequence of each scanner.
"""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, CorpusError

log = logging.getLogger(__name__)

DEFAULT_WINDOW = 30 * 60.0


@dataclass
class Vocabulary:
    tokens: list
    counts: list

    def __post_init__(self):
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def id(self, token):
        return self.index.get(token)


@dataclass
class Corpus:
    sentences: list  # lists of token ids
    vocabulary: Vocabulary

    @property
    def counts(self):
        return self.vocabulary.counts


@dataclass
class EmbeddingMatrix:
    W: np.ndarray
    vocabulary: Vocabulary
    history: list = field(default_factory=list)

    @property
    def dim(self):
        return self.W.shape[1]

    def __post_init__(self):
        if self.W.shape[0] != len(self.vocabulary):
            raise CorpusError(f"{self.W.shape[0]} rows for a vocabulary of {len(self.vocabulary)}")


def bucket_sentences(events, window=DEFAULT_WINDOW):
    """Group ``(entity, service_key, timestamp)`` events into token sentences.

    Buckets are half-open ``[t0 + k*window, t0 + (k+1)*window)`` aligned to the
    earliest timestamp.  Sentences are emitted in order of (first event time,
    service key) and hold entities in timestamp order.
    """
    if window <= 0:
        raise ArgumentError("window must be positive")
    events = list(events)
    if not events:
        return []
    t0 = min(float(e[2]) for e in events)
    groups = defaultdict(list)
    for order, (entity, key, ts) in enumerate(events):
        bucket = int((float(ts) - t0) // window)
        groups[(str(key), bucket)].append((float(ts), order, str(entity)))
    keyed = sorted(groups.items(), key=lambda kv: (kv[0][1], min(v[0] for v in kv[1]), kv[0][0]))
    return [[tok for _, _, tok in sorted(items)] for _, items in keyed]


def sender_sentences(events):
    """One sentence per sender: the service keys it targeted, ordered by time."""
    groups = defaultdict(list)
    for order, (sender, key, ts) in enumerate(events):
        groups[str(sender)].append((float(ts), order, str(key)))
    return [[tok for _, _, tok in sorted(groups[s])] for s in sorted(groups)]


def build_vocabulary(sentences, min_count=1):
    """Keep tokens seen ``>= min_count`` times; ids by descending count, then lexical order."""
    if min_count < 1:
        raise ArgumentError("min_count must be >= 1")
    counts = Counter(tok for sent in sentences for tok in sent)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(kept, [counts[t] for t in kept])


def build_cooccurrence_corpus(events, window=DEFAULT_WINDOW, strategy="window", min_count=1):
    """Build a :class:`Corpus` from ``(entity, service_key, timestamp)`` events.

    ``strategy="window"`` makes entities co-occur when they hit the same
    service key in the same time bucket; ``"sender"`` turns each entity's
    time-ordered service keys into a sentence (the tokens are then the keys).
    Out-of-vocabulary tokens are dropped from sentences.
    """
    if strategy == "window":
        raw = bucket_sentences(events, window)
    elif strategy == "sender":
        raw = sender_sentences(events)
    else:
        raise ArgumentError(f"unknown corpus strategy {strategy!r}")
    vocab = build_vocabulary(raw, min_count)
    sentences = []
    for sent in raw:
        ids = [vocab.index[t] for t in sent if t in vocab.index]
        if ids:
            sentences.append(ids)
    return Corpus(sentences, vocab)


def generate_training_pairs(sentence, c):
    """All ``(w_i, w_j)`` with ``0 < |i - j| <= c`` inside one sentence."""
    if c < 1:
        raise ArgumentError("context half-window must be >= 1")
    n = len(sentence)
    return [(sentence[i], sentence[j])
            for i in range(n)
            for j in range(max(0, i - c), min(n, i + c + 1))
            if j != i]


def _pair_arrays(sentences, c):
    targets, contexts = [], []
    for sent in sentences:
        arr = np.asarray(sent, dtype=np.int64)
        n = arr.size
        for offset in range(1, min(c, n - 1) + 1):
            targets += [arr[:-offset], arr[offset:]]
            contexts += [arr[offset:], arr[:-offset]]
    if not targets:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(targets), np.concatenate(contexts)


def _scatter_mean(target, idx, values):
    """``target[i] += mean(values[idx == i])`` for every distinct ``i`` in ``idx``.

    Summing instead would scale a row's step with its frequency in the
    batch and diverges on small vocabularies.
    """
    order = np.argsort(idx, kind="stable")
    sidx = idx[order]
    starts = np.flatnonzero(np.r_[True, sidx[1:] != sidx[:-1]])
    counts = np.diff(np.r_[starts, sidx.size])[:, None]
    target[sidx[starts]] += np.add.reduceat(values[order], starts, axis=0) / counts


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def train_skipgram(corpus, dim=64, c=5, negatives=5, epochs=50, lr=0.025, min_lr=1e-4,
                   batch_size=32, seed=0):
    """Skip-gram with negative sampling; returns the input-side matrix ``W`` (``N x dim``).

    Noise words come from the unigram distribution raised to 0.75.  Updates
    are SGD over shuffled mini-batches of (target, context) pairs: every row
    touched by a batch moves by the mean of its per-pair gradients, with the
    learning rate decayed linearly from ``lr`` to ``min_lr``.  The mean
    negative-sampling loss of every epoch is kept in ``history``.
    """
    V = len(corpus.vocabulary)
    if V == 0:
        raise CorpusError("cannot train embeddings on an empty vocabulary")
    if dim < 1:
        raise ArgumentError("embedding dimension must be >= 1")
    rng = np.random.default_rng(seed)
    W_in = (rng.random((V, dim)) - 0.5) / dim
    W_out = np.zeros((V, dim))
    targets, contexts = _pair_arrays(corpus.sentences, c)
    n_pairs = targets.size
    history = []
    if n_pairs == 0:
        log.warning("corpus yields no skip-gram pairs; embeddings stay at initialization")
        return EmbeddingMatrix(W_in, corpus.vocabulary, history)

    noise = np.asarray(corpus.counts, dtype=float) ** 0.75
    noise_cdf = np.cumsum(noise / noise.sum())
    total_steps = epochs * ((n_pairs + batch_size - 1) // batch_size)
    step = 0
    for _ in range(epochs):
        order = rng.permutation(n_pairs)
        epoch_loss = 0.0
        for start in range(0, n_pairs, batch_size):
            idx = order[start:start + batch_size]
            alpha = lr - (lr - min_lr) * step / max(total_steps - 1, 1)
            step += 1
            t, ctx = targets[idx], contexts[idx]
            neg = np.searchsorted(noise_cdf, rng.random((idx.size, negatives)), side="right")
            neg = np.minimum(neg, V - 1)
            outs = np.concatenate([ctx[:, None], neg], axis=1)  # [b, 1+k]
            labels = np.zeros(outs.shape)
            labels[:, 0] = 1.0
            h = W_in[t]  # [b, d]
            vo = W_out[outs]  # [b, 1+k, d]
            z = np.einsum("bd,bkd->bk", h, vo)
            epoch_loss -= float(_log_sigmoid(z[:, 0]).sum() + _log_sigmoid(-z[:, 1:]).sum())
            gz = labels - 0.5 * (1.0 + np.tanh(0.5 * z))  # ascent direction
            grad_h = np.einsum("bk,bkd->bd", gz, vo)
            grad_out = gz[:, :, None] * h[:, None, :]
            _scatter_mean(W_out, outs.reshape(-1), alpha * grad_out.reshape(-1, dim))
            _scatter_mean(W_in, t, alpha * grad_h)
        history.append(epoch_loss / n_pairs)
    return EmbeddingMatrix(W_in, corpus.vocabulary, history)


def embed_entity(matrix, token):
    """Row of ``W`` for a known token; the zero vector for out-of-vocabulary tokens."""
    i = matrix.vocabulary.id(str(token))
    if i is None:
        return np.zeros(matrix.dim)
    return matrix.W[i].copy()


def embed_entities(matrix, tokens):
    """Stack :func:`embed_entity` over ``tokens``; also returns the OOV flags."""
    ids = [matrix.vocabulary.id(str(t)) for t in tokens]
    oov = np.array([i is None for i in ids], dtype=bool)
    out = np.zeros((len(ids), matrix.dim))
    known = ~oov
    if known.any():
        out[known] = matrix.W[[i for i in ids if i is not None]]
    return out, oov


def pack_matrix(matrix, prefix=""):
    """``(arrays, meta)`` describing one matrix for the binary container."""
    arrays = {f"{prefix}W": matrix.W}
    meta = {"tokens": list(matrix.vocabulary.tokens), "counts": [int(c) for c in matrix.vocabulary.counts],
            "history": [float(h) for h in matrix.history]}
    return arrays, meta


def unpack_matrix(arrays, meta, prefix=""):
    vocab = Vocabulary(list(meta["tokens"]), list(meta["counts"]))
    return EmbeddingMatrix(arrays[f"{prefix}W"], vocab, list(meta.get("history", [])))


def save_entity_matrices(matrices, path, extra=None):
    """Store ``{modality: EmbeddingMatrix}`` in one container file."""
    from .serialization import write_container

    arrays, meta = {}, {"kind": "entity-matrices", "matrices": {}, "extra": extra or {}}
    for name, matrix in matrices.items():
        a, m = pack_matrix(matrix, f"{name}/")
        arrays.update(a)
        meta["matrices"][name] = m
    write_container(path, arrays, meta)


def load_entity_matrices(path):
    from .serialization import read_container

    arrays, meta = read_container(path)
    if meta.get("kind") != "entity-matrices":
        raise CorpusError(f"{path} does not hold entity embeddings")
    return {name: unpack_matrix(arrays, m, f"{name}/") for name, m in meta["matrices"].items()}
