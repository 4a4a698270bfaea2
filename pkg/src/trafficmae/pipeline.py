"""End-to-end experiment orchestration: data -> entity vectors -> autoencoder -> evaluation.

Seeds are derived, never drawn: entity matrix ``i`` (in modality order)
trains with ``seed + i``; the autoencoder with ``seed``; ablation arm or
grid cell ``i`` with ``seed + i``; fold ``f`` of a classifier with
``sub_seed + f``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .dataio.features import FeaturePipeline
from .dataio.records import ENTITY_MODALITIES, MODALITIES, load_canonical
from .dataio.synthetic import SyntheticSpec, generate_synthetic
from .entities import DEFAULT_WINDOW, build_cooccurrence_corpus, train_skipgram
from .errors import ConfigError, DataError
from .evalkit.folds import stratified_session_kfold
from .evalkit.neighbors import purity_curve
from .evalkit.protocol import GROUP_ARMS, ProtocolConfig, labeled_records, run_ablation
from .mae import MAEConfig, build_mae, embed_dataset, model_hash, train_mae

log = logging.getLogger(__name__)

DEFAULT_K_LIST = (1, 3, 5, 10, 20)
DEFAULT_STRATEGIES = {"ip": "window", "port": "sender"}
PURITY_SPACES = ("mae", "concat", "entities", "quantities")


def _from_dict(cls, obj, what):
    obj = dict(obj or {})
    extra = set(obj) - {f.name for f in fields(cls)}
    if extra:
        raise ConfigError(f"unknown {what} fields: {sorted(extra)}")
    return cls(**obj)


@dataclass
class EntityConfig:
    dim: int = 64
    context: int = 5
    negatives: int = 5
    epochs: int = 50
    lr: float = 0.025
    min_lr: float = 1e-4
    batch_size: int = 32
    min_count: int = 1
    window: float = DEFAULT_WINDOW
    strategies: dict = field(default_factory=lambda: dict(DEFAULT_STRATEGIES))

    def __post_init__(self):
        if self.dim < 1 or self.context < 1 or self.negatives < 0 or self.epochs < 0:
            raise ConfigError("entities: dim and context must be >= 1, negatives and epochs >= 0")
        for m, s in self.strategies.items():
            if m not in ENTITY_MODALITIES or s not in ("window", "sender"):
                raise ConfigError(f"entities.strategies: invalid entry {m!r}: {s!r}")


@dataclass
class ExperimentConfig:
    seed: int
    output_dir: str
    dataset: str | None = None
    synthetic: dict | None = None
    modalities: list | None = None
    entities: EntityConfig = field(default_factory=EntityConfig)
    mae: MAEConfig = field(default_factory=MAEConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    arms: list = field(default_factory=lambda: ["mae", "concat"])
    ablation_arms: list | None = None
    purity_k: list = field(default_factory=lambda: list(DEFAULT_K_LIST))
    purity_spaces: list = field(default_factory=lambda: list(PURITY_SPACES))
    figures: bool = True

    @classmethod
    def from_dict(cls, obj, base_dir=None):
        obj = dict(obj)
        if "seed" not in obj:
            raise ConfigError("config field 'seed' is required")
        if "output_dir" not in obj:
            raise ConfigError("config field 'output_dir' is required")
        extra = set(obj) - {f.name for f in fields(cls)}
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        if not isinstance(obj["seed"], int) or isinstance(obj["seed"], bool):
            raise ConfigError(f"config field 'seed' must be an integer, got {obj['seed']!r}")
        if (obj.get("dataset") is None) == (obj.get("synthetic") is None):
            raise ConfigError("config needs exactly one of 'dataset' and 'synthetic'")
        seed = obj["seed"]
        obj["entities"] = _from_dict(EntityConfig, obj.get("entities"), "entities")
        mae = dict(obj.get("mae") or {})
        mae.setdefault("seed", seed)
        obj["mae"] = MAEConfig.from_dict(mae)
        protocol = dict(obj.get("protocol") or {})
        protocol.setdefault("seed", seed)
        obj["protocol"] = ProtocolConfig.from_dict(protocol)
        if base_dir is not None:
            for key in ("dataset", "output_dir"):
                if obj.get(key) is not None and not os.path.isabs(obj[key]):
                    obj[key] = str(Path(base_dir) / obj[key])
        cfg = cls(**obj)
        if cfg.synthetic is not None:
            SyntheticSpec.from_dict(cfg.synthetic).validate()
        for arm in list(cfg.arms) + list(cfg.ablation_arms or []):
            if arm != "mae" and arm not in MODALITIES and arm not in GROUP_ARMS:
                raise ConfigError(f"unknown arm {arm!r}")
        for space in cfg.purity_spaces:
            if space not in PURITY_SPACES and space not in MODALITIES:
                raise ConfigError(f"unknown purity space {space!r}")
        return cfg

    def to_dict(self):
        out = asdict(self)
        out["mae"] = self.mae.to_dict()
        out["protocol"] = self.protocol.to_dict()
        return out

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    return ExperimentConfig.from_dict(obj, base_dir=Path(path).resolve().parent)


def load_dataset(cfg):
    if cfg.dataset is not None:
        return load_canonical(cfg.dataset)
    spec = dict(cfg.synthetic)
    seed = spec.pop("seed", cfg.seed)
    return generate_synthetic(spec, seed)


def experiment_modalities(cfg, dataset):
    mods = cfg.modalities or [m for m in MODALITIES if m in dataset.manifest]
    bad = [m for m in mods if m not in MODALITIES]
    if bad or not mods:
        raise ConfigError(f"modalities must be a non-empty subset of {MODALITIES}, got {mods}")
    return list(mods)


def entity_events(records):
    """``(sender_ip, service_key, timestamp)`` triples from record events.

    Records without an event list contribute their own ``(ip, port,
    timestamp)`` observation.
    """
    out = []
    for r in records:
        ip = r.entities.get("ip")
        if ip is None:
            continue
        if r.events:
            out.extend((ip, key, ts) for ts, key in r.events)
        elif r.entities.get("port") is not None:
            out.append((ip, r.entities["port"], r.timestamp or 0.0))
    return out


def train_entity_matrices(records, modalities, cfg, seed):
    """One skip-gram matrix per entity modality; matrix ``i`` uses ``seed + i``."""
    events = entity_events(records)
    matrices = {}
    for i, m in enumerate(x for x in ENTITY_MODALITIES if x in modalities):
        strategy = cfg.strategies.get(m, DEFAULT_STRATEGIES[m])
        corpus = build_cooccurrence_corpus(events, cfg.window, strategy, cfg.min_count)
        if len(corpus.vocabulary) == 0:
            raise DataError(f"no events to learn {m!r} embeddings from")
        matrices[m] = train_skipgram(corpus, cfg.dim, cfg.context, cfg.negatives, cfg.epochs, cfg.lr,
                                     cfg.min_lr, cfg.batch_size, seed + i)
    return matrices


def fit_mae(records, modalities, matrices, mae_cfg, progress=None):
    """Train the autoencoder on every record (labels unused)."""
    pipeline = FeaturePipeline.fit(records, modalities, matrices)
    model = build_mae(pipeline, modalities, mae_cfg)
    return train_mae(model, records, progress=progress)


def parallelism():
    try:
        return max(1, int(os.environ.get("TRAFFICMAE_THREADS", "1")))
    except ValueError:
        raise ConfigError("TRAFFICMAE_THREADS must be an integer") from None


def ordered_map(fn, items):
    """``[fn(x) for x in items]``, spread over ``TRAFFICMAE_THREADS`` threads; order preserved."""
    items = list(items)
    threads = min(parallelism(), len(items)) if items else 1
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, items))


def space_features(space, records, modalities, matrices, embeddings):
    """Unsupervised representation used for neighborhood purity."""
    if space == "mae":
        row = {sid: i for i, sid in enumerate(embeddings.sample_ids)}
        return embeddings.matrix[[row[r.sample_id] for r in records]]
    mods = GROUP_ARMS.get(space, (space,))
    mods = [m for m in mods if m in modalities]
    if not mods:
        return None
    return FeaturePipeline.fit(records, mods, matrices).concat(records, mods)


@dataclass
class ExperimentState:
    dataset: object
    modalities: list
    matrices: dict
    model: object
    embeddings: object


def prepare(cfg, dataset=None, matrices=None, model=None, embeddings=None, progress=None):
    """Run (or reuse) the self-supervised stages."""
    dataset = dataset if dataset is not None else load_dataset(cfg)
    modalities = experiment_modalities(cfg, dataset)
    if model is not None:
        matrices = model.pipeline.entity_matrices if model.pipeline is not None else matrices
    if matrices is None:
        matrices = train_entity_matrices(dataset.records, modalities, cfg.entities, cfg.seed)
    if model is None and embeddings is None:
        model = fit_mae(dataset.records, modalities, matrices, cfg.mae, progress)
    if embeddings is None:
        embeddings = embed_dataset(model, dataset)
    return ExperimentState(dataset, modalities, matrices, model, embeddings)


def evaluate_arms(state, arms, protocol):
    """Cross-validated reports for ``arms``; arm ``i`` uses sub-seed ``protocol.seed + i``."""
    records = labeled_records(state.dataset, protocol.exclude_labels)
    plan = stratified_session_kfold(records, protocol.k, protocol.seed)

    def one(item):
        i, arm = item
        sub = replace(protocol, seed=protocol.seed + i)
        return run_ablation(records, arm, sub, state.matrices, state.embeddings, plan)

    results = ordered_map(one, list(enumerate(arms)))
    return plan, results


def purity_report(state, spaces, ks, exclude_labels):
    records = labeled_records(state.dataset, exclude_labels)
    labels = [r.label for r in records]
    out = {}
    for space in spaces:
        X = space_features(space, records, state.modalities, state.matrices, state.embeddings)
        if X is None:
            continue
        curve = purity_curve(X, labels, ks)
        out[space] = {"k": curve.ks, "p_c": curve.values, "excluded": curve.excluded}
    return out


def experiment_report(cfg, state, plan, results, purity=None):
    model = state.model
    report = {
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest(),
        "dataset": {"samples": len(state.dataset), "modalities": state.modalities,
                    "classes": sorted({r.label for r in labeled_records(state.dataset,
                                                                          cfg.protocol.exclude_labels)})},
        "fold_plan": {"k": plan.k, "sha256": plan.digest(), "grouping": plan.grouping,
                      "warnings": plan.warnings},
        "arms": {r.arm: r.to_dict() for r in results},
        "mae": None,
    }
    if model is not None:
        report["mae"] = {"model_sha256": model_hash(model), "trainables": model.num_parameters(),
                         "loss_weights": model.loss_weights, "loss_history": model.history}
    if purity is not None:
        report["purity"] = purity
    return report


def run_experiment(cfg, arms=None, purity=True, progress=None, **reuse):
    state = prepare(cfg, progress=progress, **reuse)
    plan, results = evaluate_arms(state, arms or cfg.arms, cfg.protocol)
    pur = purity_report(state, cfg.purity_spaces, cfg.purity_k, cfg.protocol.exclude_labels) if purity else None
    return state, experiment_report(cfg, state, plan, results, pur)


def grid_search(cfg, l1_values, l4_values, progress=None):
    """MAE+classifier macro F1 for every ``(l1, l4)`` pair; cell ``i`` uses sub-seed ``seed + i``."""
    dataset = load_dataset(cfg)
    modalities = experiment_modalities(cfg, dataset)
    matrices = train_entity_matrices(dataset.records, modalities, cfg.entities, cfg.seed)
    cells = [(l1, l4) for l1 in l1_values for l4 in l4_values]
    for l1, l4 in cells:
        MAEConfig(**{**cfg.mae.to_dict(), "l1": l1, "l4": l4})  # validate every cell up front

    def one(item):
        i, (l1, l4) = item
        mae_cfg = MAEConfig(**{**cfg.mae.to_dict(), "l1": l1, "l4": l4, "seed": cfg.seed + i})
        model = fit_mae(dataset.records, modalities, matrices, mae_cfg)
        state = ExperimentState(dataset, modalities, matrices, model, embed_dataset(model, dataset))
        _, (result,) = evaluate_arms(state, ["mae"], replace(cfg.protocol, seed=cfg.seed + i))
        if progress is not None:
            progress((l1, l4, result.macro_f1))
        return {"l1": l1, "l4": l4, "macro_f1": result.macro_f1, "weighted_f1": result.weighted_f1,
                "downstream_trainables": result.trainables, "mae_trainables": model.num_parameters(),
                "final_loss": model.history[-1]["loss"] if model.history else None}

    return ordered_map(one, list(enumerate(cells)))


def mean_or_none(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None
