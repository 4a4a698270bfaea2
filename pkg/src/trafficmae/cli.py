"""Command-line front end: ``trafficmae <command> ...``.

Exit codes: 0 success, 2 configuration or argument error, 3 data or
container error, 1 anything unexpected.  Every command writes a
``run_manifest.json`` (or ``<out>.manifest.json`` for single-file commands)
holding the argv, resolved config, hashes, seed and library versions.
Timestamps live only in the manifest, so reports are byte-identical across
reruns.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
import traceback
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .dataio.converters import CONVERTERS, convert
from .dataio.records import MODALITIES, load_canonical, save_canonical
from .dataio.synthetic import SyntheticSpec, generate_synthetic
from .entities import load_entity_matrices, save_entity_matrices
from .errors import ArgumentError, ConfigError, DataError, TrafficMAEError
from .evalkit.neighbors import purity_curve
from .evalkit.protocol import GROUP_ARMS
from .mae import EmbeddingSet, embed_dataset, load_model, model_hash, save_model
from .pipeline import (
    DEFAULT_K_LIST,
    experiment_modalities,
    fit_mae,
    grid_search,
    load_config,
    load_dataset,
    run_experiment,
    train_entity_matrices,
)
from .serialization import FORMAT_VERSION

log = logging.getLogger("trafficmae")

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3


def _int_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions():
    import matplotlib

    return {"trafficmae": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "matplotlib": matplotlib.__version__, "container_format": FORMAT_VERSION}


class Run:
    """Collects outputs of one command and writes its manifest."""

    def __init__(self, args, manifest_path, cfg=None, seed=None, inputs=()):
        self.args = args
        self.manifest_path = Path(manifest_path)
        self.cfg = cfg
        self.seed = seed if seed is not None else (cfg.seed if cfg is not None else None)
        self.inputs = [str(p) for p in inputs]
        self.outputs = []
        self.extra = {}
        self.started = datetime.now(timezone.utc).isoformat()

    def output(self, path):
        self.outputs.append(str(path))
        return path

    def finish(self):
        manifest = {
            "command": self.args.command,
            "argv": sys.argv[1:],
            "seed": self.seed,
            "config": self.cfg.to_dict() if self.cfg is not None else None,
            "config_sha256": self.cfg.digest() if self.cfg is not None else None,
            "inputs": {p: _file_sha256(p) for p in self.inputs if Path(p).is_file()},
            "outputs": {p: _file_sha256(p) for p in self.outputs if Path(p).is_file()},
            "versions": _versions(),
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
            **self.extra,
        }
        self.manifest_path.parent.mkdir(parents=True, exist_ok=True)
        _dump_json(manifest, self.manifest_path)


def _config_run(args):
    cfg = load_config(args.config)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    inputs = [args.config] + ([cfg.dataset] if cfg.dataset else [])
    return cfg, out, Run(args, out / "run_manifest.json", cfg, inputs=inputs)


def _epoch_logger(entry):
    log.info("epoch %d loss %.6g", entry["epoch"], entry["loss"])


def _write_loss_history(model, out, run, figures):
    path = run.output(out / "loss_history.csv")
    names = list(model.loss_weights)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"] + names)
        for h in model.history:
            w.writerow([h["epoch"], repr(h["loss"])] + [repr(h["modalities"][n]) for n in names])
    if figures and model.history:
        from .plotting import plot_loss_history

        run.output(plot_loss_history(model.history, out / "loss_history.png"))


def _load_matrices(path, run):
    if path is None:
        return None
    run.inputs.append(str(path))
    return load_entity_matrices(path)


def _load_model(path, run):
    if path is None:
        return None
    run.inputs.append(str(path))
    return load_model(path)


# -- commands -----------------------------------------------------------------

def cmd_synth(args):
    try:
        obj = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"spec file {args.spec} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"spec file {args.spec} is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError("synthetic spec must be a JSON object")
    seed = obj.get("seed", 0) if args.seed is None else args.seed
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"field 'seed' must be an integer, got {seed!r}")
    spec = SyntheticSpec.from_dict(obj)
    run = Run(args, f"{args.out}.manifest.json", seed=seed, inputs=[args.spec])
    run.extra["synthetic_spec"] = spec.to_dict()
    dataset = generate_synthetic(spec, seed)
    save_canonical(dataset, run.output(args.out))
    run.finish()
    print(f"wrote {len(dataset)} records to {args.out}")


def cmd_ingest(args):
    run = Run(args, f"{args.out}.manifest.json", inputs=[args.input])
    run.extra["converter"] = args.converter
    dataset = convert(args.converter, args.input, args.out, min_packets=args.min_packets)
    run.output(args.out)
    run.finish()
    print(f"wrote {len(dataset)} records ({', '.join(dataset.manifest)}) to {args.out}")


def cmd_train_entities(args):
    cfg, out, run = _config_run(args)
    dataset = load_dataset(cfg)
    modalities = experiment_modalities(cfg, dataset)
    matrices = train_entity_matrices(dataset.records, modalities, cfg.entities, cfg.seed)
    if not matrices:
        raise ConfigError("config selects no entity modality (ip, port or subnet)")
    save_entity_matrices(matrices, run.output(out / "entities.bin"), extra={"config_sha256": cfg.digest()})
    run.finish()
    for name, m in matrices.items():
        print(f"{name}: {len(m.vocabulary)} tokens x {m.dim}")


def cmd_train_mae(args):
    cfg, out, run = _config_run(args)
    dataset = load_dataset(cfg)
    modalities = experiment_modalities(cfg, dataset)
    matrices = _load_matrices(args.entities, run)
    if matrices is None:
        matrices = train_entity_matrices(dataset.records, modalities, cfg.entities, cfg.seed)
    model = fit_mae(dataset.records, modalities, matrices, cfg.mae, progress=_epoch_logger)
    save_model(model, run.output(out / "model.bin"))
    _write_loss_history(model, out, run, cfg.figures)
    run.extra["model_sha256"] = model_hash(model)
    run.finish()
    final = model.history[-1]["loss"] if model.history else float("nan")
    print(f"trained {model.num_parameters()} parameters; final loss {final:.6g}")


def _dataset_argument(path):
    """Canonical JSONL, or an experiment config whose dataset is loaded/generated."""
    path = Path(path)
    if path.suffix == ".json":
        return load_dataset(load_config(path))
    return load_canonical(path)


def cmd_embed(args):
    run = Run(args, f"{args.out}.manifest.json", inputs=[args.model, args.dataset])
    model = load_model(args.model)
    dataset = _dataset_argument(args.dataset)
    emb = embed_dataset(model, dataset)
    emb.to_csv(run.output(args.out))
    run.seed = model.config.seed
    run.extra["model_sha256"] = emb.provenance["model_hash"]
    run.extra["mae_config"] = emb.provenance["config"]
    run.finish()
    print(f"wrote {len(emb.sample_ids)} x {emb.dim} embeddings to {args.out}")


def _write_fold_csv(results, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["arm", "classifier", "fold", "macro_f1", "weighted_f1", "trainables"])
        for r in results:
            for f, rep in enumerate(r["folds"]):
                w.writerow([r["arm"], r["classifier"], f, repr(rep["macro_f1"]), repr(rep["weighted_f1"]),
                            "" if rep["trainables"] is None else rep["trainables"]])


def _write_purity_csv(purity, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["space", "K", "p_C"])
        for space, c in purity.items():
            for k, v in zip(c["k"], c["p_c"]):
                w.writerow([space, k, repr(v)])


def _arm_rows(report):
    return [(a, r["macro_f1_mean"], r["macro_f1_std"]) for a, r in report["arms"].items()]


def _evaluate(args, arms, stem, purity):
    cfg, out, run = _config_run(args)
    reuse = {"matrices": _load_matrices(args.entities, run), "model": _load_model(args.model, run)}
    if args.embeddings is not None:
        run.inputs.append(args.embeddings)
        reuse["embeddings"] = EmbeddingSet.from_csv(args.embeddings)
    dataset = load_dataset(cfg)
    state, report = _run_pipeline(cfg, dataset, arms, purity, reuse)
    _dump_json(report, run.output(out / f"{stem}.json"))
    _write_fold_csv(report["arms"].values(), run.output(out / f"{stem}_folds.csv"))
    if purity:
        _write_purity_csv(report["purity"], run.output(out / "purity.csv"))
    if cfg.figures:
        from .plotting import plot_arms, plot_purity

        run.output(plot_arms(_arm_rows(report), out / f"{stem}_arms.png"))
        if purity and report["purity"]:
            run.output(plot_purity(report["purity"], out / "purity.png"))
    if state.model is not None and reuse.get("model") is None:
        save_model(state.model, run.output(out / "model.bin"))
        _write_loss_history(state.model, out, run, cfg.figures)
    run.extra["report_sha256"] = _file_sha256(out / f"{stem}.json")
    run.finish()
    for arm, mean, std in _arm_rows(report):
        print(f"{arm}: macro F1 {mean:.4f} +/- {std:.4f}")


def _run_pipeline(cfg, dataset, arms, purity, reuse):
    needs_mae = "mae" in arms or (purity and "mae" in cfg.purity_spaces)
    if not needs_mae:
        # raw arms only: no autoencoder needed
        from .pipeline import ExperimentState, evaluate_arms, experiment_report, purity_report

        modalities = experiment_modalities(cfg, dataset)
        matrices = reuse.get("matrices")
        if matrices is None:
            matrices = train_entity_matrices(dataset.records, modalities, cfg.entities, cfg.seed)
        state = ExperimentState(dataset, modalities, matrices, None, None)
        plan, results = evaluate_arms(state, arms, cfg.protocol)
        pur = purity_report(state, cfg.purity_spaces, cfg.purity_k, cfg.protocol.exclude_labels) if purity else None
        return state, experiment_report(cfg, state, plan, results, pur)
    return run_experiment(cfg, arms, purity, progress=_epoch_logger, dataset=dataset,
                          **{k: v for k, v in reuse.items() if v is not None})


def cmd_evaluate(args):
    cfg = load_config(args.config)
    _evaluate(args, list(cfg.arms), "report", purity=True)


def default_ablation_arms():
    return list(MODALITIES) + list(GROUP_ARMS) + ["mae"]


def cmd_ablate(args):
    cfg = load_config(args.config)
    arms = list(cfg.ablation_arms or default_ablation_arms())
    if cfg.modalities:
        keep = set(cfg.modalities)
        arms = [a for a in arms if a not in MODALITIES or a in keep]
    _evaluate(args, arms, "ablation", purity=False)


def _read_labels(path):
    """``{sample_id: label}`` from canonical JSONL, an experiment config or a ``sample_id,label`` CSV."""
    path = Path(path)
    if path.suffix == ".json":
        return {r.sample_id: r.label for r in _dataset_argument(path).records}
    with path.open(encoding="utf-8", newline="") as fh:
        first = fh.readline()
    if first.lstrip().startswith("{"):
        return {r.sample_id: r.label for r in load_canonical(path).records}
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"sample_id", "label"} <= set(reader.fieldnames):
            raise ConfigError(f"{path}: label CSV needs 'sample_id' and 'label' columns")
        return {row["sample_id"]: row["label"] or None for row in reader}


def cmd_purity(args):
    out = Path(args.out) if args.out else Path(args.embeddings).with_suffix(".purity.csv")
    run = Run(args, f"{out}.manifest.json", inputs=[args.embeddings, args.labels])
    emb = EmbeddingSet.from_csv(args.embeddings)
    labels = _read_labels(args.labels)
    keep = [i for i, sid in enumerate(emb.sample_ids)
            if labels.get(sid) is not None and labels[sid] not in args.exclude]
    if not keep:
        raise DataError("no embedded sample has a usable label")
    n = len(keep)
    for k in args.k_list:
        if not 1 <= k < n:
            raise ArgumentError(f"K={k} is out of range: need 1 <= K < {n} (labeled samples)")
    curve = purity_curve(emb.matrix[keep], [labels[emb.sample_ids[i]] for i in keep], args.k_list)
    with open(run.output(out), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["K", "p_C"])
        for k, v in zip(curve.ks, curve.values):
            w.writerow([k, repr(v)])
    if not args.no_figures:
        from .plotting import plot_purity

        run.output(plot_purity({"embeddings": {"k": curve.ks, "p_c": curve.values}}, out.with_suffix(".png")))
    run.extra["excluded_zero_norm"] = curve.excluded
    run.finish()
    for k, v in zip(curve.ks, curve.values):
        print(f"K={k}: p_C={v:.4f}")


def cmd_gridsearch(args):
    cfg, out, run = _config_run(args)
    cells = grid_search(cfg, args.l1, args.l4,
                        progress=lambda c: log.info("l1=%d l4=%d macro F1 %.4f", *c))
    _dump_json({"config_sha256": cfg.digest(), "cells": cells}, run.output(out / "gridsearch.json"))
    with open(run.output(out / "gridsearch.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["l1", "l4", "macro_f1", "weighted_f1", "mae_trainables", "downstream_trainables"])
        for c in cells:
            w.writerow([c["l1"], c["l4"], repr(c["macro_f1"]), repr(c["weighted_f1"]), c["mae_trainables"],
                        c["downstream_trainables"] if c["downstream_trainables"] is not None else ""])
    if cfg.figures:
        from .plotting import plot_grid

        run.output(plot_grid(cells, out / "gridsearch.png"))
    run.finish()
    for c in cells:
        print(f"l1={c['l1']} l4={c['l4']}: macro F1 {c['macro_f1']:.4f}")


# -- entry point --------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="trafficmae", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"trafficmae {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p.add_argument("--debug", action="store_true", help="print tracebacks on failure")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic canonical dataset")
    s.add_argument("spec", help="JSON synthetic spec (fields of SyntheticSpec, optional seed)")
    s.add_argument("out")
    s.add_argument("--seed", type=int, default=None, help="overrides the seed given in SPEC")
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("ingest", help="convert an external dataset to canonical JSONL")
    s.add_argument("converter", choices=CONVERTERS)
    s.add_argument("input")
    s.add_argument("out")
    s.add_argument("--min-packets", type=int, default=5)
    s.set_defaults(fn=cmd_ingest)

    s = sub.add_parser("train-entities", help="train skip-gram entity embeddings")
    s.add_argument("config")
    s.set_defaults(fn=cmd_train_entities)

    s = sub.add_parser("train-mae", help="train the multi-modal autoencoder")
    s.add_argument("config")
    s.add_argument("--entities", help="entities.bin from train-entities")
    s.set_defaults(fn=cmd_train_mae)

    s = sub.add_parser("embed", help="write sample embeddings as CSV")
    s.add_argument("model")
    s.add_argument("dataset", help="canonical JSONL, or an experiment config (.json)")
    s.add_argument("out")
    s.set_defaults(fn=cmd_embed)

    for name, fn, text in (("evaluate", cmd_evaluate, "cross-validated evaluation of the configured arms"),
                           ("ablate", cmd_ablate, "evaluate every single-modality and group arm")):
        s = sub.add_parser(name, help=text)
        s.add_argument("config")
        s.add_argument("--entities")
        s.add_argument("--model")
        s.add_argument("--embeddings")
        s.set_defaults(fn=fn)

    s = sub.add_parser("purity", help="macro K-NN class probability curve")
    s.add_argument("embeddings")
    s.add_argument("labels", help="canonical JSONL, experiment config, or CSV with sample_id,label")
    s.add_argument("--k-list", type=_int_list, default=list(DEFAULT_K_LIST))
    s.add_argument("--out", help="CSV path (default: <embeddings>.purity.csv)")
    s.add_argument("--exclude", nargs="*", default=["unknown"], help="labels to leave out")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(fn=cmd_purity)

    s = sub.add_parser("gridsearch", help="sweep the l1 and l4 widths")
    s.add_argument("config")
    s.add_argument("--l1", type=_int_list, default=[16, 32, 64])
    s.add_argument("--l4", type=_int_list, default=[32, 64, 128])
    s.set_defaults(fn=cmd_gridsearch)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.fn(args)
    except (ConfigError, ArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrafficMAEError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, IsADirectoryError, PermissionError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.debug:
            traceback.print_exc()
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
