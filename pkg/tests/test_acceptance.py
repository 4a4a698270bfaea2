"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Criterion 8 (reproducing published numbers on public datasets) needs data that
is not shipped; README.md describes the recipe and it is not gated here.
"""

import json
import time

import numpy as np
import pytest

from _gradcases import CASES, INSTANCES, TOL, run_case
from _oracles import conv_oracle, f1_oracle, knn_oracle, maxpool_oracle, pairs_oracle, purity_oracle, well_spread
from trafficmae import cli
from trafficmae.entities import generate_training_pairs
from trafficmae.evalkit import f1_scores, knn_class_probability, knn_classify, mlp_trainables
from trafficmae.evalkit.mlp import MLPClassifier
from trafficmae.mae import embed_dataset, load_model, model_hash, save_model
from trafficmae.tensor import Tensor, ops


@pytest.fixture
def report(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


def test_c1_gradient_correctness(report):
    worst, counts, start = {}, {}, time.perf_counter()
    for name in CASES:
        errors, _, _ = run_case(name, INSTANCES, seed=7)
        worst[name], counts[name] = max(errors), len(errors)
    seconds = time.perf_counter() - start
    bad = {k: v for k, v in worst.items() if v > TOL}
    ok = not bad and min(counts.values()) >= 20 and seconds < 120
    report(1, ok, f"{len(CASES)} layer families x {min(counts.values())} instances, worst rel err "
                  f"{max(worst.values()):.2e} (tol {TOL:g}), {seconds:.1f}s; failing: {sorted(bad)}")


def test_c2_trainable_counts(report):
    mae_mlp = mlp_trainables(64, 13)
    concat = mlp_trainables(304, 5)
    built = sum(p.data.size for p in MLPClassifier(64, list(range(13))).parameters())
    in_band = all(250_000 <= n <= 330_000 for n in (concat, mlp_trainables(300, 13)))
    ok = mae_mlp == built == 167_949 and in_band
    report(2, ok, f"64-dim/13-class MLP {mae_mlp} (built {built}); 304-dim concat MLP {concat}")


def test_c3_oracle_equivalence(report):
    rng = np.random.default_rng(2024)
    worst = {}

    x, K, b = rng.normal(size=(64, 4)), rng.normal(size=(8, 3, 4)), rng.normal(size=8)
    got = ops.conv1d(Tensor(x[None]), Tensor(K), Tensor(b)).data[0]
    worst["conv1d"] = float(np.abs(got - conv_oracle(x, K, b)).max())

    x = rng.normal(size=(64, 5))
    worst["maxpool1d"] = float(np.abs(ops.maxpool1d(Tensor(x[None]), 2, 2).data[0] - maxpool_oracle(x, 2, 2)).max())

    sentence = list(rng.integers(0, 50, size=64))
    same = all(sorted(generate_training_pairs(sentence, c)) == sorted(pairs_oracle(sentence, c)) for c in (1, 5, 63))
    worst["skipgram_pairs"] = 0.0 if same else np.inf

    truth, pred = rng.integers(0, 7, size=500), rng.integers(0, 7, size=500)
    rep = f1_scores(pred.tolist(), truth.tolist())
    f1, macro, weighted = f1_oracle(pred.tolist(), truth.tolist())
    worst["f1_scores"] = max(abs(rep.macro_f1 - macro), abs(rep.weighted_f1 - weighted),
                             max(abs(rep.f1[c] - f1[c]) for c in f1))

    X, y = well_spread(rng, 500, 8, 5)
    worst["knn_class_probability"] = max(abs(knn_class_probability(X, y, k) - purity_oracle(X, y, k))
                                         for k in (1, 5, 20))

    Xt = rng.normal(size=(100, 8))
    worst["knn_classify"] = 0.0 if knn_classify(X, y, Xt, 7) == knn_oracle(X, y, Xt, 7) else np.inf

    bad = {k: v for k, v in worst.items() if not v <= 1e-9}
    report(3, not bad, "max deviation " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items()))


def test_c4_purity_ordering(report, default_run):
    p, purity_seconds = default_run.purity(5)
    seconds = default_run.prepare_seconds + purity_seconds
    ok = p["entities"] > p["quantities"] and p["mae"] >= p["concat"] - 0.02 and seconds < 600
    report(4, ok, f"p_C(5): entities {p['entities']:.3f} vs quantities {p['quantities']:.3f}; "
                  f"MAE {p['mae']:.3f} vs concat {p['concat']:.3f}; {seconds:.0f}s CPU")


def test_c5_end_to_end_classification(report, default_run):
    mae, concat = default_run.arm("mae"), default_run.arm("concat")
    ratio = mae.trainables / concat.trainables
    ok = mae.macro_f1 >= 0.90 and abs(mae.macro_f1 - concat.macro_f1) <= 0.03 and ratio < 0.60
    report(5, ok, f"MAE macro F1 {mae.macro_f1:.4f} vs concat {concat.macro_f1:.4f}; "
                  f"trainables {mae.trainables} vs {concat.trainables} ({ratio:.0%})")


def test_c6_shallow_vs_deep(report, default_run):
    mlp = default_run.arm("mae").macro_f1
    rf, knn = default_run.arm("mae", "rf").macro_f1, default_run.arm("mae", "knn").macro_f1
    ok = abs(rf - mlp) <= 0.05 and abs(knn - mlp) <= 0.05
    report(6, ok, f"macro F1 on MAE embeddings: MLP {mlp:.4f}, RF {rf:.4f}, 7-NN {knn:.4f}")


def test_c7_determinism(report, default_run, tmp_path):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps({
        "seed": 11, "output_dir": "out", "synthetic": {"n_samples": 120, "n_classes": 3},
        "entities": {"dim": 8, "epochs": 3}, "mae": {"l1": 8, "l2": 32, "l3": 16, "l4": 8, "epochs": 3},
        "protocol": {"k": 3, "mlp": {"hidden": [16], "epochs": 5}}, "purity_k": [1, 3], "figures": False,
    }))
    out = tmp_path / "out"
    names = ["report.json", "report_folds.csv", "purity.csv", "model.bin", "loss_history.csv"]
    runs = []
    for _ in range(2):
        assert cli.main(["evaluate", str(cfg)]) == 0
        runs.append({n: (out / n).read_bytes() for n in names})
    identical = runs[0] == runs[1]

    model = default_run.state.model
    path = tmp_path / "model.bin"
    save_model(model, path)
    back = load_model(path)
    save_model(back, tmp_path / "again.bin")
    same_params = all(a.data.tobytes() == b.data.tobytes() for a, b in zip(model.parameters(), back.parameters()))
    same_emb = (embed_dataset(back, default_run.state.dataset).matrix.tobytes()
                == default_run.state.embeddings.matrix.tobytes())
    round_trip = (same_params and same_emb and model_hash(back) == model_hash(model)
                  and path.read_bytes() == (tmp_path / "again.bin").read_bytes())
    report(7, identical and round_trip, f"rerun byte-identical: {identical} ({', '.join(names)}); "
                                        f"default model save/load bit-exact: {round_trip}")
