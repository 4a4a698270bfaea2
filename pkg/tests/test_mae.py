import hashlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trafficmae.adapters import build_entity_adapter, build_stats_adapter
from trafficmae.dataio import FeaturePipeline, generate_synthetic
from trafficmae.errors import ConfigError, CorruptionError, DataError, ShapeError, VersionError
from trafficmae.mae import (
    EmbeddingSet, MAEConfig, assemble_mae, build_mae, compute_loss_weights, embed_dataset, embed_sample,
    load_model, model_hash, save_model, train_mae,
)
from trafficmae.pipeline import EntityConfig, train_entity_matrices

SMALL = dict(l1=8, l2=32, l3=16, l4=6, epochs=4, batch_size=32)
MODS = ["ip", "port", "subnet", "stats", "sequences", "payload"]


@pytest.fixture(scope="module")
def small_data():
    ds = generate_synthetic({"n_samples": 120, "n_classes": 3}, seed=1)
    mats = train_entity_matrices(ds.records, ["ip", "port"], EntityConfig(dim=8, epochs=2), seed=1)
    return ds, mats


def small_model(small_data, mods=MODS, **overrides):
    ds, mats = small_data
    pipe = FeaturePipeline.fit(ds.records, mods, mats)
    return build_mae(pipe, mods, MAEConfig(**{**SMALL, **overrides}))


def param_digest(model):
    h = hashlib.sha256()
    for p in model.parameters():
        h.update(p.data.tobytes())
    return h.hexdigest()


# configuration and assembly

def test_width_ordering():
    MAEConfig(l2=512, l3=256, l4=64)
    for bad in [dict(l2=64, l3=256, l4=512), dict(l2=64, l3=64, l4=8), dict(l2=64, l3=32, l4=32)]:
        with pytest.raises(ConfigError):
            MAEConfig(**bad)


@pytest.mark.parametrize("bad", [dict(l1=0), dict(batch_size=0), dict(epochs=-1), dict(lr=0.0),
                                 dict(bottleneck_activation="gelu"), dict(l4=2.5)])
def test_bad_config(bad):
    with pytest.raises(ConfigError):
        MAEConfig(**bad)


def test_unknown_config_field():
    with pytest.raises(ConfigError):
        MAEConfig.from_dict({"l5": 3})
    assert MAEConfig.from_dict(MAEConfig(l1=4).to_dict()) == MAEConfig(l1=4)


def test_defaults():
    cfg = MAEConfig()
    assert (cfg.l1, cfg.l2, cfg.l3, cfg.l4, cfg.epochs, cfg.batch_size) == (32, 512, 256, 64, 150, 64)


def three_adapters(cfg, rng):
    return [("stats", build_stats_adapter(12, cfg.l1, cfg.l2, rng=rng)),
            ("ip", build_entity_adapter(64, cfg.l1, cfg.l2, "ip", rng=rng)),
            ("port", build_entity_adapter(32, cfg.l1, cfg.l2, "port", rng=rng))]


def test_integration_widths():
    cfg = MAEConfig(epochs=0)
    model = assemble_mae(three_adapters(cfg, np.random.default_rng(0)), cfg)
    assert model.input_width == 96
    enc = [(d.in_dim, d.units) for d in model.integration_encoder.layers]
    dec = [(d.in_dim, d.units) for d in model.integration_decoder.layers]
    assert enc == [(96, 512), (512, 256), (256, 64)]
    assert dec == [(64, 256), (256, 512)]
    assert [u for _, u in enc[:-1]] == [i for _, i in dec][::-1]


def test_assembly_errors():
    cfg = MAEConfig(l1=8, l2=32, l3=16, l4=4)
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        assemble_mae([], cfg)
    with pytest.raises(ConfigError):
        assemble_mae([("s", build_stats_adapter(3, 16, 32, rng=rng))], cfg)
    with pytest.raises(ConfigError):
        assemble_mae([("s", build_stats_adapter(3, 8, 16, rng=rng))], cfg)
    a = build_stats_adapter(3, 8, 32, rng=rng)
    with pytest.raises(ConfigError):
        assemble_mae([("s", a), ("s", a)], cfg)


# loss weights

def test_weight_examples():
    rng = np.random.default_rng(0)
    w = compute_loss_weights({"a": build_stats_adapter(32, 4, rng=rng), "b": build_entity_adapter(64, 4, rng=rng)})
    assert w["a"] == pytest.approx(1 / 3, abs=1e-15) and w["b"] == pytest.approx(2 / 3, abs=1e-15)
    assert compute_loss_weights({"a": build_stats_adapter(7, 4, rng=rng)}) == {"a": 1.0}
    w = compute_loss_weights({"a": build_stats_adapter(5, 4, rng=rng), "b": build_stats_adapter(5, 4, rng=rng)})
    assert w["a"] == w["b"] == 0.5


@given(st.lists(st.integers(1, 500), min_size=1, max_size=6))
def test_weights_sum_to_one(counts):
    rng = np.random.default_rng(0)
    w = compute_loss_weights({f"m{i}": build_stats_adapter(n, 2, rng=rng) for i, n in enumerate(counts)})
    assert abs(sum(w.values()) - 1.0) <= 1e-12
    assert all(v >= 0 for v in w.values())
    for i, n in enumerate(counts):
        assert w[f"m{i}"] == pytest.approx(n / sum(counts), rel=1e-12)


def test_default_feature_counts(small_data):
    model = small_model(small_data)
    counts = {m: a.feature_count for m, a in model.adapters.items()}
    assert counts == {"ip": 8, "port": 8, "subnet": 4, "stats": 12, "sequences": 128, "payload": 32}


# training

def test_training_reduces_loss_and_is_reproducible(small_data):
    a = train_mae(small_model(small_data, epochs=8), small_data[0])
    b = train_mae(small_model(small_data, epochs=8), small_data[0])
    assert a.history[-1]["loss"] < a.history[0]["loss"]
    assert param_digest(a) == param_digest(b)
    assert [h["epoch"] for h in a.history] == list(range(8))
    assert set(a.history[0]["modalities"]) == set(MODS)


def test_history_total_is_weighted_sum(small_data):
    model = train_mae(small_model(small_data, epochs=1, batch_size=1000), small_data[0])
    h = model.history[0]
    assert h["loss"] == pytest.approx(sum(model.loss_weights[m] * v for m, v in h["modalities"].items()),
                                      rel=1e-12)


def test_seed_changes_parameters(small_data):
    assert param_digest(small_model(small_data, seed=1)) != param_digest(small_model(small_data, seed=2))


def test_entity_matrices_stay_frozen(small_data):
    _, mats = small_data
    before = {m: mats[m].W.tobytes() for m in mats}
    model = train_mae(small_model(small_data, epochs=2), small_data[0])
    assert {m: mats[m].W.tobytes() for m in mats} == before
    for name, p in model.named_parameters():
        assert not any(p.data is mats[m].W for m in mats), name


def test_missing_modality_names_sample(small_data):
    ds, _ = small_data
    model = small_model(small_data)
    broken = list(ds.records[:3])
    broken[1] = type(broken[1])(**{**broken[1].__dict__, "payload": None})
    with pytest.raises(DataError, match=broken[1].sample_id):
        train_mae(model, broken)
    with pytest.raises(DataError, match="payload"):
        embed_sample(model, broken[1])


def test_empty_data(small_data):
    with pytest.raises(DataError):
        train_mae(small_model(small_data), [])


# embeddings

def test_embedding_shape_and_order(small_data):
    ds, _ = small_data
    model = small_model(small_data)
    emb = embed_dataset(model, ds)
    assert emb.matrix.shape == (len(ds), 6) and emb.sample_ids == ds.sample_ids
    # BLAS may sum in a different order for other batch shapes
    np.testing.assert_allclose(embed_sample(model, ds.records[5]), emb.matrix[5], rtol=0, atol=1e-12)
    again = embed_dataset(model, ds, batch_size=7)
    np.testing.assert_allclose(again.matrix, emb.matrix, rtol=0, atol=1e-12)
    assert embed_dataset(model, ds).matrix.tobytes() == emb.matrix.tobytes()
    assert emb.provenance["model_hash"] == model_hash(model)


def test_identical_samples_identical_embeddings(small_data):
    ds, _ = small_data
    model = small_model(small_data)
    r = ds.records[0]
    twin = type(r)(**{**r.__dict__, "sample_id": "twin"})
    emb = embed_dataset(model, [r, twin]).matrix
    np.testing.assert_array_equal(emb[0], emb[1])


def test_default_embedding_width():
    cfg = MAEConfig(epochs=0)
    model = assemble_mae(three_adapters(cfg, np.random.default_rng(0)), cfg)
    x = {"stats": np.zeros((2, 12)), "ip": np.zeros((2, 64)), "port": np.zeros((2, 32))}
    assert model.embed_arrays(x).shape == (2, 64)


def test_embedding_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    emb = EmbeddingSet(["a", "b,c"], rng.normal(size=(2, 3)) * 10 ** rng.integers(-5, 5, size=(2, 3)))
    path = tmp_path / "e.csv"
    emb.to_csv(path)
    assert path.read_text().splitlines()[0] == "sample_id,e0,e1,e2"
    back = EmbeddingSet.from_csv(path)
    assert back.sample_ids == emb.sample_ids
    assert back.matrix.tobytes() == emb.matrix.tobytes()


def test_embedding_set_validation(tmp_path):
    with pytest.raises(ShapeError):
        EmbeddingSet(["a"], np.zeros((2, 3)))
    with pytest.raises(DataError):
        EmbeddingSet(["a"], np.array([[np.nan]]))
    bad = tmp_path / "bad.csv"
    bad.write_text("id,e0\na,1\n")
    with pytest.raises(DataError):
        EmbeddingSet.from_csv(bad)
    bad.write_text("sample_id,e0\na,x\n")
    with pytest.raises(DataError):
        EmbeddingSet.from_csv(bad)


# persistence

def test_save_load_bit_exact(small_data, tmp_path):
    ds, _ = small_data
    model = train_mae(small_model(small_data, epochs=1), ds)
    path = tmp_path / "m.bin"
    save_model(model, path)
    back = load_model(path)
    assert model_hash(back) == model_hash(model)
    assert back.config == model.config and back.loss_weights == model.loss_weights
    assert back.history == model.history
    assert embed_dataset(back, ds).matrix.tobytes() == embed_dataset(model, ds).matrix.tobytes()
    save_model(back, tmp_path / "m2.bin")
    assert (tmp_path / "m2.bin").read_bytes() == path.read_bytes()


def test_load_errors(small_data, tmp_path):
    from trafficmae.serialization import write_container

    path = tmp_path / "m.bin"
    save_model(small_model(small_data), path)
    raw = path.read_bytes()
    (tmp_path / "trunc.bin").write_bytes(raw[:-10])
    with pytest.raises(CorruptionError):
        load_model(tmp_path / "trunc.bin")
    write_container(tmp_path / "v.bin", {"a": np.zeros(1)}, {"kind": "mae-model"}, version=999)
    with pytest.raises(VersionError):
        load_model(tmp_path / "v.bin")
    write_container(tmp_path / "e.bin", {"a": np.zeros(1)}, {"kind": "entity-matrices"})
    with pytest.raises(CorruptionError):
        load_model(tmp_path / "e.bin")


# long-run property on the default synthetic dataset (shared session run)

@pytest.mark.xfail(strict=True, reason="Adam at lr 1e-3 with batch 64 gives a noisy tail; see the decisions ledger")
def test_loss_mostly_monotone(default_run):
    losses = np.array([h["loss"] for h in default_run.state.model.history])
    assert np.mean(np.diff(losses) < 0) >= 0.9


def test_default_run_loss_decreases(default_run):
    losses = [h["loss"] for h in default_run.state.model.history]
    assert len(losses) == 150
    assert losses[-1] < losses[0]
