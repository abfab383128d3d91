import numpy as np
import pytest

from coscov.errors import ConfigError, DataError
from coscov.model import (ModelConfig, analytic_backbone_counts, build, compare_parameters, count_parameters,
                          input_adapter)

from conftest import tiny_config


def test_default_config_is_found_architecture():
    c = ModelConfig()
    assert c.channels == [32, 64, 128, 256, 10]
    assert c.filter_lens == [100, 50, 12, 6, 3] and c.pools == [10, 8, 4, 4] and c.dropout == 0.5
    assert c.vq is False and c.memory is False
    v = ModelConfig(kind="vqccm")
    assert v.vq is True and v.memory is True


def test_parameter_identity():
    cmp = compare_parameters(ModelConfig())
    assert cmp["coscov"]["total"] == 91_200
    assert cmp["plain-cnn"]["total"] == 408_192
    assert cmp["reduction_pct"] == 77.66
    assert cmp["coscov"]["rows"] == {"layer1": 64, "layer2": 4096, "layer3": 16384, "layer4": 65536, "head": 5120}


def test_analytic_counts_agree_with_built_models():
    for cfg in (ModelConfig(), tiny_config(), ModelConfig(num_classes=35, hidden_channels=[8, 16, 16, 8])):
        ana = analytic_backbone_counts(cfg)
        assert sum(ana["coscov"]) == count_parameters(build(cfg))["total"]
        assert sum(ana["plain-cnn"]) == count_parameters(build(cfg.twin("plain-cnn")))["total"]


def test_single_layer_counts():
    cfg = ModelConfig(hidden_channels=[1], filter_lens=[5, 5], pools=[1], num_classes=2, input_len=16)
    rows = count_parameters(build(cfg))["rows"]
    cnn = count_parameters(build(cfg.twin("plain-cnn")))["rows"]
    assert rows["layer1"] == 2 and cnn["layer1"] == 5


def test_vqccm_count_is_sum_of_named_parameters():
    cfg = ModelConfig(kind="vqccm")
    model = build(cfg)
    total = count_parameters(model)["total"]
    assert total == sum(int(np.prod(t.shape)) for _, t in model.named_parameters())
    S = cfg.hidden_lengths()
    C = cfg.hidden_channels
    M, k = cfg.memory_size, cfg.vq_k
    expected = 91_200 + k * S[0] + M
    for i in range(4):  # writers after layers 1..4
        expected += 2 * C[i] * C[i] + S[i] * M + M
    for i in range(4):  # readers before layers 2..5
        expected += M * S[i] + S[i] + 2 * C[i]
    assert total == expected


def test_hidden_lengths_and_forward_shapes():
    cfg = ModelConfig()
    assert cfg.hidden_lengths() == [1600, 200, 50, 12]
    model = build(ModelConfig(hidden_channels=[2, 2, 2, 2], num_classes=10))
    out = model.forward(np.zeros((2, 1, 16000), dtype=np.float32))
    assert [s[-1] for s in out.diagnostics["shapes"]] == [1600, 200, 50, 12]
    assert out.logits.shape == (2, 10)


def test_minimal_two_layer_model():
    cfg = ModelConfig(hidden_channels=[3], filter_lens=[7, 3], pools=[4], num_classes=2)
    out = build(cfg).forward(np.random.default_rng(0).uniform(-1, 1, (1, 1, 16000)))
    assert out.logits.shape == (1, 2) and np.isfinite(out.logits.data).all()


@pytest.mark.parametrize("kind", ["coscov", "vqccm", "plain-cnn"])
def test_identical_inputs_identical_rows(kind):
    model = build(tiny_config(kind=kind))
    x = np.repeat(np.random.default_rng(1).uniform(-1, 1, (1, 1, 256)), 3, axis=0)
    logits = model.forward(x).logits.data
    assert np.array_equal(logits[0], logits[1]) and np.array_equal(logits[0], logits[2])


def test_adapter_cases():
    x10 = np.random.default_rng(0).normal(size=(1, 1, 160_000))
    out = input_adapter(x10, 16000)
    assert out.shape == (1, 1, 16000)
    np.testing.assert_array_equal(out[0, 0, :3], x10[0, 0, :30].reshape(3, 10).max(axis=1))
    x = np.ones((1, 1, 16000))
    assert input_adapter(x, 16000) is not None and np.array_equal(input_adapter(x, 16000), x)
    short = input_adapter(np.ones((1, 1, 12000)), 16000)
    assert short.shape == (1, 1, 16000) and not short[0, 0, 12000:].any() and short[0, 0, :12000].all()


def test_ten_second_input_runs():
    model = build(ModelConfig(hidden_channels=[2, 2, 2, 2]))
    out = model.forward(np.zeros((1, 1, 160_000), dtype=np.float32))
    assert out.diagnostics["shapes"][0][-1] == 1600


def test_too_short_input():
    model = build(ModelConfig(hidden_channels=[2, 2, 2, 2], input_len=None))
    with pytest.raises(DataError, match="1280"):
        model.forward(np.zeros((1, 1, 100)))


def test_bad_audio_rank():
    with pytest.raises(DataError):
        build(tiny_config()).forward(np.zeros((1, 2, 256)))


def test_vqccm_with_components_off_matches_coscov():
    x = np.random.default_rng(2).uniform(-1, 1, (2, 1, 256)).astype(np.float32)
    a = build(tiny_config()).forward(x).logits.data
    b = build(tiny_config(kind="vqccm", vq=False, memory=False)).forward(x).logits.data
    assert np.array_equal(a, b)


def test_rebuild_is_bit_identical():
    a, b = build(tiny_config(kind="vqccm")), build(tiny_config(kind="vqccm"))
    for (na, ta), (nb, tb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and ta.data.tobytes() == tb.data.tobytes()
    c = build(tiny_config(kind="vqccm", seed=1))
    assert any(ta.data.tobytes() != tc.data.tobytes() for (_, ta), (_, tc) in zip(a.named_parameters(),
                                                                               c.named_parameters()))


def test_layer_one_dropout_only_without_vq():
    x = np.random.default_rng(0).uniform(-1, 1, (2, 1, 256)).astype(np.float32)
    cfg = tiny_config(kind="vqccm", memory=False, dropout=0.9)
    model = build(cfg)
    act = model.forward(x, training=True, rng=np.random.default_rng(0), keep_activations=True)
    layer1 = act.diagnostics["activations"][0]
    assert (np.abs(layer1).sum(axis=-1) > 0).all()  # VQ output, never dropped


def test_codebook_data_init():
    model = build(tiny_config(kind="vqccm"))
    x = np.random.default_rng(0).uniform(-1, 1, (3, 1, 256)).astype(np.float32)
    model.init_codebook_from([x])
    feats = model.layer1_features(x).reshape(-1, model.codebook.dim)
    E = model.codebook.embeddings.data
    assert E.shape == (16, feats.shape[1])
    np.testing.assert_array_equal(E[:12], feats)
    assert len({r.tobytes() for r in E}) == 16


@pytest.mark.parametrize("bad", [
    dict(kind="transformer"), dict(filter_lens=[3, 3]), dict(pools=[2]), dict(num_classes=1),
    dict(dropout=1.0), dict(kind="plain-cnn", vq=True), dict(hidden_channels=[]), dict(theta1_init="he"),
    dict(vq_init="kmeans"), dict(writer_gap_axis="both"), dict(input_len=8),
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        tiny_config(**bad)


def test_config_round_trip_and_unknown_key():
    cfg = tiny_config(kind="vqccm")
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError, match="colour"):
        ModelConfig.from_dict({"colour": 1})


def test_state_dict_mismatch():
    model = build(tiny_config())
    state = model.state_dict()
    state.pop("head.theta1")
    with pytest.raises(ConfigError, match="head.theta1"):
        model.load_state_dict(state)
