import numpy as np
import pytest

from fundus_cad.autodiff import Tape, Tensor, softmax_cross_entropy
from fundus_cad.model import (
    ModelConfig,
    build_model,
    forward_logits,
    get_preset,
    parameter_shapes,
    predict_classes,
    predict_proba,
)
from fundus_cad.rng import RngState


def zeroed(weights):
    for _, t in weights.items():
        t.data[...] = 0.0
    return weights


def test_config_invariants_enforced():
    with pytest.raises(ValueError, match="divisible"):
        ModelConfig(blocks=((1, 8), (1, 16)), head=((1, 2),), input_size=30)
    with pytest.raises(ValueError, match="num_classes"):
        ModelConfig(blocks=((1, 8),), head=((1, 3),), input_size=32)
    with pytest.raises(ValueError, match="dropout_rate"):
        ModelConfig(blocks=((1, 8),), head=((1, 2),), input_size=32, dropout_rate=1.0)
    with pytest.raises(ValueError, match="spatial"):
        ModelConfig(blocks=((1, 8),), head=((20, 2),), input_size=32)


def test_full_scale_parameter_count():
    config = get_preset("full")
    shapes = parameter_shapes(config)
    total = sum(int(np.prod(s)) for s in shapes.values())
    # per-layer formula: Cout*(Cin*Kh*Kw + 1)
    by_formula = 0
    for name, shape in shapes.items():
        if name.endswith(".weight"):
            cout, cin, kh, kw = shape
            by_formula += cout * (cin * kh * kw + 1)
    assert total == by_formula == 134_268_738
    weights = build_model(config, RngState(0))
    assert weights.param_count() == total


def test_tiny_builds_and_forward_runs():
    config = get_preset("tiny")
    weights = build_model(config, RngState(3))
    batch = Tensor(np.random.default_rng(0).normal(size=(2, 3, 32, 32)).astype(np.float32))
    logits, acts = forward_logits(config, weights, batch)
    assert logits.shape == (2, 2)
    assert config.feature_layer == "block3_conv1"
    assert acts[config.feature_layer].shape == (2, 32, 8, 8)


def test_same_seed_bit_identical_weights():
    config = get_preset("tiny")
    a = build_model(config, RngState(7))
    b = build_model(config, RngState(7))
    for name in a.names():
        assert a[name].data.tobytes() == b[name].data.tobytes()
    c = build_model(config, RngState(8))
    assert any(a[n].data.tobytes() != c[n].data.tobytes() for n in a.names())


def test_zero_network_gives_uniform_probabilities():
    config = get_preset("tiny")
    weights = zeroed(build_model(config, RngState(0)))
    batch = Tensor(np.zeros((1, 3, 32, 32), dtype=np.float32))
    logits, _ = forward_logits(config, weights, batch)
    np.testing.assert_array_equal(logits.data, [[0.0, 0.0]])
    probs = predict_proba(config, weights, batch)
    np.testing.assert_allclose(probs, [[0.5, 0.5]])
    assert predict_classes(probs).tolist() == [0]  # tie -> normal


def test_eval_forward_is_deterministic():
    config = get_preset("tiny")
    weights = build_model(config, RngState(1))
    batch = Tensor(np.random.default_rng(2).normal(size=(1, 3, 32, 32)).astype(np.float32))
    a, _ = forward_logits(config, weights, batch, mode="eval")
    b, _ = forward_logits(config, weights, batch, mode="eval")
    assert a.data.tobytes() == b.data.tobytes()


def test_train_mode_differs_from_eval_via_dropout():
    config = get_preset("tiny")
    weights = build_model(config, RngState(1))
    batch = Tensor(np.random.default_rng(2).normal(size=(1, 3, 32, 32)).astype(np.float32))
    ev, _ = forward_logits(config, weights, batch, mode="eval")
    tr, _ = forward_logits(config, weights, batch, mode="train", rng=RngState(0))
    assert not np.allclose(ev.data, tr.data)


def test_predict_proba_logistic_arithmetic():
    # heads with fixed logits via a crafted weight set are overkill; check the
    # softmax identity directly against forward output instead
    config = get_preset("tiny")
    weights = build_model(config, RngState(5))
    batch = Tensor(np.random.default_rng(4).normal(size=(1, 3, 32, 32)).astype(np.float32))
    logits, _ = forward_logits(config, weights, batch)
    probs = predict_proba(config, weights, batch)
    l0, l1 = float(logits.data[0, 0]), float(logits.data[0, 1])
    expected = 1.0 / (1.0 + np.exp(-(l1 - l0)))
    assert abs(probs[0, 1] - expected) < 1e-6
    assert abs(1.0 / (1.0 + np.exp(6.0)) - 0.0024726) < 1e-6  # logits [-3,3] fixture


def test_batch_probabilities_match_single_calls():
    config = get_preset("tiny")
    weights = build_model(config, RngState(6))
    batch_arr = np.random.default_rng(8).normal(size=(4, 3, 32, 32)).astype(np.float32)
    batch_probs = predict_proba(config, weights, Tensor(batch_arr))
    for i in range(4):
        single = predict_proba(config, weights, Tensor(batch_arr[i:i + 1]))
        np.testing.assert_allclose(batch_probs[i], single[0], rtol=1e-5, atol=1e-7)


def test_spatial_shape_algebra():
    config = get_preset("full")
    spatial = config.input_size
    for b, _ in enumerate(config.blocks, start=1):
        spatial //= 2
        assert spatial == config.input_size // (2 ** b)
    assert spatial == 7  # block-5 map feeding the 7x7 head conv
    assert spatial - config.head[0][0] + 1 == 1  # head collapses to 1x1


def test_wrong_input_size_rejected():
    config = get_preset("tiny")
    weights = build_model(config, RngState(0))
    with pytest.raises(ValueError, match="expected input"):
        forward_logits(config, weights, Tensor(np.zeros((1, 3, 64, 64), dtype=np.float32)))


def test_gradient_reaches_every_parameter():
    config = ModelConfig(blocks=((1, 8), (1, 16), (1, 32)), head=((4, 64), (1, 2)),
                         input_size=32, dropout_rate=0.0, variant_name="tiny-nodrop")
    weights = build_model(config, RngState(11))
    batch = Tensor(np.random.default_rng(12).normal(size=(2, 3, 32, 32)).astype(np.float32))
    tape = Tape()
    logits, _ = forward_logits(config, weights, batch, mode="train", tape=tape)
    loss, _ = softmax_cross_entropy(logits, [0, 1], tape=tape)
    tape.backward(loss)
    for name, t in weights.items():
        assert t.grad is not None, name
        assert np.any(t.grad != 0.0), f"gradient identically zero for {name}"
