import numpy as np
import pytest

import masklab.autodiff as ad
from masklab.data import synthetic_blobs
from masklab.errors import ConfigError, ShapeError, TrainingDivergence
from masklab.nn import (Mlp, TrainConfig, AdvTrainConfig, accuracy, checkpoint_bytes,
                        cross_entropy, init_mlp, load_checkpoint, load_checkpoint_bytes,
                        mlp_forward, predict, save_checkpoint, sgd_step, train)


def forward_np(model, x):
    tape = ad.Tape()
    return mlp_forward(tape, model, tape.input(x)).value


def test_identity_network_forward():
    model = Mlp([np.eye(3)], [np.zeros(3)])
    x = np.random.default_rng(0).uniform(0, 1, (4, 3))
    np.testing.assert_array_equal(forward_np(model, x), x)


def test_affine_arithmetic():
    model = Mlp([np.eye(2)], [np.array([1.0, -1.0])])
    np.testing.assert_array_equal(forward_np(model, np.zeros((1, 2))), [[1.0, -1.0]])


def test_seeded_init_is_bit_identical():
    a = init_mlp([4, 8, 2], seed=42)
    b = init_mlp([4, 8, 2], seed=42)
    x = np.random.default_rng(1).uniform(0, 1, (3, 4))
    assert np.array_equal(forward_np(a, x), forward_np(b, x))
    assert not np.array_equal(a.weights[0], init_mlp([4, 8, 2], seed=43).weights[0])


def test_forward_rejects_bad_input_dim():
    model = init_mlp([4, 2], 0)
    with pytest.raises(ShapeError):
        forward_np(model, np.zeros((2, 5)))


def test_mlp_rejects_inconsistent_layers():
    with pytest.raises(ShapeError):
        Mlp([np.zeros((3, 4)), np.zeros((5, 2))], [np.zeros(4), np.zeros(2)])


def xent_value(logits, labels):
    tape = ad.Tape()
    return float(cross_entropy(tape, tape.input(logits), labels).value)


def test_cross_entropy_uniform():
    assert xent_value(np.array([[0.0, 0.0]]), [0]) == pytest.approx(np.log(2), abs=1e-12)


def test_cross_entropy_stable_for_huge_logits():
    v = xent_value(np.array([[1000.0, 0.0]]), [0])
    assert np.isfinite(v) and v == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_rejects_bad_label():
    with pytest.raises(ShapeError):
        xent_value(np.array([[0.0, 0.0]]), [2])


def test_cross_entropy_shift_invariance():
    logits = np.random.default_rng(2).normal(size=(5, 4))
    labels = [0, 1, 2, 3, 0]
    assert xent_value(logits, labels) == pytest.approx(
        xent_value(logits + 123.456, labels), abs=1e-9)


def test_cross_entropy_gradient_is_softmax_minus_onehot():
    rng = np.random.default_rng(5)
    logits = rng.normal(size=(3, 4))
    labels = np.array([1, 3, 0])
    tape = ad.Tape()
    lt = tape.input(logits)
    loss = cross_entropy(tape, lt, labels)
    g = ad.backward(tape, loss)[lt.nid]

    def f(v):
        t = ad.Tape()
        return float(cross_entropy(t, t.input(v), labels).value)

    fd = ad.finite_diff_grad(f, logits, h=1e-5)
    np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-9)
    # analytic form
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    soft = e / e.sum(axis=1, keepdims=True)
    soft[np.arange(3), labels] -= 1.0
    np.testing.assert_allclose(g, soft / 3.0, rtol=1e-12, atol=1e-12)


def test_sgd_step_arithmetic_and_lr_zero():
    model = Mlp([np.array([[1.0]])], [np.array([0.5])])
    grads = [(np.array([[2.0]]), np.array([1.0]))]
    upd = sgd_step(model, grads, 0.1)
    assert upd.weights[0][0, 0] == pytest.approx(0.8)
    assert upd.biases[0][0] == pytest.approx(0.4)
    same = sgd_step(model, grads, 0.0)
    assert np.array_equal(same.weights[0], model.weights[0])


def test_sgd_step_shape_mismatch():
    model = Mlp([np.zeros((2, 2))], [np.zeros(2)])
    with pytest.raises(ShapeError):
        sgd_step(model, [(np.zeros((3, 2)), np.zeros(2))], 0.1)


@pytest.fixture(scope="module")
def small_blobs():
    return synthetic_blobs(seed=3, n_per_class=40, d=8, n_classes=2,
                           separation=1.0, noise=0.05)


def test_train_learns_separable_blobs(small_blobs):
    model = init_mlp([8, 16, 2], 0)
    model, trace = train(model, small_blobs, TrainConfig(20, 16, 0.1, seed=0))
    assert accuracy(model, small_blobs.inputs, small_blobs.labels) >= 0.95
    assert trace[-1] < trace[0]


def test_train_zero_epochs_keeps_model(small_blobs):
    model = init_mlp([8, 16, 2], 0)
    trained, trace = train(model, small_blobs, TrainConfig(0, 16, 0.1, seed=0))
    assert trace == []
    assert all(np.array_equal(a, b) for a, b in zip(trained.weights, model.weights))


def test_train_is_deterministic(small_blobs):
    cfg = TrainConfig(5, 16, 0.1, seed=11)
    m1, t1 = train(init_mlp([8, 16, 2], 1), small_blobs, cfg)
    m2, t2 = train(init_mlp([8, 16, 2], 1), small_blobs, cfg)
    assert t1 == t2
    assert all(np.array_equal(a, b) for a, b in zip(m1.weights, m2.weights))
    assert all(np.array_equal(a, b) for a, b in zip(m1.biases, m2.biases))


def test_adversarial_training_changes_parameters(small_blobs):
    base = init_mlp([8, 16, 2], 1)
    std, _ = train(base, small_blobs, TrainConfig(3, 16, 0.1, seed=11))
    adv, _ = train(base, small_blobs,
                   TrainConfig(3, 16, 0.1, seed=11,
                               adversarial=AdvTrainConfig(eps=0.1, steps=3)))
    assert not all(np.array_equal(a, b) for a, b in zip(std.weights, adv.weights))


def test_train_rejects_bad_config(small_blobs):
    model = init_mlp([8, 16, 2], 0)
    with pytest.raises(ConfigError):
        train(model, small_blobs, TrainConfig(1, 10_000, 0.1))
    with pytest.raises(ConfigError):
        train(model, small_blobs, TrainConfig(1, 16, -1.0))


def test_divergence_reports_epoch(small_blobs):
    model = init_mlp([8, 16, 2], 0)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(TrainingDivergence) as exc:
            train(model, small_blobs, TrainConfig(4, 16, 1e200, seed=0))
    assert exc.value.epoch >= 0


def test_checkpoint_roundtrip(tmp_path):
    model = init_mlp([4, 8, 3], 9)
    path = tmp_path / "model.bin"
    save_checkpoint(model, path, meta={"seed": 9})
    loaded, meta = load_checkpoint(path)
    assert meta == {"seed": 9}
    assert loaded.layer_sizes == [4, 8, 3]
    assert all(np.array_equal(a, b) for a, b in zip(loaded.weights, model.weights))
    assert all(np.array_equal(a, b) for a, b in zip(loaded.biases, model.biases))


def test_checkpoint_bytes_deterministic():
    model = init_mlp([4, 8, 3], 9)
    assert checkpoint_bytes(model, {"a": 1}) == checkpoint_bytes(model, {"a": 1})


def test_checkpoint_rejects_corrupt_blob():
    model = init_mlp([4, 4, 2], 0)
    blob = checkpoint_bytes(model)
    with pytest.raises(ConfigError):
        load_checkpoint_bytes(blob[:-8])
    with pytest.raises(ConfigError):
        load_checkpoint_bytes(b"garbage no newline")
    with pytest.raises(ConfigError):
        load_checkpoint_bytes(b"{\"format\": \"other\"}\n" + blob.split(b"\n", 1)[1])


def test_predict_matches_argmax(small_blobs):
    model = init_mlp([8, 16, 2], 0)
    preds = predict(model, small_blobs.inputs)
    assert preds.shape == (len(small_blobs),)
    assert set(np.unique(preds)) <= {0, 1}
