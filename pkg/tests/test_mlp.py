import numpy as np
import pytest

from maxlogit_kd import kd_losses
from maxlogit_kd.errors import InvalidSpec, ShapeMismatch
from maxlogit_kd.kd_losses import LossWeights
from maxlogit_kd.mlp import Mlp, MlpSpec, OptimizerSpec, Sgd, backward_and_step, forward, init_mlp, predict
from maxlogit_kd.verify import relative_error

TINY = MlpSpec((3, 5, 4), activation="tanh", seed=3)


def batch(seed=0, b=6):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(b, 3)), rng.normal(size=(b, 4)) * 2, rng.integers(0, 4, size=b)


def full_loss(model, x, teacher, labels, taus):
    return kd_losses.combined_loss(teacher, model.forward(x), labels, LossWeights(), taus=taus).total


def analytic_param_grads(model, x, teacher, labels, taus):
    logits = model.forward(x, keep=True)
    g = kd_losses.loss_gradient(teacher, logits.astype(np.float64), labels, LossWeights(), taus=taus)
    return model.backward(g.astype(model.dtype))


def numeric_param_grads(model64, x, teacher, labels, taus, h=1e-6):
    grads = []
    for p in model64.parameters():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = full_loss(model64, x, teacher, labels, taus)
            p[idx] = old - h
            down = full_loss(model64, x, teacher, labels, taus)
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


class TestSpec:
    def test_parameter_count(self):
        assert init_mlp(MlpSpec((2, 4, 3))).n_parameters() == 2 * 4 + 4 + 4 * 3 + 3

    def test_invalid(self):
        with pytest.raises(InvalidSpec):
            MlpSpec((2,))
        with pytest.raises(InvalidSpec):
            MlpSpec((2, 0, 3))
        with pytest.raises(InvalidSpec):
            MlpSpec((2, 3), activation="gelu")

    def test_seeded_init_is_deterministic(self):
        a, b = init_mlp(MlpSpec((4, 8, 3), seed=5)), init_mlp(MlpSpec((4, 8, 3), seed=5))
        assert a.checksum() == b.checksum()
        assert a.checksum() != init_mlp(MlpSpec((4, 8, 3), seed=6)).checksum()

    def test_he_uniform_limits(self):
        model = init_mlp(MlpSpec((50, 200, 10), seed=0))
        limit = np.sqrt(6 / 50)
        assert np.abs(model.weights[0]).max() <= limit
        assert np.abs(model.weights[0]).max() > 0.95 * limit
        assert all(np.all(b == 0) for b in model.biases)


class TestForward:
    def test_zero_model(self):
        model = Mlp(MlpSpec((3, 4, 2)), [np.zeros((3, 4)), np.zeros((4, 2))], [np.zeros(4), np.zeros(2)])
        assert np.all(forward(model, np.ones((5, 3))) == 0)

    def test_empty_batch(self):
        model = init_mlp(MlpSpec((3, 4, 2)))
        assert forward(model, np.zeros((0, 3))).shape == (0, 2)
        assert predict(model, np.zeros((0, 3))).shape == (0,)

    def test_identity_layer(self):
        model = Mlp(MlpSpec((2, 2)), [np.eye(2)], [np.zeros(2)])
        np.testing.assert_array_equal(forward(model, [[1.0, 2.0]]), [[1.0, 2.0]])

    def test_wrong_width(self):
        with pytest.raises(ShapeMismatch):
            forward(init_mlp(MlpSpec((3, 2))), np.ones((1, 4)))

    def test_relu_hidden_layer(self):
        model = Mlp(MlpSpec((1, 2, 1)), [np.array([[1.0, -1.0]]), np.array([[1.0], [1.0]])],
                    [np.zeros(2), np.zeros(1)])
        np.testing.assert_array_equal(forward(model, [[3.0], [-2.0]]), [[3.0], [2.0]])


class TestBackward:
    def test_float64_gradients(self):
        model = init_mlp(TINY, np.float64)
        x, teacher, labels = batch()
        taus = kd_losses.combined_loss(teacher, model.forward(x), labels).per_sample_tau
        analytic = analytic_param_grads(model, x, teacher, labels, taus)
        numeric = numeric_param_grads(model.copy(), x, teacher, labels, taus)
        for a, n in zip(analytic, numeric):
            assert relative_error(a, n) < 1e-5

    def test_float32_gradients(self):
        model = init_mlp(TINY, np.float32)
        x, teacher, labels = batch(1)
        x32 = x.astype(np.float32)
        taus = kd_losses.combined_loss(teacher, model.astype(np.float64).forward(x32), labels).per_sample_tau
        analytic = analytic_param_grads(model, x32, teacher, labels, taus)
        numeric = numeric_param_grads(model.astype(np.float64), x32.astype(np.float64), teacher, labels, taus)
        for a, n in zip(analytic, numeric):
            assert relative_error(a, n) < 1e-3

    def test_relu_gradients(self):
        model = init_mlp(MlpSpec((3, 6, 4), seed=2), np.float64)
        x, teacher, labels = batch(2)
        taus = kd_losses.combined_loss(teacher, model.forward(x), labels).per_sample_tau
        for a, n in zip(analytic_param_grads(model, x, teacher, labels, taus),
                        numeric_param_grads(model.copy(), x, teacher, labels, taus)):
            assert relative_error(a, n) < 1e-5

    def test_needs_forward_first(self):
        with pytest.raises(RuntimeError):
            init_mlp(TINY).backward(np.zeros((1, 4)))

    def test_gradient_shape_checked(self):
        model = init_mlp(TINY)
        model.forward(np.zeros((2, 3)), keep=True)
        with pytest.raises(ShapeMismatch):
            model.backward(np.zeros((3, 4)))


class TestSgd:
    def test_zero_gradient_without_decay_is_a_no_op(self):
        model = init_mlp(TINY)
        before = model.checksum()
        model.forward(np.zeros((2, 3), dtype=np.float32), keep=True)
        backward_and_step(model, np.zeros((2, 4), dtype=np.float32), Sgd(OptimizerSpec(weight_decay=0)), 0, 10)
        assert model.checksum() == before

    def test_momentum_and_decay_update(self):
        model = Mlp(MlpSpec((1, 1)), [np.array([[2.0]])], [np.array([1.0])])
        sgd = Sgd(OptimizerSpec(lr=0.1, momentum=0.5, weight_decay=0.01))
        grads = [np.array([[1.0]]), np.array([0.5])]
        sgd.step(model, grads, 0, 10)
        v1 = 1.0 + 0.01 * 2.0
        w1 = 2.0 - 0.1 * v1
        assert model.weights[0][0, 0] == pytest.approx(w1)
        sgd.step(model, grads, 0, 10)
        v2 = 0.5 * v1 + 1.0 + 0.01 * w1
        assert model.weights[0][0, 0] == pytest.approx(w1 - 0.1 * v2)

    def test_schedule(self):
        opt = OptimizerSpec(lr=0.05)
        assert opt.milestone_epochs(240) == [150, 180, 210]
        assert opt.lr_at(149, 240) == 0.05
        assert opt.lr_at(150, 240) == pytest.approx(0.005)
        assert opt.lr_at(239, 240) == pytest.approx(0.05e-3)
        assert opt.milestone_epochs(60) == [38, 45, 52]

    def test_invalid_options(self):
        for kwargs in ({"lr": 0}, {"momentum": 1.0}, {"weight_decay": -1}, {"batch_size": 0},
                       {"milestones": (0.8, 0.5)}, {"milestones": (1.5,)}):
            with pytest.raises(ValueError):
                OptimizerSpec(**kwargs)
