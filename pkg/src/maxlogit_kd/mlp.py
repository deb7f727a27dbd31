"""Fully-connected network with manual backprop, plus SGD with momentum and a step schedule."""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpec, ShapeMismatch

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 2:
            raise InvalidSpec("need at least an input and an output width")
        if any(w < 1 for w in self.layer_widths):
            raise InvalidSpec(f"widths must be >= 1, got {self.layer_widths}")
        if self.activation not in ACTIVATIONS:
            raise InvalidSpec(f"activation must be one of {ACTIVATIONS}")

    @property
    def n_inputs(self):
        return self.layer_widths[0]

    @property
    def n_outputs(self):
        return self.layer_widths[-1]


class Mlp:
    """Affine + activation stack; the last layer emits raw logits.

    Parameters live in ``self.weights`` (each ``(fan_in, fan_out)``) and
    ``self.biases``. ``forward`` keeps the activations needed by ``backward``.
    """

    def __init__(self, spec, weights, biases):
        self.spec = spec
        self.weights = weights
        self.biases = biases
        self._cache = None

    @property
    def dtype(self):
        return self.weights[0].dtype

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def n_parameters(self):
        return sum(p.size for p in self.parameters())

    def checksum(self):
        h = hashlib.sha256()
        for p in self.parameters():
            h.update(np.ascontiguousarray(p, dtype=p.dtype.newbyteorder("<")).tobytes())
        return h.hexdigest()

    def astype(self, dtype):
        return Mlp(self.spec, [w.astype(dtype) for w in self.weights],
                   [b.astype(dtype) for b in self.biases])

    def copy(self):
        return self.astype(self.dtype)

    def _act(self, h):
        if self.spec.activation == "relu":
            return np.maximum(h, 0)
        return np.tanh(h)

    def forward(self, x, keep=False):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.spec.n_inputs:
            raise ShapeMismatch(f"expected (B, {self.spec.n_inputs}) inputs, got {x.shape}")
        inputs = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = self._act(h)
                inputs.append(h)
        if keep:
            self._cache = inputs
        return h

    def backward(self, grad_logits):
        """Gradients of the loss w.r.t. every parameter, ordered like ``parameters()``."""
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        inputs = self._cache
        g = np.asarray(grad_logits, dtype=self.dtype)
        if g.shape != (inputs[0].shape[0], self.spec.n_outputs):
            raise ShapeMismatch(f"gradient shape {g.shape} does not match the last forward pass")
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            a = inputs[i]
            grads[2 * i] = a.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = g @ self.weights[i].T
                if self.spec.activation == "relu":
                    g = g * (a > 0)
                else:
                    g = g * (1.0 - a * a)
        return grads


def init_mlp(spec, dtype=np.float32):
    """He-uniform weights, zero biases, drawn from ``default_rng(spec.seed)``."""
    if not isinstance(spec, MlpSpec):
        raise InvalidSpec("expected an MlpSpec")
    rng = np.random.default_rng(spec.seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return Mlp(spec, weights, biases)


def forward(model, inputs):
    return model.forward(inputs)


def predict(model, inputs, batch_size=1024):
    inputs = np.asarray(inputs)
    if len(inputs) == 0:
        return np.empty(0, dtype=np.int64)
    chunks = [model.forward(inputs[i:i + batch_size]).argmax(axis=1)
              for i in range(0, len(inputs), batch_size)]
    return np.concatenate(chunks)


@dataclass(frozen=True)
class OptimizerSpec:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    milestones: tuple = (0.625, 0.75, 0.875)
    decay_factor: float = 0.1
    batch_size: int = 64

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(float(m) for m in self.milestones))
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if not self.decay_factor > 0:
            raise ValueError("decay_factor must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        ms = self.milestones
        if any(not 0 < m < 1 for m in ms) or any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError(f"milestones must be strictly increasing in (0, 1), got {ms}")

    def milestone_epochs(self, total_epochs):
        return [int(round(m * total_epochs)) for m in self.milestones]

    def lr_at(self, epoch, total_epochs):
        """Learning rate for the 0-based ``epoch``; decays once per milestone passed."""
        passed = sum(epoch >= e for e in self.milestone_epochs(total_epochs))
        return self.lr * self.decay_factor**passed


@dataclass
class Sgd:
    """SGD with heavy-ball momentum and L2 weight decay folded into the gradient."""

    opt: OptimizerSpec
    velocity: list = field(default_factory=list)

    def step(self, model, grads, epoch, total_epochs):
        params = model.parameters()
        if len(grads) != len(params):
            raise ShapeMismatch(f"{len(grads)} gradients for {len(params)} parameters")
        if not self.velocity:
            self.velocity = [np.zeros_like(p) for p in params]
        lr = model.dtype.type(self.opt.lr_at(epoch, total_epochs))
        mu = model.dtype.type(self.opt.momentum)
        wd = model.dtype.type(self.opt.weight_decay)
        for p, g, v in zip(params, grads, self.velocity):
            if g.shape != p.shape:
                raise ShapeMismatch(f"gradient {g.shape} vs parameter {p.shape}")
            v *= mu
            v += g
            if wd:
                v += wd * p
            p -= lr * v


def backward_and_step(model, grad_logits, optimizer, epoch, total_epochs):
    """Backprop ``grad_logits`` through the last forward pass and apply one SGD update."""
    grads = model.backward(grad_logits)
    optimizer.step(model, grads, epoch, total_epochs)
    return model
