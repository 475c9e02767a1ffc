"""Dense neural-network substrate with explicit reverse-mode gradients.

Everything here is deliberately small: dense layers, batch normalization,
ReLU, softmax cross-entropy, squared error, and Adam. Each layer keeps its
own gradient buffers (the per-parameter mirror of the weights), so a network
stack can be differentiated by chaining ``backward`` calls without a general
autodiff graph.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericError, UsageError

Array = np.ndarray


def kaiming_uniform(rng: np.random.Generator, out_dim: int, in_dim: int) -> Array:
    """Fan-in scaled uniform init, appropriate for ReLU stacks."""
    limit = np.sqrt(6.0 / in_dim)
    return rng.uniform(-limit, limit, size=(out_dim, in_dim))


class DenseLayer:
    """Affine map ``y = x @ W.T + b`` with weights stored as (out_dim, in_dim)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None):
        if in_dim < 1 or out_dim < 1:
            raise ConfigError(f"dense layer dims must be positive, got {in_dim}x{out_dim}")
        if rng is None:
            rng = np.random.default_rng(0)
        self.weights = kaiming_uniform(rng, out_dim, in_dim)
        self.bias = np.zeros(out_dim)
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)
        self._x: Array | None = None

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def forward(self, x: Array, train: bool) -> Array:
        self._x = x
        return x @ self.weights.T + self.bias

    def backward(self, gy: Array, accumulate: bool = True) -> Array:
        if self._x is None:
            raise UsageError("dense backward called before forward")
        if accumulate:
            self.grad_weights += gy.T @ self._x
            self.grad_bias += gy.sum(axis=0)
        gx = gy @ self.weights
        self._x = None
        return gx

    def parameters(self):
        return [("weights", self.weights), ("bias", self.bias)]

    def gradients(self):
        return [self.grad_weights, self.grad_bias]

    def buffers(self):
        return []


class BatchNormLayer:
    """Per-feature batch normalization with running statistics.

    Train mode normalizes by batch statistics and updates the running ones;
    eval mode (and train mode with a single-row batch, where batch variance
    is degenerate) normalizes by the running statistics only.
    """

    def __init__(self, dim: int, momentum: float = 0.1, epsilon: float = 1e-5):
        if not 0.0 < momentum < 1.0:
            raise ConfigError(f"batchnorm momentum must be in (0,1), got {momentum}")
        self.gamma = np.ones(dim)
        self.beta = np.zeros(dim)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.epsilon = epsilon
        self.grad_gamma = np.zeros_like(self.gamma)
        self.grad_beta = np.zeros_like(self.beta)
        self._cache = None

    def forward(self, x: Array, train: bool) -> Array:
        if train and x.shape[0] > 1:
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean *= 1.0 - self.momentum
            self.running_mean += self.momentum * mean
            self.running_var *= 1.0 - self.momentum
            self.running_var += self.momentum * var
            inv_std = 1.0 / np.sqrt(var + self.epsilon)
            xhat = (x - mean) * inv_std
            self._cache = ("batch", xhat, inv_std)
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.epsilon)
            xhat = (x - self.running_mean) * inv_std
            self._cache = ("frozen", xhat, inv_std)
        return self.gamma * xhat + self.beta

    def backward(self, gy: Array, accumulate: bool = True) -> Array:
        if self._cache is None:
            raise UsageError("batchnorm backward called before forward")
        mode, xhat, inv_std = self._cache
        self._cache = None
        if accumulate:
            self.grad_gamma += (gy * xhat).sum(axis=0)
            self.grad_beta += gy.sum(axis=0)
        gxhat = gy * self.gamma
        if mode == "batch":
            # Batch statistics took part in the forward pass, so their
            # dependence on x shows up in the gradient.
            gx = inv_std * (gxhat - gxhat.mean(axis=0) - xhat * (gxhat * xhat).mean(axis=0))
        else:
            gx = gxhat * inv_std
        return gx

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def gradients(self):
        return [self.grad_gamma, self.grad_beta]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]


class ReluLayer:
    def __init__(self):
        self._mask: Array | None = None

    def forward(self, x: Array, train: bool) -> Array:
        self._mask = x > 0.0
        return np.maximum(x, 0.0)

    def backward(self, gy: Array, accumulate: bool = True) -> Array:
        if self._mask is None:
            raise UsageError("relu backward called before forward")
        gx = gy * self._mask
        self._mask = None
        return gx

    def parameters(self):
        return []

    def gradients(self):
        return []

    def buffers(self):
        return []


class Mlp:
    """A layer stack with a shared reverse pass.

    ``requires_grad`` gates parameter-gradient accumulation: a frozen network
    still propagates gradients to its input (needed when it sits between a
    loss and the networks actually being trained) but leaves its own buffers
    untouched.
    """

    def __init__(self, layers, name: str = "mlp"):
        self.layers = list(layers)
        self.name = name
        self.requires_grad = True

    @property
    def in_dim(self) -> int:
        for layer in self.layers:
            if isinstance(layer, DenseLayer):
                return layer.in_dim
        raise ConfigError(f"{self.name}: no dense layer")

    @property
    def out_dim(self) -> int:
        for layer in reversed(self.layers):
            if isinstance(layer, DenseLayer):
                return layer.out_dim
        raise ConfigError(f"{self.name}: no dense layer")

    def forward(self, x: Array, train: bool = False) -> Array:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2:
            raise ConfigError(f"{self.name}: expected 2-D batch, got shape {x.shape}")
        if x.shape[1] != self.in_dim:
            raise ConfigError(
                f"{self.name}: input has {x.shape[1]} features, layer expects {self.in_dim}"
            )
        if not np.all(np.isfinite(x)):
            raise NumericError(f"{self.name}: non-finite input")
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, gy: Array) -> Array:
        for layer in reversed(self.layers):
            gy = layer.backward(gy, accumulate=self.requires_grad)
        return gy

    def zero_grads(self) -> None:
        for layer in self.layers:
            for g in layer.gradients():
                g[...] = 0.0

    def parameters(self):
        """Named parameter arrays, in a stable order."""
        out = []
        for i, layer in enumerate(self.layers):
            for pname, arr in layer.parameters():
                out.append((f"{self.name}/layer{i}/{pname}", arr))
        return out

    def gradients(self):
        """Gradient buffers aligned with ``parameters()``."""
        out = []
        for layer in self.layers:
            out.extend(layer.gradients())
        return out

    def state(self) -> dict:
        """All mutable arrays (parameters and buffers), copied."""
        d = {name: arr.copy() for name, arr in self.parameters()}
        for i, layer in enumerate(self.layers):
            for bname, arr in layer.buffers():
                d[f"{self.name}/layer{i}/{bname}"] = arr.copy()
        return d

    def load_state(self, d: dict) -> None:
        for name, arr in self.parameters():
            arr[...] = d[name]
        for i, layer in enumerate(self.layers):
            for bname, arr in layer.buffers():
                arr[...] = d[f"{self.name}/layer{i}/{bname}"]


def feedforward(
    in_dim: int,
    hidden_dims,
    out_dim: int,
    rng: np.random.Generator,
    final_relu: bool = False,
    batchnorm: bool = True,
    name: str = "mlp",
) -> Mlp:
    """Build dense -> [batchnorm] -> relu blocks followed by a dense head."""
    layers = []
    prev = in_dim
    for h in hidden_dims:
        layers.append(DenseLayer(prev, h, rng))
        if batchnorm:
            layers.append(BatchNormLayer(h))
        layers.append(ReluLayer())
        prev = h
    layers.append(DenseLayer(prev, out_dim, rng))
    if final_relu:
        layers.append(ReluLayer())
    return Mlp(layers, name=name)


def log_softmax(logits: Array) -> Array:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits: Array) -> Array:
    return np.exp(log_softmax(logits))


def _check_targets(logits: Array, targets: Array) -> Array:
    targets = np.asarray(targets)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ConfigError(f"logits must be (batch, classes>=2), got {logits.shape}")
    if targets.shape != (logits.shape[0],):
        raise ConfigError(f"targets shape {targets.shape} does not match batch {logits.shape[0]}")
    if targets.min() < 0 or targets.max() >= logits.shape[1]:
        raise ConfigError("target class index out of range")
    return targets.astype(int)


def cross_entropy(logits: Array, targets: Array) -> float:
    """Mean over the batch of -log softmax(logits)[target]."""
    targets = _check_targets(logits, targets)
    lsm = log_softmax(logits)
    return float(-lsm[np.arange(len(targets)), targets].mean())


def cross_entropy_backward(logits: Array, targets: Array, grad_scale: float = 1.0) -> Array:
    """Gradient of the mean cross-entropy with respect to the logits."""
    targets = _check_targets(logits, targets)
    n = logits.shape[0]
    g = softmax(logits)
    g[np.arange(n), targets] -= 1.0
    return g * (grad_scale / n)


def squared_error(pred: Array, target: Array) -> float:
    """Mean over rows of the squared Euclidean distance."""
    diff = pred - target
    return float((diff * diff).sum(axis=1).mean())


def squared_error_backward(pred: Array, target: Array, grad_scale: float = 1.0) -> Array:
    n = pred.shape[0]
    return (pred - target) * (2.0 * grad_scale / n)


class Adam:
    """Adam with bias correction over a fixed list of parameter arrays.

    Parameters are mutated in place so that layer objects keep their
    identity; ``step_count`` increases by exactly one per ``step`` call.
    """

    def __init__(
        self,
        named_params,
        learning_rate: float = 0.001,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        self.names = [name for name, _ in named_params]
        self.params = [arr for _, arr in named_params]
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.first_moment = [np.zeros_like(p) for p in self.params]
        self.second_moment = [np.zeros_like(p) for p in self.params]
        self.step_count = 0

    def step(self, grads, maximize: bool = False) -> None:
        if len(grads) != len(self.params):
            raise ConfigError(f"expected {len(self.params)} gradient buffers, got {len(grads)}")
        for name, g in zip(self.names, grads):
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(self.params, grads, self.first_moment, self.second_moment):
            if maximize:
                g = -g
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)
