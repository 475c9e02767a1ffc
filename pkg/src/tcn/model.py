"""The consensus computational graph.

One encoder ("interpreter") per modality maps its feature block to a
non-negative low-dimensional representation. A discriminator tries to name
the modality a representation came from, with a synthetic noise modality as
an extra class; a classifier predicts the label from the concatenated
representations. TCN-AE additionally carries one reconstructor per modality.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import nn
from .errors import ConfigError, NumericError, UsageError

Array = np.ndarray

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    """Network sizes and noise-modality behaviour; everything is overridable."""

    rep_dim: int = 16
    interpreter_hidden: tuple = (64,)
    discriminator_hidden: tuple = (32,)
    classifier_hidden: tuple = (32,)
    reconstructor_hidden: tuple = (64,)
    noise_var_floor: float = 1e-12
    # When True, gradients flow from the noise draw back into the
    # interpreters through its mean/variance; default is a stop-gradient.
    noise_reparam: bool = False


@dataclass
class Representation:
    """A per-sample, per-modality latent vector (entries >= 0)."""

    values: Array
    modality_index: int  # 1-based
    sample_id: object = None


class ConsensusModel:
    """Parameter container for interpreters, discriminator, classifier and
    (optionally) reconstructors."""

    def __init__(self, modality_dims, config: ModelConfig | None = None,
                 with_reconstructors: bool = False, seed: int = 0):
        modality_dims = [int(d) for d in modality_dims]
        if len(modality_dims) < 2:
            raise ConfigError("need at least 2 modalities")
        if any(d < 1 for d in modality_dims):
            raise ConfigError(f"modality dims must be positive, got {modality_dims}")
        self.modality_dims = modality_dims
        self.config = config or ModelConfig()
        self.with_reconstructors = with_reconstructors
        self.seed = seed
        self._build(seed)

    def _build(self, seed: int) -> None:
        cfg = self.config
        self.interpreters = [
            nn.feedforward(d, cfg.interpreter_hidden, cfg.rep_dim,
                           np.random.default_rng([seed, 10 + m]),
                           final_relu=True, name=f"interpreter{m}")
            for m, d in enumerate(self.modality_dims)
        ]
        m_count = len(self.modality_dims)
        self.discriminator = nn.feedforward(
            cfg.rep_dim, cfg.discriminator_hidden, m_count + 1,
            np.random.default_rng([seed, 1]), name="discriminator")
        self.classifier = nn.feedforward(
            m_count * cfg.rep_dim, cfg.classifier_hidden, 2,
            np.random.default_rng([seed, 2]), name="classifier")
        if self.with_reconstructors:
            self.reconstructors = [
                nn.feedforward(cfg.rep_dim, cfg.reconstructor_hidden, d,
                               np.random.default_rng([seed, 100 + m]),
                               name=f"reconstructor{m}")
                for m, d in enumerate(self.modality_dims)
            ]
        else:
            self.reconstructors = None

    def reinitialize(self, seed: int) -> None:
        """Re-draw every parameter as if freshly constructed with ``seed``."""
        self.seed = seed
        self._build(seed)

    @property
    def n_modalities(self) -> int:
        return len(self.modality_dims)

    @property
    def rep_dim(self) -> int:
        return self.config.rep_dim

    def networks(self):
        nets = [(net.name, net) for net in self.interpreters]
        nets.append((self.discriminator.name, self.discriminator))
        nets.append((self.classifier.name, self.classifier))
        if self.reconstructors is not None:
            nets.extend((net.name, net) for net in self.reconstructors)
        return nets

    def _check_blocks(self, blocks):
        if len(blocks) != self.n_modalities:
            raise ConfigError(
                f"expected {self.n_modalities} modality blocks, got {len(blocks)}")
        out = []
        for m, block in enumerate(blocks):
            block = np.asarray(block, dtype=float)
            if block.ndim == 1:
                block = block[None, :]
            if block.shape[1] != self.modality_dims[m]:
                raise ConfigError(
                    f"modality {m + 1} has {block.shape[1]} features, expected "
                    f"{self.modality_dims[m]}")
            out.append(block)
        if len({b.shape[0] for b in out}) != 1:
            raise ConfigError("modality blocks disagree on batch size")
        return out

    def representations(self, blocks, train: bool = False):
        """Per-modality representation matrices, list of (n, rep_dim)."""
        blocks = self._check_blocks(blocks)
        return [net.forward(b, train) for net, b in zip(self.interpreters, blocks)]

    def interpret(self, sample_blocks, sample_id=None):
        """Representations of a single sample, as ``Representation`` values."""
        reps = self.representations([np.atleast_2d(b) for b in sample_blocks], train=False)
        return [
            Representation(values=r[0], modality_index=m + 1, sample_id=sample_id)
            for m, r in enumerate(reps)
        ]

    def predict_proba(self, blocks) -> Array:
        """Class probabilities (n, 2) from the concatenated representations."""
        reps = self.representations(blocks, train=False)
        logits = self.classifier.forward(np.concatenate(reps, axis=1), train=False)
        return nn.softmax(logits)

    def predict(self, sample_blocks):
        """Probability pair (p_class0, p_class1) for one sample."""
        probs = self.predict_proba([np.atleast_2d(b) for b in sample_blocks])
        return float(probs[0, 0]), float(probs[0, 1])

    def zero_grads(self) -> None:
        for _, net in self.networks():
            net.zero_grads()

    def set_requires_grad(self, interpreters=None, discriminator=None,
                          classifier=None, reconstructors=None) -> None:
        if interpreters is not None:
            for net in self.interpreters:
                net.requires_grad = interpreters
        if discriminator is not None:
            self.discriminator.requires_grad = discriminator
        if classifier is not None:
            self.classifier.requires_grad = classifier
        if reconstructors is not None and self.reconstructors is not None:
            for net in self.reconstructors:
                net.requires_grad = reconstructors

    def state_dict(self) -> dict:
        d = {}
        for _, net in self.networks():
            d.update(net.state())
        return d

    def load_state_dict(self, d: dict) -> None:
        for _, net in self.networks():
            net.load_state(d)


def sample_noise(rep_stack: Array, rng: np.random.Generator,
                 var_floor: float = 1e-12, eps: Array | None = None):
    """Draw the synthetic extra-modality representation.

    ``rep_stack`` is (M, n, rep_dim). The draw is elementwise
    Normal(mean, max(variance, var_floor)) over the M real representations,
    realized as mean + std * eps so a fixed ``eps`` makes the draw
    reproducible.
    """
    m_count = rep_stack.shape[0]
    if m_count < 2:
        raise UsageError("noise modality needs at least 2 representations")
    mu = rep_stack.mean(axis=0)
    var = rep_stack.var(axis=0)
    std = np.sqrt(np.maximum(var, var_floor))
    if eps is None:
        eps = rng.standard_normal(mu.shape)
    return mu + std * eps, mu, var, std, eps


def discrimination_loss(model: ConsensusModel, blocks, rng: np.random.Generator | None = None,
                        mode: str = "train", backward: bool = False,
                        noise_eps: Array | None = None,
                        noise_sample: Array | None = None) -> float:
    """Cross-entropy of the discriminator over all modalities plus the noise one.

    The (M+1) instances derived from one sample share the minibatch. With the
    default stop-gradient the noise draw is a constant in the reverse pass;
    with ``config.noise_reparam`` its mean/std path contributes interpreter
    gradients. ``noise_eps`` pins the standard-normal draw, ``noise_sample``
    pins the final noise representation (useful for finite differencing the
    stop-gradient path).

    In train mode a network only uses batch statistics if it is itself
    trainable; a frozen network runs on its running statistics, so the side
    being optimized cannot exploit the other's batch coupling.
    """
    train = mode == "train"
    m_count = model.n_modalities
    blocks = model._check_blocks(blocks)
    reps = [net.forward(b, train and net.requires_grad)
            for net, b in zip(model.interpreters, blocks)]
    n = reps[0].shape[0]
    stack = np.stack(reps, axis=0)
    if noise_sample is not None:
        noise = np.asarray(noise_sample, dtype=float)
        mu = var = std = eps = None
    else:
        if rng is None and noise_eps is None:
            raise UsageError("discrimination_loss needs an rng or a pinned noise draw")
        noise, mu, var, std, eps = sample_noise(
            stack, rng, model.config.noise_var_floor, eps=noise_eps)
    dinput = np.concatenate(list(reps) + [noise], axis=0)
    targets = np.repeat(np.arange(m_count + 1), n)
    logits = model.discriminator.forward(
        dinput, train and model.discriminator.requires_grad)
    loss = nn.cross_entropy(logits, targets)
    if backward:
        dlogits = nn.cross_entropy_backward(logits, targets)
        gin = model.discriminator.backward(dlogits)
        need_interp = any(net.requires_grad for net in model.interpreters)
        if need_interp:
            g_noise = gin[m_count * n:]
            reparam = model.config.noise_reparam and noise_sample is None
            if reparam:
                # d noise / d rep_m through mean and population variance.
                g_var = np.zeros_like(g_noise)
                open_floor = var > model.config.noise_var_floor
                g_var[open_floor] = (g_noise * eps)[open_floor] / (2.0 * std[open_floor])
            for m in range(m_count):
                if not model.interpreters[m].requires_grad:
                    continue
                g_m = gin[m * n:(m + 1) * n].copy()
                if reparam:
                    g_m += g_noise / m_count
                    g_m += g_var * (2.0 * (reps[m] - mu) / m_count)
                model.interpreters[m].backward(g_m)
    return loss


def classification_loss(model: ConsensusModel, blocks, labels,
                        mode: str = "train", backward: bool = False) -> float:
    """Mean cross-entropy of the classifier over a fully labeled batch."""
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise UsageError(f"labels must be a vector, got shape {labels.shape}")
    if np.any(labels < 0):
        raise UsageError("batch contains unlabeled samples")
    train = mode == "train"
    blocks = model._check_blocks(blocks)
    reps = [net.forward(b, train and net.requires_grad)
            for net, b in zip(model.interpreters, blocks)]
    concat = np.concatenate(reps, axis=1)
    logits = model.classifier.forward(concat, train and model.classifier.requires_grad)
    loss = nn.cross_entropy(logits, labels)
    if backward:
        dlogits = nn.cross_entropy_backward(logits, labels)
        gin = model.classifier.backward(dlogits)
        rep_dim = model.rep_dim
        for m in range(model.n_modalities):
            if model.interpreters[m].requires_grad:
                model.interpreters[m].backward(gin[:, m * rep_dim:(m + 1) * rep_dim])
    return loss


def reconstruction_loss(model: ConsensusModel, blocks, noise_scale: float,
                        rng: np.random.Generator | None = None,
                        mode: str = "train", backward: bool = False,
                        eps_override=None) -> float:
    """Mean over samples and modalities of |reconstruction - input|^2.

    Each reconstructor sees its modality's representation plus elementwise
    Gaussian noise of scale ``noise_scale`` (a constant in the reverse pass).
    """
    if model.reconstructors is None:
        raise UsageError("model has no reconstructors (not the TCN-AE variant)")
    train = mode == "train"
    blocks = model._check_blocks(blocks)
    reps = [net.forward(b, train and net.requires_grad)
            for net, b in zip(model.interpreters, blocks)]
    m_count = model.n_modalities
    total = 0.0
    per_modality = []
    for m in range(m_count):
        if eps_override is not None:
            eps = eps_override[m]
        elif noise_scale > 0.0:
            if rng is None:
                raise UsageError("reconstruction_loss needs an rng when noise_scale > 0")
            eps = rng.standard_normal(reps[m].shape) * noise_scale
        else:
            eps = 0.0
        recon = model.reconstructors[m].forward(
            reps[m] + eps, train and model.reconstructors[m].requires_grad)
        total += nn.squared_error(recon, blocks[m])
        per_modality.append((recon, eps))
    loss = total / m_count
    if backward:
        for m in range(m_count):
            recon, _ = per_modality[m]
            drecon = nn.squared_error_backward(recon, blocks[m], grad_scale=1.0 / m_count)
            g_rep = model.reconstructors[m].backward(drecon)
            if model.interpreters[m].requires_grad:
                model.interpreters[m].backward(g_rep)
    return loss


def save_checkpoint(model: ConsensusModel, path) -> None:
    """Flat versioned dump of every parameter/buffer tensor plus the config."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "modality_dims": model.modality_dims,
        "with_reconstructors": model.with_reconstructors,
        "seed": model.seed,
        "config": asdict(model.config),
    }
    arrays = model.state_dict()
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **arrays)


def load_checkpoint(path) -> ConsensusModel:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta["version"] != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {meta['version']}")
        cfg_fields = dict(meta["config"])
        for key in ("interpreter_hidden", "discriminator_hidden",
                    "classifier_hidden", "reconstructor_hidden"):
            cfg_fields[key] = tuple(cfg_fields[key])
        cfg = ModelConfig(**cfg_fields)
        model = ConsensusModel(meta["modality_dims"], cfg,
                               with_reconstructors=meta["with_reconstructors"],
                               seed=meta["seed"])
        state = {k: data[k] for k in data.files if k != "__meta__"}
    model.load_state_dict(state)
    return model
