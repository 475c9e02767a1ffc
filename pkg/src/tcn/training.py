"""Iterative adversarial optimization and its variant schedules.

One training step is a full epoch of each constituent sub-phase in
minibatches: ascend the discrimination loss over the interpreters (I),
descend it over the discriminator (D), optionally descend the
reconstruction loss over reconstructors and interpreters (RI), then descend
the classification loss over classifier and interpreters (CI). The
supervised counterpart (CN) runs the same cycle with every phase restricted
to the labeled pool.

Convergence is a small enough change of the labeled-set classification loss
between consecutive steps (evaluated post-CI in eval mode); converging above
ln 2 means the run is stuck at a zero-knowledge saddle and triggers a
reinitialization with a fresh seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import similarity as sim_mod
from .data import MultimodalDataset, micro_macro_f1
from .errors import ConfigError, TcnError, UsageError
from .model import (ConsensusModel, classification_loss, discrimination_loss,
                    reconstruction_loss)
from .nn import Adam
from .svm import LinearSvmModel, fit_svm, predict_svm

LN2 = math.log(2.0)

VARIANTS = ("TCN", "TCN-embed", "TCN-svm", "TCN-AE", "CN")


@dataclass
class TrainingConfig:
    variant: str = "TCN"
    batch_size: int = 10
    learning_rate: float = 0.001
    max_steps: int = 100
    pretrain_max_steps: int = 20
    convergence_delta: float = 1e-5
    restart_threshold: float = LN2
    max_restarts: int = 10
    seed: int = 0
    noise_scale: float = 0.1  # reconstructor input noise (TCN-AE)
    eval_f1_each_step: bool = True

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")
        if self.convergence_delta <= 0:
            raise ConfigError("convergence_delta must be positive")


@dataclass
class StepRecord:
    step: int
    phase: str  # "pretrain" or "main"
    attempt: int
    loss_c: float | None
    loss_d: float
    loss_r: float | None
    similarity: float
    per_pair: dict
    micro_f1: float | None
    macro_f1: float | None


@dataclass
class TrainingTrace:
    records: list = field(default_factory=list)
    stop_reason: str = ""
    restart_count: int = 0

    def last_main_loss_c(self):
        for rec in reversed(self.records):
            if rec.phase == "main" and rec.loss_c is not None:
                return rec.loss_c
        return None


@dataclass
class TrainResult:
    model: ConsensusModel
    trace: TrainingTrace
    svm: LinearSvmModel | None = None


class TrainingFailure(TcnError):
    """Restart budget exhausted with the classification loss still above the
    saddle threshold; carries the trace for post-mortem."""

    def __init__(self, message: str, trace: TrainingTrace):
        super().__init__(message)
        self.trace = trace


def _named_params(nets):
    out = []
    for net in nets:
        out.extend(net.parameters())
    return out


def _grads(nets):
    out = []
    for net in nets:
        out.extend(net.gradients())
    return out


def minibatch_indices(pool: np.ndarray, batch_size: int, rng: np.random.Generator):
    """Shuffled index batches covering ``pool``; the last one may be short."""
    perm = pool[rng.permutation(len(pool))]
    return [perm[i:i + batch_size] for i in range(0, len(perm), batch_size)]


def train_step_I(model: ConsensusModel, dataset: MultimodalDataset, batches,
                 optimizer: Adam, noise_rng: np.random.Generator) -> None:
    """One epoch ascending the discrimination loss over the interpreters."""
    model.set_requires_grad(interpreters=True, discriminator=False,
                            classifier=False, reconstructors=False)
    for idx in batches:
        model.zero_grads()
        discrimination_loss(model, dataset.blocks_at(idx), noise_rng,
                            mode="train", backward=True)
        optimizer.step(_grads(model.interpreters), maximize=True)


def train_step_D(model: ConsensusModel, dataset: MultimodalDataset, batches,
                 optimizer: Adam, noise_rng: np.random.Generator) -> None:
    """One epoch descending the discrimination loss over the discriminator."""
    model.set_requires_grad(interpreters=False, discriminator=True,
                            classifier=False, reconstructors=False)
    for idx in batches:
        model.zero_grads()
        discrimination_loss(model, dataset.blocks_at(idx), noise_rng,
                            mode="train", backward=True)
        optimizer.step(_grads([model.discriminator]))


def train_step_CI(model: ConsensusModel, dataset: MultimodalDataset, batches,
                  optimizer: Adam) -> None:
    """One epoch over the labeled pool descending the classification loss."""
    if not batches:
        raise UsageError("CI step needs a non-empty labeled set")
    model.set_requires_grad(interpreters=True, discriminator=False,
                            classifier=True, reconstructors=False)
    for idx in batches:
        model.zero_grads()
        labels = dataset.labels_of_labeled(idx)
        classification_loss(model, dataset.blocks_at(idx), labels,
                            mode="train", backward=True)
        optimizer.step(_grads([model.classifier] + model.interpreters))


def train_step_RI(model: ConsensusModel, dataset: MultimodalDataset, batches,
                  optimizer: Adam, noise_scale: float,
                  noise_rng: np.random.Generator) -> None:
    """One epoch descending the reconstruction loss over R and I."""
    model.set_requires_grad(interpreters=True, discriminator=False,
                            classifier=False, reconstructors=True)
    for idx in batches:
        model.zero_grads()
        reconstruction_loss(model, dataset.blocks_at(idx), noise_scale,
                            noise_rng, mode="train", backward=True)
        optimizer.step(_grads(model.reconstructors + model.interpreters))


@dataclass
class _Optimizers:
    interp: Adam
    disc: Adam
    ci: Adam
    ri: Adam | None


def _build_optimizers(model: ConsensusModel, config: TrainingConfig) -> _Optimizers:
    lr = config.learning_rate
    ri = None
    if model.reconstructors is not None:
        ri = Adam(_named_params(model.reconstructors + model.interpreters), learning_rate=lr)
    return _Optimizers(
        interp=Adam(_named_params(model.interpreters), learning_rate=lr),
        disc=Adam(_named_params([model.discriminator]), learning_rate=lr),
        ci=Adam(_named_params([model.classifier] + model.interpreters), learning_rate=lr),
        ri=ri,
    )


def _record_step(model, dataset, config, step, attempt, phase, variant,
                 eval_rng) -> StepRecord:
    all_blocks = dataset.blocks_at(np.arange(dataset.n_samples))
    loss_d = discrimination_loss(model, all_blocks, eval_rng, mode="eval")
    report = sim_mod.dataset_similarity(model, dataset)
    loss_c = None
    if variant != "TCN-svm" and dataset.n_labeled > 0:
        labeled = dataset.labeled_indices()
        loss_c = classification_loss(model, dataset.blocks_at(labeled),
                                     dataset.labels_of_labeled(labeled), mode="eval")
    loss_r = None
    if model.reconstructors is not None:
        loss_r = reconstruction_loss(model, all_blocks, config.noise_scale,
                                     eval_rng, mode="eval")
    micro = macro = None
    if (config.eval_f1_each_step and variant != "TCN-svm"
            and dataset.labels is not None and len(dataset.unlabeled_indices()) > 0):
        micro, macro = evaluate_f1(model, dataset)
    return StepRecord(step=step, phase=phase, attempt=attempt, loss_c=loss_c,
                      loss_d=loss_d, loss_r=loss_r, similarity=report.overall,
                      per_pair=report.per_pair, micro_f1=micro, macro_f1=macro)


def _run_attempt(model, dataset, config, opts, active_seed, attempt, start_step, trace):
    """One full schedule pass; returns (outcome, last_step, converged_loss_c)."""
    variant = config.variant
    labeled = dataset.labeled_indices()
    pool = labeled if variant == "CN" else np.arange(dataset.n_samples)
    step = start_step

    def shuffle_rng(phase_id, step_index):
        return np.random.default_rng([active_seed, attempt, step_index, phase_id])

    def noise_rng(phase_id, step_index):
        return np.random.default_rng([active_seed, attempt, step_index, 100 + phase_id])

    if variant in ("TCN-embed", "TCN-svm"):
        prev_ld = None
        outcome = "max_steps"
        for _ in range(config.pretrain_max_steps):
            step += 1
            train_step_I(model, dataset, minibatch_indices(pool, config.batch_size, shuffle_rng(0, step)),
                         opts.interp, noise_rng(0, step))
            train_step_D(model, dataset, minibatch_indices(pool, config.batch_size, shuffle_rng(1, step)),
                         opts.disc, noise_rng(1, step))
            rec = _record_step(model, dataset, config, step, attempt, "pretrain",
                               variant, np.random.default_rng([active_seed, attempt, step, 999]))
            trace.records.append(rec)
            if prev_ld is not None and abs(rec.loss_d - prev_ld) < config.convergence_delta:
                outcome = "converged"
                break
            prev_ld = rec.loss_d
        if variant == "TCN-svm":
            return outcome, step, None

    prev_lc = None
    for _ in range(config.max_steps):
        step += 1
        train_step_I(model, dataset, minibatch_indices(pool, config.batch_size, shuffle_rng(0, step)),
                     opts.interp, noise_rng(0, step))
        train_step_D(model, dataset, minibatch_indices(pool, config.batch_size, shuffle_rng(1, step)),
                     opts.disc, noise_rng(1, step))
        if variant == "TCN-AE":
            train_step_RI(model, dataset, minibatch_indices(pool, config.batch_size, shuffle_rng(2, step)),
                          opts.ri, config.noise_scale, noise_rng(2, step))
        train_step_CI(model, dataset, minibatch_indices(labeled, config.batch_size, shuffle_rng(3, step)),
                      opts.ci)
        rec = _record_step(model, dataset, config, step, attempt, "main", variant,
                           np.random.default_rng([active_seed, attempt, step, 999]))
        trace.records.append(rec)
        if prev_lc is not None and abs(rec.loss_c - prev_lc) < config.convergence_delta:
            return "converged", step, rec.loss_c
        prev_lc = rec.loss_c
    return "max_steps", step, prev_lc


def train(model: ConsensusModel, dataset: MultimodalDataset,
          config: TrainingConfig) -> TrainResult:
    """Run the variant's schedule to convergence, with the saddle-restart rule.

    Raises ``TrainingFailure`` if every allowed restart still converges above
    the restart threshold.
    """
    config.validate()
    variant = config.variant
    if variant == "TCN-AE" and model.reconstructors is None:
        raise ConfigError("TCN-AE requires a model built with reconstructors")
    if variant != "TCN-svm" and config.max_steps > 0 and dataset.n_labeled == 0:
        raise UsageError(f"{variant} training needs at least one labeled sample")

    trace = TrainingTrace()
    attempt = 0
    active_seed = config.seed
    step = 0
    while True:
        opts = _build_optimizers(model, config)
        outcome, step, converged_lc = _run_attempt(
            model, dataset, config, opts, active_seed, attempt, step, trace)
        if variant == "TCN-svm" or outcome == "max_steps":
            stop = outcome
            break
        # Converged: restart from a fresh seed if stuck above the threshold.
        if converged_lc is not None and converged_lc > config.restart_threshold:
            if attempt >= config.max_restarts:
                trace.stop_reason = "restart_exhausted"
                trace.restart_count = attempt
                raise TrainingFailure(
                    f"converged at loss {converged_lc:.4f} > threshold after "
                    f"{attempt} restarts", trace)
            attempt += 1
            active_seed = config.seed + attempt
            model.reinitialize(active_seed)
            continue
        stop = "converged"
        break
    trace.restart_count = attempt
    trace.stop_reason = f"restarted_then_{stop}" if attempt > 0 else stop
    result = TrainResult(model=model, trace=trace)
    if variant == "TCN-svm" and dataset.n_labeled > 0:
        result.svm = fit_svm_head(model, dataset, seed=config.seed)
    return result


def fit_svm_head(model: ConsensusModel, dataset: MultimodalDataset,
                 regularization: float = 1.0, epochs: int = 200,
                 seed: int = 0) -> LinearSvmModel:
    """Linear SVM over the frozen concatenated representations of the labeled pool."""
    labeled = dataset.labeled_indices()
    reps = model.representations(dataset.blocks_at(labeled), train=False)
    features = np.concatenate(reps, axis=1)
    labels = 2.0 * dataset.labels_of_labeled(labeled) - 1.0
    return fit_svm(features, labels, regularization=regularization,
                   epochs=epochs, seed=seed)


def predict_labels(model: ConsensusModel, blocks, svm: LinearSvmModel | None = None):
    """Hard 0/1 labels, via the classifier head or a fitted SVM head."""
    if svm is not None:
        reps = model.representations(blocks, train=False)
        return (predict_svm(svm, np.concatenate(reps, axis=1)) > 0).astype(int)
    return model.predict_proba(blocks).argmax(axis=1)


def evaluate_f1(model: ConsensusModel, dataset: MultimodalDataset,
                svm: LinearSvmModel | None = None):
    """Micro/macro F1 on the unlabeled pool against its hidden ground truth."""
    unlabeled = dataset.unlabeled_indices()
    if len(unlabeled) == 0:
        raise UsageError("no unlabeled rows to evaluate on")
    preds = predict_labels(model, dataset.blocks_at(unlabeled), svm=svm)
    truth = dataset.unlabeled_ground_truth(unlabeled)
    return micro_macro_f1(preds, truth)
