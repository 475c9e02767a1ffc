"""Tri-training over per-modality classifiers.

Three identical single-hidden-layer perceptrons (30 hidden units) are
bootstrap-trained on the labeled pool, then rounds of mutual pseudo-labeling
follow: for each member, unlabeled samples on which the other two agree
become candidate training data, accepted under the classical error-rate
condition (noise rate estimated on the labeled set, candidate sets
subsampled to keep the noise bound decreasing). Training never reads an
unlabeled row's true label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import MultimodalDataset
from .errors import UsageError


@dataclass
class TriTrainConfig:
    hidden_units: int = 30
    epochs: int = 50
    learning_rate: float = 0.001
    batch_size: int = 10
    max_rounds: int = 20
    seed: int = 0


@dataclass
class TriTrainEnsemble:
    members: list
    view_assignment: str  # "per-modality" or "concat"
    round_log: list = field(default_factory=list)


def _views(dataset: MultimodalDataset, assignment: str):
    if assignment == "per-modality":
        return list(dataset.modality_blocks)
    concat = np.concatenate(dataset.modality_blocks, axis=1)
    return [concat, concat, concat]


def _make_member(in_dim: int, config: TriTrainConfig, rng) -> nn.Mlp:
    return nn.feedforward(in_dim, (config.hidden_units,), 2, rng,
                          batchnorm=False, name="member")


def train_supervised(net: nn.Mlp, features, labels, config: TriTrainConfig,
                     rng: np.random.Generator) -> nn.Mlp:
    """Plain minibatch cross-entropy training; also used as the supervised
    single-member reference."""
    opt = nn.Adam(net.parameters(), learning_rate=config.learning_rate)
    n = features.shape[0]
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        for i in range(0, n, config.batch_size):
            idx = perm[i:i + config.batch_size]
            net.zero_grads()
            logits = net.forward(features[idx], train=True)
            dlogits = nn.cross_entropy_backward(logits, labels[idx])
            net.backward(dlogits)
            opt.step(net.gradients())
    return net


def _predict(net: nn.Mlp, features) -> np.ndarray:
    return net.forward(features, train=False).argmax(axis=1)


def tri_train(dataset: MultimodalDataset, config: TriTrainConfig | None = None) -> TriTrainEnsemble:
    config = config or TriTrainConfig()
    labeled = dataset.labeled_indices()
    if len(labeled) == 0:
        raise UsageError("tri-training needs a labeled set")
    labels_l = dataset.labels_of_labeled(labeled)
    if len(np.unique(labels_l)) < 2 or min(np.bincount(labels_l)) < 2:
        raise UsageError("need at least 2 labeled samples per class")

    assignment = "per-modality" if dataset.n_modalities == 3 else "concat"
    views = _views(dataset, assignment)
    unlabeled = dataset.unlabeled_indices()

    members = []
    for i in range(3):
        rng = np.random.default_rng([config.seed, i])
        boot = rng.choice(labeled, size=len(labeled), replace=True)
        net = _make_member(views[i].shape[1], config, rng)
        train_supervised(net, views[i][boot], dataset.labels_of_labeled(boot), config, rng)
        members.append(net)

    # Classical acceptance state: previous error estimate and pseudo-set size.
    err_prev = [0.5, 0.5, 0.5]
    size_prev = [0, 0, 0]
    round_log = []
    for round_no in range(config.max_rounds):
        candidates = [None, None, None]
        accept = [False, False, False]
        errors = [0.5, 0.5, 0.5]
        sizes = [0, 0, 0]
        preds_l = [_predict(members[i], views[i][labeled]) for i in range(3)]
        preds_u = ([_predict(members[i], views[i][unlabeled]) for i in range(3)]
                   if len(unlabeled) else [np.array([], dtype=int)] * 3)
        for i in range(3):
            j, k = [x for x in range(3) if x != i]
            agree_l = preds_l[j] == preds_l[k]
            if not agree_l.any():
                continue
            err = float(np.mean(preds_l[j][agree_l] != labels_l[agree_l]))
            errors[i] = err
            if err >= err_prev[i]:
                continue
            agree_u = preds_u[j] == preds_u[k]
            cand_idx = unlabeled[agree_u]
            cand_labels = preds_u[j][agree_u]
            sizes[i] = len(cand_idx)
            if len(cand_idx) == 0:
                continue
            if size_prev[i] == 0:
                size_prev[i] = math.floor(err / (err_prev[i] - err) + 1)
            if size_prev[i] < len(cand_idx):
                if err * len(cand_idx) < err_prev[i] * size_prev[i]:
                    accept[i] = True
                elif size_prev[i] > err / (err_prev[i] - err):
                    keep = math.ceil(err_prev[i] * size_prev[i] / err - 1)
                    rng = np.random.default_rng([config.seed, round_no, i])
                    sel = rng.choice(len(cand_idx), size=min(keep, len(cand_idx)),
                                     replace=False)
                    cand_idx = cand_idx[sel]
                    cand_labels = cand_labels[sel]
                    accept[i] = True
            if accept[i]:
                candidates[i] = (cand_idx, cand_labels)
        round_log.append({
            "round": round_no,
            "errors": list(errors),
            "candidate_sizes": list(sizes),
            "accepted": list(accept),
            "added": [len(candidates[i][0]) if candidates[i] else 0 for i in range(3)],
        })
        if not any(accept):
            break
        for i in range(3):
            if not accept[i]:
                continue
            cand_idx, cand_labels = candidates[i]
            feats = np.concatenate([views[i][labeled], views[i][cand_idx]], axis=0)
            targets = np.concatenate([labels_l, cand_labels])
            rng = np.random.default_rng([config.seed, 10 + round_no, i])
            members[i] = _make_member(views[i].shape[1], config, rng)
            train_supervised(members[i], feats, targets, config, rng)
            err_prev[i] = errors[i]
            size_prev[i] = len(cand_idx)

    return TriTrainEnsemble(members=members, view_assignment=assignment,
                            round_log=round_log)


def tri_predict(ensemble: TriTrainEnsemble, blocks) -> np.ndarray:
    """Majority vote over the three members for a batch of samples."""
    blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]
    if ensemble.view_assignment == "per-modality":
        views = blocks
    else:
        concat = np.concatenate(blocks, axis=1)
        views = [concat, concat, concat]
    votes = np.stack([_predict(ensemble.members[i], views[i]) for i in range(3)])
    return (votes.sum(axis=0) >= 2).astype(int)
