"""Representation-similarity diagnostic.

Representations are normalized into probability mass functions; each
modality pair of one sample gets an entropy-normalized symmetric KL
divergence, and the similarity is the negative mean of those divergences
over all pairs and samples (so its maximum is 0, at identical pmfs).
Natural logarithms throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, UsageError
from .model import Representation

Array = np.ndarray

DEFAULT_SMOOTHING = 1e-8


@dataclass
class RepresentationPmf:
    mass: Array
    source: Representation | None = None


@dataclass
class SimilarityReport:
    per_pair: dict  # (m, n) 1-based, m < n -> mean relative divergence
    overall: float
    sample_count: int


def _mass(p) -> Array:
    if isinstance(p, RepresentationPmf):
        return p.mass
    return np.asarray(p, dtype=float)


def to_pmf(rep, smoothing: float = DEFAULT_SMOOTHING) -> RepresentationPmf:
    """Normalize a non-negative vector into a strictly positive pmf."""
    source = rep if isinstance(rep, Representation) else None
    values = rep.values if isinstance(rep, Representation) else np.asarray(rep, dtype=float)
    shifted = values + smoothing
    total = shifted.sum()
    if total <= 0.0:
        # All-zero representation with zero smoothing: fall back to uniform.
        mass = np.full(values.shape, 1.0 / values.size)
    else:
        mass = shifted / total
    return RepresentationPmf(mass=mass, source=source)


def kl(p, q) -> float:
    """Kullback-Leibler divergence sum(p * log(p/q)), in nats."""
    pm, qm = _mass(p), _mass(q)
    if pm.shape != qm.shape:
        raise UsageError(f"pmf dimensions differ: {pm.shape} vs {qm.shape}")
    return float(np.sum(pm * (np.log(pm) - np.log(qm))))


def entropy(p) -> float:
    pm = _mass(p)
    return float(-np.sum(pm * np.log(pm)))


def relative_divergence(p, q) -> float:
    """Symmetric KL normalized by twice the total entropy of the pair."""
    pm, qm = _mass(p), _mass(q)
    total_entropy = entropy(pm) + entropy(qm)
    if total_entropy <= 0.0:
        raise NumericError("zero total entropy; cannot normalize divergence")
    return (kl(pm, qm) + kl(qm, pm)) / (2.0 * total_entropy)


def dataset_similarity(model, dataset, mode: str = "eval",
                       smoothing: float = DEFAULT_SMOOTHING) -> SimilarityReport:
    """Similarity report over every sample of the dataset.

    Exactly M(M-1)/2 pair entries; ``overall`` is the negative mean of the
    per-sample relative divergences across all pairs.
    """
    m_count = dataset.n_modalities
    if m_count < 2:
        raise UsageError("similarity needs at least 2 modalities")
    reps = model.representations(dataset.modality_blocks, train=(mode == "train"))
    n = reps[0].shape[0]
    pmfs = []
    log_pmfs = []
    entropies = []
    for v in reps:
        shifted = v + smoothing
        mass = shifted / shifted.sum(axis=1, keepdims=True)
        log_mass = np.log(mass)
        pmfs.append(mass)
        log_pmfs.append(log_mass)
        entropies.append(-(mass * log_mass).sum(axis=1))
    per_pair = {}
    total = 0.0
    for m in range(m_count):
        for k in range(m + 1, m_count):
            kl_mk = (pmfs[m] * (log_pmfs[m] - log_pmfs[k])).sum(axis=1)
            kl_km = (pmfs[k] * (log_pmfs[k] - log_pmfs[m])).sum(axis=1)
            rel = (kl_mk + kl_km) / (2.0 * (entropies[m] + entropies[k]))
            per_pair[(m + 1, k + 1)] = float(rel.mean())
            total += float(rel.sum())
    n_pairs = m_count * (m_count - 1) // 2
    overall = -total / (n_pairs * n)
    return SimilarityReport(per_pair=per_pair, overall=overall, sample_count=n)


def pair_column_names(m_count: int):
    """Per-pair CSV column names, lexicographic pair order."""
    return [f"d_{m}_{n}" for m in range(1, m_count + 1) for n in range(m + 1, m_count + 1)]


def csv_header(m_count: int):
    return ["step", "overall"] + pair_column_names(m_count)


def csv_row(step: int, report: SimilarityReport):
    pairs = sorted(report.per_pair)
    return [step, report.overall] + [report.per_pair[p] for p in pairs]
