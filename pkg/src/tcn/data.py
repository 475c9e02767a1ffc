"""Dataset schema, ingestion, synthetic generation, splits, and F1 scoring.

A ``MultimodalDataset`` holds one feature matrix per modality plus an
optional label vector. Rows flagged by ``labeled_mask`` form the labeled
pool; the remaining rows may carry hidden ground truth that is only
reachable through a counted accessor, so tests can assert that training
never touched it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import EncodingError, SchemaError, UsageError

Array = np.ndarray


@dataclass
class MultimodalDataset:
    modality_blocks: list
    labels: Array | None
    labeled_mask: Array
    modality_names: list
    feature_names: list
    hidden_label_reads: int = field(default=0, compare=False)

    def __post_init__(self):
        n = self.n_samples
        for b in self.modality_blocks:
            if b.shape[0] != n:
                raise SchemaError("modality blocks disagree on sample count")
        if self.labels is not None and len(self.labels) != n:
            raise SchemaError("label vector length does not match sample count")
        if len(self.labeled_mask) != n:
            raise SchemaError("labeled mask length does not match sample count")
        if self.labels is None and self.labeled_mask.any():
            raise SchemaError("labeled rows require labels")

    @property
    def n_samples(self) -> int:
        return self.modality_blocks[0].shape[0]

    @property
    def n_modalities(self) -> int:
        return len(self.modality_blocks)

    @property
    def modality_dims(self):
        return [b.shape[1] for b in self.modality_blocks]

    @property
    def n_labeled(self) -> int:
        return int(self.labeled_mask.sum())

    def labeled_indices(self) -> Array:
        return np.flatnonzero(self.labeled_mask)

    def unlabeled_indices(self) -> Array:
        return np.flatnonzero(~self.labeled_mask)

    def blocks_at(self, indices):
        return [b[indices] for b in self.modality_blocks]

    def labels_of_labeled(self, indices=None) -> Array:
        """Labels for labeled rows only; asking for an unlabeled row is an error."""
        if self.labels is None:
            raise UsageError("dataset has no labels")
        if indices is None:
            indices = self.labeled_indices()
        indices = np.asarray(indices)
        if not self.labeled_mask[indices].all():
            raise UsageError("requested labels of unlabeled rows in a training path")
        return self.labels[indices]

    def unlabeled_ground_truth(self, indices=None) -> Array:
        """Hidden labels of the unlabeled pool, for evaluation only (counted)."""
        if self.labels is None:
            raise UsageError("dataset carries no ground truth for the unlabeled pool")
        if indices is None:
            indices = self.unlabeled_indices()
        self.hidden_label_reads += 1
        return self.labels[np.asarray(indices)]


# ---------------------------------------------------------------------------
# Bank marketing ingestion
#
# The encoding table below is the source of truth for how the 20 raw input
# columns become 44 features split 10 / 22 / 12 across three modalities.
# Rules:
#   numeric          -> one z-scored column
#   ordinal          -> level rank (unknown -> midpoint), z-scored
#   indicator        -> 1.0 where the value equals the given level
#   onehot           -> one 0/1 column per listed level; any other value is
#                       an encoding error
# The twelve job levels are split across modalities (management is part of
# the basic block); together they still one-hot a full partition. Two raw
# columns are intentionally absent: `default` (near-constant) and
# `nr.employed` (nearly collinear with emp.var.rate / euribor3m); dropping
# them is what makes the modality dims land on 10/22/12.
# ---------------------------------------------------------------------------

EDUCATION_LEVELS = [
    "illiterate", "basic.4y", "basic.6y", "basic.9y",
    "high.school", "professional.course", "university.degree",
]

JOB_LEVELS_EMPLOYMENT = [
    "admin.", "blue-collar", "entrepreneur", "housemaid", "retired",
    "self-employed", "services", "student", "technician", "unemployed",
    "unknown",
]

# Full level sets used to validate one-hot columns; a column's rule may
# encode only a subset of these (job=management is part of the basic block).
BANK_CATEGORY_LEVELS = {
    "job": JOB_LEVELS_EMPLOYMENT + ["management"],
    "poutcome": ["failure", "nonexistent", "success"],
    "day_of_week": ["mon", "tue", "wed", "thu", "fri"],
    "month": ["mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec"],
}

BANK_ENCODING_TABLE = {
    "basic": [
        ("age", "numeric", None),
        ("marital", "indicator", "married"),
        ("education", "ordinal", EDUCATION_LEVELS),
        ("housing", "indicator", "yes"),
        ("loan", "indicator", "yes"),
        ("contact", "indicator", "cellular"),
        ("duration", "numeric", None),
        ("pdays", "numeric", None),
        ("previous", "numeric", None),
        ("job", "indicator", "management"),
    ],
    "statistical": [
        ("campaign", "numeric", None),
        ("poutcome", "onehot", ["failure", "nonexistent", "success"]),
        ("emp.var.rate", "numeric", None),
        ("cons.conf.idx", "numeric", None),
        ("euribor3m", "numeric", None),
        ("day_of_week", "onehot", ["mon", "tue", "wed", "thu", "fri"]),
        ("month", "onehot", ["mar", "apr", "may", "jun", "jul", "aug",
                             "sep", "oct", "nov", "dec"]),
    ],
    "employment": [
        ("cons.price.idx", "numeric", None),
        ("job", "onehot", JOB_LEVELS_EMPLOYMENT),
    ],
}

BANK_DROPPED_COLUMNS = ("default", "nr.employed")

_BANK_REQUIRED_COLUMNS = sorted(
    {col for rules in BANK_ENCODING_TABLE.values() for col, _, _ in rules} | {"y"}
)

BANK_NEGATIVE_SAMPLE = 5000


def _encode_column(rows, col, kind, arg, drop_duration):
    """Yield (feature_name, float column) pairs for one table rule."""
    raw = [r[col] for r in rows]
    if kind == "numeric":
        try:
            values = np.array([float(v) for v in raw])
        except ValueError as exc:
            raise SchemaError(f"column {col!r} is not numeric: {exc}") from None
        yield col, values, True
    elif kind == "ordinal":
        rank = {level: float(i) for i, level in enumerate(arg)}
        midpoint = (len(arg) - 1) / 2.0
        values = np.empty(len(raw))
        for i, v in enumerate(raw):
            if v in rank:
                values[i] = rank[v]
            elif v == "unknown":
                values[i] = midpoint
            else:
                raise EncodingError(f"column {col!r}: unknown level {v!r}")
        yield col, values, True
    elif kind == "indicator":
        yield f"{col}={arg}", np.array([1.0 if v == arg else 0.0 for v in raw]), False
    elif kind == "onehot":
        allowed = set(BANK_CATEGORY_LEVELS.get(col, arg))
        for v in raw:
            if v not in allowed:
                raise EncodingError(f"column {col!r}: unknown level {v!r}")
        for level in arg:
            yield f"{col}={level}", np.array([1.0 if v == level else 0.0 for v in raw]), False
    else:  # pragma: no cover - table is static
        raise SchemaError(f"unknown encoding kind {kind!r}")


def load_bank_marketing(csv_path, partition=None, balance_seed: int = 0,
                        drop_duration: bool = False) -> MultimodalDataset:
    """Load the UCI bank-additional CSV into three modalities.

    All positive rows are kept and ``BANK_NEGATIVE_SAMPLE`` negative rows are
    drawn without replacement using ``balance_seed``; numeric columns are
    z-scored over the retained rows. ``drop_duration`` removes the call
    duration column (it leaks the outcome; kept by default for comparability).
    """
    table = partition or BANK_ENCODING_TABLE
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=";", quotechar='"')
        header = reader.fieldnames or []
        missing = [c for c in _BANK_REQUIRED_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"missing columns: {missing}")
        rows = list(reader)
    if not rows:
        raise SchemaError("empty csv")

    y = np.array([1 if r["y"] == "yes" else 0 for r in rows])
    pos_idx = np.flatnonzero(y == 1)
    neg_idx = np.flatnonzero(y == 0)
    if len(neg_idx) > BANK_NEGATIVE_SAMPLE:
        rng = np.random.default_rng(balance_seed)
        neg_idx = np.sort(rng.choice(neg_idx, size=BANK_NEGATIVE_SAMPLE, replace=False))
    keep = np.sort(np.concatenate([pos_idx, neg_idx]))
    rows = [rows[i] for i in keep]
    labels = y[keep]

    blocks, names, feature_names = [], [], []
    for modality, rules in table.items():
        cols, cnames = [], []
        for col, kind, arg in rules:
            if drop_duration and col == "duration":
                continue
            for fname, values, is_numeric in _encode_column(rows, col, kind, arg, drop_duration):
                if is_numeric:
                    std = values.std()
                    values = (values - values.mean()) / (std if std > 0 else 1.0)
                cols.append(values)
                cnames.append(fname)
        blocks.append(np.column_stack(cols))
        names.append(modality)
        feature_names.append(cnames)

    return MultimodalDataset(
        modality_blocks=blocks, labels=labels,
        labeled_mask=np.zeros(len(labels), dtype=bool),
        modality_names=names, feature_names=feature_names)


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    modalities: int = 3
    dims: tuple = (10, 10, 10)
    n_samples: int = 1000
    class_separation: float = 3.0
    noise: float = 1.0
    seed: int = 0
    # Optional latent shared by all modalities (dimension 0 disables it).
    # With it, the modalities agree on more than the label, which is what
    # makes consensus-only training interestingly lossy.
    shared_nuisance_dim: int = 0
    shared_nuisance_scale: float = 1.5


def generate_synthetic(spec: SyntheticSpec) -> MultimodalDataset:
    """Balanced binary data where every modality is individually informative.

    Each modality block is a pair of Gaussian clusters with means at
    +/- class_separation along a per-modality random unit direction, plus
    isotropic noise (plus, optionally, a per-modality random embedding of a
    shared nuisance latent), then shifted per feature to be non-negative.
    """
    if spec.modalities < 2:
        raise UsageError("need at least 2 modalities")
    if spec.n_samples < 10:
        raise UsageError("need at least 10 samples")
    dims = spec.dims if not np.isscalar(spec.dims) else [spec.dims] * spec.modalities
    dims = [int(d) for d in dims]
    if len(dims) != spec.modalities:
        raise UsageError(f"expected {spec.modalities} dims, got {len(dims)}")
    rng = np.random.default_rng(spec.seed)
    n = spec.n_samples
    labels = np.zeros(n, dtype=int)
    labels[: (n + 1) // 2] = 1
    labels = labels[rng.permutation(n)]
    signs = 2.0 * labels - 1.0
    nuisance = None
    if spec.shared_nuisance_dim > 0:
        nuisance = rng.standard_normal((n, spec.shared_nuisance_dim))
    blocks = []
    for d in dims:
        direction = rng.standard_normal(d)
        direction /= np.linalg.norm(direction)
        block = signs[:, None] * (spec.class_separation * direction)[None, :]
        if nuisance is not None:
            embed = rng.standard_normal((spec.shared_nuisance_dim, d))
            embed /= np.linalg.norm(embed, axis=1, keepdims=True)
            block = block + spec.shared_nuisance_scale * (nuisance @ embed)
        block = block + spec.noise * rng.standard_normal((n, d))
        block = block - block.min(axis=0)
        blocks.append(block)
    return MultimodalDataset(
        modality_blocks=blocks, labels=labels,
        labeled_mask=np.zeros(n, dtype=bool),
        modality_names=[f"synthetic{m + 1}" for m in range(spec.modalities)],
        feature_names=[[f"f{j}" for j in range(d)] for d in dims])


def split_labels(dataset: MultimodalDataset, num_labeled: int, seed: int) -> MultimodalDataset:
    """Fresh dataset copy with a stratified labeled mask of size ``num_labeled``."""
    if num_labeled < 2:
        raise UsageError("need at least 2 labeled samples")
    n = dataset.n_samples
    if num_labeled > n:
        raise UsageError(f"num_labeled {num_labeled} exceeds dataset size {n}")
    if dataset.labels is None:
        raise UsageError("cannot split an unlabeled dataset")
    labels = dataset.labels
    classes = np.unique(labels)
    if len(classes) < 2:
        raise UsageError("both classes must be present")
    rng = np.random.default_rng(seed)
    pos = np.flatnonzero(labels == classes[1])
    n_pos = int(round(num_labeled * len(pos) / n))
    n_pos = min(max(n_pos, 1), num_labeled - 1, len(pos))
    n_neg = num_labeled - n_pos
    neg = np.flatnonzero(labels == classes[0])
    chosen = np.concatenate([
        rng.choice(pos, size=n_pos, replace=False),
        rng.choice(neg, size=n_neg, replace=False),
    ])
    mask = np.zeros(n, dtype=bool)
    mask[chosen] = True
    return MultimodalDataset(
        modality_blocks=[b.copy() for b in dataset.modality_blocks],
        labels=labels.copy(), labeled_mask=mask,
        modality_names=list(dataset.modality_names),
        feature_names=[list(f) for f in dataset.feature_names])


def micro_macro_f1(predictions, ground_truth):
    """(micro_f1, macro_f1) for binary labels.

    Micro pools counts over both classes (equal to accuracy for single-label
    binary); macro is the unweighted mean of per-class F1, with 0/0 -> 0.
    """
    predictions = np.asarray(predictions)
    ground_truth = np.asarray(ground_truth)
    if predictions.size == 0:
        raise UsageError("empty input")
    if predictions.shape != ground_truth.shape:
        raise UsageError("prediction/truth length mismatch")
    tp_sum = fp_sum = fn_sum = 0
    per_class = []
    for cls in (0, 1):
        tp = int(np.sum((predictions == cls) & (ground_truth == cls)))
        fp = int(np.sum((predictions == cls) & (ground_truth != cls)))
        fn = int(np.sum((predictions != cls) & (ground_truth == cls)))
        tp_sum += tp
        fp_sum += fp
        fn_sum += fn
        denom = 2 * tp + fp + fn
        per_class.append(2 * tp / denom if denom else 0.0)
    micro_denom = 2 * tp_sum + fp_sum + fn_sum
    micro = 2 * tp_sum / micro_denom if micro_denom else 0.0
    return float(micro), float(np.mean(per_class))


# ---------------------------------------------------------------------------
# Generic multimodal CSV and canonical dumps
# ---------------------------------------------------------------------------

def load_multimodal_csv(path) -> MultimodalDataset:
    """Read a comma-separated file with ``modality:feature`` columns.

    An optional ``label`` column provides binary ground truth. Modalities
    appear in first-occurrence order.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty csv") from None
        rows = list(reader)
    if not rows:
        raise SchemaError("csv has a header but no rows")
    label_col = header.index("label") if "label" in header else None
    modalities: dict[str, list[int]] = {}
    feature_names: dict[str, list[str]] = {}
    for j, name in enumerate(header):
        if j == label_col:
            continue
        if ":" not in name:
            raise SchemaError(f"column {name!r} is not of the form modality:feature")
        modality, feature = name.split(":", 1)
        modalities.setdefault(modality, []).append(j)
        feature_names.setdefault(modality, []).append(feature)
    try:
        matrix = np.array([[float(v) for v in row] for row in rows])
    except ValueError as exc:
        raise SchemaError(f"non-numeric cell: {exc}") from None
    labels = None
    if label_col is not None:
        labels = matrix[:, label_col].astype(int)
    blocks = [matrix[:, cols] for cols in modalities.values()]
    return MultimodalDataset(
        modality_blocks=blocks, labels=labels,
        labeled_mask=np.zeros(len(rows), dtype=bool),
        modality_names=list(modalities), feature_names=list(feature_names.values()))


def save_dataset(dataset: MultimodalDataset, path) -> None:
    """Canonical reproducibility dump (npz with a schema header)."""
    import json

    meta = {
        "modality_names": dataset.modality_names,
        "feature_names": dataset.feature_names,
        "has_labels": dataset.labels is not None,
    }
    arrays = {f"block_{m}": b for m, b in enumerate(dataset.modality_blocks)}
    arrays["labeled_mask"] = dataset.labeled_mask
    if dataset.labels is not None:
        arrays["labels"] = dataset.labels
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **arrays)


def load_dataset(path) -> MultimodalDataset:
    import json

    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        blocks = [data[f"block_{m}"] for m in range(len(meta["modality_names"]))]
        labels = data["labels"] if meta["has_labels"] else None
        mask = data["labeled_mask"]
    return MultimodalDataset(
        modality_blocks=blocks, labels=labels, labeled_mask=mask,
        modality_names=meta["modality_names"], feature_names=meta["feature_names"])
