"""Config-driven experiment harness.

A flat ``key = value`` config (dotted sections) declares a dataset, a grid
of variants x label budgets x seeds, and training overrides. Every grid
cell trains, evaluates transductively on the unlabeled pool, and persists a
trace CSV, a similarity CSV, a JSON summary, and a checkpoint; the run
directory gets an aggregate table, a combined similarity curve file, the
canonical dataset dump, and a manifest with content hashes.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np

from . import similarity as sim_mod
from .baselines import TriTrainConfig, tri_predict, tri_train
from .data import (MultimodalDataset, SyntheticSpec, generate_synthetic,
                   load_bank_marketing, load_dataset, load_multimodal_csv,
                   micro_macro_f1, save_dataset, split_labels)
from .errors import ConfigError
from .model import ConsensusModel, ModelConfig, load_checkpoint, save_checkpoint
from .training import (TrainingConfig, TrainingFailure, evaluate_f1, train,
                       VARIANTS)

GRID_VARIANTS = VARIANTS + ("tri-training",)

OUTPUT_ROOT_ENV = "TCN_OUTPUT_ROOT"


@dataclass
class DatasetSpec:
    kind: str = "synthetic"
    path: str = ""
    balance_seed: int = 0
    drop_duration: bool = False
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    label_budgets: tuple = (20,)
    variants: tuple = ("TCN",)
    seeds: tuple = (0,)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    tri: TriTrainConfig = field(default_factory=TriTrainConfig)
    output_dir: str = "runs/experiment"
    parallelism: int = 0  # 0 -> cpu count
    dump_representations: bool = False

    def validate(self) -> None:
        if not self.variants or not self.seeds or not self.label_budgets:
            raise ConfigError("variants, seeds, and label_budgets must be non-empty")
        for v in self.variants:
            if v not in GRID_VARIANTS:
                raise ConfigError(f"unknown variant {v!r}; expected one of {GRID_VARIANTS}")
        if self.dataset.kind not in ("synthetic", "bank_marketing", "csv"):
            raise ConfigError(f"unknown dataset kind {self.dataset.kind!r}")
        if self.dataset.kind != "synthetic" and not self.dataset.path:
            raise ConfigError(f"dataset.kind={self.dataset.kind} requires dataset.path")


@dataclass
class RunResult:
    variant: str
    seed: int
    label_budget: int
    status: str  # "ok" or "failed"
    micro_f1: float | None
    macro_f1: float | None
    wall_time_s: float
    restart_count: int
    stop_reason: str
    steps: int
    cell_dir: str
    error: str = ""


# ---------------------------------------------------------------------------
# Config parsing: flat "section.key = value" lines, '#' comments.
# ---------------------------------------------------------------------------

def _parse_bool(v: str) -> bool:
    if v.lower() in ("true", "yes", "1", "on"):
        return True
    if v.lower() in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _parse_ints(v: str):
    return tuple(int(x.strip()) for x in v.split(",") if x.strip())


def _parse_strs(v: str):
    return tuple(x.strip() for x in v.split(",") if x.strip())


_CONFIG_KEYS = {
    "dataset.kind": ("dataset", "kind", str),
    "dataset.path": ("dataset", "path", str),
    "dataset.balance_seed": ("dataset", "balance_seed", int),
    "dataset.drop_duration": ("dataset", "drop_duration", _parse_bool),
    "dataset.modalities": ("synthetic", "modalities", int),
    "dataset.dims": ("synthetic", "dims", _parse_ints),
    "dataset.n_samples": ("synthetic", "n_samples", int),
    "dataset.class_separation": ("synthetic", "class_separation", float),
    "dataset.noise": ("synthetic", "noise", float),
    "dataset.seed": ("synthetic", "seed", int),
    "experiment.label_budgets": ("root", "label_budgets", _parse_ints),
    "experiment.variants": ("root", "variants", _parse_strs),
    "experiment.seeds": ("root", "seeds", _parse_ints),
    "experiment.output_dir": ("root", "output_dir", str),
    "experiment.parallelism": ("root", "parallelism", int),
    "experiment.dump_representations": ("root", "dump_representations", _parse_bool),
    "training.batch_size": ("training", "batch_size", int),
    "training.learning_rate": ("training", "learning_rate", float),
    "training.max_steps": ("training", "max_steps", int),
    "training.pretrain_max_steps": ("training", "pretrain_max_steps", int),
    "training.convergence_delta": ("training", "convergence_delta", float),
    "training.restart_threshold": ("training", "restart_threshold", float),
    "training.max_restarts": ("training", "max_restarts", int),
    "training.noise_scale": ("training", "noise_scale", float),
    "training.eval_f1_each_step": ("training", "eval_f1_each_step", _parse_bool),
    "model.rep_dim": ("model", "rep_dim", int),
    "model.interpreter_hidden": ("model", "interpreter_hidden", _parse_ints),
    "model.discriminator_hidden": ("model", "discriminator_hidden", _parse_ints),
    "model.classifier_hidden": ("model", "classifier_hidden", _parse_ints),
    "model.reconstructor_hidden": ("model", "reconstructor_hidden", _parse_ints),
    "model.noise_reparam": ("model", "noise_reparam", _parse_bool),
    "model.noise_var_floor": ("model", "noise_var_floor", float),
    "tri.hidden_units": ("tri", "hidden_units", int),
    "tri.epochs": ("tri", "epochs", int),
    "tri.learning_rate": ("tri", "learning_rate", float),
    "tri.batch_size": ("tri", "batch_size", int),
    "tri.max_rounds": ("tri", "max_rounds", int),
}


def parse_config(text: str) -> ExperimentConfig:
    config = ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        section, attr, cast = _CONFIG_KEYS[key]
        try:
            parsed = cast(value)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
        if section == "root":
            setattr(config, attr, parsed)
        elif section == "dataset":
            setattr(config.dataset, attr, parsed)
        elif section == "synthetic":
            setattr(config.dataset.synthetic, attr, parsed)
        else:
            setattr(getattr(config, section), attr, parsed)
    config.validate()
    return config


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def config_echo(config: ExperimentConfig) -> str:
    """Stable re-serialization of the effective config, for audit."""
    payload = {
        "dataset": {**asdict(config.dataset)},
        "label_budgets": list(config.label_budgets),
        "variants": list(config.variants),
        "seeds": list(config.seeds),
        "training": asdict(config.training),
        "model": asdict(config.model),
        "tri": asdict(config.tri),
        "output_dir": config.output_dir,
        "parallelism": config.parallelism,
        "dump_representations": config.dump_representations,
    }
    return json.dumps(payload, indent=2, sort_keys=True, default=list)


# ---------------------------------------------------------------------------
# Running the grid
# ---------------------------------------------------------------------------

def build_dataset(config: ExperimentConfig) -> MultimodalDataset:
    ds = config.dataset
    if ds.kind == "synthetic":
        return generate_synthetic(ds.synthetic)
    if ds.kind == "bank_marketing":
        return load_bank_marketing(ds.path, balance_seed=ds.balance_seed,
                                   drop_duration=ds.drop_duration)
    return load_multimodal_csv(ds.path)


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def write_trace_csv(trace, path, m_count: int) -> None:
    pair_cols = sim_mod.pair_column_names(m_count)
    lines = [",".join(["step", "phase", "attempt", "loss_c", "loss_d", "loss_r",
                       "similarity", "micro_f1", "macro_f1"] + pair_cols)]
    for rec in trace.records:
        pairs = [_fmt(rec.per_pair[p]) for p in sorted(rec.per_pair)]
        lines.append(",".join([
            str(rec.step), rec.phase, str(rec.attempt), _fmt(rec.loss_c),
            _fmt(rec.loss_d), _fmt(rec.loss_r), _fmt(rec.similarity),
            _fmt(rec.micro_f1), _fmt(rec.macro_f1)] + pairs))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_similarity_csv(trace, path, m_count: int) -> None:
    lines = [",".join(sim_mod.csv_header(m_count))]
    for rec in trace.records:
        pairs = [_fmt(rec.per_pair[p]) for p in sorted(rec.per_pair)]
        lines.append(",".join([str(rec.step), _fmt(rec.similarity)] + pairs))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def dump_representations(model: ConsensusModel, dataset: MultimodalDataset, out_path) -> None:
    """Columnar eval-mode representation dump: one row per (sample, modality)."""
    reps = model.representations(dataset.modality_blocks, train=False)
    header = ["sample_id", "modality"] + [f"v_{j + 1}" for j in range(model.rep_dim)]
    lines = [",".join(header)]
    for i in range(dataset.n_samples):
        for m in range(dataset.n_modalities):
            row = [str(i), str(m + 1)] + [repr(float(x)) for x in reps[m][i]]
            lines.append(",".join(row))
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_cell(config: ExperimentConfig, dataset: MultimodalDataset,
             variant: str, budget: int, seed: int) -> RunResult:
    cell_name = f"{variant}_b{budget}_s{seed}"
    cell_dir = Path(config.output_dir) / "cells" / cell_name
    cell_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    split = split_labels(dataset, budget, seed=seed)
    try:
        if variant == "tri-training":
            tri_cfg = replace(config.tri, seed=seed)
            ensemble = tri_train(split, tri_cfg)
            unlabeled = split.unlabeled_indices()
            preds = tri_predict(ensemble, split.blocks_at(unlabeled))
            micro, macro = micro_macro_f1(preds, split.unlabeled_ground_truth(unlabeled))
            summary_extra = {"round_log": ensemble.round_log,
                             "view_assignment": ensemble.view_assignment}
            trace = None
            restart_count, stop_reason, steps = 0, "converged", len(ensemble.round_log)
        else:
            train_cfg = replace(config.training, variant=variant, seed=seed)
            model = ConsensusModel(split.modality_dims, config.model,
                                   with_reconstructors=(variant == "TCN-AE"),
                                   seed=seed)
            result = train(model, split, train_cfg)
            trace = result.trace
            micro, macro = evaluate_f1(result.model, split, svm=result.svm)
            save_checkpoint(result.model, cell_dir / "checkpoint.npz")
            if result.svm is not None:
                (cell_dir / "svm.json").write_text(json.dumps({
                    "weights": list(result.svm.weights),
                    "bias": result.svm.bias,
                    "regularization": result.svm.regularization,
                }), encoding="utf-8")
            if config.dump_representations:
                dump_representations(result.model, split, cell_dir / "representations.csv")
            summary_extra = {}
            restart_count = trace.restart_count
            stop_reason = trace.stop_reason
            steps = len(trace.records)
        status, error = "ok", ""
    except TrainingFailure as exc:
        trace = exc.trace
        micro = macro = None
        summary_extra = {}
        restart_count = exc.trace.restart_count
        stop_reason = exc.trace.stop_reason
        steps = len(exc.trace.records)
        status, error = "failed", str(exc)
    wall = time.perf_counter() - started
    if trace is not None:
        write_trace_csv(trace, cell_dir / "trace.csv", split.n_modalities)
        write_similarity_csv(trace, cell_dir / "similarity.csv", split.n_modalities)
    run = RunResult(variant=variant, seed=seed, label_budget=budget, status=status,
                    micro_f1=micro, macro_f1=macro, wall_time_s=wall,
                    restart_count=restart_count, stop_reason=stop_reason,
                    steps=steps, cell_dir=str(cell_dir), error=error)
    summary = {**asdict(run), **summary_extra}
    (cell_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")
    return run


def _cell_worker(args):
    return run_cell(*args)


def resolve_output_dir(config: ExperimentConfig) -> None:
    root = os.environ.get(OUTPUT_ROOT_ENV, "")
    if root and not os.path.isabs(config.output_dir):
        config.output_dir = str(Path(root) / config.output_dir)


def run_experiment(config: ExperimentConfig):
    """Execute the full grid; returns (results, aggregate rows)."""
    config.validate()
    resolve_output_dir(config)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_echo.json").write_text(config_echo(config), encoding="utf-8")
    dataset = build_dataset(config)
    save_dataset(dataset, out / "dataset.npz")

    cells = [(config, dataset, variant, budget, seed)
             for variant in config.variants
             for budget in config.label_budgets
             for seed in config.seeds]
    workers = config.parallelism or os.cpu_count() or 1
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell_worker, cells))
    else:
        results = [run_cell(*cell) for cell in cells]

    aggregate = aggregate_results(results)
    write_aggregate_csv(aggregate, out / "aggregate.csv")
    emit_similarity_curves(results, out / "similarity_curves.csv")
    write_manifest(out)
    return results, aggregate


def aggregate_results(results):
    """Median/IQR/mean of final F1 per (variant, budget), sorted."""
    groups = {}
    for r in results:
        groups.setdefault((r.variant, r.label_budget), []).append(r)
    rows = []
    for (variant, budget), runs in sorted(groups.items()):
        ok = [r for r in runs if r.status == "ok"]
        row = {"variant": variant, "budget": budget,
               "n_runs": len(runs), "n_ok": len(ok)}
        for key in ("micro_f1", "macro_f1"):
            values = np.array([getattr(r, key) for r in ok], dtype=float)
            if len(values):
                q25, q50, q75 = np.percentile(values, [25, 50, 75])
                row[f"{key}_median"] = q50
                row[f"{key}_iqr"] = q75 - q25
                row[f"{key}_mean"] = values.mean()
            else:
                row[f"{key}_median"] = row[f"{key}_iqr"] = row[f"{key}_mean"] = None
        rows.append(row)
    return rows


AGGREGATE_COLUMNS = ("variant", "budget", "n_runs", "n_ok",
                     "micro_f1_median", "micro_f1_iqr", "micro_f1_mean",
                     "macro_f1_median", "macro_f1_iqr", "macro_f1_mean")


def write_aggregate_csv(rows, path) -> None:
    lines = [",".join(AGGREGATE_COLUMNS)]
    for row in rows:
        cells = []
        for col in AGGREGATE_COLUMNS:
            v = row[col]
            if v is None:
                cells.append("")
            elif isinstance(v, (int, np.integer)) or col in ("variant",):
                cells.append(str(v))
            else:
                cells.append(f"{v:.6f}")
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def format_aggregate_table(rows) -> str:
    header = f"{'variant':<14}{'budget':>7}{'runs':>6}{'micro med':>11}{'macro med':>11}{'macro iqr':>11}"
    out = [header, "-" * len(header)]
    for row in rows:
        med_mi = row["micro_f1_median"]
        med_ma = row["macro_f1_median"]
        iqr_ma = row["macro_f1_iqr"]
        out.append(
            f"{row['variant']:<14}{row['budget']:>7}{row['n_ok']:>3}/{row['n_runs']:<2}"
            f"{'' if med_mi is None else f'{med_mi:10.4f}'}"
            f"{'' if med_ma is None else f'{med_ma:11.4f}'}"
            f"{'' if iqr_ma is None else f'{iqr_ma:11.4f}'}")
    return "\n".join(out)


def emit_similarity_curves(results, path) -> None:
    """Long-format per-step curves across every run that produced a trace."""
    lines = ["variant,seed,budget,step,phase,similarity,loss_c,loss_d,loss_r"]
    for r in sorted(results, key=lambda r: (r.variant, r.label_budget, r.seed)):
        trace_path = Path(r.cell_dir) / "trace.csv"
        if not trace_path.exists():
            continue
        rows = trace_path.read_text(encoding="utf-8").strip().splitlines()
        header = rows[0].split(",")
        col = {name: i for i, name in enumerate(header)}
        for line in rows[1:]:
            parts = line.split(",")
            lines.append(",".join([
                r.variant, str(r.seed), str(r.label_budget),
                parts[col["step"]], parts[col["phase"]],
                parts[col["similarity"]], parts[col["loss_c"]],
                parts[col["loss_d"]], parts[col["loss_r"]]]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_manifest(output_dir) -> None:
    """List every artifact under the run directory with a sha256."""
    out = Path(output_dir)
    entries = []
    for p in sorted(out.rglob("*")):
        if p.is_dir() or p.name == "manifest.json":
            continue
        digest = hashlib.sha256(p.read_bytes()).hexdigest()
        entries.append({"path": str(p.relative_to(out)), "sha256": digest,
                        "bytes": p.stat().st_size})
    (out / "manifest.json").write_text(
        json.dumps({"files": entries}, indent=2), encoding="utf-8")


def report(output_dir):
    """Rebuild the aggregate from persisted summaries; returns the rows."""
    out = Path(output_dir)
    results = []
    for summary_path in sorted(out.glob("cells/*/summary.json")):
        payload = json.loads(summary_path.read_text(encoding="utf-8"))
        results.append(RunResult(**{k: payload[k] for k in (
            "variant", "seed", "label_budget", "status", "micro_f1", "macro_f1",
            "wall_time_s", "restart_count", "stop_reason", "steps", "cell_dir",
            "error")}))
    if not results:
        raise ConfigError(f"no run summaries under {out}")
    aggregate = aggregate_results(results)
    write_aggregate_csv(aggregate, out / "aggregate.csv")
    emit_similarity_curves(results, out / "similarity_curves.csv")
    return results, aggregate


def dump_reps_from_files(checkpoint_path, dataset_path, out_path) -> None:
    model = load_checkpoint(checkpoint_path)
    dataset = load_dataset(dataset_path)
    dump_representations(model, dataset, out_path)
