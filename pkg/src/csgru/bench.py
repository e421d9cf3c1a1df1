"""Experiment runner, ablation grid and result files."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data
from .cells import ModSet
from .checkpoint import save_checkpoint
from .config import ExperimentConfig
from .errors import TrainingDiverged
from .metrics import relative_reduction, spiking_activity_rate
from .training import METRIC_COLUMNS, TrainConfig, evaluate, train

log = logging.getLogger(__name__)

BASELINES = ("gru", "cuba_lif", "spikgru")
ABLATION_COLUMNS = ("model", "mods", "test_acc", "spikes_per_neuron_per_step", "relative_reduction", "status", "config_digest")


@dataclass
class MetricsRecord:
    label: str
    config_digest: str
    rows: list = field(default_factory=list)
    final_test_acc: float = float("nan")
    spikes_per_neuron_per_step: float = float("nan")
    relative_reduction: float = float("nan")
    status: str = "ok"

    def digest(self) -> str:
        rows = [{k: v for k, v in r.items() if k != "wall_seconds"} for r in self.rows]
        body = json.dumps(
            [self.label, self.config_digest, rows, self.final_test_acc, self.spikes_per_neuron_per_step, self.status],
            sort_keys=True,
        )
        return hashlib.sha256(body.encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# tasks

def load_task(config: ExperimentConfig):
    """Returns ``((x_train, y_train), (x_test, y_test), n_classes)`` after the data pipeline."""
    task = config.task
    if task.kind in ("pattern3", "moving-bar"):
        # disjoint sample streams for train and test
        x_tr, y_tr = data.synth_task(task.kind, task.n_train, task.T, task.grid, task.noise_rate, task.seed)
        x_te, y_te = data.synth_task(task.kind, task.n_test, task.T, task.grid, task.noise_rate, task.seed + 1_000_003)
        n_classes = len(data.templates(task.kind, task.grid))
    else:
        imgs, labels = data.load_idx_images(task.images, task.labels, limit=task.n_train)
        if task.test_images:
            t_imgs, t_labels = data.load_idx_images(task.test_images, task.test_labels, limit=task.n_test)
        else:
            t_imgs, t_labels = data.load_idx_images(task.images, task.labels, limit=task.n_test, offset=task.n_train)
        x_tr = data.rate_encode_batch(imgs, task.T, task.seed)
        x_te = data.rate_encode_batch(t_imgs, task.T, task.seed, first_sample=len(imgs))
        y_tr, y_te = labels, t_labels
        n_classes = 10
    x_tr = data.reshape_pipeline(x_tr, config.pipeline)
    x_te = data.reshape_pipeline(x_te, config.pipeline)
    return (x_tr, y_tr), (x_te, y_te), n_classes


# --------------------------------------------------------------------------
# result files

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in METRIC_COLUMNS])


def write_ablation_csv(path, records):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(ABLATION_COLUMNS)
        for rec, mods in records:
            w.writerow([
                rec.label, "-".join(map(str, mods)), _fmt(rec.final_test_acc),
                _fmt(rec.spikes_per_neuron_per_step), _fmt(rec.relative_reduction), rec.status, rec.config_digest,
            ])


# --------------------------------------------------------------------------
# runs

def run_experiment(config: ExperimentConfig, out_dir=None, task=None, return_network=False):
    """Train and evaluate one configuration.

    With ``out_dir`` set, writes ``metrics.csv``, ``config.json`` and
    ``checkpoint.zip`` there. Divergence is recorded in the returned
    record's ``status`` rather than raised. ``task`` may carry a
    pre-loaded ``load_task`` result.
    """
    config.validate()
    train_set, test_set, n_classes = task or load_task(config)
    network = config.build_network(n_classes).init_params(config.seed)
    record = MetricsRecord(config.label(), config.digest())
    tcfg = TrainConfig(
        epochs=config.epochs, batch_size=config.batch_size, lr=config.lr, seed=config.seed,
        clip_norm=config.clip_norm, record_wall_time=config.record_wall_time,
    )
    started = time.perf_counter()
    try:
        train(network, train_set, test_set, tcfg, on_epoch=record.rows.append)
    except TrainingDiverged as e:
        record.status = f"diverged: {e}"
    logits, acc, rate = evaluate(network, *test_set)
    record.final_test_acc = acc
    record.spikes_per_neuron_per_step = rate if network.n_spiking() else float("nan")
    elapsed = time.perf_counter() - started
    log.info("%s: test acc %.4f, activity %.4f, %.1fs", record.label, acc, rate, elapsed)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out / "metrics.csv", record.rows)
        (out / "config.json").write_text(config.to_json())
        save_checkpoint(out / "checkpoint.zip", network, config)
        if config.record_wall_time:
            (out / "timing.json").write_text(json.dumps({"wall_seconds": elapsed}))
    if return_network:
        return record, network
    return record


def ablation_configs(base: ExperimentConfig, subsets):
    """Baselines then one variant per mod subset, all sharing ``base.seed``."""
    configs = []
    for cell in BASELINES:
        configs.append((base.replace(cell=cell, mods=ModSet()), ()))
    for subset in subsets:
        mods = ModSet.from_ids(subset)
        configs.append((base.replace(cell="variant", mods=mods), mods.ids))
    return configs


def ablation_grid(base: ExperimentConfig, subsets, out_dir=None):
    """Baselines plus one run per mod subset; one record per row, failures included.

    Relative reduction of activity is measured against the SpikGRU row.
    """
    results = []
    task_cache = {}
    for config, mods in ablation_configs(base, subsets):
        try:
            key = (config.task, config.pipeline)
            if key not in task_cache:
                task_cache[key] = load_task(config)
            sub = None if out_dir is None else Path(out_dir) / _slug(config.label())
            record = run_experiment(config, sub, task=task_cache[key])
        except Exception as e:  # a broken row must not sink the grid
            log.exception("run %s failed", config.label())
            record = MetricsRecord(config.label(), config.digest(), status=f"failed: {type(e).__name__}: {e}")
        results.append((record, mods))
    baseline = next(r for r, _ in results if r.label == "SpikGRU")
    for rec, _ in results:
        if rec.label != "SpikGRU":
            rec.relative_reduction = relative_reduction(rec.spikes_per_neuron_per_step, baseline.spikes_per_neuron_per_step)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_ablation_csv(Path(out_dir) / "ablation.csv", results)
    return results


def _slug(label):
    return label.lower().replace("-", "_")


def activity_table(rows) -> str:
    """Plain-text spikes/neuron/timestep comparison, first row as the reference."""
    lines = [f"{'Model':<12} {'rate [spikes/neuron/step]':>26} {'relative reduction':>20}"]
    ref = rows[0][1]
    for n, (name, rate) in enumerate(rows):
        red = "--" if n == 0 else f"{relative_reduction(rate, ref):.2f}%"
        lines.append(f"{name:<12} {rate:>26.4f} {red:>20}")
    return "\n".join(lines)


__all__ = [
    "MetricsRecord", "ablation_configs", "ablation_grid", "activity_table", "load_task", "run_experiment",
    "spiking_activity_rate", "write_ablation_csv", "write_metrics_csv",
]
