"""Timestamp-ordered training with per-timestamp Adam steps, early stopping
on validation MRR, and checkpointing of the best state."""

import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, adam_step, clip_grad_norm, zero_grads
from .checkpoint import load_checkpoint, save_checkpoint
from .data import DataError
from .encoders import ModelState
from .evaluation import evaluate, truth_index
from .history import HistoryIndex
from .matcher import forward_timestamp, loss as ce_loss

METRIC_COLUMNS = ("epoch", "split", "mrr", "h1", "h3", "h10", "loss", "seconds")


class NumericError(RuntimeError):
    """Non-finite loss; carries the epoch and timestamp where it appeared."""


@dataclass
class TrainResult:
    state: ModelState
    metrics: list  # row dicts with METRIC_COLUMNS keys
    best_epoch: int
    best_val_mrr: float
    stopped_early: bool = False
    history_index: object = field(default=None, repr=False)


def write_metrics_csv(rows, path):
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({col: row.get(col, "") for col in METRIC_COLUMNS})
    os.replace(tmp, path)


def _fmt(x):
    return f"{x:.6f}" if isinstance(x, float) else x


def train(dataset, config, run_dir=None, log=None, eval_split="valid"):
    """Train on the chronologically ordered training timestamps.

    Per epoch and timestamp: build the history structures, encode, score all
    queries at that timestamp, take one optimizer step on the summed
    cross-entropy. Early stopping tracks validation MRR with the configured
    patience; the best parameters are restored before returning.
    """
    config.validate()
    if not dataset.augmented or dataset.snapshots is None:
        raise DataError("train requires an augmented dataset with snapshots built")
    train_quads = dataset.split("train")
    if train_quads.shape[0] == 0:
        raise DataError("training split is empty")

    init_rng = np.random.default_rng([config.seed, 0])
    dropout_rng = np.random.default_rng([config.seed, 1])
    state = ModelState(config, dataset.num_entities, dataset.num_base_relations, init_rng)
    index = HistoryIndex(dataset)
    truth = truth_index(dataset)
    timestamps = np.unique(train_quads[:, 3])

    rows = []
    best_epoch, best_mrr, best_values = 0, -1.0, None
    patience_left = config.patience
    stopped_early = False

    for epoch in range(1, config.epochs + 1):
        epoch_start = time.perf_counter()
        total_loss, total_queries = 0.0, 0
        for t in timestamps:
            batch = train_quads[train_quads[:, 3] == t]
            tape = Tape(rng=dropout_rng)
            logits, targets = forward_timestamp(
                tape, state, dataset, index, int(t), batch, train=True
            )
            loss_node = ce_loss(tape, logits, targets)
            loss_value = float(tape.value(loss_node))
            if not np.isfinite(loss_value):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, timestamp {int(t)}"
                )
            params = state.parameters()
            zero_grads(params)
            tape.backward(loss_node)
            clip_grad_norm(params, config.grad_clip)
            adam_step(params, lr=config.lr)
            total_loss += loss_value
            total_queries += batch.shape[0]
        train_seconds = time.perf_counter() - epoch_start
        mean_loss = total_loss / total_queries
        rows.append(
            {"epoch": epoch, "split": "train", "loss": _fmt(mean_loss),
             "seconds": _fmt(train_seconds)}
        )

        eval_start = time.perf_counter()
        report = evaluate(dataset, state, eval_split, "time-aware", index, truth)
        eval_seconds = time.perf_counter() - eval_start
        rows.append(
            {"epoch": epoch, "split": eval_split, "mrr": _fmt(report.mrr),
             "h1": _fmt(report.hits1), "h3": _fmt(report.hits3),
             "h10": _fmt(report.hits10), "seconds": _fmt(eval_seconds)}
        )
        if log:
            log(
                f"epoch {epoch}: loss {mean_loss:.4f}, "
                f"{eval_split} MRR {report.mrr:.4f} ({train_seconds:.1f}s)"
            )

        if report.mrr > best_mrr:
            best_mrr, best_epoch = report.mrr, epoch
            best_values = state.snapshot_values()
            patience_left = config.patience
        else:
            patience_left -= 1
            if patience_left <= 0:
                stopped_early = True
                break

    if best_values is not None:
        state.load_values(best_values)

    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
        write_metrics_csv(rows, os.path.join(run_dir, "metrics.csv"))
        save_checkpoint(
            os.path.join(run_dir, "best.ckpt"), state, config.seed, best_epoch, best_mrr
        )
    return TrainResult(
        state=state,
        metrics=rows,
        best_epoch=best_epoch,
        best_val_mrr=best_mrr,
        stopped_early=stopped_early,
        history_index=index,
    )


def load_model(path, config, dataset):
    """Rebuild a ModelState from a checkpoint written under the same config."""
    values, meta = load_checkpoint(
        path, config, dataset.num_entities, dataset.num_base_relations
    )
    state = ModelState(
        config,
        dataset.num_entities,
        dataset.num_base_relations,
        np.random.default_rng([config.seed, 0]),
    )
    state.load_values(values)
    return state, meta
