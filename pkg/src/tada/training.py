"""Mini-batch training with per-epoch validation and early stopping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .data import IrregularSeries
from .errors import EvaluationError, TrainingError
from .metrics import (accuracy, auprc, auroc, macro_auprc, macro_auroc,
                      softmax_rows)
from .model import SamplePrep, TadaModel
from .optim import Adam


@dataclass
class MetricsReport:
    auroc: float
    auprc: float
    accuracy: float

    def as_dict(self) -> dict:
        return {"auroc": self.auroc, "auprc": self.auprc, "accuracy": self.accuracy}

    def csv_line(self) -> str:
        return f"{self.auroc!r},{self.auprc!r},{self.accuracy!r}"


@dataclass
class TrainResult:
    model: TadaModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_metric: float = float("-inf")


def evaluate_preps(model: TadaModel, preps: list[SamplePrep]) -> MetricsReport:
    """Metrics over prepared samples.

    Binary sequence tasks report AUROC/AUPRC of the positive-class
    probability plus argmax accuracy.  Step and multiclass tasks report
    accuracy plus macro one-vs-rest AUROC/AUPRC over flattened predictions.
    """
    if not preps:
        raise EvaluationError("evaluate: empty evaluation set")
    rows = []
    labels = []
    for p in preps:
        logits = model.logits(p)
        rows.append(softmax_rows(logits))
        labels.append(p.labels)
    probs = np.concatenate(rows, axis=0)
    y = np.concatenate(labels)
    preds = probs.argmax(axis=1)
    acc = accuracy(preds, y)
    if model.task == "sequence" and model.n_classes == 2:
        return MetricsReport(auroc=auroc(probs[:, 1], (y == 1).astype(np.int64)),
                             auprc=auprc(probs[:, 1], (y == 1).astype(np.int64)),
                             accuracy=acc)
    return MetricsReport(auroc=macro_auroc(probs, y),
                         auprc=macro_auprc(probs, y),
                         accuracy=acc)


def evaluate(model: TadaModel, samples: list[IrregularSeries]) -> MetricsReport:
    return evaluate_preps(model, [model.prepare(s) for s in samples])


def selection_metric(model: TadaModel, report: MetricsReport) -> float:
    """Model-selection criterion: AUPRC for binary sequences, else accuracy."""
    if model.task == "sequence" and model.n_classes == 2:
        return report.auprc
    return report.accuracy


def train(cfg: RunConfig, train_samples: list[IrregularSeries],
          val_samples: list[IrregularSeries], n_features: int, n_classes: int,
          task: str, log=None) -> TrainResult:
    """Adam training, keeping the best validation epoch's parameters.

    Fully deterministic for a fixed config: one seeded generator drives
    init and batch order, and evaluation is deterministic.
    """
    if not train_samples:
        raise TrainingError("train: empty training set")
    rng = np.random.default_rng(cfg.seed)
    model = TadaModel(cfg, n_features, n_classes, task, rng)
    train_preps = [model.prepare(s) for s in train_samples]
    val_preps = [model.prepare(s) for s in val_samples]
    opt = Adam(model.trainable(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2),
               eps=cfg.adam_eps)
    result = TrainResult(model=model)
    best_state: dict[str, np.ndarray] | None = None
    bad_epochs = 0
    n = len(train_preps)
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = [train_preps[i] for i in order[start:start + cfg.batch_size]]
            loss = model.batch_loss(batch)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += value * len(batch)
        val_report = evaluate_preps(model, val_preps) if val_preps else None
        metric = selection_metric(model, val_report) if val_report else -epoch_loss
        record = {
            "epoch": epoch,
            "train_loss": epoch_loss / n,
            "val_metric": metric,
        }
        if val_report is not None:
            record["val_accuracy"] = val_report.accuracy
        result.history.append(record)
        if log:
            log(f"epoch {epoch}: train_loss {epoch_loss / n:.4f} val {metric:.4f}")
        if metric > result.best_val_metric:
            result.best_val_metric = metric
            result.best_epoch = epoch
            best_state = {k: t.data.copy() for k, t in model.params.items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            # patience 0 disables early stopping
            if cfg.patience > 0 and bad_epochs >= cfg.patience:
                break
    if best_state is not None:
        for k, t in model.params.items():
            t.data = best_state[k]
    return result


def run_manifest(cfg: RunConfig, model: TadaModel, result: TrainResult,
                 test_report: MetricsReport, counts: dict[str, int]) -> dict:
    """Deterministic description of one training run.

    Wall time deliberately stays out so reruns with equal inputs produce
    byte-identical files; the CLI reports timing on stdout instead.
    """
    radii = model.radii()
    return {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "init_scheme": "uniform(-1/sqrt(fan_in)) matrices, normal(0, 0.02) queries",
        "dataset": {
            "task": model.task,
            "D": model.n_features,
            "n_classes": model.n_classes,
            **counts,
        },
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.history),
        "history": result.history,
        "metrics": test_report.as_dict(),
        "window_radii": None if radii is None else [float(r) for r in radii],
    }
