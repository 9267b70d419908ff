"""Composite objective, training loop, and evaluation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
import numpy as np

from . import tensor as T
from .data import LabeledDataset
from .metrics import MetricsReport, compute_metrics
from .model import ImnModel, save_checkpoint
from .optim import Adam
from .tensor import Tensor


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    lambda_l1: float = 1e-4
    seed: int = 0
    formulation: str = "binary"
    patience: int = 0  # 0 disables early stopping
    checkpoint_cadence: int = 0  # 0 saves only the final best model

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainingError("epochs must be >= 1")
        if self.batch_size < 1:
            raise TrainingError("batch size must be >= 1")
        if self.lambda_l1 < 0:
            raise TrainingError("lambda_l1 must be >= 0")
        if self.formulation not in ("binary", "categorical"):
            raise TrainingError(f"unknown formulation '{self.formulation}'")


def composite_loss_categorical(logits: Tensor, targets: np.ndarray,
                               weights: Tensor, lam: float) -> Tensor:
    """Mean cross-entropy plus lam * mean(|W|) over batch, class, lead, time."""
    if logits.shape[1] < 2:
        raise TrainingError("categorical loss needs at least two classes")
    ce = T.cross_entropy_with_logits(logits, targets)
    return T.add(ce, T.mul(T.mean_abs(weights), lam))


def composite_loss_binary(logits: Tensor, targets: np.ndarray,
                          weights: Tensor, lam: float) -> Tensor:
    """Mean logit-space binary cross-entropy plus lam * mean(|W|)."""
    bce = T.bce_with_logits(logits, targets)
    return T.add(bce, T.mul(T.mean_abs(weights), lam))


@dataclass
class FitResult:
    history: list[dict]
    best_epoch: int
    best_val_auroc: float
    stopped_early: bool


def _check_dataset(ds: LabeledDataset, name: str) -> None:
    if len(ds) == 0:
        raise TrainingError(f"{name} dataset is empty")
    if ds.provenance == "test":
        raise TrainingError(f"refusing to fit against the test split ({name})")
    for rec, _ in ds.items:
        if not rec.normalized:
            raise TrainingError(f"record {rec.id} in {name} set is not normalized")


def _batch_loss(model: ImnModel, x: np.ndarray, y: np.ndarray,
                lam: float) -> tuple[Tensor, Tensor]:
    xt = Tensor(x)
    weights, _, logits = model.forward_tensors(xt, training=True)
    if model.config.num_outputs == 1:
        flat = T.reshape(logits, (x.shape[0],))
        loss = composite_loss_binary(flat, y.astype(model.dtype), weights, lam)
    else:
        loss = composite_loss_categorical(logits, y, weights, lam)
    return loss, weights


def fit(model: ImnModel, train: LabeledDataset, val: LabeledDataset,
        config: TrainConfig, checkpoint_path=None, history_path=None) -> FitResult:
    """Mini-batch training with per-epoch validation AUROC.

    The parameters holding the best validation AUROC are restored into the
    model at the end and written to ``checkpoint_path`` when given. Fully
    deterministic for a fixed seed and single-threaded math.
    """
    _check_dataset(train, "train")
    _check_dataset(val, "val")
    if model.formulation != config.formulation:
        raise TrainingError(
            f"model is {model.formulation} but config asks for {config.formulation}")
    train_ids = {rec.id for rec, _ in train.items}
    val_ids = {rec.id for rec, _ in val.items}
    overlap = train_ids & val_ids
    if overlap:
        raise TrainingError(f"train/val share record ids: {sorted(overlap)[:3]}...")

    signals = train.signals().astype(model.dtype)
    labels = train.labels()
    rng = np.random.default_rng(config.seed)
    optimizer = Adam(model.parameters(), lr=config.lr)

    history: list[dict] = []
    best_auroc = -np.inf
    best_epoch = 0
    best_state = None
    since_improve = 0
    stopped_early = False

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(labels))
        epoch_loss = 0.0
        epoch_absw = 0.0
        n_batches = 0
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            try:
                with T.Tape() as tape:
                    loss, weights = _batch_loss(model, signals[idx], labels[idx],
                                                config.lambda_l1)
            except T.TensorError as e:
                raise TrainingError(f"{e} (epoch {epoch}, batch {n_batches})") from e
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss (epoch {epoch}, batch {n_batches})")
            T.backward(loss, tape)
            optimizer.step()
            optimizer.zero_grad()
            epoch_loss += value
            epoch_absw += float(np.mean(np.abs(weights.data)))
            n_batches += 1

        val_auroc = _val_auroc(model, val)
        history.append({
            "epoch": epoch,
            "train_loss": epoch_loss / n_batches,
            "val_auroc": val_auroc,
            "mean_abs_W": epoch_absw / n_batches,
        })

        if val_auroc > best_auroc:
            best_auroc = val_auroc
            best_epoch = epoch
            best_state = model.state_snapshot()
            since_improve = 0
        else:
            since_improve += 1
        if config.checkpoint_cadence and epoch % config.checkpoint_cadence == 0 \
                and checkpoint_path is not None and best_state is not None:
            model_state = model.state_snapshot()
            model.load_snapshot(best_state)
            save_checkpoint(model, checkpoint_path)
            model.load_snapshot(model_state)
        if config.patience and since_improve >= config.patience:
            stopped_early = True
            break

    if best_state is not None:
        model.load_snapshot(best_state)
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
    if history_path is not None:
        write_history(history, history_path)
    return FitResult(history=history, best_epoch=best_epoch,
                     best_val_auroc=float(best_auroc), stopped_early=stopped_early)


def _val_auroc(model: ImnModel, val: LabeledDataset) -> float:
    report = evaluate(model, val)
    if report.auroc is None:
        raise TrainingError("validation split has a single class; AUROC undefined")
    return report.auroc


def evaluate(model: ImnModel, dataset: LabeledDataset, threshold: float = 0.5,
             batch_size: int = 64) -> MetricsReport:
    """Score every record in eval mode and reduce to a metrics report."""
    if len(dataset) == 0:
        raise TrainingError("cannot evaluate an empty dataset")
    for rec, _ in dataset.items:
        if not rec.normalized:
            raise TrainingError(f"record {rec.id} is not normalized")
    signals = dataset.signals().astype(model.dtype)
    labels = dataset.labels()
    scores = np.concatenate([
        model.predict_batch(signals[lo:lo + batch_size])
        for lo in range(0, len(labels), batch_size)
    ])
    return compute_metrics(labels, scores, threshold=threshold)


def write_history(history: list[dict], path) -> None:
    """One JSON object per epoch, in epoch order."""
    lines = [json.dumps(row, sort_keys=True) for row in history]
    Path(path).write_text("\n".join(lines) + "\n")
