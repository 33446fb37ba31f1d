"""Adadelta training loop with deterministic seeding and checkpointing.

One optimizer owns one model; a fixed seed fixes the validation split,
the batch order of every epoch, dropout masks, and parameter
initialization, so two runs with identical configuration produce
bitwise-identical checkpoints and metric logs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import models
from .data import make_batches, segments_as_documents
from .errors import TrainingError, ValidationError


@dataclass
class TrainConfig:
    epochs: int = 25
    batch_size: int = 200
    rho: float = 0.95
    epsilon: float = 1e-6
    weight_decay: float = 1e-5
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError(f"epochs {self.epochs} must be >= 1")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size {self.batch_size} must be >= 1")
        if not 0.0 <= self.rho < 1.0:
            raise ValidationError(f"rho {self.rho} outside [0, 1)")
        if self.epsilon <= 0.0:
            raise ValidationError(f"epsilon {self.epsilon} must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValidationError(f"val_fraction {self.val_fraction} outside [0, 1)")


class AdadeltaState:
    """Running averages of squared gradients and squared updates."""

    def __init__(self, named_tensors, rho: float = 0.95, epsilon: float = 1e-6):
        self.rho = rho
        self.epsilon = epsilon
        self.sq_grad = {name: np.zeros_like(t.data) for name, t in named_tensors}
        self.sq_update = {name: np.zeros_like(t.data) for name, t in named_tensors}


def adadelta_step(named_tensors, state: AdadeltaState, weight_decay: float = 0.0,
                  decay_names=frozenset()) -> None:
    """Apply one accumulated-gradient update in place.

    Weight decay is added to the gradients of the named tensors before
    the update. A missing gradient counts as zero (the accumulators
    still decay); a non-finite gradient aborts, naming the parameter.
    """
    rho, eps = state.rho, state.epsilon
    for name, tensor in named_tensors:
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        if weight_decay and name in decay_names:
            grad = grad + weight_decay * tensor.data
        if not np.all(np.isfinite(grad)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
        sq_grad = state.sq_grad[name] = rho * state.sq_grad[name] + (1.0 - rho) * grad * grad
        delta = -np.sqrt(state.sq_update[name] + eps) / np.sqrt(sq_grad + eps) * grad
        tensor.data = tensor.data + delta
        state.sq_update[name] = rho * state.sq_update[name] + (1.0 - rho) * delta * delta


@dataclass
class TrainResult:
    params: models.ModelParams  # final-epoch parameters
    best_params: models.ModelParams  # best validation accuracy (final if no split)
    best_epoch: int
    history: list[dict] = field(default_factory=list)

    def write_metrics(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            for row in self.history:
                handle.write(json.dumps(row) + "\n")


def _document_accuracy(params: models.ModelParams, docs, batch_size: int) -> float:
    predicted = models.predict_documents(params, docs, batch_size=batch_size)
    gold = np.array([d.label for d in docs])
    return float(np.mean(predicted == gold))


def train(model_config: models.ModelConfig, train_config: TrainConfig, docs,
          val_docs=None, embedding_matrix=None, metrics_path=None) -> TrainResult:
    """Train one model; returns final and best-validation parameters.

    ``docs`` must be encoded against the vocabulary that sized
    ``model_config``. For the fully supervised segment classifier the
    corpus is exploded into single-segment bags labeled by the segment
    annotations, so the same loop serves all three model kinds. Loss is
    logged as the epoch's mean per-document NLL; model selection takes
    the best validation document accuracy, earliest epoch on ties.
    """
    if not docs:
        raise ValidationError("training corpus is empty")
    if model_config.kind == "segcnn":
        docs = segments_as_documents(docs)
        val_docs = segments_as_documents(val_docs) if val_docs else None
    rng = np.random.default_rng(train_config.seed)
    if val_docs is None and train_config.val_fraction > 0.0 and len(docs) >= 2:
        count = max(1, int(round(train_config.val_fraction * len(docs))))
        order = rng.permutation(len(docs))
        val_docs = [docs[i] for i in order[:count]]
        docs = [docs[i] for i in order[count:]]
    params = models.init_params(
        model_config, rng=np.random.default_rng(model_config.seed), embedding_matrix=embedding_matrix
    )
    state = AdadeltaState(params.trainable_tensors(), rho=train_config.rho,
                          epsilon=train_config.epsilon)
    min_len = max(model_config.windows)
    history = []
    best = None
    for epoch in range(1, train_config.epochs + 1):
        batches = make_batches(docs, train_config.batch_size, min_segment_len=min_len, rng=rng)
        total_nll = 0.0
        for batch in batches:
            out = models.forward_batch(params, batch, train=True, rng=rng)
            loss = models.nll_loss(out.doc_probs, batch.labels, mean=True)
            params.zero_grads()
            ad.backward(loss)
            params.zero_padding_gradient()
            adadelta_step(params.trainable_tensors(), state,
                          weight_decay=train_config.weight_decay,
                          decay_names=params.decay_names())
            total_nll += loss.item() * batch.size
        entry = {"epoch": epoch, "train_loss": total_nll / len(docs)}
        if val_docs:
            accuracy = _document_accuracy(params, val_docs, train_config.batch_size)
            entry["val_accuracy"] = accuracy
            if best is None or accuracy > best[0]:
                best = (accuracy, epoch, params.copy())
        history.append(entry)
    if best is None:
        best = (float("nan"), train_config.epochs, params.copy())
    result = TrainResult(params=params, best_params=best[2], best_epoch=best[1], history=history)
    if metrics_path:
        result.write_metrics(metrics_path)
    return result


@dataclass
class OverfitReport:
    success: bool
    steps: int
    accuracy: float


def overfit_sanity(model_config: models.ModelConfig, docs, max_steps: int = 200,
                   train_config: TrainConfig | None = None) -> OverfitReport:
    """Capacity check: drive training accuracy to 100% on a tiny corpus.

    Full-batch steps until every document label is recovered or the
    step cap is hit; duplicate documents with contradictory labels make
    100% unreachable and the report comes back unsuccessful.
    """
    if not docs:
        raise ValidationError("overfit check needs at least one document")
    if len(docs) > 8:
        raise ValidationError(f"overfit check is for tiny corpora, got {len(docs)} documents")
    train_config = train_config or TrainConfig(epochs=1, batch_size=len(docs), val_fraction=0.0)
    if model_config.kind == "segcnn":
        docs = segments_as_documents(docs)
    rng = np.random.default_rng(train_config.seed)
    params = models.init_params(model_config, rng=np.random.default_rng(model_config.seed))
    state = AdadeltaState(params.trainable_tensors(), rho=train_config.rho,
                          epsilon=train_config.epsilon)
    min_len = max(model_config.windows)
    accuracy = 0.0
    for step in range(1, max_steps + 1):
        for batch in make_batches(docs, len(docs), min_segment_len=min_len, rng=rng):
            out = models.forward_batch(params, batch, train=True, rng=rng)
            loss = models.nll_loss(out.doc_probs, batch.labels, mean=True)
            params.zero_grads()
            ad.backward(loss)
            params.zero_padding_gradient()
            adadelta_step(params.trainable_tensors(), state,
                          weight_decay=train_config.weight_decay,
                          decay_names=params.decay_names())
        accuracy = _document_accuracy(params, docs, len(docs))
        if accuracy == 1.0:
            return OverfitReport(success=True, steps=step, accuracy=1.0)
    return OverfitReport(success=False, steps=max_steps, accuracy=accuracy)
