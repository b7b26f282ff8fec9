"""Loss, Adam, batching and the training loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor, backward
from .text import PAD_ID
from .model import ModelConfig, ModelParams, init_params, forward_batch
from .metrics import MetricsReport, evaluate
from .checkpoint import save_checkpoint

BCE_CLAMP = 1e-7


class NonFiniteGradient(RuntimeError):
    pass


class DivergenceError(RuntimeError):
    """Training loss went non-finite; the best checkpoint so far is kept."""


def bce_loss(scores: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy -[y*log p + (1-y)*log(1-p)] over a batch.

    Scores are clamped to [1e-7, 1 - 1e-7] so saturated sigmoids cannot
    produce log(0)."""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != scores.shape:
        raise ValueError(
            f"scores and labels must align, got {scores.shape} vs {labels.shape}")
    if not np.isin(labels, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    p = T.clamp(scores, BCE_CLAMP, 1.0 - BCE_CLAMP)
    ll = T.add(T.mul(T.log(p), labels),
               T.mul(T.log(T.sub(1.0, p)), 1.0 - labels))
    return T.scale(T.mean(ll), -1.0)


@dataclass
class AdamState:
    """Per-parameter moment estimates plus the shared step counter."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def init_adam(named_params, lr: float) -> AdamState:
    state = AdamState(lr=lr)
    for name, p in named_params:
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adam_step(named_params, state: AdamState):
    """One bias-corrected Adam update over all parameters; gradients are
    zeroed afterwards. A non-finite gradient aborts before any parameter
    is touched."""
    for name, p in named_params:
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise NonFiniteGradient(f"non-finite gradient in parameter {name!r}")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in named_params:
        g = p.grad if p.grad is not None else 0.0
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None


@dataclass
class Batch:
    ids: np.ndarray       # (B, N_max) int64, PAD-filled
    mask: np.ndarray      # (B, N_max) bool
    lengths: np.ndarray   # (B,) int64
    labels: np.ndarray    # (B,) float64 in {0, 1}

    @property
    def size(self) -> int:
        return len(self.labels)


def make_batches(samples, batch_size: int, seed: int, shuffle: bool) -> list[Batch]:
    """Pad (TokenSequence, label) pairs into fixed-shape batches. Shuffling
    is a seed-deterministic permutation; the final short batch is kept."""
    if not samples:
        raise ValueError("empty dataset")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(samples))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(samples))
    batches = []
    for start in range(0, len(samples), batch_size):
        chunk = [samples[i] for i in order[start:start + batch_size]]
        lengths = np.array([seq.length for seq, _ in chunk], dtype=np.int64)
        n_max = int(lengths.max())
        ids = np.full((len(chunk), n_max), PAD_ID, dtype=np.int64)
        for row, (seq, _) in enumerate(chunk):
            ids[row, :seq.length] = seq.ids
        mask = np.arange(n_max)[None, :] < lengths[:, None]
        labels = np.array([lab for _, lab in chunk], dtype=np.float64)
        batches.append(Batch(ids=ids, mask=mask, lengths=lengths, labels=labels))
    return batches


def predict_scores(params: ModelParams, cfg: ModelConfig, samples,
                   batch_size: int = 64):
    """Eval-mode scores for a sample list; returns (scores, labels) arrays."""
    scores = []
    labels = []
    for batch in make_batches(samples, batch_size, seed=0, shuffle=False):
        out, _ = forward_batch(batch.ids, batch.mask, batch.lengths,
                               params, cfg, train_mode=False)
        scores.append(out.data)
        labels.append(batch.labels)
    return np.concatenate(scores), np.concatenate(labels)


@dataclass
class TrainResult:
    params: ModelParams
    config: ModelConfig
    history: list[dict]
    best_f1: float
    best_epoch: int
    parameter_count: int


def _snapshot(params: ModelParams):
    return [t.data.copy() for _, t in params.named_tensors()]


def _restore(params: ModelParams, snap):
    for (_, t), data in zip(params.named_tensors(), snap):
        t.data = data.copy()


def train(cfg: ModelConfig, train_samples, heldout_samples, epochs: int,
          lr: float = 1e-4, batch_size: int = 64, embedding_table=None,
          vocab=None, checkpoint_path=None, metrics_path=None,
          log=None) -> TrainResult:
    """Train for `epochs` epochs, evaluating on the held-out split after
    each one and keeping the best-F1 parameters (persisted to
    `checkpoint_path` when given, which requires `vocab`).

    Fully seed-deterministic: parameter init, shuffling and dropout all
    derive from cfg.seed. A non-finite loss raises DivergenceError; the
    best checkpoint written so far stays on disk.
    """
    if not train_samples:
        raise ValueError("train split is empty")
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if checkpoint_path is not None and vocab is None:
        raise ValueError("writing checkpoints requires the vocabulary")
    cfg.validate()
    if not heldout_samples:
        heldout_samples = train_samples

    params = init_params(cfg, embedding_table)
    trainables = params.trainable_tensors()
    state = init_adam(trainables, lr)
    dropout_rng = np.random.default_rng([cfg.seed, 0xD120])

    if log:
        log(f"{params.parameter_count()} parameters, "
            f"{len(train_samples)} train / {len(heldout_samples)} held-out samples")

    history: list[dict] = []
    best_f1 = -1.0
    best_epoch = -1
    best_snap = None
    metrics_fh = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    try:
        for epoch in range(epochs):
            epoch_seed = cfg.seed * 1_000_003 + epoch
            losses = []
            for batch in make_batches(train_samples, batch_size,
                                      seed=epoch_seed, shuffle=True):
                scores, _ = forward_batch(
                    batch.ids, batch.mask, batch.lengths, params, cfg,
                    train_mode=True, rng=dropout_rng)
                loss = bce_loss(scores, batch.labels)
                loss_val = float(loss.data)
                if not np.isfinite(loss_val):
                    raise DivergenceError(
                        f"loss went non-finite at epoch {epoch}; "
                        "last good checkpoint retained")
                backward(loss)
                adam_step(trainables, state)
                if params.embedding_trainable:
                    params.embedding.data[PAD_ID] = 0.0
                losses.append(loss_val)

            held_scores, held_labels = predict_scores(
                params, cfg, heldout_samples, batch_size)
            report = evaluate(held_scores, held_labels)
            entry = {"epoch": epoch, "train_loss": float(np.mean(losses)),
                     **_report_fields(report)}
            history.append(entry)
            if metrics_fh:
                import json
                metrics_fh.write(json.dumps(entry) + "\n")
                metrics_fh.flush()
            if log:
                log(f"epoch {epoch}: loss={entry['train_loss']:.4f} "
                    f"held-out {report.summary()}")
            # ties prefer the later epoch: equal held-out F1, more training
            if report.f1 >= best_f1:
                best_f1 = report.f1
                best_epoch = epoch
                best_snap = _snapshot(params)
                if checkpoint_path is not None:
                    save_checkpoint(
                        checkpoint_path, cfg, vocab, params, adam_state=state,
                        metadata={"epoch": epoch, "seed": cfg.seed,
                                  "best_f1": best_f1, "history": history})
    finally:
        if metrics_fh:
            metrics_fh.close()

    if best_snap is not None:
        _restore(params, best_snap)
    return TrainResult(params=params, config=cfg, history=history,
                       best_f1=best_f1, best_epoch=best_epoch,
                       parameter_count=params.parameter_count())


def _report_fields(report: MetricsReport) -> dict:
    return {"precision": report.precision, "recall": report.recall,
            "f1": report.f1, "accuracy": report.accuracy, "auc": report.auc,
            "tp": report.tp, "fp": report.fp, "tn": report.tn, "fn": report.fn,
            "flags": report.flags}
