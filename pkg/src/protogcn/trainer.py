"""Training loop, evaluation with score-level stream fusion, and gradient checks."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .audit import AuditReport, grad_audit
from .backbone import BackboneConfig, ProtoGCN
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .losses import ClassAggregationBank, cross_entropy, csc_loss, total_loss
from .optim import NesterovSGD, cosine_lr
from .skeleton import Dataset, SkeletonGraph, load_dataset, split, synth_generate, to_modality

log = logging.getLogger(__name__)


class NumericFailure(ArithmeticError):
    """A loss term became non-finite during training."""


def build_dataset(cfg: RunConfig) -> Dataset:
    if cfg.data:
        return load_dataset(cfg.data)
    s = cfg.synth
    return synth_generate(
        s.seed, s.classes, s.per_class, s.joints, s.frames, s.similarity, s.noise, s.subjects
    )


def stream_arrays(dataset: Dataset, stream: str, dtype=np.float64):
    x, y = dataset.arrays(dtype)
    graph = SkeletonGraph.default(x.shape[1])
    return to_modality(x, stream, graph).astype(dtype), y


def _check_compat(cfg: BackboneConfig, dataset: Dataset):
    n, _, c_in = dataset.shape
    if (cfg.joints, cfg.in_channels) != (n, c_in):
        raise ConfigError(
            f"model expects {cfg.joints} joints x {cfg.in_channels} channels, data has {n} x {c_in}"
        )
    if cfg.num_classes != dataset.num_classes:
        raise ConfigError(f"model has {cfg.num_classes} classes, data has {dataset.num_classes}")


@dataclass
class TrainState:
    model: ProtoGCN
    bank: ClassAggregationBank
    optimizer: NesterovSGD
    epoch: int = 0


def model_tensors(state: TrainState) -> dict:
    out = {name: p.data for name, p in state.model.named_parameters().items()}
    out.update(state.model.buffers())
    out["bank.means"] = state.bank.means
    out.update(state.optimizer.state_dict())
    return out


def save_state(path, state: TrainState, cfg: RunConfig, extra: Optional[dict] = None):
    meta = {"config": cfg.to_dict(), "epoch": state.epoch}
    meta.update(extra or {})
    save_checkpoint(path, model_tensors(state), meta)


def load_model(path):
    """Rebuild a model (and its run config) from a checkpoint."""
    tensors, meta = load_checkpoint(path)
    cfg = RunConfig.from_dict(meta["config"])
    model = ProtoGCN(cfg.model, seed=cfg.seed)
    for name, p in model.named_parameters().items():
        if name not in tensors:
            raise ConfigError(f"checkpoint {path} lacks parameter {name}")
        p.data = tensors[name].astype(model.dtype)
    model.input_mean = tensors["input.mean"].astype(model.dtype)
    model.input_std = tensors["input.std"].astype(model.dtype)
    return model, cfg, tensors, meta


def predict_scores(model: ProtoGCN, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Softmax class scores ``(n, c)``."""
    out = []
    with T.no_grad():
        for i in range(0, len(x), batch_size):
            logits, _ = model(x[i:i + batch_size])
            out.append(T.softmax(logits, axis=-1).data)
    return np.concatenate(out) if out else np.zeros((0, model.cfg.num_classes))


def topk_accuracy(scores: np.ndarray, labels: np.ndarray, k: int = 1) -> float:
    if len(labels) == 0:
        return 0.0
    k = min(k, scores.shape[1])
    # stable sort keeps lower class index first among ties
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return float(np.mean((order == labels[:, None]).any(axis=1)))


def fuse_scores(stream_scores: Sequence[np.ndarray], weights: Optional[Sequence[float]] = None) -> np.ndarray:
    """Weighted average of per-stream score matrices (uniform by default).

    Computed as a running mean, which returns identical inputs unchanged bit for bit.
    """
    if not stream_scores:
        raise ValueError("no streams to fuse")
    shapes = {np.shape(s) for s in stream_scores}
    if len(shapes) != 1:
        raise ValueError(f"stream score shapes differ: {sorted(shapes)}")
    w = np.ones(len(stream_scores)) if weights is None else np.asarray(weights, dtype=np.float64)
    if len(w) != len(stream_scores) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("need one non-negative weight per stream with a positive total")
    fused = np.zeros_like(np.asarray(stream_scores[0], dtype=np.float64))
    seen = 0.0
    for wi, s in zip(w, stream_scores):
        if wi == 0:
            continue
        seen += wi
        fused += (wi / seen) * (np.asarray(s, dtype=np.float64) - fused)
    return fused


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def train(cfg: RunConfig, out_dir=None, dataset: Optional[Dataset] = None, write: bool = True):
    """Train one stream; returns ``(state, metrics)``.

    When ``write`` is set, the output directory receives ``config.json``,
    ``metrics.jsonl`` (deterministic), ``timing.jsonl`` (wall clock),
    ``best.ckpt`` and ``final.ckpt``.
    """
    out = Path(out_dir or cfg.out_dir)
    dataset = dataset or build_dataset(cfg)
    _check_compat(cfg.model, dataset)
    train_set, test_set = split(dataset, cfg.split_ratio, cfg.by_subject, cfg.split_seed)
    xtr, ytr = stream_arrays(train_set, cfg.stream)
    xte, yte = stream_arrays(test_set, cfg.stream)

    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    model = ProtoGCN(cfg.model, seed=cfg.seed)
    model.fit_input_stats(xtr)
    bank = ClassAggregationBank.init(cfg.model.num_classes, cfg.model.proj_dim, np.random.default_rng(seeds[0]), cfg.alpha)
    trainable = model.named_parameters()
    if not cfg.contrastive:
        trainable = {k: v for k, v in trainable.items() if not k.startswith("head.")}
    opt = NesterovSGD(trainable, cfg.lr, cfg.momentum, cfg.weight_decay, no_decay=cfg.no_decay, clip_norm=cfg.clip_norm)
    state = TrainState(model, bank, opt)
    shuffle_rng = np.random.default_rng(seeds[1])

    if write:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        metrics_fh = open(out / "metrics.jsonl", "w")
        timing_fh = open(out / "timing.jsonl", "w")

    metrics = []
    best_acc = -1.0
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            lr = cosine_lr(epoch, cfg.epochs, cfg.lr)
            sums = np.zeros(3)
            count = 0
            for idx in _batches(len(xtr), cfg.batch_size, shuffle_rng):
                xb, yb = xtr[idx], ytr[idx]
                logits, Z = model(xb)
                ce = cross_entropy(logits, yb)
                if cfg.contrastive:
                    f = model.head(Z)
                    csc = csc_loss(f, yb, bank, cfg.tau, cfg.model.normalize)
                    loss = total_loss(ce, csc, cfg.lam)
                else:
                    f, csc, loss = None, None, ce
                terms = {"ce": ce, "csc": csc, "total": loss}
                for term, value in terms.items():
                    if value is not None and not np.isfinite(value.data).all():
                        raise NumericFailure(f"epoch {epoch}: {term} loss is not finite")
                opt.zero_grad()
                loss.backward()
                opt.step(lr)
                if f is not None:
                    bank.update(f.data, yb)
                n = len(idx)
                sums += n * np.array([ce.item(), csc.item() if csc is not None else 0.0, loss.item()])
                count += n
            state.epoch = epoch + 1
            train_acc = topk_accuracy(predict_scores(model, xtr), ytr)
            test_acc = topk_accuracy(predict_scores(model, xte), yte) if len(xte) else 0.0
            record = {
                "epoch": epoch,
                "lr": lr,
                "loss_ce": sums[0] / count,
                "loss_csc": sums[1] / count,
                "loss_total": sums[2] / count,
                "train_top1": train_acc,
                "test_top1": test_acc,
            }
            metrics.append(record)
            log.debug("epoch %d %s", epoch, record)
            if write:
                metrics_fh.write(json.dumps(record, sort_keys=True) + "\n")
                timing_fh.write(json.dumps({"epoch": epoch, "seconds": time.perf_counter() - t0}) + "\n")
                if test_acc > best_acc:
                    save_state(out / "best.ckpt", state, cfg, {"test_top1": test_acc})
            best_acc = max(best_acc, test_acc)
        if write:
            save_state(out / "final.ckpt", state, cfg, {"test_top1": metrics[-1]["test_top1"]})
    finally:
        if write:
            metrics_fh.close()
            timing_fh.close()
    return state, metrics


def evaluate(checkpoints: Sequence, dataset: Dataset, streams: Optional[Sequence[str]] = None, topk=(1, 5)):
    """Per-stream and fused accuracy over ``dataset``.

    Each checkpoint is scored on its own modality view (taken from the
    checkpoint's config unless ``streams`` overrides it).
    """
    if not checkpoints:
        raise ValueError("need at least one checkpoint")
    if streams is not None and len(streams) != len(checkpoints):
        raise ValueError(f"{len(streams)} streams given for {len(checkpoints)} checkpoints")
    per_stream, all_scores, labels = [], [], None
    for i, path in enumerate(checkpoints):
        model, cfg, _, _ = load_model(path)
        stream = streams[i] if streams is not None else cfg.stream
        x, y = stream_arrays(dataset, stream)
        scores = predict_scores(model, x)
        labels = y
        all_scores.append(scores)
        per_stream.append({"checkpoint": str(path), "stream": stream,
                           **{f"top{k}": topk_accuracy(scores, y, k) for k in topk}})
    fused = fuse_scores(all_scores)
    return {
        "streams": per_stream,
        "fused": {f"top{k}": topk_accuracy(fused, labels, k) for k in topk},
        "scores": fused,
    }


GRADCHECK_CONFIG = BackboneConfig(
    joints=5, in_channels=3, widths=(8, 16), heads=2, n_pro=6, kernel_size=3, num_classes=3, proj_dim=8
)


def gradcheck(
    model_cfg: BackboneConfig = GRADCHECK_CONFIG,
    batch: int = 2,
    frames: int = 8,
    lam: float = 0.3,
    tau: float = 0.125,
    eps: float = 1e-3,
    max_checks: Optional[int] = None,
    seed: int = 0,
) -> AuditReport:
    """Audit every parameter tensor of a freshly initialised model on a tiny batch."""
    rng = np.random.default_rng(seed)
    data = synth_generate(seed, model_cfg.num_classes, batch, model_cfg.joints, frames, 0.0)
    x, y = data.arrays(np.float64)
    pick = rng.choice(len(x), size=batch, replace=False)
    x, y = x[pick], y[pick]
    model = ProtoGCN(model_cfg, seed=seed)
    bank = ClassAggregationBank.init(model_cfg.num_classes, model_cfg.proj_dim, rng)

    def loss_fn():
        logits, Z = model(x)
        ce = cross_entropy(logits, y)
        csc = csc_loss(model.head(Z), y, bank, tau, model_cfg.normalize)
        return total_loss(ce, csc, lam)

    return grad_audit(model.named_parameters(), loss_fn, eps=eps, max_checks=max_checks, seed=seed)
