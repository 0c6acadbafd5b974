"""Training loop, evaluation and run directories.

Per iteration: zero grads, forward/backward, smooth the selected conv
gradients, optimizer step. Per epoch: learning rate and sigma are set from
their schedules before the first iteration, test accuracy after the last.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import Dataset, batches, channel_stats, load_cifar100, normalize, synthetic_blobs
from .layers import softmax_cross_entropy
from .model import ModelGraph, build_model, load_checkpoint, save_checkpoint
from .neighborhood import LgnnPolicy, SomDims, apply_lgnn, select_targets
from .optim import SGD, LrSchedule, lr_at_epoch

log = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "lr", "sigma", "train_loss", "test_acc"]


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    sigma: float
    train_loss: float
    test_acc: float
    smooth_seconds: float = 0.0


@dataclass
class TrainState:
    model: ModelGraph
    sgd: SGD
    history: list = field(default_factory=list)


def predict_logits(model: ModelGraph, images, mean=None, std=None, batch_size: int = 256):
    out = []
    for i in range(0, len(images), batch_size):
        x = images[i:i + batch_size]
        if mean is not None:
            x = normalize(x, mean, std)
        out.append(model.forward(x, training=False))
    if not out:
        return np.zeros((0, model.params["fc.bias"].shape[0]), model.dtype)
    return np.concatenate(out)


def accuracy(model: ModelGraph, ds: Dataset, mean=None, std=None) -> float:
    """Top-1 accuracy in eval mode; argmax ties resolve to the lowest class index."""
    if len(ds) == 0:
        return float("nan")
    pred = predict_logits(model, ds.images, mean, std).argmax(axis=1)
    return float((pred == ds.fine_labels).mean())


def train_step(model: ModelGraph, sgd: SGD, x, y, targets, kernel, dims: SomDims, rng):
    """One training iteration. Returns ``(loss, seconds spent smoothing)``."""
    model.zero_grad()
    logits = model.forward(x, training=True, rng=rng)
    loss, g = softmax_cross_entropy(logits, y)
    grads = model.backward(g)
    t0 = time.perf_counter()
    if targets:
        apply_lgnn(grads, targets, kernel, dims)
    spent = time.perf_counter() - t0
    sgd.step(model.params, grads)
    return loss, spent


def fit(model: ModelGraph, train: Dataset, test: Dataset | None, *, epochs: int,
        batch_size: int, sgd: SGD, schedule: LrSchedule, policy: LgnnPolicy, dims: SomDims,
        data_seed: int = 0, dropout_seed: int = 0, augment: bool = False, mean=None, std=None,
        on_epoch=None) -> TrainState:
    targets = select_targets(policy, model)
    rng = np.random.default_rng(dropout_seed)
    state = TrainState(model, sgd)
    for epoch in range(epochs):
        sgd.lr = lr_at_epoch(schedule, epoch)
        kernel = policy.kernel_at_epoch(epoch, epochs)
        losses, smooth = [], 0.0
        for x, y in batches(train, batch_size, shuffle=True, seed=data_seed + epoch,
                            augment_data=augment, mean=mean, std=std):
            loss, spent = train_step(model, sgd, x, y, targets, kernel, dims, rng)
            losses.append(loss * len(y))
            smooth += spent
        train_loss = float(np.sum(losses) / max(len(train), 1))
        test_acc = accuracy(model, test, mean, std) if test is not None else float("nan")
        rec = EpochRecord(epoch, sgd.lr, kernel.sigma, train_loss, test_acc, smooth)
        state.history.append(rec)
        log.info("epoch %d lr %.4g sigma %.3g loss %.4f acc %.4f", epoch, rec.lr, rec.sigma,
                 train_loss, test_acc)
        if on_epoch is not None:
            on_epoch(rec, model)
    return state


def load_datasets(cfg: RunConfig):
    d = cfg.data
    if d["kind"] == "synthetic":
        seed = int(d.get("seed", 0))
        train = synthetic_blobs(d.get("classes", 4), d.get("per_class", 100), seed)
        test = synthetic_blobs(d.get("classes", 4), d.get("test_per_class", 50),
                               seed + 7919, split="test")
    else:
        strict = bool(d.get("strict", True))
        train = load_cifar100(d["path"], "train", strict)
        test = load_cifar100(d["path"], "test", strict)
        if d.get("classes"):
            train, test = train.subset(d["classes"]), test.subset(d["classes"])
    return train, test


def _write_metrics_row(path, rec: EpochRecord):
    with open(path, "a", newline="") as f:
        csv.writer(f).writerow([rec.epoch, f"{rec.lr:.6g}", f"{rec.sigma:.6g}",
                                f"{rec.train_loss:.6f}", f"{rec.test_acc:.6f}"])


def train(cfg: RunConfig, out_dir=None) -> Path:
    """Train per ``cfg`` into a run directory and return its path.

    The directory receives ``config.json`` (with the normalisation statistics
    filled in), ``metrics.csv``, ``init.ckpt`` and, after at least one epoch,
    ``best.ckpt`` and ``final.ckpt``.
    """
    run = Path(out_dir or cfg.output_dir)
    run.mkdir(parents=True, exist_ok=True)
    train_ds, test_ds = load_datasets(cfg)
    if cfg.normalization is None:
        mean, std = channel_stats(train_ds)
        cfg.normalization = {"mean": mean.tolist(), "std": std.tolist()}
    mean = np.asarray(cfg.normalization["mean"], np.float32)
    std = np.asarray(cfg.normalization["std"], np.float32)
    arch = {**cfg.arch, "num_classes": int(cfg.arch.get("num_classes")
                                            or len(np.unique(train_ds.fine_labels)))}
    cfg.arch = arch
    cfg.save(run / "config.json")

    dims = cfg.dims()
    model = build_model(arch, dims, seed=cfg.seeds["init"])
    save_checkpoint(model, run / "init.ckpt")
    metrics = run / "metrics.csv"
    with open(metrics, "w", newline="") as f:
        csv.writer(f).writerow(METRICS_HEADER)

    best = {"acc": -1.0}

    def on_epoch(rec, m):
        _write_metrics_row(metrics, rec)
        if rec.test_acc > best["acc"]:
            best["acc"] = rec.test_acc
            save_checkpoint(m, run / "best.ckpt")

    fit(model, train_ds, test_ds, epochs=cfg.epochs, batch_size=cfg.batch_size, sgd=cfg.sgd(),
        schedule=cfg.lr_schedule(), policy=cfg.policy(), dims=dims,
        data_seed=cfg.seeds["data"], dropout_seed=cfg.seeds["dropout"], augment=cfg.augment,
        mean=mean, std=std, on_epoch=on_epoch)
    if cfg.epochs > 0:
        save_checkpoint(model, run / "final.ckpt")
    return run


def find_config(ckpt) -> Path:
    p = Path(ckpt).resolve().parent / "config.json"
    if not p.exists():
        raise FileNotFoundError(f"no config.json next to {ckpt}")
    return p


def load_run(ckpt, config=None):
    """``(model, cfg)`` for a checkpoint inside a run directory."""
    cfg = RunConfig.load(config or find_config(ckpt))
    return load_checkpoint(ckpt, cfg.arch, cfg.dims()), cfg


def evaluate(ckpt, dataset: Dataset, config=None) -> float:
    model, cfg = load_run(ckpt, config)
    norm = cfg.normalization or {}
    return accuracy(model, dataset, norm.get("mean"), norm.get("std"))
