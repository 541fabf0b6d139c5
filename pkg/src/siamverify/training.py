"""Training recipes and evaluation for both architectures.

Both recipes follow the same scheme: per-epoch reshuffled mini-batches,
seeded augmentation on training images only, binary cross-entropy, Adam
updates restricted to trainable layers, and one log row per epoch.  All
randomness derives from the run seed, so a repeated run reproduces its
logs exactly.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import ops
from .augment import AugmentationPolicy, augment_array, seed_rng
from .data import (
    CLASS_CORRECT, CLASS_INCORRECT, DatasetIndex, ImageRef, PairSample,
    sample_random_pairs, sample_reference_anchored_pairs,
)
from .errors import ConfigError, ContractError, EmptyClassError, EngineError, TrainingAbortError
from .metrics import MetricsReport, confusion_from_predictions, metrics_from_counts
from .models import ModelGraph
from .optim import Adam
from .tensor import Tape, Tensor, backward

PAIR_REGIMES = ("random", "reference-anchored")


@dataclass
class TrainConfig:
    epochs: int = 25
    batch_size: int = 16
    lr: float = 0.0001
    threshold: float = 0.5
    pair_regime: str = "random"
    seed: int = 0
    augment: bool = True
    policy: AugmentationPolicy = field(default_factory=AugmentationPolicy)
    pairs_per_epoch: Optional[int] = None
    val_pairs: Optional[int] = None
    record_timing: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.pair_regime not in PAIR_REGIMES:
            raise ConfigError(f"pair_regime must be one of {PAIR_REGIMES}, got {self.pair_regime!r}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float
    seconds: float


def _load_split(index: DatasetIndex, split: str, resolution: int) -> tuple[np.ndarray, np.ndarray, list[ImageRef]]:
    members = index.members(split)
    if not members:
        raise EmptyClassError(f"split {split!r} is empty")
    images = np.stack([m.load(resolution).pixels for m in members])
    labels = np.array([1.0 if m.label == CLASS_CORRECT else 0.0 for m in members], dtype=np.float32)
    return images, labels, members


def _augmented(base: np.ndarray, idx: int, config: TrainConfig, epoch: int) -> np.ndarray:
    if not config.augment:
        return base
    return augment_array(base, config.policy, (config.seed, epoch, idx))


def classifier_predicts_correct(scores: np.ndarray, threshold: float) -> np.ndarray:
    """Decision rule: correct iff score > threshold; ties fail safe."""
    return scores > threshold


def snn_predicts_same(scores: np.ndarray, threshold: float) -> np.ndarray:
    """Decision rule: same class iff similarity >= threshold."""
    return scores >= threshold


def _abort_on_bad_loss(loss_value: float, epoch: int, batch: int) -> None:
    if not math.isfinite(loss_value):
        raise TrainingAbortError(
            f"non-finite loss {loss_value} at epoch {epoch}, batch {batch}; training aborted")


def train_classifier(graph: ModelGraph, index: DatasetIndex, config: TrainConfig) -> list[EpochLog]:
    """Train the binary classifier in place; returns one log row per epoch."""
    if graph.kind != "classifier":
        raise ConfigError("train_classifier requires a classifier graph")
    resolution = graph.input_shape[0]
    train_x, train_y, _ = _load_split(index, "train", resolution)
    val_x, val_y, _ = _load_split(index, "validation", resolution)
    if len(set(train_y.tolist())) < 2:
        raise EmptyClassError("training split must contain both classes")
    optimizer = Adam(graph.trainable_parameters(), lr=config.lr)
    logs = []
    n = len(train_x)
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = seed_rng((config.seed, epoch, 3001)).permutation(n)
        loss_sum = 0.0
        hits = 0
        for bi, start in enumerate(range(0, n, config.batch_size)):
            sel = order[start:start + config.batch_size]
            xb = np.stack([_augmented(train_x[i], int(i), config, epoch) for i in sel])
            yb = train_y[sel][:, None]
            rng = seed_rng((config.seed, epoch, bi, 3002))
            try:
                with Tape() as tape:
                    scores = graph.forward(xb, mode="train", rng=rng)
                    loss = ops.bce_loss(scores, Tensor(yb))
                    _abort_on_bad_loss(loss.item(), epoch, bi)
                    backward(tape, loss)
            except EngineError as exc:
                raise TrainingAbortError(f"epoch {epoch}, batch {bi}: {exc}") from exc
            optimizer.step()
            loss_sum += loss.item() * len(sel)
            predicted = classifier_predicts_correct(scores.data.reshape(-1), config.threshold)
            hits += int((predicted == (yb.reshape(-1) > 0.5)).sum())
        val_scores = _batched_scores(graph, val_x, config.batch_size)
        val_hits = (classifier_predicts_correct(val_scores, config.threshold) == (val_y > 0.5)).sum()
        seconds = time.perf_counter() - started if config.record_timing else 0.0
        logs.append(EpochLog(epoch, loss_sum / n, hits / n, float(val_hits) / len(val_y), seconds))
    return logs


def _batched_scores(graph: ModelGraph, images: np.ndarray, batch_size: int) -> np.ndarray:
    out = []
    for start in range(0, len(images), batch_size):
        out.append(graph.scores(images[start:start + batch_size]))
    return np.concatenate(out) if out else np.empty(0, dtype=np.float32)


def _batched_pair_scores(graph: ModelGraph, xa: np.ndarray, xb: np.ndarray, batch_size: int) -> np.ndarray:
    out = []
    for start in range(0, len(xa), batch_size):
        out.append(graph.pair_scores(xa[start:start + batch_size], xb[start:start + batch_size]))
    return np.concatenate(out) if out else np.empty(0, dtype=np.float32)


def _pair_sampler(config: TrainConfig):
    return sample_random_pairs if config.pair_regime == "random" else sample_reference_anchored_pairs


def train_snn(graph: ModelGraph, index: DatasetIndex, config: TrainConfig) -> list[EpochLog]:
    """Train the Siamese verifier on image pairs; towers stay weight-shared."""
    if graph.kind != "siamese":
        raise ConfigError("train_snn requires a siamese graph")
    resolution = graph.input_shape[0]
    cache: dict[str, np.ndarray] = {}

    def pixels(ref: ImageRef) -> np.ndarray:
        if ref.source_id not in cache:
            cache[ref.source_id] = ref.load(resolution).pixels
        return cache[ref.source_id]

    sampler = _pair_sampler(config)
    n_pairs = config.pairs_per_epoch or len(index.members("train"))
    n_val = config.val_pairs or len(index.members("validation"))
    val_pairs = sampler(index, n_val, (config.seed, 777001), split="validation")
    val_a = np.stack([pixels(p.image_a) for p in val_pairs])
    val_b = np.stack([pixels(p.image_b) for p in val_pairs])
    val_same = np.array([p.same for p in val_pairs])

    optimizer = Adam(graph.trainable_parameters(), lr=config.lr)
    logs = []
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        pairs = sampler(index, n_pairs, (config.seed, epoch), split="train")
        loss_sum = 0.0
        hits = 0
        for bi, start in enumerate(range(0, n_pairs, config.batch_size)):
            chunk = pairs[start:start + config.batch_size]
            xa = np.stack([
                _augmented(pixels(p.image_a), 2 * (start + j), config, epoch)
                for j, p in enumerate(chunk)])
            xb = np.stack([
                _augmented(pixels(p.image_b), 2 * (start + j) + 1, config, epoch)
                for j, p in enumerate(chunk)])
            yb = np.array([[1.0 if p.same else 0.0] for p in chunk], dtype=np.float32)
            rng = seed_rng((config.seed, epoch, bi, 3003))
            try:
                with Tape() as tape:
                    sims = graph.forward_pair(xa, xb, mode="train", rng=rng)
                    loss = ops.bce_loss(sims, Tensor(yb))
                    _abort_on_bad_loss(loss.item(), epoch, bi)
                    backward(tape, loss)
            except EngineError as exc:
                raise TrainingAbortError(f"epoch {epoch}, batch {bi}: {exc}") from exc
            optimizer.step()
            loss_sum += loss.item() * len(chunk)
            decided_same = snn_predicts_same(sims.data.reshape(-1), config.threshold)
            hits += int((decided_same == yb.reshape(-1).astype(bool)).sum())
        val_scores = _batched_pair_scores(graph, val_a, val_b, config.batch_size)
        val_hits = (snn_predicts_same(val_scores, config.threshold) == val_same).sum()
        seconds = time.perf_counter() - started if config.record_timing else 0.0
        logs.append(EpochLog(epoch, loss_sum / n_pairs, hits / n_pairs, float(val_hits) / len(val_same), seconds))
    return logs


# ---------------------------------------------------------------------------
# evaluation


def evaluate_classifier(graph, index: DatasetIndex, split: str = "validation",
                        threshold: float = 0.5, batch_size: int = 64) -> MetricsReport:
    """Infer-mode metrics with positive class = incorrectly installed."""
    resolution = graph.input_shape[0]
    images, labels, _ = _load_split(index, split, resolution)
    scores = _batched_scores(graph, images, batch_size)
    actual_positive = labels < 0.5
    predicted_positive = ~classifier_predicts_correct(scores, threshold)
    return metrics_from_counts(confusion_from_predictions(actual_positive, predicted_positive))


def reference_scores(graph, ref_pixels: np.ndarray, images: np.ndarray,
                     batch_size: int = 64) -> np.ndarray:
    """Similarity of each image against one reference, infer mode.

    The reference feature vector is computed once and reused; inference is
    deterministic, so this matches scoring each pair from scratch.
    """
    if hasattr(graph, "features") and hasattr(graph, "head_scores"):
        ref_feat = graph.features(ref_pixels[None], mode="infer").data
        out = []
        for start in range(0, len(images), batch_size):
            feats = graph.features(images[start:start + batch_size], mode="infer").data
            rf = np.broadcast_to(ref_feat[0], feats.shape)
            out.append(graph.head_scores(rf, feats))
        return np.concatenate(out)
    out = []
    for start in range(0, len(images), batch_size):
        chunk = images[start:start + batch_size]
        refs = np.broadcast_to(ref_pixels, chunk.shape)
        out.append(np.asarray(graph.pair_scores(refs, chunk)))
    return np.concatenate(out)


def evaluate_snn(graph, index: DatasetIndex, split: str, reference: ImageRef,
                 threshold: float = 0.5, batch_size: int = 64) -> MetricsReport:
    """Pair every split image with one correct-class reference and score it."""
    if reference.label != CLASS_CORRECT:
        raise ConfigError(f"reference {reference.source_id} is not a correct-class image")
    resolution = graph.input_shape[0] if hasattr(graph, "input_shape") else None
    images, labels, _ = _load_split(index, split, resolution)
    scores = reference_scores(graph, reference.load(resolution).pixels, images, batch_size)
    actual_positive = labels < 0.5
    predicted_positive = ~snn_predicts_same(scores, threshold)
    return metrics_from_counts(confusion_from_predictions(actual_positive, predicted_positive))


# ---------------------------------------------------------------------------
# epoch log export


EPOCH_LOG_HEADER = ("epoch", "train_loss", "train_acc", "val_acc", "seconds")


def export_epoch_log(logs: list[EpochLog], path) -> None:
    """Write per-epoch curves as CSV (header plus one row per epoch)."""
    if not logs:
        raise ContractError("cannot export an empty epoch log")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(EPOCH_LOG_HEADER)
        for row in logs:
            writer.writerow([row.epoch, f"{row.train_loss:.6g}", f"{row.train_acc:.6g}",
                             f"{row.val_acc:.6g}", f"{row.seconds:.6g}"])


def val_accuracy_stability(logs: list[EpochLog], window: int = 5) -> float:
    """Population standard deviation of validation accuracy over the last
    ``window`` epochs; the quantitative stable-vs-unstable training signal."""
    if not logs:
        raise ContractError("no epoch logs to summarize")
    tail = [row.val_acc for row in logs[-window:]]
    return float(np.std(np.asarray(tail)))
