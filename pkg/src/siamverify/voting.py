"""Similarity voting: one model, many reference images, majority decision.

Instead of bagging several models, a single trained verifier compares the
test image against K reference images of correct installations.  Each
comparison votes same/different at the decision threshold; the test image
is accepted only when a strict majority votes "same".  A tied vote (even
K) counts as incorrect, failing safe.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .augment import seed_rng
from .data import CLASS_CORRECT, DatasetIndex, ImageRef
from .errors import ConfigError, ContractError
from .metrics import MetricsReport, confusion_from_predictions, metrics_from_counts
from .training import snn_predicts_same

VERDICT_CORRECT = "correct"
VERDICT_INCORRECT = "incorrect"


@dataclass(frozen=True)
class ReferencePanel:
    """K distinct correct-class reference images, deterministically chosen."""

    members: tuple[ImageRef, ...]
    seed: int
    k: int

    def __post_init__(self):
        if self.k < 1 or len(self.members) != self.k:
            raise ConfigError(f"panel must hold exactly k={self.k} members, got {len(self.members)}")
        ids = [m.source_id for m in self.members]
        if len(set(ids)) != len(ids):
            raise ConfigError("panel members must have distinct source ids")
        for m in self.members:
            if m.label != CLASS_CORRECT:
                raise ConfigError(f"panel member {m.source_id} is not a correct-class image")


@dataclass(frozen=True)
class VoteResult:
    scores: np.ndarray        # per-reference similarity, length K
    decisions: tuple[bool, ...]  # per-reference same/different at threshold
    same_votes: int
    verdict: str


def majority_verdict(decisions: Sequence[bool]) -> str:
    """Correct iff strictly more than half the votes are "same"."""
    if len(decisions) == 0:
        raise ContractError("majority vote over an empty decision list")
    same = sum(bool(d) for d in decisions)
    return VERDICT_CORRECT if 2 * same > len(decisions) else VERDICT_INCORRECT


def select_reference_panel(index: DatasetIndex, k: int, seed: int,
                           split: str = "train") -> ReferencePanel:
    """Sample K distinct correct-class images uniformly without replacement."""
    pool = index.class_members(split, CLASS_CORRECT)
    if k < 1:
        raise ConfigError(f"panel size must be >= 1, got {k}")
    if k > len(pool):
        raise ConfigError(
            f"panel size {k} exceeds the {len(pool)} correct-class images in split {split!r}")
    rng = seed_rng((seed, 501))
    chosen = rng.choice(len(pool), size=k, replace=False)
    return ReferencePanel(members=tuple(pool[int(i)] for i in chosen), seed=seed, k=k)


def _panel_pixels(panel: ReferencePanel, resolution: int) -> np.ndarray:
    return np.stack([m.load(resolution).pixels for m in panel.members])


def _panel_score_matrix(model, panel: ReferencePanel, images: np.ndarray,
                        batch_size: int = 64) -> np.ndarray:
    """Similarities of every (test image, reference) pair, shape (M, K).

    When the model exposes precomputable feature vectors the panel tower
    pass runs once; deterministic inference makes this identical to
    scoring each pair from scratch.
    """
    refs = _panel_pixels(panel, images.shape[1])
    m, k = len(images), panel.k
    scores = np.empty((m, k), dtype=np.float64)
    if hasattr(model, "features") and hasattr(model, "head_scores"):
        ref_feats = model.features(refs, mode="infer").data
        for start in range(0, m, batch_size):
            feats = model.features(images[start:start + batch_size], mode="infer").data
            for j in range(k):
                rf = np.broadcast_to(ref_feats[j], feats.shape)
                scores[start:start + batch_size, j] = model.head_scores(rf, feats)
    else:
        for j in range(k):
            ref_batch_full = refs[j][None]
            for start in range(0, m, batch_size):
                chunk = images[start:start + batch_size]
                ref_batch = np.broadcast_to(refs[j], chunk.shape)
                scores[start:start + batch_size, j] = model.pair_scores(ref_batch, chunk)
    return scores


def similarity_vote(model, panel: ReferencePanel, test_image, threshold: float = 0.5) -> VoteResult:
    """Compare one test image against every panel reference and take the vote."""
    if isinstance(test_image, ImageRef):
        resolution = _panel_resolution(model, panel)
        pixels = test_image.load(resolution).pixels
    else:
        pixels = np.asarray(test_image, dtype=np.float32)
    scores = _panel_score_matrix(model, panel, pixels[None])[0]
    decisions = tuple(bool(d) for d in snn_predicts_same(scores, threshold))
    return VoteResult(
        scores=scores,
        decisions=decisions,
        same_votes=sum(decisions),
        verdict=majority_verdict(decisions),
    )


def _panel_resolution(model, panel: ReferencePanel) -> int:
    if hasattr(model, "input_shape"):
        return model.input_shape[0]
    first = panel.members[0]
    if first.pixels is not None:
        return first.pixels.shape[0]
    raise ConfigError("cannot infer input resolution; pass pixel arrays directly")


def vote_evaluate(model, panel: ReferencePanel, index: DatasetIndex, split: str = "validation",
                  threshold: float = 0.5) -> MetricsReport:
    """Vote on every split image and count confusions (positive = incorrect)."""
    members = index.members(split)
    if not members:
        raise ContractError(f"split {split!r} is empty")
    resolution = _panel_resolution(model, panel)
    images = np.stack([m.load(resolution).pixels for m in members])
    scores = _panel_score_matrix(model, panel, images)
    same_votes = snn_predicts_same(scores, threshold).sum(axis=1)
    predicted_positive = ~(2 * same_votes > panel.k)
    actual_positive = np.array([m.label != CLASS_CORRECT for m in members])
    return metrics_from_counts(confusion_from_predictions(actual_positive, predicted_positive))


# ---------------------------------------------------------------------------
# panel manifest


def save_panel_manifest(panel: ReferencePanel, path) -> None:
    payload = {
        "k": panel.k,
        "seed": panel.seed,
        "references": [m.source_id for m in panel.members],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_panel_manifest(path, index: DatasetIndex, split: str = "train") -> ReferencePanel:
    """Rebuild a panel from its manifest, resolving ids against the index."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    by_id = {m.source_id: m for m in index.members(split)}
    members = []
    for source_id in payload["references"]:
        if source_id not in by_id:
            raise ConfigError(f"panel reference {source_id!r} not found in split {split!r}")
        members.append(by_id[source_id])
    return ReferencePanel(members=tuple(members), seed=payload["seed"], k=payload["k"])
