"""Dataset loading, normalization, pair sampling, and raw shards.

Directory layout for installation-check data::

    <root>/<split>/<class>/[<subclass>/]*.png

with split in {train, validation, edge-train, edge-validation} and class
in {correct, incorrect}.  The edge splits hold only additional incorrect
images; correct counterparts are reused from the main splits.

The Omniglot layout is the standard released tree
``<root>/<alphabet>/<character>/*.png``; the first requested alphabet
plays the role of the correct class and characters act as subclasses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from PIL import Image

from .augment import seed_rng
from .container import ContainerEntry, read_container, write_container
from .errors import ConfigError, DecodeError, EmptyClassError, LayoutError

CLASS_CORRECT = "correct"
CLASS_INCORRECT = "incorrect"
MAIN_SPLITS = ("train", "validation")
EDGE_SPLITS = ("edge-train", "edge-validation")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

SeedLike = Union[int, Sequence[int]]


def _as_seed_tuple(seed: SeedLike) -> tuple:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(v) for v in seed)


@dataclass(frozen=True)
class LabeledImage:
    """A decoded, normalized image with its labels."""

    pixels: np.ndarray  # (H, W, 3) float32 in [0, 1]
    label: str          # "correct" | "incorrect"
    subclass: Optional[str]
    split: str
    source_id: str


@dataclass(frozen=True)
class ImageRef:
    """A dataset member before decoding: path- or memory-backed."""

    source_id: str
    label: str
    split: str
    subclass: Optional[str] = None
    path: Optional[Path] = None
    pixels: Optional[np.ndarray] = None

    def load(self, resolution: Optional[int] = None) -> LabeledImage:
        if self.pixels is not None:
            px = self.pixels
            if resolution is not None and (px.shape[0] != resolution or px.shape[1] != resolution):
                raise ConfigError(
                    f"{self.source_id}: in-memory image is {px.shape[0]}x{px.shape[1]}, "
                    f"expected {resolution}x{resolution}")
            return LabeledImage(px, self.label, self.subclass, self.split, self.source_id)
        if resolution is None:
            raise ConfigError(f"{self.source_id}: a resolution is required to decode from disk")
        px = decode_and_normalize(self.path, resolution)
        return LabeledImage(px, self.label, self.subclass, self.split, self.source_id)


@dataclass(frozen=True)
class PairSample:
    """Two dataset members plus the same-class label."""

    image_a: ImageRef
    image_b: ImageRef
    same: bool


@dataclass
class DatasetIndex:
    """Per-split image lists plus bookkeeping for deterministic sampling."""

    splits: dict[str, list[ImageRef]]
    seed: int
    layout: str
    root: Optional[Path] = None
    skipped: list[str] = field(default_factory=list)

    def members(self, split: str) -> list[ImageRef]:
        if split in self.splits:
            return self.splits[split]
        raise LayoutError(f"split {split!r} not present; have {sorted(self.splits)}")

    def class_members(self, split: str, label: str) -> list[ImageRef]:
        return [m for m in self.members(split) if m.label == label]

    def counts(self) -> dict:
        out = {}
        for split, members in sorted(self.splits.items()):
            per = {}
            for m in members:
                per[m.label] = per.get(m.label, 0) + 1
            per["total"] = len(members)
            out[split] = per
        return out


def decode_and_normalize(path, resolution: int) -> np.ndarray:
    """Decode an image file to (res, res, 3) float32 in [0, 1].

    Resizing uses bilinear interpolation; grayscale sources are replicated
    across the three channels.
    """
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            if rgb.size != (resolution, resolution):
                rgb = rgb.resize((resolution, resolution), Image.BILINEAR)
            arr = np.asarray(rgb, dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise DecodeError(f"cannot decode image {path}: {exc}") from exc
    return np.ascontiguousarray(arr)


def _scan_class_dir(class_dir: Path, split: str, label: str, skipped: list[str]) -> list[ImageRef]:
    members = []
    for p in sorted(class_dir.rglob("*")):
        if p.is_dir():
            continue
        if p.suffix.lower() not in IMAGE_SUFFIXES:
            skipped.append(str(p))
            continue
        rel = p.relative_to(class_dir)
        subclass = rel.parts[0] if len(rel.parts) > 1 else None
        source_id = str(p.relative_to(class_dir.parent.parent))
        members.append(ImageRef(source_id=source_id, label=label, split=split,
                                subclass=subclass, path=p))
    return members


def load_dataset_index(root, layout: str = "bracket", seed: int = 0,
                       alphabets: Sequence[str] = ("Latin", "Greek")) -> DatasetIndex:
    """Build a deterministic index of the dataset under ``root``."""
    if layout == "bracket":
        return _load_bracket_index(Path(root), seed)
    if layout == "omniglot-subset":
        return build_omniglot_subset(root, alphabets=alphabets, seed=seed)
    raise ConfigError(f"unknown dataset layout {layout!r}")


def _load_bracket_index(root: Path, seed: int) -> DatasetIndex:
    if not root.is_dir():
        raise LayoutError(f"dataset root {root} does not exist")
    splits: dict[str, list[ImageRef]] = {}
    skipped: list[str] = []
    for split in MAIN_SPLITS:
        split_dir = root / split
        if not split_dir.is_dir():
            raise LayoutError(f"missing split directory {split_dir}")
        members: list[ImageRef] = []
        for label in (CLASS_CORRECT, CLASS_INCORRECT):
            class_dir = split_dir / label
            if not class_dir.is_dir():
                raise LayoutError(f"missing class directory {class_dir}")
            found = _scan_class_dir(class_dir, split, label, skipped)
            if not found:
                raise EmptyClassError(f"no images under {class_dir}")
            members.extend(found)
        splits[split] = members
    for split in EDGE_SPLITS:
        split_dir = root / split
        if not split_dir.is_dir():
            continue
        members = []
        for label in (CLASS_CORRECT, CLASS_INCORRECT):
            class_dir = split_dir / label
            if class_dir.is_dir():
                found = _scan_class_dir(class_dir, split, label, skipped)
                if not found:
                    raise EmptyClassError(f"no images under {class_dir}")
                members.extend(found)
        if not members:
            raise EmptyClassError(f"no class directories under {split_dir}")
        base = "train" if split == "edge-train" else "validation"
        if not any(m.label == CLASS_CORRECT for m in members):
            # edge sets add only incorrect images; borrow correct ones from the main split
            members = [m for m in splits[base] if m.label == CLASS_CORRECT] + members
        splits[split] = members
    return DatasetIndex(splits=splits, seed=seed, layout="bracket", root=root, skipped=skipped)


def build_omniglot_subset(root, alphabets: Sequence[str] = ("Latin", "Greek"),
                          seed: int = 0, val_fraction: float = 0.3) -> DatasetIndex:
    """Two-alphabet verification index with character-disjoint splits.

    The first alphabet maps to the correct class, the second to the
    incorrect class; characters become subclasses.  Characters are split
    70/30 between train and validation, so no character appears in both.
    """
    root = Path(root)
    if len(alphabets) != 2:
        raise ConfigError(f"exactly two alphabets are required, got {list(alphabets)}")
    labels = {alphabets[0]: CLASS_CORRECT, alphabets[1]: CLASS_INCORRECT}
    splits: dict[str, list[ImageRef]] = {"train": [], "validation": []}
    skipped: list[str] = []
    for alphabet in alphabets:
        alpha_dir = root / alphabet
        if not alpha_dir.is_dir():
            alt = root / "images_background" / alphabet
            if alt.is_dir():
                alpha_dir = alt
            else:
                raise LayoutError(f"alphabet directory {alphabet!r} not found under {root}")
        characters = sorted(d for d in alpha_dir.iterdir() if d.is_dir())
        if not characters:
            raise EmptyClassError(f"alphabet {alphabet!r} has no character directories")
        rng = seed_rng((seed, _stable_hash(alphabet)))
        order = list(rng.permutation(len(characters)))
        n_val = min(len(characters) - 1, max(1, round(val_fraction * len(characters))))
        val_chars = {characters[i].name for i in order[:n_val]}
        label = labels[alphabet]
        n_images = 0
        for char_dir in characters:
            split = "validation" if char_dir.name in val_chars else "train"
            for p in sorted(char_dir.iterdir()):
                if p.suffix.lower() not in IMAGE_SUFFIXES:
                    skipped.append(str(p))
                    continue
                n_images += 1
                splits[split].append(ImageRef(
                    source_id=f"{alphabet}/{char_dir.name}/{p.name}",
                    label=label, split=split, subclass=f"{alphabet}/{char_dir.name}", path=p))
        if n_images == 0:
            raise EmptyClassError(f"alphabet {alphabet!r} contains no images")
    return DatasetIndex(splits=splits, seed=seed, layout="omniglot-subset", root=root, skipped=skipped)


def _stable_hash(text: str) -> int:
    value = 0
    for ch in text:
        value = (value * 131 + ord(ch)) % (2 ** 31)
    return value


# ---------------------------------------------------------------------------
# pair sampling


def _split_pool(index: DatasetIndex, split: str) -> tuple[list[ImageRef], list[ImageRef]]:
    members = index.members(split)
    if not members:
        raise EmptyClassError(f"split {split!r} has no images")
    correct = [m for m in members if m.label == CLASS_CORRECT]
    incorrect = [m for m in members if m.label == CLASS_INCORRECT]
    return correct, incorrect


def _pick(rng: np.random.Generator, pool: list[ImageRef]) -> ImageRef:
    return pool[int(rng.integers(len(pool)))]


def sample_random_pairs(index: DatasetIndex, n: int, seed: SeedLike,
                        split: str = "train") -> list[PairSample]:
    """Uniform pairs with the same/different label balanced 50/50.

    Every ordered class combination occurs with positive probability.  If
    one class is empty, all pairs come from the other class (same=1).
    """
    correct, incorrect = _split_pool(index, split)
    rng = seed_rng((*_as_seed_tuple(seed), 9101))
    pools = [p for p in (correct, incorrect) if p]
    pairs = []
    want_same = _balanced_flags(n, rng)
    for i in range(n):
        if len(pools) == 1 or want_same[i]:
            pool = pools[int(rng.integers(len(pools)))]
            a, b = _pick(rng, pool), _pick(rng, pool)
        else:
            first_correct = bool(rng.integers(2))
            a = _pick(rng, correct if first_correct else incorrect)
            b = _pick(rng, incorrect if first_correct else correct)
        pairs.append(PairSample(a, b, same=a.label == b.label))
    return pairs


def sample_reference_anchored_pairs(index: DatasetIndex, n: int, seed: SeedLike,
                                    split: str = "train") -> list[PairSample]:
    """Pairs whose first member is always a correct-class reference image.

    The second member is drawn from the correct or incorrect class with a
    50/50 stratified balance, so ``same`` labels are balanced too.
    """
    correct, incorrect = _split_pool(index, split)
    if not correct:
        raise EmptyClassError(f"split {split!r} has no correct-class images to anchor on")
    rng = seed_rng((*_as_seed_tuple(seed), 9102))
    want_same = _balanced_flags(n, rng)
    pairs = []
    for i in range(n):
        a = _pick(rng, correct)
        if incorrect and not want_same[i]:
            b = _pick(rng, incorrect)
        else:
            b = _pick(rng, correct)
        pairs.append(PairSample(a, b, same=a.label == b.label))
    return pairs


def _balanced_flags(n: int, rng: np.random.Generator) -> np.ndarray:
    """Exactly half True (odd n gets one extra True), order shuffled."""
    flags = np.zeros(n, dtype=bool)
    flags[: (n + 1) // 2] = True
    rng.shuffle(flags)
    return flags


# ---------------------------------------------------------------------------
# raw shards (decoded images in the binary container format)


SHARDS_KIND = "shards"


def write_shards(index: DatasetIndex, out_dir, resolution: int) -> list[Path]:
    """Write one shard container per split; bytes are deterministic."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for split in sorted(index.splits):
        entries = []
        for m in index.splits[split]:
            img = m.load(resolution)
            entries.append(ContainerEntry(
                m.source_id, "image", img.pixels,
                extra={"label": m.label, "subclass": m.subclass, "split": split}))
        path = out_dir / f"shards-{split}.bin"
        write_container(path, SHARDS_KIND, entries,
                        meta={"split": split, "resolution": resolution, "seed": index.seed,
                              "layout": index.layout})
        written.append(path)
    return written


def load_shard_index(shard_dir) -> DatasetIndex:
    """Rebuild a memory-backed index from shard containers."""
    shard_dir = Path(shard_dir)
    paths = sorted(shard_dir.glob("shards-*.bin"))
    if not paths:
        raise LayoutError(f"no shard containers under {shard_dir}")
    splits: dict[str, list[ImageRef]] = {}
    seed = 0
    layout = "shards"
    for path in paths:
        kind, entries, meta = read_container(path)
        if kind != SHARDS_KIND:
            raise LayoutError(f"{path}: container kind {kind!r} is not a shard file")
        split = meta["split"]
        seed = meta.get("seed", 0)
        layout = meta.get("layout", layout)
        splits[split] = [
            ImageRef(source_id=e.entry_id, label=e.extra["label"], split=split,
                     subclass=e.extra.get("subclass"), pixels=e.array)
            for e in entries
        ]
    return DatasetIndex(splits=splits, seed=seed, layout=layout, root=shard_dir)
