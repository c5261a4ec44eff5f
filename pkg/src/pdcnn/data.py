"""Dataset ingestion and augmentation.

Datasets are manifest CSVs (`path,label,category`) pointing at PDT1 image
tensors of shape (3, S, S) with values in [0, 1]. Offline augmentation
rotates every image by 90/180/270 degrees before the random 4-way batch
split (three batches train, one tests). Online augmentation crops a
(crop x crop) patch at a random offset with an optional horizontal flip;
for S=256 and crop 224 that is 32*32*2 = 2048 distinct choices. Test-time
input is always the deterministic center crop, no flip.
"""

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import tensor as T

STREAM_SYNTH = 7  # seed-mixing tag for the synthetic generator


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    label: int
    category: str
    rotation: int = 0  # quarter turns clockwise applied on load


@dataclass(frozen=True)
class AugmentationChoice:
    offset_y: int
    offset_x: int
    flip: bool


class _ImageStore:
    """Shared lazy cache of decoded (and rotated) image tensors."""

    def __init__(self):
        self._cache = {}

    def get(self, record: ManifestRecord) -> np.ndarray:
        key = (record.path, record.rotation)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        base = self._cache.get((record.path, 0))
        if base is None:
            base = T.read_pdt(record.path)
            if base.ndim != 3:
                raise ValueError(f"{record.path}: expected a rank-3 image tensor, "
                                 f"got shape {base.shape}")
            T.check_finite(base, record.path)
            self._cache[(record.path, 0)] = base
        img = base
        if record.rotation % 4:
            if img.shape[1] != img.shape[2]:
                raise ValueError(f"{record.path}: rotation requires a square "
                                 f"image, got {img.shape[1]}x{img.shape[2]}")
            for _ in range(record.rotation % 4):
                img = rotate90cw(img)
            self._cache[key] = img
        return img


def rotate90cw(img: np.ndarray) -> np.ndarray:
    """Quarter turn clockwise: pixel (y, x) moves to (x, S-1-y)."""
    return np.ascontiguousarray(img.swapaxes(-2, -1)[..., ::-1])


class Dataset:
    """Ordered records plus lazily loaded image tensors."""

    def __init__(self, records, crop_size: int = 224, store: _ImageStore = None):
        self.records = list(records)
        self.crop_size = crop_size
        self._store = store if store is not None else _ImageStore()

    def __len__(self):
        return len(self.records)

    def image(self, i: int) -> np.ndarray:
        img = self._store.get(self.records[i])
        if img.shape[1] < self.crop_size or img.shape[2] < self.crop_size:
            raise ValueError(
                f"{self.records[i].path}: image {img.shape[1]}x{img.shape[2]} "
                f"smaller than crop size {self.crop_size}")
        return img

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    def source_size(self) -> int:
        if not self.records:
            raise ValueError("empty dataset has no source size")
        return self.image(0).shape[1]


def load_manifest(path, crop_size: int = 224) -> Dataset:
    """Parse a manifest CSV; relative image paths resolve against its directory.

    Labels are validated per row (parse error with line number); image tensors
    are validated lazily on first access.
    """
    path = Path(path)
    records = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["path", "label", "category"]:
            raise ValueError(f"{path}:1: expected header path,label,category, "
                             f"got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            img_path, label_text, category = row
            if label_text not in ("0", "1"):
                raise ValueError(f"{path}:{lineno}: label must be 0 or 1, "
                                 f"got {label_text!r}")
            resolved = Path(img_path)
            if not resolved.is_absolute():
                resolved = path.parent / resolved
            records.append(ManifestRecord(path=str(resolved),
                                          label=int(label_text),
                                          category=category))
    return Dataset(records, crop_size=crop_size)


def write_manifest(path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["path", "label", "category"])
        for r in records:
            writer.writerow([r.path, r.label, r.category])


def rotate_augment(d: Dataset) -> Dataset:
    """Quadruple the dataset: each original followed by its 90/180/270-degree
    rotations, labels and categories preserved. Applied before the batch
    split, so rotated copies of one photo may land on both sides of it."""
    records = []
    for r in d.records:
        for k in range(4):
            records.append(replace(r, rotation=(r.rotation + k) % 4))
    return Dataset(records, crop_size=d.crop_size, store=d._store)


def split_batches(d: Dataset, rng: T.Rng):
    """Shuffle, partition into 4 nearly equal batches (sizes differ by <= 1,
    larger batches first), and return batches 1-3 as train, batch 4 as test."""
    n = len(d)
    if n < 4:
        raise ValueError(f"need at least 4 samples to split, got {n}")
    perm = rng.permutation(n)
    base, extra = divmod(n, 4)
    sizes = [base + (1 if i < extra else 0) for i in range(4)]
    bounds = np.cumsum([0] + sizes)
    batches = [[d.records[j] for j in perm[bounds[i]:bounds[i + 1]]]
               for i in range(4)]
    train = batches[0] + batches[1] + batches[2]
    test = batches[3]
    return (Dataset(train, crop_size=d.crop_size, store=d._store),
            Dataset(test, crop_size=d.crop_size, store=d._store))


def choice_count(source_size: int, crop: int) -> int:
    """Number of distinct (offset, flip) augmentation choices."""
    span = source_size - crop
    return (span * span * 2) if span > 0 else 2


def all_choices(source_size: int, crop: int):
    """Exhaustive enumeration of AugmentationChoice for tests and audits."""
    span = source_size - crop
    offsets = range(span) if span > 0 else range(1)
    return [AugmentationChoice(y, x, flip)
            for y in offsets for x in offsets for flip in (False, True)]


def apply_choice(image: np.ndarray, choice: AugmentationChoice,
                 crop: int) -> np.ndarray:
    patch = image[:, choice.offset_y:choice.offset_y + crop,
                  choice.offset_x:choice.offset_x + crop]
    if choice.flip:
        patch = patch[..., ::-1]
    return np.ascontiguousarray(patch)


def sample_patch(image: np.ndarray, crop: int, rng: T.Rng,
                 mode: str = "train") -> np.ndarray:
    """Train mode: uniform random offset in [0, S-crop) per axis plus a fair
    horizontal-flip coin (draw order: offset_y, offset_x, flip). Test mode:
    deterministic center crop, no flip."""
    s = image.shape[1]
    if crop > s:
        raise ValueError(f"crop {crop} exceeds source size {s}")
    if mode == "test":
        off = (s - crop) // 2
        return apply_choice(image, AugmentationChoice(off, off, False), crop)
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")
    span = s - crop
    oy = rng.integers(0, span) if span > 0 else 0
    ox = rng.integers(0, span) if span > 0 else 0
    flip = rng.integers(0, 2) == 1
    return apply_choice(image, AugmentationChoice(oy, ox, flip), crop)


def _bilinear_upsample(coarse: np.ndarray, size: int) -> np.ndarray:
    """(C, g, g) -> (C, size, size), corner-aligned bilinear interpolation."""
    g = coarse.shape[1]
    pos = np.linspace(0.0, g - 1.0, size)
    i0 = np.floor(pos).astype(int)
    i1 = np.minimum(i0 + 1, g - 1)
    frac = pos - i0
    rows = (coarse[:, i0, :] * (1.0 - frac)[None, :, None]
            + coarse[:, i1, :] * frac[None, :, None])
    return (rows[:, :, i0] * (1.0 - frac)[None, None, :]
            + rows[:, :, i1] * frac[None, None, :])


SMOOTH_GRID = 5
SMOOTH_AMPLITUDE = 0.15
NOISE_AMPLITUDE = 0.25


def gen_synthetic(n_per_class: int, size: int, difficulty: float, seed: int,
                  out_dir) -> Dataset:
    """Write a balanced synthetic dataset of 2*n_per_class PDT1 images plus
    manifest.csv into out_dir and return it as a Dataset.

    Label 1 images are smooth low-frequency fields; label 0 adds per-pixel
    noise with amplitude 0.25*(1 - difficulty), so difficulty 0 is maximally
    separable and difficulty 1 makes the classes indistinguishable. Byte
    deterministic for a fixed seed.
    """
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    if size < 8:
        raise ValueError(f"size must be >= 8, got {size}")
    if not 0.0 <= difficulty <= 1.0:
        raise ValueError(f"difficulty must be in [0, 1], got {difficulty}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    noise_amp = NOISE_AMPLITUDE * (1.0 - difficulty)
    for i in range(2 * n_per_class):
        label = 1 if i % 2 == 0 else 0
        rng = T.Rng(T.mix_seed(seed, STREAM_SYNTH, i))
        coarse = rng.normal((3, SMOOTH_GRID, SMOOTH_GRID), 1.0)
        img = 0.5 + SMOOTH_AMPLITUDE * _bilinear_upsample(coarse, size)
        if label == 0:
            noise = rng.normal((3, size, size), 1.0)
            img = img + noise_amp * np.clip(noise, -2.0, 2.0) * 0.5
        img = np.clip(img, 0.0, 1.0)
        name = f"img_{i:05d}.pdt"
        T.write_pdt(out_dir / name, img.astype(np.float32))
        records.append(ManifestRecord(path=name, label=label,
                                      category="synthetic"))
    write_manifest(out_dir / "manifest.csv", records)
    return load_manifest(out_dir / "manifest.csv", crop_size=size)
