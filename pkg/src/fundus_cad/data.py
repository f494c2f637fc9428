"""Image decoding, preprocessing, augmentation, manifests and batching.

Preprocessing mirrors the training recipe: center-crop the largest square,
bilinear-resize to the model input size, subtract per-channel RGB means
(no variance scaling), channel-first layout. Augmentation (train split only)
applies, in draw order: random square crop re-resized to the original extent,
horizontal flip, and a multiplicative per-image brightness factor. Lesion
masks ride along through every geometric transform (nearest-neighbor, no
brightness) so mask and image never disagree.

Manifest files are UTF-8 TSV, one record per line:
``relative/image.png<TAB>label<TAB>relative/mask.png`` (mask column optional).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .autodiff import Tensor
from .rng import RngState

__all__ = [
    "AugmentConfig",
    "DatasetManifest",
    "ImageSample",
    "ManifestEntry",
    "NormalizationStats",
    "augment",
    "batch_iter",
    "center_crop_resize",
    "load_manifest",
    "load_sample",
    "load_samples",
    "normalize",
    "save_manifest",
]

LABEL_NORMAL = 0
LABEL_GLAUCOMA = 1


@dataclass
class ImageSample:
    pixels: np.ndarray                    # H x W x 3 uint8 RGB
    label: int
    lesion_mask: np.ndarray | None = None  # H x W bool
    id: str = ""

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"pixels must be HxWx3, got {self.pixels.shape}")
        if self.label not in (LABEL_NORMAL, LABEL_GLAUCOMA):
            raise ValueError(f"label must be 0 (normal) or 1 (glaucoma), got {self.label}")
        if self.lesion_mask is not None and self.lesion_mask.shape != self.pixels.shape[:2]:
            raise ValueError(
                f"mask extent {self.lesion_mask.shape} != image extent {self.pixels.shape[:2]}")


@dataclass(frozen=True)
class NormalizationStats:
    """Per-channel RGB means, in 0-255 pixel units."""

    mean_r: float = 105.51
    mean_g: float = 54.52
    mean_b: float = 16.19

    def as_array(self) -> np.ndarray:
        arr = np.array([self.mean_r, self.mean_g, self.mean_b], dtype=np.float32)
        if not np.all(np.isfinite(arr)):
            raise ValueError("normalization means must be finite")
        return arr


@dataclass(frozen=True)
class AugmentConfig:
    random_crop_fraction: float = 0.9
    hflip_probability: float = 0.5
    brightness_sigma: float = 0.8  # factor ~ U[1-sigma, 1+sigma], floored at 0.2

    def __post_init__(self):
        if not 0.0 < self.random_crop_fraction <= 1.0:
            raise ValueError("random_crop_fraction must be in (0, 1]")
        if not 0.0 <= self.hflip_probability <= 1.0:
            raise ValueError("hflip_probability must be in [0, 1]")
        if self.brightness_sigma < 0.0:
            raise ValueError("brightness_sigma must be >= 0")


@dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    label: int
    mask_path: str | None = None


@dataclass
class DatasetManifest:
    root: Path
    entries: list[ManifestEntry]
    split: str = ""

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def class_counts(self) -> tuple[int, int]:
        labels = [e.label for e in self.entries]
        return labels.count(LABEL_NORMAL), labels.count(LABEL_GLAUCOMA)

    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.entries], dtype=np.int64)

    def subset(self, indices) -> "DatasetManifest":
        return DatasetManifest(self.root, [self.entries[i] for i in indices], self.split)


# -- resampling helpers ---------------------------------------------------------

def _resize_rgb(pixels: np.ndarray, width: int, height: int) -> np.ndarray:
    if pixels.shape[0] == height and pixels.shape[1] == width:
        return pixels
    img = Image.fromarray(pixels, mode="RGB").resize((width, height), Image.BILINEAR)
    return np.asarray(img)


def _resize_mask(mask: np.ndarray, width: int, height: int) -> np.ndarray:
    if mask.shape[0] == height and mask.shape[1] == width:
        return mask
    img = Image.fromarray(mask.astype(np.uint8) * 255, mode="L").resize(
        (width, height), Image.NEAREST)
    return np.asarray(img) > 0


# -- preprocessing ----------------------------------------------------------------

def center_crop_resize(sample: ImageSample, target: int) -> ImageSample:
    """Crop the largest centered square, then bilinear-resize to target x target.

    The mask, when present, goes through the identical geometry with
    nearest-neighbor interpolation to stay binary.
    """
    if target < 8:
        raise ValueError(f"target must be >= 8, got {target}")
    h, w = sample.pixels.shape[:2]
    if h == 0 or w == 0:
        raise ValueError("degenerate image with zero extent")
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    pixels = sample.pixels[top:top + side, left:left + side]
    mask = None
    if sample.lesion_mask is not None:
        mask = sample.lesion_mask[top:top + side, left:left + side]
        mask = _resize_mask(mask, target, target)
    return ImageSample(_resize_rgb(pixels, target, target).copy(), sample.label, mask, sample.id)


def normalize(pixels: np.ndarray, stats: NormalizationStats = NormalizationStats()) -> np.ndarray:
    """Subtract per-channel means; returns channel-first 3 x H x W float32."""
    shifted = pixels.astype(np.float32) - stats.as_array()
    return np.ascontiguousarray(shifted.transpose(2, 0, 1))


def augment(sample: ImageSample, cfg: AugmentConfig, rng: RngState) -> ImageSample:
    """Seeded train-time augmentation preserving label and extent.

    Draw order is fixed (crop top, crop left, flip, brightness) so a given
    RngState always reproduces the same output bytes.
    """
    h, w = sample.pixels.shape[:2]
    pixels, mask = sample.pixels, sample.lesion_mask

    side = max(1, round(cfg.random_crop_fraction * min(h, w)))
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    flip = rng.random() < cfg.hflip_probability
    factor = float(rng.uniform(1.0 - cfg.brightness_sigma, 1.0 + cfg.brightness_sigma))
    factor = max(factor, 0.2)

    if side != h or side != w:
        pixels = _resize_rgb(pixels[top:top + side, left:left + side], w, h)
        if mask is not None:
            mask = _resize_mask(mask[top:top + side, left:left + side], w, h)
    if flip:
        pixels = pixels[:, ::-1]
        if mask is not None:
            mask = mask[:, ::-1]
    if factor != 1.0:
        pixels = np.clip(np.rint(pixels.astype(np.float32) * factor), 0, 255).astype(np.uint8)
    return ImageSample(np.ascontiguousarray(pixels), sample.label,
                       None if mask is None else np.ascontiguousarray(mask), sample.id)


# -- manifests and loading ---------------------------------------------------------

def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    lines = []
    for e in manifest.entries:
        cols = [e.image_path, str(e.label)]
        if e.mask_path is not None:
            cols.append(e.mask_path)
        lines.append("\t".join(cols))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse a TSV manifest; every referenced file must exist."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    root = path.parent
    entries: list[ManifestEntry] = []
    for ln, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) < 2:
            raise ValueError(f"{path}:{ln}: expected at least 2 tab-separated columns")
        image_path, label = cols[0], int(cols[1])
        mask_path = cols[2] if len(cols) > 2 and cols[2] else None
        if not (root / image_path).is_file():
            raise FileNotFoundError(f"{path}:{ln}: missing image file {root / image_path}")
        if mask_path is not None and not (root / mask_path).is_file():
            raise FileNotFoundError(f"{path}:{ln}: missing mask file {root / mask_path}")
        entries.append(ManifestEntry(image_path, label, mask_path))
    return DatasetManifest(root, entries, split=path.stem)


def load_sample(manifest: DatasetManifest, index: int) -> ImageSample:
    entry = manifest.entries[index]
    img_path = manifest.root / entry.image_path
    img = Image.open(img_path).convert("RGB")
    pixels = np.asarray(img)
    mask = None
    if entry.mask_path is not None:
        mask = np.asarray(Image.open(manifest.root / entry.mask_path).convert("L")) > 0
    return ImageSample(pixels, entry.label, mask, id=Path(entry.image_path).stem)


def load_samples(manifest: DatasetManifest, resize_to: int | None = None) -> list[ImageSample]:
    """Decode every sample, optionally pre-applying center_crop_resize (a
    memory-for-speed cache used by the training loop)."""
    samples = [load_sample(manifest, i) for i in range(len(manifest))]
    if resize_to is not None:
        samples = [center_crop_resize(s, resize_to) for s in samples]
    return samples


def batch_iter(manifest: DatasetManifest, batch_size: int, input_size: int,
               shuffle: bool = False, rng: RngState | None = None,
               augment_cfg: AugmentConfig | None = None,
               stats: NormalizationStats = NormalizationStats(),
               samples: list[ImageSample] | None = None,
               ) -> Iterator[tuple[Tensor, np.ndarray]]:
    """Yield (Tensor N x 3 x S x S, labels) batches covering every sample once.

    The last short batch is kept. Shuffling draws from ``rng``; per-sample
    augmentation streams derive from (rng, sample id) so worker parallelism
    cannot change results.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = len(manifest)
    if shuffle:
        if rng is None:
            raise ValueError("shuffle=True needs an RngState")
        order = rng.derive("shuffle").permutation(n)
    else:
        order = np.arange(n)
    if augment_cfg is not None and rng is None:
        raise ValueError("augmentation needs an RngState")

    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        arrays, labels = [], []
        for i in idx:
            sample = samples[i] if samples is not None else load_sample(manifest, int(i))
            sample = center_crop_resize(sample, input_size)
            if augment_cfg is not None:
                sample = augment(sample, augment_cfg, rng.derive("augment", sample.id))
            arrays.append(normalize(sample.pixels, stats))
            labels.append(sample.label)
        yield Tensor(np.stack(arrays)), np.array(labels, dtype=np.int64)
