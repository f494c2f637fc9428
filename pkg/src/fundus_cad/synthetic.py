"""Seeded synthetic fundus-like corpus with lesion masks.

Stands in for a private clinical dataset at desk scale. Each image is a dark
circular retinal field with vessel-like curves and a bright elliptical optic
disc containing a paler inner cup. The glaucomatous class draws an enlarged
cup (cup-to-disc ratio above the class threshold) and writes the cup region
as its lesion mask; the normal class draws a small cup and an all-zero mask.
Per-sample cup-to-disc ratios land in a JSON sidecar so the corpus'
by-construction separability can be audited.

Rendering streams derive from (seed, split, index), so generation is
bit-reproducible and trivially parallelizable.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .data import DatasetManifest, ManifestEntry, save_manifest
from .rng import RngState

__all__ = ["SyntheticConfig", "generate_synthetic_corpus"]


@dataclass(frozen=True)
class SyntheticConfig:
    train_count: int = 1080
    val_count: int = 220
    test_count: int = 110
    extent: int = 256               # pre-crop square image size
    seed: int = 0
    noise_level: float = 7.0
    disc_radius_range: tuple[float, float] = (0.16, 0.25)    # fraction of extent
    cup_ratio_normal: tuple[float, float] = (0.22, 0.42)
    cup_ratio_glaucoma: tuple[float, float] = (0.62, 0.88)
    class_threshold: float = 0.5    # cdr line that separates the classes
    vessel_count: int = 6

    def __post_init__(self):
        for name, count in (("train", self.train_count), ("val", self.val_count),
                            ("test", self.test_count)):
            if count % 2 != 0:
                raise ValueError(f"{name}_count must be even for an exact 1:1 balance, "
                                 f"got {count}")
        if self.extent < 32:
            raise ValueError("extent must be >= 32")
        if not (self.cup_ratio_normal[1] < self.class_threshold < self.cup_ratio_glaucoma[0]):
            raise ValueError("class cup-ratio ranges must straddle class_threshold")


def _ellipse_mask(extent: int, cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
    yy, xx = np.mgrid[0:extent, 0:extent]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _render_sample(cfg: SyntheticConfig, rng: RngState, label: int
                   ) -> tuple[np.ndarray, np.ndarray, float]:
    """Returns (pixels HxWx3 uint8, cup mask HxW bool, cup-to-disc ratio)."""
    e = cfg.extent
    yy, xx = np.mgrid[0:e, 0:e].astype(np.float32)
    center = (e - 1) / 2.0
    img = np.zeros((e, e, 3), dtype=np.float32)
    img += np.array([10.0, 5.0, 4.0])

    # retinal field: dark reddish disc with radial falloff
    field_r = 0.48 * e
    dist = np.sqrt((yy - center) ** 2 + (xx - center) ** 2)
    field = np.clip(1.0 - (dist / field_r) ** 2, 0.0, 1.0)
    img += field[..., None] * np.array([150.0, 55.0, 25.0])

    # vessel-like quadratic curves radiating across the field
    vessel = np.zeros((e, e), dtype=bool)
    for _ in range(cfg.vessel_count):
        angle = rng.uniform(0.0, 2.0 * np.pi)
        p0 = np.array([center + field_r * np.sin(angle), center + field_r * np.cos(angle)])
        p2 = np.array([center + rng.uniform(-0.2, 0.2) * e,
                       center + rng.uniform(-0.2, 0.2) * e])
        p1 = (p0 + p2) / 2 + np.array([rng.uniform(-0.15, 0.15) * e,
                                       rng.uniform(-0.15, 0.15) * e])
        t = np.linspace(0.0, 1.0, 3 * e)[:, None]
        pts = (1 - t) ** 2 * p0 + 2 * t * (1 - t) * p1 + t ** 2 * p2
        thick = int(rng.integers(1, 3))
        for dy in range(-thick, thick + 1):
            for dx in range(-thick, thick + 1):
                ys = np.clip(np.round(pts[:, 0] + dy).astype(int), 0, e - 1)
                xs = np.clip(np.round(pts[:, 1] + dx).astype(int), 0, e - 1)
                vessel[ys, xs] = True
    vessel &= dist <= field_r
    img[vessel] = img[vessel] * 0.45 + np.array([35.0, 8.0, 6.0])

    # optic disc with inner cup; the cup size carries the class signal
    disc_r = rng.uniform(*cfg.disc_radius_range) * e
    cy = center + rng.uniform(-0.10, 0.10) * e
    cx = center + rng.uniform(-0.10, 0.10) * e
    squash = rng.uniform(0.85, 1.0)
    cdr = rng.uniform(*(cfg.cup_ratio_glaucoma if label == 1 else cfg.cup_ratio_normal))

    disc = _ellipse_mask(e, cy, cx, disc_r * squash, disc_r)
    cup = _ellipse_mask(e, cy, cx, disc_r * squash * cdr, disc_r * cdr)
    img[disc] = img[disc] * 0.25 + np.array([205.0, 160.0, 90.0])
    img[cup] = img[cup] * 0.20 + np.array([235.0, 215.0, 170.0])

    img += rng.normal(scale=cfg.noise_level, size=img.shape)
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    mask = cup if label == 1 else np.zeros((e, e), dtype=bool)
    return pixels, mask, float(cdr)


def generate_synthetic_corpus(cfg: SyntheticConfig, out_dir: str | Path
                              ) -> dict[str, DatasetManifest]:
    """Render all splits under ``out_dir``; returns the per-split manifests.

    Layout: images/<id>.png, masks/<id>.png, <split>.tsv, corpus.json.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    root_rng = RngState(cfg.seed)

    manifests: dict[str, DatasetManifest] = {}
    audit: dict[str, dict] = {}
    for split, count in (("train", cfg.train_count), ("val", cfg.val_count),
                         ("test", cfg.test_count)):
        entries = []
        for i in range(count):
            label = i % 2
            sample_id = f"{split}_{i:05d}"
            pixels, mask, cdr = _render_sample(cfg, root_rng.derive(split, i), label)
            Image.fromarray(pixels, mode="RGB").save(out / "images" / f"{sample_id}.png")
            Image.fromarray(mask.astype(np.uint8) * 255, mode="L").save(
                out / "masks" / f"{sample_id}.png")
            entries.append(ManifestEntry(f"images/{sample_id}.png", label,
                                         f"masks/{sample_id}.png"))
            audit[sample_id] = {"label": label, "cup_to_disc": round(cdr, 6)}
        manifest = DatasetManifest(out, entries, split=split)
        save_manifest(manifest, out / f"{split}.tsv")
        manifests[split] = manifest

    sidecar = {"config": asdict(cfg), "seed": cfg.seed, "samples": audit}
    (out / "corpus.json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifests
