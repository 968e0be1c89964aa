"""Training-pair generation, synthetic cardiac-like phantoms, and splits.

Phantoms stand in for the real CMR datasets: an off-center myocardial
ring enclosing an LV disk, with an RV crescent hugging one side, over a
textured background.  The construction breaks all 8 orientation
symmetries, so every orientation class of a phantom is distinguishable.
Class map: 0 background, 1 RV, 2 LV, 3 myocardium.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .orient import ALL_CODES, OrientCode, apply_to_grid, as_code

__all__ = [
    "Sample",
    "SplitSpec",
    "MODALITY_PROFILES",
    "generate_pair",
    "make_phantom",
    "split",
]

N_CLASSES = 4  # background, RV, LV, Myo


@dataclass
class Sample:
    """A training sample: image, orientation label, optional seg label."""

    image: np.ndarray
    orient: OrientCode
    seg: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.orient = as_code(self.orient)
        if self.seg is not None and self.seg.shape != self.image.shape:
            raise ValueError(
                f"segmentation shape {self.seg.shape} != image shape {self.image.shape}"
            )

    @property
    def one_hot(self) -> np.ndarray:
        v = np.zeros(8, dtype=np.float32)
        v[self.orient.bits] = 1.0
        return v


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self) -> None:
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"ratios must sum to 1: {self.ratios}")


def generate_pair(x, y=None, rng: np.random.Generator | None = None) -> Sample:
    """Function g: draw a code uniformly from the 8 classes and warp the
    image (and its label, with the same code) toward it."""
    rng = rng or np.random.default_rng()
    x = np.asarray(x)
    if x.size == 0:
        raise ValueError("empty image")
    if y is not None:
        y = np.asarray(y)
        if y.shape != x.shape:
            raise ValueError(f"label shape {y.shape} != image shape {x.shape}")
    code = ALL_CODES[int(rng.integers(8))]
    xt = apply_to_grid(code, x)
    yt = apply_to_grid(code, y) if y is not None else None
    return Sample(image=xt, orient=code, seg=yt)


# Per-class base intensities (background, RV, LV, Myo), loosely mimicking
# how the structures contrast in each sequence.
MODALITY_PROFILES: dict[str, tuple[float, float, float, float]] = {
    "bssfp": (40.0, 170.0, 200.0, 80.0),
    "lge": (90.0, 55.0, 70.0, 190.0),
    "t2": (25.0, 120.0, 150.0, 105.0),
}


def make_phantom(
    rng: np.random.Generator,
    size: int = 100,
    modality: str = "bssfp",
) -> tuple[np.ndarray, np.ndarray]:
    """A cardiac-like phantom image (float32, gray range ~[0, 255]) and its
    4-class segmentation (uint8)."""
    if size < 32:
        raise ValueError(f"size must be >= 32, got {size}")
    if modality not in MODALITY_PROFILES:
        raise ValueError(f"unknown modality {modality!r}")
    prof = MODALITY_PROFILES[modality]

    # Normalized coordinates with a mild random rotation of the anatomy.
    yy, xx = np.mgrid[0:size, 0:size]
    u = (xx - (size - 1) / 2) / size * 2
    v = (yy - (size - 1) / 2) / size * 2
    theta = np.deg2rad(rng.uniform(-15, 15))
    ur = np.cos(theta) * u + np.sin(theta) * v
    vr = -np.sin(theta) * u + np.cos(theta) * v

    # Heart off-center (up-left) so no flip or transpose fixes the image.
    cx = -0.16 + rng.uniform(-0.05, 0.05)
    cy = -0.22 + rng.uniform(-0.05, 0.05)
    r_out = 0.30 + rng.uniform(-0.03, 0.03)
    r_in = r_out * (0.58 + rng.uniform(-0.05, 0.05))
    d = np.hypot(ur - cx, vr - cy)
    lv = d < r_in
    myo = (d >= r_in) & (d < r_out)

    # RV crescent hugging the ring on its left.
    phi = np.pi + rng.uniform(-0.3, 0.3)
    rvx = cx + (r_out + 0.10) * np.cos(phi)
    rvy = cy + (r_out + 0.10) * np.sin(phi)
    r_rv = r_out * (0.85 + rng.uniform(-0.05, 0.05))
    rv = (np.hypot(ur - rvx, vr - rvy) < r_rv) & (d >= r_out)

    seg = np.zeros((size, size), dtype=np.uint8)
    seg[rv] = 1
    seg[lv] = 2
    seg[myo] = 3

    img = np.full((size, size), prof[0], dtype=np.float64)
    # Smooth diagonal shading gives the background its own orientation cue.
    img += 25.0 * (ur * 0.7 + vr * 0.3)
    img[rv] = prof[1]
    img[lv] = prof[2]
    img[myo] = prof[3]
    img += rng.normal(0.0, 4.0, img.shape)
    img *= 1.0 + rng.uniform(-0.08, 0.08)
    np.clip(img, 0.0, 255.0, out=img)
    return img.astype(np.float32), seg


def split(dataset: Sequence, spec: SplitSpec) -> tuple[list, list, list]:
    """Deterministic disjoint train/val/test split, sizes within +-1 of
    the exact ratios (largest-remainder rounding)."""
    n = len(dataset)
    if n < 10:
        raise ValueError(f"dataset too small to split: {n} samples")
    exact = [r * n for r in spec.ratios]
    counts = [int(np.floor(e)) for e in exact]
    rem = n - sum(counts)
    order = np.argsort([c - e for c, e in zip(counts, exact)])
    for i in range(rem):
        counts[order[i]] += 1
    perm = np.random.default_rng(spec.seed).permutation(n)
    a, b = counts[0], counts[0] + counts[1]
    pick = lambda idx: [dataset[i] for i in idx]
    return pick(perm[:a]), pick(perm[a:b]), pick(perm[b:])
