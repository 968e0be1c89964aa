"""Intensity and geometry preprocessing.

Pipeline for the small recognition network: resize to ``simple_size``,
truncate at fractions of the maximum gray value G, histogram-equalize
each truncated channel, stack to 3 channels, rescale to [0, 1].

Pipeline for the multi-task network: resample / crop-or-pad to
``multitask_size``, then per-slice z-score normalization only.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

__all__ = [
    "PreprocConfig",
    "ConstantImageWarning",
    "truncate",
    "equalize",
    "three_channel",
    "resample_inplane",
    "crop_or_pad",
    "resize",
    "normalize",
    "prepare_simple_input",
    "prepare_multitask_input",
]


class ConstantImageWarning(UserWarning):
    """Equalization of a constant image is the identity."""


@dataclass
class PreprocConfig:
    thresholds: tuple[float, ...] = (0.6, 0.8, 1.0)  # fractions of G
    target_spacing: float = 1.367  # mm
    multitask_size: int = 212
    simple_size: int = 100
    equalize_bins: int = 256

    def __post_init__(self) -> None:
        t = tuple(self.thresholds)
        if any(b <= a for a, b in zip(t, t[1:])) or t[-1] != 1.0:
            raise ValueError(f"thresholds must strictly increase to 1.0: {t}")
        if min(self.multitask_size, self.simple_size, self.equalize_bins) <= 0:
            raise ValueError("sizes and bin count must be positive")
        self.thresholds = t

    def to_json(self, path=None) -> str:
        s = json.dumps(asdict(self), indent=2)
        if path is not None:
            with open(path, "w") as f:
                f.write(s)
        return s

    @classmethod
    def from_json(cls, src) -> "PreprocConfig":
        if isinstance(src, str) and src.lstrip().startswith("{"):
            data = json.loads(src)
        else:
            with open(src) as f:
                data = json.load(f)
        data["thresholds"] = tuple(data.get("thresholds", (0.6, 0.8, 1.0)))
        return cls(**data)


def truncate(img, threshold: float) -> np.ndarray:
    """Clip gray values above `threshold` down to it."""
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    return np.minimum(np.asarray(img, dtype=np.float32), np.float32(threshold))


def equalize(img, bins: int = 256) -> np.ndarray:
    """Histogram equalization onto [0, bins-1] via the usual CDF remap.

    Monotone by construction; a constant image is returned unchanged with
    a ConstantImageWarning (the CDF remap would divide by zero).
    """
    a = np.asarray(img, dtype=np.float64)
    lo, hi = a.min(), a.max()
    if hi <= lo:
        warnings.warn("constant image: equalization is a no-op", ConstantImageWarning)
        return np.asarray(img, dtype=np.float32).copy()
    idx = np.floor((a - lo) / (hi - lo) * bins).astype(np.int64)
    np.clip(idx, 0, bins - 1, out=idx)
    hist = np.bincount(idx.ravel(), minlength=bins)
    cdf = np.cumsum(hist) / a.size
    cdf_min = cdf[np.nonzero(hist)[0][0]]
    lut = (cdf - cdf_min) / (1.0 - cdf_min) * (bins - 1)
    return lut[idx].astype(np.float32)


def three_channel(img, cfg: PreprocConfig | None = None) -> np.ndarray:
    """Stack equalized truncations at the configured fractions of G.

    Returns shape (3, H, W); the last channel is plain equalization since
    its threshold is G itself.
    """
    cfg = cfg or PreprocConfig()
    a = np.asarray(img, dtype=np.float32)
    g = float(a.max())
    if g <= 0:
        raise ValueError("maximum gray value must be positive")
    chans = [
        equalize(truncate(a, frac * g), cfg.equalize_bins) for frac in cfg.thresholds
    ]
    return np.stack(chans, axis=0)


def _bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape
    if (out_h, out_w) == (h, w):
        return img.astype(np.float32).copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    a = img[np.ix_(y0, x0)]
    b = img[np.ix_(y0, x1)]
    c = img[np.ix_(y1, x0)]
    d = img[np.ix_(y1, x1)]
    top = a * (1 - wx) + b * wx
    bot = c * (1 - wx) + d * wx
    return (top * (1 - wy) + bot * wy).astype(np.float32)


def _nearest(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape
    ys = np.clip(np.round((np.arange(out_h) + 0.5) * (h / out_h) - 0.5).astype(int), 0, h - 1)
    xs = np.clip(np.round((np.arange(out_w) + 0.5) * (w / out_w) - 0.5).astype(int), 0, w - 1)
    return img[np.ix_(ys, xs)].copy()


def resample_inplane(slice2d, spacing_in, spacing_out, is_label: bool = False):
    """Resample a slice to a new in-plane spacing.

    Output dims = round(dim * spacing_in / spacing_out) per axis; bilinear
    for images, nearest-neighbor for label maps.
    """
    a = np.asarray(slice2d)
    sin = np.broadcast_to(np.asarray(spacing_in, dtype=float), (2,))
    sout = np.broadcast_to(np.asarray(spacing_out, dtype=float), (2,))
    if (sin <= 0).any() or (sout <= 0).any():
        raise ValueError("spacings must be positive")
    out_h = max(1, int(round(a.shape[0] * sin[0] / sout[0])))
    out_w = max(1, int(round(a.shape[1] * sin[1] / sout[1])))
    if is_label:
        return _nearest(a, out_h, out_w)
    if (out_h, out_w) == a.shape:
        return np.asarray(a, dtype=np.float32).copy()
    return _bilinear(np.asarray(a, dtype=np.float64), out_h, out_w)


def crop_or_pad(slice2d, size: int) -> np.ndarray:
    """Center-crop or symmetrically zero-pad to size x size.

    Odd differences put the extra voxel at the high end, which keeps the
    center pixel fixed.
    """
    if size <= 0:
        raise ValueError("size must be positive")
    a = np.asarray(slice2d)
    out = a
    for axis in range(2):
        n = out.shape[axis]
        if n > size:
            lo = (n - size) // 2
            out = out.take(range(lo, lo + size), axis=axis)
        elif n < size:
            before = (size - n) // 2
            after = size - n - before
            pads = [(0, 0), (0, 0)]
            pads[axis] = (before, after)
            out = np.pad(out, pads)
    return out.copy()


def resize(slice2d, size) -> np.ndarray:
    """Bilinear resize; each axis scales independently."""
    if np.isscalar(size):
        size = (int(size), int(size))
    if min(size) <= 0:
        raise ValueError("size must be positive")
    return _bilinear(np.asarray(slice2d, dtype=np.float64), size[0], size[1])


def normalize(slice2d) -> np.ndarray:
    """Per-slice z-score; a constant slice maps to all zeros."""
    a = np.asarray(slice2d, dtype=np.float64)
    std = a.std()
    if std == 0:
        return np.zeros_like(a, dtype=np.float32)
    return ((a - a.mean()) / std).astype(np.float32)


def prepare_simple_input(slice2d, cfg: PreprocConfig | None = None) -> np.ndarray:
    """Full pipeline for the small recognition net: (3, S, S) in [0, 1]."""
    cfg = cfg or PreprocConfig()
    img = resize(slice2d, cfg.simple_size)
    if img.max() <= img.min():
        # Degenerate slice: equalization impossible, feed zeros.
        return np.zeros((3, cfg.simple_size, cfg.simple_size), dtype=np.float32)
    return three_channel(img, cfg) / np.float32(cfg.equalize_bins - 1)


def prepare_multitask_input(slice2d, cfg: PreprocConfig | None = None) -> np.ndarray:
    """Pipeline for the multi-task net: (1, S, S), z-scored."""
    cfg = cfg or PreprocConfig()
    img = crop_or_pad(slice2d, cfg.multitask_size)
    return normalize(img)[None, :, :]
