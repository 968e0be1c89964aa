"""Model definitions: the small 3-block orientation CNN, the U-Net
backbone, and the orientation head that reads the predicted masks as an
attention map (input image concatenated with the mask channels).

Parameters live in ordered dicts of named Tensors; freezing toggles
``requires_grad`` so frozen parameters receive exactly zero (absent)
gradients.  Models save/load through the checkpoint format plus a model
card JSON recording input size, head type, and class order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field
from pathlib import Path
from typing import Literal

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .orient import ALL_CODES, OrientCode

__all__ = [
    "SimpleCnnConfig",
    "MultiTaskConfig",
    "SimpleCnn",
    "MultiTaskNet",
    "predict_code",
    "bits_to_class_probs",
    "save_model",
    "load_simple",
    "load_multitask",
]

HeadType = Literal["softmax8", "bits3"]


def _he_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)


class _Module:
    """Tiny parameter-container base."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def _add(self, name: str, arr: np.ndarray) -> Tensor:
        t = Tensor(arr, requires_grad=True)
        self._params[name] = t
        return t

    def params(self) -> dict[str, Tensor]:
        return dict(self._params)

    def param_list(self) -> list[Tensor]:
        return list(self._params.values())

    def set_trainable(self, trainable: bool, prefix: str = "") -> None:
        for name, p in self._params.items():
            if name.startswith(prefix):
                p.requires_grad = trainable

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self._params.items():
            if name not in state:
                raise ValueError(f"checkpoint missing parameter {name!r}")
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: checkpoint {arr.shape}, model {p.data.shape}"
                )
            p.data = arr.copy()

    def n_params(self) -> int:
        return sum(p.data.size for p in self._params.values())


def _conv_block_params(mod: _Module, rng, name: str, cin: int, cout: int, k: int = 3):
    mod._add(f"{name}.w", _he_init(rng, (cout, cin, k, k), cin * k * k))
    mod._add(f"{name}.b", np.zeros(cout, dtype=np.float32))


def _conv(mod: _Module, name: str, x: Tensor, pad: int = 1) -> Tensor:
    return ad.conv2d(x, mod._params[f"{name}.w"], mod._params[f"{name}.b"], pad=pad)


@dataclass
class SimpleCnnConfig:
    in_channels: int = 3
    input_size: int = 100
    widths: tuple[int, int, int] = (16, 32, 64)
    head: HeadType = "softmax8"
    seed: int = 0

    def __post_init__(self):
        self.widths = tuple(self.widths)


class SimpleCnn(_Module):
    """3 conv blocks (conv -> relu -> max-pool) + one fully connected layer."""

    def __init__(self, cfg: SimpleCnnConfig | None = None):
        super().__init__()
        self.cfg = cfg or SimpleCnnConfig()
        rng = np.random.default_rng(self.cfg.seed)
        cin = self.cfg.in_channels
        s = self.cfg.input_size
        for i, cout in enumerate(self.cfg.widths):
            _conv_block_params(self, rng, f"conv{i}", cin, cout)
            cin = cout
            s = s // 2
        self._flat = cin * s * s
        n_out = 8 if self.cfg.head == "softmax8" else 3
        self._add("fc.w", _he_init(rng, (self._flat, n_out), self._flat))
        self._add("fc.b", np.zeros(n_out, dtype=np.float32))

    def forward(self, x: Tensor) -> Tensor:
        """(N, C, S, S) -> logits (N, 8) or (N, 3) for the bits head."""
        expected = (self.cfg.in_channels, self.cfg.input_size, self.cfg.input_size)
        if x.data.ndim != 4 or x.data.shape[1:] != expected:
            raise ValueError(f"expected input (N, {expected}), got {x.data.shape}")
        h = x
        for i in range(len(self.cfg.widths)):
            h = ad.max_pool2d(ad.relu(_conv(self, f"conv{i}", h)))
        h = ad.flatten(h)
        return ad.add(ad.matmul(h, self._params["fc.w"]),
                      self._params["fc.b"])

    def class_probs(self, x: Tensor) -> Tensor:
        """(N, 8) probabilities regardless of head type."""
        logits = self.forward(x)
        if self.cfg.head == "softmax8":
            return ad.softmax(logits, axis=-1)
        return bits_to_class_probs(ad.sigmoid(logits))

    def conv_params(self) -> list[Tensor]:
        return [p for n, p in self._params.items() if n.startswith("conv")]

    def fc_params(self) -> list[Tensor]:
        return [p for n, p in self._params.items() if n.startswith("fc")]

    def model_card(self) -> dict:
        return {
            "kind": "simple",
            "input_size": self.cfg.input_size,
            "in_channels": self.cfg.in_channels,
            "widths": list(self.cfg.widths),
            "head": self.cfg.head,
            "class_order": [str(c) for c in ALL_CODES],
        }


def bits_to_class_probs(bit_probs: Tensor) -> Tensor:
    """Map 3 independent bit probabilities (b2, b1, b0) to 8 class probs.

    P(class) is the product of Bernoulli factors, so the result is a
    proper distribution over the 8 codes.
    """
    if bit_probs.data.ndim == 1:
        bit_probs = ad.reshape(bit_probs, (1, 3))
    cols = []
    for code in ALL_CODES:
        want = [code.transposed, code.flip_y, code.flip_x]  # (b2, b1, b0)
        factors = None
        for j, on in enumerate(want):
            pj = ad.tensor_sum(bit_probs * _one_col(bit_probs, j), axis=1, keepdims=True)
            f = pj if on else (1.0 - pj)
            factors = f if factors is None else ad.mul(factors, f)
        cols.append(factors)
    return ad.concat(cols, axis=1)


def _one_col(t: Tensor, j: int) -> Tensor:
    sel = np.zeros((1, t.data.shape[1]), dtype=t.data.dtype)
    sel[0, j] = 1.0
    return Tensor(sel)


@dataclass
class MultiTaskConfig:
    input_size: int = 212
    base_width: int = 16
    depth: int = 4
    seg_classes: int = 4
    orient_widths: tuple[int, int, int] = (16, 32, 32)
    head: HeadType = "softmax8"
    batch_norm: bool = True
    seed: int = 0

    def __post_init__(self):
        self.orient_widths = tuple(self.orient_widths)


class MultiTaskNet(_Module):
    """U-Net encoder/decoder plus an orientation head over
    concat(input, predicted masks)."""

    def __init__(self, cfg: MultiTaskConfig | None = None):
        super().__init__()
        self.cfg = cfg or MultiTaskConfig()
        rng = np.random.default_rng(self.cfg.seed)
        w = self.cfg.base_width
        self._enc_ch = [w * (2 ** i) for i in range(self.cfg.depth)]
        # Encoder: two convs per level.
        cin = 1
        for i, cout in enumerate(self._enc_ch):
            _conv_block_params(self, rng, f"enc{i}a", cin, cout)
            _conv_block_params(self, rng, f"enc{i}b", cout, cout)
            if self.cfg.batch_norm:
                self._add(f"enc{i}.gamma", np.ones(cout, dtype=np.float32))
                self._add(f"enc{i}.beta", np.zeros(cout, dtype=np.float32))
            cin = cout
        # Decoder: upsample, concat skip, two convs per level.
        for i in range(self.cfg.depth - 2, -1, -1):
            cskip = self._enc_ch[i]
            cup = self._enc_ch[i + 1]
            _conv_block_params(self, rng, f"dec{i}a", cup + cskip, cskip)
            _conv_block_params(self, rng, f"dec{i}b", cskip, cskip)
            if self.cfg.batch_norm:
                self._add(f"dec{i}.gamma", np.ones(cskip, dtype=np.float32))
                self._add(f"dec{i}.beta", np.zeros(cskip, dtype=np.float32))
        _conv_block_params(self, rng, "seg_out", self._enc_ch[0], self.cfg.seg_classes, k=1)
        # Orientation head: 3 conv blocks + fully connected.
        self._init_orient(rng)

    def _init_orient(self, rng: np.random.Generator) -> None:
        cin = 1 + self.cfg.seg_classes
        s = self.cfg.input_size
        for i, cout in enumerate(self.cfg.orient_widths):
            _conv_block_params(self, rng, f"orient{i}", cin, cout)
            cin = cout
            s = s // 2
        self._orient_flat = cin * s * s
        n_out = 8 if self.cfg.head == "softmax8" else 3
        self._add("orient_fc.w", _he_init(rng, (self._orient_flat, n_out), self._orient_flat))
        self._add("orient_fc.b", np.zeros(n_out, dtype=np.float32))

    def reinit_orient(self, seed: int) -> None:
        """Fresh random parameters for the orientation head."""
        rng = np.random.default_rng(seed)
        stale = [n for n in self._params if n.startswith("orient")]
        keep_flags = {n: self._params[n].requires_grad for n in stale}
        for n in stale:
            del self._params[n]
        self._init_orient(rng)
        for n, flag in keep_flags.items():
            self._params[n].requires_grad = flag

    # Forward ----------------------------------------------------------

    def _block(self, name: str, x: Tensor, two: bool = True) -> Tensor:
        h = ad.relu(_conv(self, f"{name}a", x))
        h = ad.relu(_conv(self, f"{name}b", h))
        if self.cfg.batch_norm:
            h = ad.batch_norm(h, self._params[f"{name}.gamma"], self._params[f"{name}.beta"])
        return h

    def _match(self, up: Tensor, skip: Tensor) -> Tensor:
        # Odd input sizes floor on pooling; pad the upsampled map back.
        uh, uw = up.data.shape[2:]
        sh, sw = skip.data.shape[2:]
        if (uh, uw) == (sh, sw):
            return up
        if uh > sh or uw > sw:
            up = ad.crop2d(up, 0, 0, min(uh, sh), min(uw, sw))
            uh, uw = up.data.shape[2:]
        return ad.pad2d(up, 0, sh - uh, 0, sw - uw)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """(N, 1, S, S) -> (mask probabilities (N, s, S, S), orientation
        probabilities (N, 8))."""
        s = self.cfg.input_size
        if x.data.ndim != 4 or x.data.shape[1:] != (1, s, s):
            raise ValueError(f"expected input (N, 1, {s}, {s}), got {x.data.shape}")
        skips = []
        h = x
        for i in range(self.cfg.depth):
            h = self._block(f"enc{i}", h)
            if i < self.cfg.depth - 1:
                skips.append(h)
                h = ad.max_pool2d(h)
        for i in range(self.cfg.depth - 2, -1, -1):
            h = self._match(ad.upsample2d(h), skips[i])
            h = ad.concat([h, skips[i]], axis=1)
            h = self._block(f"dec{i}", h)
        seg_logits = _conv(self, "seg_out", h, pad=0)
        y_hat = ad.sigmoid(seg_logits)
        o_in = ad.concat([x, y_hat], axis=1)
        g = o_in
        for i in range(len(self.cfg.orient_widths)):
            g = ad.max_pool2d(ad.relu(_conv(self, f"orient{i}", g)))
        g = ad.flatten(g)
        logits = ad.add(ad.matmul(g, self._params["orient_fc.w"]),
                        self._params["orient_fc.b"])
        if self.cfg.head == "softmax8":
            o_hat = ad.softmax(logits, axis=-1)
        else:
            o_hat = bits_to_class_probs(ad.sigmoid(logits))
        return y_hat, o_hat

    # Parameter groups -------------------------------------------------

    def encoder_params(self) -> dict[str, Tensor]:
        return {n: p for n, p in self._params.items() if n.startswith("enc")}

    def decoder_params(self) -> dict[str, Tensor]:
        return {n: p for n, p in self._params.items()
                if n.startswith("dec") or n.startswith("seg_out")}

    def orient_params(self) -> dict[str, Tensor]:
        return {n: p for n, p in self._params.items() if n.startswith("orient")}

    def model_card(self) -> dict:
        return {
            "kind": "multitask",
            "input_size": self.cfg.input_size,
            "base_width": self.cfg.base_width,
            "depth": self.cfg.depth,
            "seg_classes": self.cfg.seg_classes,
            "orient_widths": list(self.cfg.orient_widths),
            "head": self.cfg.head,
            "batch_norm": self.cfg.batch_norm,
            "class_order": [str(c) for c in ALL_CODES],
        }


def predict_code(values) -> OrientCode:
    """Argmax over 8 logits/probabilities, mapped to the Table row order.

    Ties break toward the lowest code (np.argmax takes the first max).
    """
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.shape != (8,):
        raise ValueError(f"expected 8 values, got shape {np.asarray(values).shape}")
    if np.isnan(v).any():
        raise ValueError("NaN in prediction values")
    return ALL_CODES[int(np.argmax(v))]


def save_model(model: SimpleCnn | MultiTaskNet, path) -> None:
    """Checkpoint plus a sibling model-card JSON (<path>.json)."""
    card = model.model_card()
    ad.save_checkpoint(model.params(), path, meta=card)
    Path(str(path) + ".json").write_text(json.dumps(card, indent=2))


def _card_from(meta: dict, expect: str) -> dict:
    if meta.get("kind") != expect:
        raise ValueError(f"checkpoint is a {meta.get('kind')!r} model, expected {expect!r}")
    return meta


def load_simple(path) -> SimpleCnn:
    state, meta = ad.load_checkpoint(path)
    card = _card_from(meta, "simple")
    cfg = SimpleCnnConfig(
        in_channels=card["in_channels"],
        input_size=card["input_size"],
        widths=tuple(card["widths"]),
        head=card["head"],
    )
    model = SimpleCnn(cfg)
    model.load_state(state)
    return model


def load_multitask(path) -> MultiTaskNet:
    state, meta = ad.load_checkpoint(path)
    card = _card_from(meta, "multitask")
    cfg = MultiTaskConfig(
        input_size=card["input_size"],
        base_width=card["base_width"],
        depth=card["depth"],
        seg_classes=card["seg_classes"],
        orient_widths=tuple(card["orient_widths"]),
        head=card["head"],
        batch_norm=card["batch_norm"],
    )
    model = MultiTaskNet(cfg)
    model.load_state(state)
    return model
