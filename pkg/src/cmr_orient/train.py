"""Losses, metrics, and the training loops.

The multi-task schedule has three stages: (1) encoder+decoder on the
segmentation loss, (2) encoder/decoder frozen, orientation head
re-initialized and trained on the orientation loss, (3) everything
fine-tuned jointly on the integral loss.  Transfer to a new modality is
two phases: retrain only the fully connected layer, then fine-tune the
convolutional stack and the fully connected layer together.

The orientation loss is the categorical cross-entropy written with the
conventional negative sign; minimizing the signless form would diverge.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, asdict, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor, TrainingError
from .datagen import N_CLASSES, Sample
from .nets import MultiTaskConfig, MultiTaskNet, SimpleCnn, SimpleCnnConfig, predict_code
from .preprocess import PreprocConfig, prepare_multitask_input, prepare_simple_input

__all__ = [
    "TrainConfig",
    "Metrics",
    "orientation_loss",
    "segmentation_loss",
    "integral_loss",
    "dice",
    "train_simple",
    "train_multitask",
    "transfer",
    "evaluate_orientation",
    "evaluate_multitask",
    "samples_to_simple_arrays",
    "samples_to_multitask_arrays",
]

_LOG_FLOOR = 1e-12


@dataclass
class TrainConfig:
    epochs: int = 10
    stage_epochs: tuple[int, int, int] = (8, 6, 4)
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    class_weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    head: str = "softmax8"
    patience: int = 3
    head_epochs: int = 6  # transfer phase A cap
    finetune_epochs: int = 6  # transfer phase B cap

    def __post_init__(self):
        self.stage_epochs = tuple(self.stage_epochs)
        self.class_weights = tuple(self.class_weights)
        if self.epochs <= 0 or any(e <= 0 for e in self.stage_epochs):
            raise ValueError("epochs must be positive")
        if any(w <= 0 for w in self.class_weights):
            raise ValueError("class weights must be positive")

    def to_json(self, path=None) -> str:
        s = json.dumps(asdict(self), indent=2)
        if path is not None:
            Path(path).write_text(s)
        return s

    @classmethod
    def from_json(cls, src) -> "TrainConfig":
        text = Path(src).read_text() if Path(str(src)).exists() else str(src)
        data = json.loads(text)
        for k in ("stage_epochs", "class_weights"):
            if k in data:
                data[k] = tuple(data[k])
        return cls(**data)


@dataclass
class Metrics:
    orientation_accuracy: float = 0.0
    dice_per_class: dict = field(default_factory=dict)  # {"RV":…, "LV":…, "Myo":…}
    mean_dice: float = 0.0
    history: list = field(default_factory=list)  # one record per epoch

    def to_csv(self, path) -> None:
        if not self.history:
            Path(path).write_text("")
            return
        keys = sorted({k for rec in self.history for k in rec})
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=keys)
            w.writeheader()
            w.writerows(self.history)

    def to_jsonl(self, path) -> None:
        with open(path, "w") as f:
            for rec in self.history:
                f.write(json.dumps(rec) + "\n")


# Losses ---------------------------------------------------------------


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


def orientation_loss(o_hat, o) -> Tensor:
    """Categorical cross-entropy over the 8 classes, mean over the batch.

    `o_hat` must already be a distribution; `o` is one-hot.
    """
    p = _as_tensor(o_hat)
    target = np.asarray(o.data if isinstance(o, Tensor) else o, dtype=p.data.dtype)
    pd = p.data.reshape(-1, p.data.shape[-1])
    if pd.shape[-1] != 8:
        raise ValueError(f"expected 8 classes, got {pd.shape[-1]}")
    sums = pd.sum(axis=-1)
    if np.abs(sums - 1.0).max() > 1e-4:
        raise ValueError("orientation probabilities are not normalized")
    n = pd.shape[0]
    logp = ad.log(ad.clip_min(p, _LOG_FLOOR))
    return ad.mul(ad.tensor_sum(ad.mul(Tensor(target), logp)), Tensor(-1.0 / n))


def segmentation_loss(y_hat, y, weights=None) -> Tensor:
    """Weighted multi-label BCE: per-class pixel mean, summed over the 4
    classes with weight w_i.  Class axis is axis 1 of (N, s, H, W) (or
    axis 0 without a batch dim)."""
    p = _as_tensor(y_hat)
    target = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=p.data.dtype)
    data = p.data
    if data.ndim == 3:
        class_axis = 0
    elif data.ndim == 4:
        class_axis = 1
    else:
        raise ValueError(f"expected (N,s,H,W) or (s,H,W), got shape {data.shape}")
    s = data.shape[class_axis]
    if s != N_CLASSES:
        raise ValueError(f"expected {N_CLASSES} classes, got {s}")
    w = np.asarray(weights if weights is not None else np.ones(s), dtype=data.dtype)
    if w.shape != (s,):
        raise ValueError(f"need {s} class weights, got shape {w.shape}")
    t = Tensor(target)
    logp = ad.log(ad.clip_min(p, _LOG_FLOOR))
    log1mp = ad.log(ad.clip_min(1.0 - p, _LOG_FLOOR))
    bce = -1.0 * (ad.mul(t, logp) + ad.mul(1.0 - t, log1mp))
    mean_axes = tuple(i for i in range(data.ndim) if i != class_axis)
    per_class = ad.mean(bce, axis=mean_axes)  # (s,)
    return ad.tensor_sum(ad.mul(per_class, Tensor(w)))


def integral_loss(seg_loss, orient_loss) -> Tensor:
    """Plain sum of the two task losses."""
    return ad.add(_as_tensor(seg_loss), _as_tensor(orient_loss))


def dice(pred_mask, true_mask) -> float:
    """2|A n B| / (|A| + |B|); both-empty counts as perfect agreement."""
    a = np.asarray(pred_mask, dtype=bool)
    b = np.asarray(true_mask, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    denom = a.sum() + b.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * np.logical_and(a, b).sum() / denom)


# Data marshalling -----------------------------------------------------


def samples_to_simple_arrays(samples: Sequence[Sample], cfg: PreprocConfig | None = None):
    cfg = cfg or PreprocConfig()
    x = np.stack([prepare_simple_input(s.image, cfg) for s in samples])
    y = np.array([s.orient.bits for s in samples], dtype=np.int64)
    return x.astype(np.float32), y


def samples_to_multitask_arrays(samples: Sequence[Sample], cfg: PreprocConfig | None = None):
    from .preprocess import crop_or_pad

    cfg = cfg or PreprocConfig()
    xs, segs = [], []
    for s in samples:
        xs.append(prepare_multitask_input(s.image, cfg))
        if s.seg is None:
            raise ValueError("multi-task training needs segmentation labels")
        lab = crop_or_pad(s.seg, cfg.multitask_size)
        onehot = np.stack([(lab == k) for k in range(N_CLASSES)]).astype(np.float32)
        segs.append(onehot)
    x = np.stack(xs).astype(np.float32)
    yseg = np.stack(segs)
    o = np.array([s.orient.bits for s in samples], dtype=np.int64)
    return x, yseg, o


def _one_hot(idx: np.ndarray, n: int = 8) -> np.ndarray:
    out = np.zeros((len(idx), n), dtype=np.float32)
    out[np.arange(len(idx)), idx] = 1.0
    return out


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


# Evaluation -----------------------------------------------------------


def evaluate_orientation(model, x: np.ndarray, y_idx: np.ndarray,
                         batch_size: int = 64) -> float:
    correct = 0
    for i in range(0, len(x), batch_size):
        probs = _orient_probs(model, x[i:i + batch_size])
        correct += int((probs.argmax(axis=1) == y_idx[i:i + batch_size]).sum())
    return correct / max(len(x), 1)


def _orient_probs(model, xb: np.ndarray) -> np.ndarray:
    t = Tensor(xb)
    if isinstance(model, SimpleCnn):
        return model.class_probs(t).data
    return model.forward(t)[1].data


def evaluate_multitask(model: MultiTaskNet, x, yseg, o_idx, batch_size: int = 16):
    """Returns (per-class dice dict, mean foreground dice, orientation acc)."""
    names = {1: "RV", 2: "LV", 3: "Myo"}
    scores = {v: [] for v in names.values()}
    correct = 0
    for i in range(0, len(x), batch_size):
        y_hat, o_hat = model.forward(Tensor(x[i:i + batch_size]))
        pred = y_hat.data.argmax(axis=1)
        true = yseg[i:i + batch_size].argmax(axis=1)
        for j in range(pred.shape[0]):
            for k, nm in names.items():
                scores[nm].append(dice(pred[j] == k, true[j] == k))
        correct += int((o_hat.data.argmax(axis=1) == o_idx[i:i + batch_size]).sum())
    per_class = {nm: float(np.mean(v)) for nm, v in scores.items()}
    return per_class, float(np.mean(list(per_class.values()))), correct / max(len(x), 1)


# Training loops -------------------------------------------------------


def _finite_or_raise(loss: Tensor, where: str) -> None:
    if not np.isfinite(loss.data).all():
        raise TrainingError(f"non-finite loss at {where}")


def train_simple(config: TrainConfig, data: dict, model: SimpleCnn | None = None):
    """Single-stage training of the small CNN on the orientation loss.

    `data` maps 'train'/'val' to (X, y_index) array pairs.
    """
    xtr, ytr = data["train"]
    xval, yval = data.get("val", (xtr, ytr))
    if len(xtr) == 0:
        raise ValueError("empty training set")
    model = model or SimpleCnn(SimpleCnnConfig(
        input_size=xtr.shape[-1], head=config.head, seed=config.seed))
    opt = Adam(model.param_list(), lr=config.lr)
    rng = np.random.default_rng(config.seed)
    metrics = Metrics()
    best_acc, best_state = -1.0, None
    stale = 0
    for epoch in range(config.epochs):
        losses = _run_epoch_orientation(model, opt, xtr, ytr, config, rng,
                                        where=f"epoch {epoch}")
        acc = evaluate_orientation(model, xval, yval)
        metrics.history.append({
            "epoch": epoch, "train_loss": float(np.mean(losses)), "val_accuracy": acc,
        })
        if acc > best_acc:
            best_acc, best_state = acc, {n: p.data.copy() for n, p in model.params().items()}
            stale = 0
        else:
            stale += 1
            if stale > config.patience:
                break
    if best_state is not None:
        model.load_state(best_state)
    metrics.orientation_accuracy = best_acc
    return model, metrics


def _run_epoch_orientation(model, opt, x, y_idx, config, rng, where: str,
                           trainable_only: bool = False):
    losses = []
    for step, idx in enumerate(_batches(len(x), config.batch_size, rng)):
        probs = _orient_probs_graph(model, Tensor(x[idx]))
        loss = orientation_loss(probs, _one_hot(y_idx[idx]))
        _finite_or_raise(loss, f"{where} step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.data))
    return losses


def _orient_probs_graph(model, t: Tensor) -> Tensor:
    if isinstance(model, SimpleCnn):
        return model.class_probs(t)
    return model.forward(t)[1]


def train_multitask(config: TrainConfig, data: dict,
                    model: MultiTaskNet | None = None):
    """Three-stage schedule; returns (model, Metrics).

    `data` maps 'train'/'val' to (X, Yseg_onehot, o_index) triples.  The
    best stage-3 state by validation integral loss is retained.
    """
    xtr, ystr, otr = data["train"]
    xval, ysval, oval = data.get("val", (xtr, ystr, otr))
    if len(xtr) == 0:
        raise ValueError("empty training set")
    model = model or MultiTaskNet(MultiTaskConfig(
        input_size=xtr.shape[-1], head=config.head, seed=config.seed))
    rng = np.random.default_rng(config.seed)
    w = np.asarray(config.class_weights, dtype=np.float32)
    metrics = Metrics()

    # Stage 1: encoder + decoder on the segmentation loss.
    model.set_trainable(True)
    for p in model.orient_params().values():
        p.requires_grad = False
    segparams = list(model.encoder_params().values()) + list(model.decoder_params().values())
    opt = Adam(segparams, lr=config.lr)
    best_dice, best_state, stale = -1.0, None, 0
    for epoch in range(config.stage_epochs[0]):
        losses = []
        for step, idx in enumerate(_batches(len(xtr), config.batch_size, rng)):
            y_hat, _ = model.forward(Tensor(xtr[idx]))
            loss = segmentation_loss(y_hat, ystr[idx], w)
            _finite_or_raise(loss, f"stage 1 epoch {epoch} step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
        _, mean_d, _ = evaluate_multitask(model, xval, ysval, oval)
        metrics.history.append({"stage": 1, "epoch": epoch,
                                "train_loss": float(np.mean(losses)),
                                "val_mean_dice": mean_d})
        if mean_d > best_dice:
            best_dice, stale = mean_d, 0
            best_state = {n: p.data.copy() for n, p in model.params().items()}
        else:
            stale += 1
            if stale > config.patience:
                break
    if best_state is not None:
        model.load_state(best_state)

    # Stage 2: freeze encoder/decoder, re-initialize and train the head.
    for p in segparams:
        p.requires_grad = False
        p.grad = None
    model.reinit_orient(seed=config.seed + 1)
    for p in model.orient_params().values():
        p.requires_grad = True
    opt = Adam(list(model.orient_params().values()), lr=config.lr)
    for epoch in range(config.stage_epochs[1]):
        losses = _run_epoch_orientation(model, opt, xtr, otr, config, rng,
                                        where=f"stage 2 epoch {epoch}")
        for p in segparams:
            assert p.grad is None, "frozen encoder/decoder received gradient"
        acc = evaluate_orientation(model, xval, oval)
        metrics.history.append({"stage": 2, "epoch": epoch,
                                "train_loss": float(np.mean(losses)),
                                "val_accuracy": acc})

    # Stage 3: fine-tune everything on the integral loss.
    model.set_trainable(True)
    opt = Adam(model.param_list(), lr=config.lr * 0.5)
    best_val, best_state = np.inf, None
    for epoch in range(config.stage_epochs[2]):
        losses = []
        for step, idx in enumerate(_batches(len(xtr), config.batch_size, rng)):
            y_hat, o_hat = model.forward(Tensor(xtr[idx]))
            loss = integral_loss(
                segmentation_loss(y_hat, ystr[idx], w),
                orientation_loss(o_hat, _one_hot(otr[idx])),
            )
            _finite_or_raise(loss, f"stage 3 epoch {epoch} step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
        val_loss = _val_integral(model, xval, ysval, oval, w, config.batch_size)
        metrics.history.append({"stage": 3, "epoch": epoch,
                                "train_loss": float(np.mean(losses)),
                                "val_integral_loss": val_loss})
        if val_loss < best_val:
            best_val = val_loss
            best_state = {n: p.data.copy() for n, p in model.params().items()}
    if best_state is not None:
        model.load_state(best_state)

    per_class, mean_d, acc = evaluate_multitask(model, xval, ysval, oval)
    metrics.dice_per_class = per_class
    metrics.mean_dice = mean_d
    metrics.orientation_accuracy = acc
    return model, metrics


def _val_integral(model, x, yseg, o_idx, w, batch_size) -> float:
    total, n = 0.0, 0
    for i in range(0, len(x), batch_size):
        y_hat, o_hat = model.forward(Tensor(x[i:i + batch_size]))
        loss = integral_loss(
            segmentation_loss(y_hat, yseg[i:i + batch_size], w),
            orientation_loss(o_hat, _one_hot(o_idx[i:i + batch_size])),
        )
        total += float(loss.data) * (len(x[i:i + batch_size]))
        n += len(x[i:i + batch_size])
    return total / max(n, 1)


def transfer(model: SimpleCnn, data: dict, config: TrainConfig):
    """Adapt a trained small CNN to a new modality.

    Phase A trains only the fully connected layer; phase B fine-tunes the
    convolutional stack and the fully connected layer together.  Each
    phase stops early once validation accuracy stops improving for
    `patience` epochs.
    """
    xtr, ytr = data["train"]
    xval, yval = data.get("val", (xtr, ytr))
    rng = np.random.default_rng(config.seed)
    metrics = Metrics()

    def _phase(name: str, params, max_epochs: int):
        if max_epochs <= 0:
            return
        opt = Adam(params, lr=config.lr)
        best_acc, best_state, stale = -1.0, None, 0
        for epoch in range(max_epochs):
            losses = _run_epoch_orientation(model, opt, xtr, ytr, config, rng,
                                            where=f"transfer {name} epoch {epoch}")
            acc = evaluate_orientation(model, xval, yval)
            metrics.history.append({"phase": name, "epoch": epoch,
                                    "train_loss": float(np.mean(losses)),
                                    "val_accuracy": acc})
            if acc > best_acc:
                best_acc, stale = acc, 0
                best_state = {n: p.data.copy() for n, p in model.params().items()}
            else:
                stale += 1
                if stale >= config.patience:
                    break
        if best_state is not None:
            model.load_state(best_state)

    for p in model.conv_params():
        p.requires_grad = False
    _phase("head", model.fc_params(), config.head_epochs)
    for p in model.conv_params():
        p.requires_grad = True
    _phase("finetune", model.param_list(), config.finetune_epochs)
    metrics.orientation_accuracy = evaluate_orientation(model, xval, yval)
    return model, metrics
