"""Orientation recognition on volumes and file-level standardization.

Per-slice predictions are aggregated into a volume-level consensus by
confidence-weighted majority (ties break toward the lowest code).  A file
is rewritten only when the consensus differs from 000 and the consensus
confidence clears the floor; otherwise the report says why.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .autodiff import Tensor
from .nets import SimpleCnn, load_simple, predict_code
from .orient import ALL_CODES, OrientCode, apply_to_volume, as_code, invert
from .preprocess import PreprocConfig, prepare_simple_input
from .volume import Volume, VolumeError, iter_slices, read_volume, write_volume

__all__ = [
    "SlicePrediction",
    "StandardizationReport",
    "Recognizer",
    "recognize",
    "correct",
    "standardize_file",
]


@dataclass
class SlicePrediction:
    index: int
    code: str
    confidence: float
    probs: list[float] = field(default_factory=list)


@dataclass
class StandardizationReport:
    input: str
    output: Optional[str]
    slices: list[SlicePrediction]
    consensus: str
    confidence: float
    unanimous: bool
    action: str  # corrected | already-standard | skipped-low-confidence | error
    error: Optional[str] = None

    def to_json(self) -> str:
        d = asdict(self)
        d["slices"] = [asdict(s) if not isinstance(s, dict) else s for s in self.slices]
        return json.dumps(d)


class Recognizer:
    """A trained small CNN plus the preprocessing that feeds it."""

    def __init__(self, model: SimpleCnn, preproc: PreprocConfig | None = None):
        self.model = model
        self.preproc = preproc or PreprocConfig(simple_size=model.cfg.input_size)
        if self.preproc.simple_size != model.cfg.input_size:
            raise ValueError(
                f"preprocessing size {self.preproc.simple_size} != model input "
                f"{model.cfg.input_size}"
            )

    @classmethod
    def load(cls, path, preproc: PreprocConfig | None = None) -> "Recognizer":
        return cls(load_simple(path), preproc)

    def predict_slices(self, vol: Volume) -> list[SlicePrediction]:
        xs, idxs = [], []
        for k, sl in iter_slices(vol):
            xs.append(prepare_simple_input(sl, self.preproc))
            idxs.append(k)
        probs = self.model.class_probs(Tensor(np.stack(xs).astype(np.float32))).data
        out = []
        for k, p in zip(idxs, probs):
            code = predict_code(p)
            out.append(SlicePrediction(
                index=k, code=str(code), confidence=float(p.max()),
                probs=[float(v) for v in p],
            ))
        return out


def _consensus(slices: list[SlicePrediction]) -> tuple[OrientCode, float, bool]:
    votes = np.zeros(8)
    for s in slices:
        votes[as_code(s.code).bits] += s.confidence
    winner = int(np.argmax(votes))  # argmax ties break toward the lowest code
    # Confidence: winning mass over the slice count, so one hesitant slice
    # cannot claim full confidence for the whole volume.
    conf = float(votes[winner] / max(len(slices), 1))
    unanimous = len({s.code for s in slices}) == 1
    return ALL_CODES[winner], conf, unanimous


def recognize(vol: Volume, model: Recognizer) -> tuple[list[SlicePrediction], OrientCode, float, bool]:
    """Per-slice codes plus (consensus code, consensus confidence, unanimity)."""
    if vol.voxels.size == 0:
        raise ValueError("empty volume")
    slices = model.predict_slices(vol)
    code, conf, unanimous = _consensus(slices)
    return slices, code, conf, unanimous


def correct(vol: Volume, code) -> Volume:
    """Undo an orientation error: apply the inverse operation to voxels
    and header affine."""
    return apply_to_volume(invert(as_code(code)), vol)


def standardize_file(in_path, out_path, model: Recognizer,
                     confidence_floor: float = 0.5) -> StandardizationReport:
    """Recognize, correct if warranted, and write the output file.

    An already-standard input is copied byte-for-byte (or, in place, left
    untouched).  Low consensus confidence downgrades the action to
    skipped-low-confidence without writing a corrected file.
    """
    in_path, out_path = Path(in_path), Path(out_path)
    try:
        vol = read_volume(in_path)
        slices, code, conf, unanimous = recognize(vol, model)
    except (VolumeError, ValueError) as e:
        return StandardizationReport(
            input=str(in_path), output=None, slices=[], consensus="000",
            confidence=0.0, unanimous=False, action="error", error=str(e),
        )
    if code.bits == 0:
        action = "already-standard"
        if out_path != in_path:
            shutil.copyfile(in_path, out_path)
        out = str(out_path)
    elif conf < confidence_floor:
        action = "skipped-low-confidence"
        out = None
    else:
        fixed = correct(vol, code)
        write_volume(fixed, out_path)
        action = "corrected"
        out = str(out_path)
    return StandardizationReport(
        input=str(in_path), output=out, slices=slices, consensus=str(code),
        confidence=conf, unanimous=unanimous, action=action,
    )
