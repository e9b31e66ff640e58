"""The backbone x dataset-mode results grid and its text/binary forms."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional, Tuple

import numpy as np

from .binio import FormatError, read_named_tensors, write_named_tensors
from .datagen.moving import MODES, VideoDataset
from .networks import VARIANTS, ParamStore
from .training import TrainConfig, train_video_classifier

MODEL_LABELS = {"lenet": "LeNet-LSTM", "stn": "STN-LSTM", "dcn": "DCN-LSTM"}
MODE_LABELS = {"normal": "Normal", "rotation": "Rotation", "scaling": "Scaling", "both": "Rotation+Scaling"}
TSV_HEADER = ("mode", "model", "loss", "accuracy", "repetitions")


def _f32(x: float) -> float:
    return float(np.float32(x))


@dataclass(frozen=True)
class Cell:
    loss: float
    accuracy: float
    repetitions: int


@dataclass
class EvalReport:
    """Mean test loss and accuracy (%) per (variant, mode), stored at float32 precision
    so the binary and text forms round-trip exactly."""

    cells: Dict[Tuple[str, str], Cell] = field(default_factory=dict)

    def add(self, variant: str, mode: str, loss: float, accuracy: float, repetitions: int) -> None:
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        if not 0.0 <= accuracy <= 100.0:
            raise ValueError(f"accuracy {accuracy} outside [0, 100]")
        if repetitions < 1:
            raise ValueError("a cell needs at least one repetition")
        self.cells[(variant, mode)] = Cell(_f32(loss), _f32(accuracy), int(repetitions))

    def __len__(self) -> int:
        return len(self.cells)

    def __eq__(self, other) -> bool:
        return isinstance(other, EvalReport) and self.cells == other.cells

    def get(self, variant: str, mode: str) -> Cell:
        return self.cells[(variant, mode)]

    def _ordered(self):
        for mode in MODES:
            for variant in VARIANTS:
                if (variant, mode) in self.cells:
                    yield variant, mode, self.cells[(variant, mode)]

    # -- text

    def to_tsv(self) -> str:
        lines = ["\t".join(TSV_HEADER)]
        for variant, mode, c in self._ordered():
            lines.append(f"{MODE_LABELS[mode]}\t{MODEL_LABELS[variant]}\t{c.loss!r}\t{c.accuracy!r}\t{c.repetitions}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> "EvalReport":
        rows = [ln for ln in text.splitlines() if ln.strip()]
        if not rows or tuple(rows[0].split("\t")) != TSV_HEADER:
            raise FormatError("report TSV must start with the header " + "\\t".join(TSV_HEADER))
        modes = {v: k for k, v in MODE_LABELS.items()}
        models = {v: k for k, v in MODEL_LABELS.items()}
        rep = cls()
        for n, row in enumerate(rows[1:], start=2):
            parts = row.split("\t")
            if len(parts) != len(TSV_HEADER) or parts[0] not in modes or parts[1] not in models:
                raise FormatError(f"malformed report line {n}: {row!r}")
            rep.add(models[parts[1]], modes[parts[0]], float(parts[2]), float(parts[3]), int(parts[4]))
        return rep

    def to_text(self) -> str:
        """Plain-text grid: one row per mode, 'loss / accuracy%' per model."""
        variants = [v for v in VARIANTS if any(k[0] == v for k in self.cells)]
        width = 20
        out = ["".ljust(18) + "".join(MODEL_LABELS[v].ljust(width) for v in variants)]
        for mode in MODES:
            if not any(k[1] == mode for k in self.cells):
                continue
            row = MODE_LABELS[mode].ljust(18)
            for v in variants:
                c = self.cells.get((v, mode))
                row += (f"{c.loss:.3f} / {c.accuracy:.2f}%" if c else "-").ljust(width)
            out.append(row.rstrip())
        reps = sorted({c.repetitions for c in self.cells.values()})
        out.append(f"(mean over {', '.join(map(str, reps))} repetition(s); loss / test accuracy)")
        return "\n".join(out) + "\n"

    # -- binary

    def to_tensors(self) -> Dict[str, np.ndarray]:
        out = {}
        for variant, mode, c in self._ordered():
            key = f"report.{mode}.{variant}."
            out[key + "loss"] = np.array([c.loss], dtype=np.float32)
            out[key + "accuracy"] = np.array([c.accuracy], dtype=np.float32)
            out[key + "repetitions"] = np.array([c.repetitions], dtype=np.float32)
        return out

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, np.ndarray]) -> "EvalReport":
        rep = cls()
        seen = set()
        for name in tensors:
            parts = name.split(".")
            if len(parts) != 4 or parts[0] != "report":
                raise FormatError(f"unexpected tensor {name!r} in a report container")
            seen.add((parts[2], parts[1]))
        for variant, mode in seen:
            key = f"report.{mode}.{variant}."
            try:
                vals = [float(np.asarray(tensors[key + f]).reshape(-1)[0]) for f in ("loss", "accuracy", "repetitions")]
            except KeyError as exc:
                raise FormatError(f"report cell {mode}/{variant} is missing {exc.args[0]!r}") from None
            rep.add(variant, mode, vals[0], vals[1], int(vals[2]))
        return rep

    def save(self, path) -> None:
        write_named_tensors(path, self.to_tensors())

    @classmethod
    def load(cls, path) -> "EvalReport":
        return cls.from_tensors(read_named_tensors(path))


def check_complete(backbones: Mapping[str, object], datasets: Mapping[str, object]) -> None:
    gaps = [f"backbone checkpoint for {v}" for v in VARIANTS if v not in backbones]
    gaps += [f"dataset pair for mode {m}" for m in MODES if m not in datasets]
    if gaps:
        raise ValueError("incomplete results grid, missing: " + "; ".join(gaps))


def run_table(backbones: Mapping[str, ParamStore], datasets: Mapping[str, Tuple[VideoDataset, VideoDataset]],
              cfg: Optional[TrainConfig] = None, complete: bool = True,
              progress: Optional[Callable[[str], None]] = None):
    """Train and evaluate every (backbone, mode) cell.

    ``datasets`` maps mode -> (train, test). Returns the report and the
    per-cell training results (for curves).
    """
    cfg = cfg or TrainConfig.video_defaults()
    if complete:
        check_complete(backbones, datasets)
    report, results = EvalReport(), {}
    for mode in MODES:
        if mode not in datasets:
            continue
        train, test = datasets[mode]
        for variant in VARIANTS:
            if variant not in backbones:
                continue
            if progress:
                progress(f"{MODEL_LABELS[variant]} on {MODE_LABELS[mode]}")
            res = train_video_classifier(backbones[variant], train, cfg, test, progress=progress)
            report.add(variant, mode, res.mean_loss, res.mean_accuracy, len(res.repetitions))
            results[(variant, mode)] = res
    return report, results
