"""Accuracy metrics, confusion matrices, and experiment sweeps.

evaluate() scores a model on frames directly (ideal conditions);
practical_eval() pushes each frame through the per-frame channel first;
hardware_loop_eval() uses the splice/transmit/split loop instead; sweep()
maps out the channel-SNR x perturbation-size x accuracy surface by rescaling
a base attack's perturbations.

CSV outputs: per_snr.csv (snr_db, accuracy, n), confusion.csv, sweep.csv
(channel_snr_db, psr_db, accuracy, n, flagged), and a key=value summary.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .attack import AttackConfig, batch_generate
from .channel import ChannelConfig, apply_channel_frame, hardware_loop
from .errors import ConfigError
from .seeds import derive_seed
from .waveform import (
    DEFAULT_CLIP_AMP,
    IqFrame,
    UnitFrame,
    from_unit_interval,
    psr_db,
    to_unit_interval,
)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray                      # (C, C) int64; rows true, cols predicted
    class_names: list[str] = field(default_factory=list)

    @classmethod
    def from_predictions(cls, labels, predictions, num_classes: int,
                         class_names=None) -> "ConfusionMatrix":
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(labels), np.asarray(predictions)), 1)
        return cls(counts=counts, class_names=list(class_names or []))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total


@dataclass
class EvalReport:
    overall_accuracy: float
    per_snr: dict                           # snr_db -> {"accuracy": float, "n": int}
    confusion: ConfusionMatrix
    psr_stats: dict | None = None           # {"mean","min","max"} dB
    fingerprints: dict = field(default_factory=dict)
    mode: str = "ideal"

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "overall_accuracy": self.overall_accuracy,
            "per_snr": {f"{snr:g}": v for snr, v in sorted(self.per_snr.items())},
            "confusion": self.confusion.counts.tolist(),
            "class_names": self.confusion.class_names,
            "psr_stats": self.psr_stats,
            "fingerprints": self.fingerprints,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        confusion = ConfusionMatrix(
            counts=np.asarray(d["confusion"], dtype=np.int64),
            class_names=list(d.get("class_names", [])),
        )
        per_snr = {float(k): v for k, v in d["per_snr"].items()}
        return cls(
            overall_accuracy=float(d["overall_accuracy"]),
            per_snr=per_snr,
            confusion=confusion,
            psr_stats=d.get("psr_stats"),
            fingerprints=d.get("fingerprints", {}),
            mode=d.get("mode", "ideal"),
        )


@dataclass
class SweepSpec:
    channel_snr_grid: tuple[float, ...] = (0.0, 10.0, 20.0, 30.0)
    psr_grid: tuple[float, ...] | None = None    # dB targets; -inf means no perturbation
    beta_grid: tuple[float, ...] | None = (1.0, 2.0, 5.0, 10.0)
    attack: AttackConfig = field(default_factory=lambda: AttackConfig(iterations=10, beta=1.0))
    quant_bits: int = 0
    noise_seed: int = 0
    clip_amp: float = DEFAULT_CLIP_AMP
    dataset_path: str | None = None
    checkpoint_path: str | None = None

    def validate(self) -> None:
        if not self.channel_snr_grid:
            raise ConfigError("channel_snr_grid must be nonempty")
        if (self.psr_grid is None) == (self.beta_grid is None):
            raise ConfigError("exactly one of psr_grid / beta_grid must be set")
        if self.psr_grid is not None and not self.psr_grid:
            raise ConfigError("psr_grid must be nonempty")
        if self.beta_grid is not None and not self.beta_grid:
            raise ConfigError("beta_grid must be nonempty")


# ---------------------------------------------------------------------------
# Core evaluation
# ---------------------------------------------------------------------------

def _predict(model, frames, clip_amp: float, batch: int = 512) -> np.ndarray:
    units = np.stack([to_unit_interval(f, clip_amp).values for f in frames])
    preds = np.empty(len(frames), dtype=np.int64)
    for i in range(0, len(units), batch):
        probs = model.forward_batch(units[i : i + batch])
        preds[i : i + batch] = probs.argmax(axis=1)
    return preds


def _report_from_predictions(frames, preds, num_classes, class_names,
                             psr_stats=None, fingerprints=None,
                             mode="ideal") -> EvalReport:
    labels = np.array([f.label for f in frames], dtype=np.int64)
    confusion = ConfusionMatrix.from_predictions(labels, preds, num_classes, class_names)
    per_snr: dict[float, dict] = {}
    snrs = np.array([f.snr_tag for f in frames], dtype=np.float64)
    for snr in sorted(set(snrs.tolist())):
        sel = snrs == snr
        per_snr[float(snr)] = {
            "accuracy": float(np.mean(preds[sel] == labels[sel])),
            "n": int(sel.sum()),
        }
    return EvalReport(
        overall_accuracy=confusion.accuracy(),
        per_snr=per_snr,
        confusion=confusion,
        psr_stats=psr_stats,
        fingerprints=dict(fingerprints or {}),
        mode=mode,
    )


def evaluate(model, frames, clip_amp: float = DEFAULT_CLIP_AMP,
             class_names=None, fingerprints=None) -> EvalReport:
    """Argmax accuracy per SNR bin plus the full confusion matrix."""
    if not frames:
        raise ValueError("cannot evaluate an empty dataset")
    preds = _predict(model, frames, clip_amp)
    return _report_from_predictions(
        frames, preds, model.num_classes, class_names,
        fingerprints=fingerprints, mode="ideal",
    )


def practical_eval(model, frames, ch: ChannelConfig,
                   clip_amp: float = DEFAULT_CLIP_AMP, class_names=None,
                   fingerprints=None, expect_snr: float | None = 30.0) -> EvalReport:
    """Per-frame channel (gain, AWGN, quantization), then evaluate.

    Warns when the input frames do not carry the expected source SNR tag
    (the practical protocol treats SNR-30 originals as noise-free).
    """
    if not frames:
        raise ValueError("cannot evaluate an empty dataset")
    ch.validate()
    if expect_snr is not None and any(f.snr_tag != expect_snr for f in frames):
        warnings.warn(
            f"practical evaluation expects SNR-{expect_snr:g} source frames",
            stacklevel=2,
        )
    received = [apply_channel_frame(f, ch, i) for i, f in enumerate(frames)]
    preds = _predict(model, received, clip_amp)
    return _report_from_predictions(
        received, preds, model.num_classes, class_names,
        fingerprints=fingerprints, mode="practical",
    )


def hardware_loop_eval(model, frames, ch: ChannelConfig,
                       clip_amp: float = DEFAULT_CLIP_AMP, class_names=None,
                       fingerprints=None) -> EvalReport:
    """Run the splice/transmit/split loop, then evaluate the received frames."""
    if not frames:
        raise ValueError("cannot evaluate an empty dataset")
    received = hardware_loop(frames, ch)
    preds = _predict(model, received, clip_amp)
    return _report_from_predictions(
        received, preds, model.num_classes, class_names,
        fingerprints=fingerprints, mode="loop",
    )


# ---------------------------------------------------------------------------
# Channel-SNR x PSR sweep
# ---------------------------------------------------------------------------

def _rescale_perturbation(orig_unit: np.ndarray, pert_unit: np.ndarray,
                          factor: float, clip_amp: float,
                          like: IqFrame) -> IqFrame:
    scaled = np.clip(orig_unit + factor * pert_unit, 0.0, 1.0)
    frame = from_unit_interval(UnitFrame(scaled, clip_amp), like=like)
    frame.samples = frame.samples.astype(np.complex64).astype(np.complex128)
    return frame


def sweep(spec: SweepSpec, model, frames, jobs: int = 1,
          progress=None) -> list[dict]:
    """Build the (channel_snr, psr, accuracy) surface.

    A base attack runs once with beta = 1; each grid cell rescales the stored
    unit-domain perturbations (per-frame, to hit a PSR target, or by a fixed
    beta), re-clips, applies the channel, and scores the model. Cells whose
    achieved mean PSR misses the target by more than 1 dB (clipping
    saturation) are flagged rather than silently wrong.
    """
    spec.validate()
    if not frames:
        return []
    base_cfg = AttackConfig(**{**spec.attack.__dict__, "beta": 1.0})
    liw_frames, results = batch_generate(model, frames, base_cfg, jobs=jobs)

    clip_amp = spec.clip_amp
    orig_units = [to_unit_interval(f, clip_amp).values for f in frames]
    pert_units = [
        to_unit_interval(liw, clip_amp).values - orig
        for liw, orig in zip(liw_frames, orig_units)
    ]
    base_psr = np.array([r.psr_db for r in results])

    if spec.psr_grid is not None:
        cells = [("psr", float(p)) for p in spec.psr_grid]
    else:
        cells = [("beta", float(b)) for b in spec.beta_grid]

    rows: list[dict] = []
    for si, channel_snr in enumerate(spec.channel_snr_grid):
        for pi, (kind, value) in enumerate(cells):
            if kind == "psr" and math.isinf(value) and value < 0:
                factors = np.zeros(len(frames))
            elif kind == "psr":
                factors = 10.0 ** ((value - base_psr) / 20.0)
            else:
                factors = np.full(len(frames), value)
            scaled = [
                _rescale_perturbation(orig_units[i], pert_units[i], factors[i],
                                      clip_amp, frames[i])
                for i in range(len(frames))
            ]
            ch = ChannelConfig(
                snr_db=channel_snr,
                quant_bits=spec.quant_bits,
                noise_seed=derive_seed(spec.noise_seed, "cell", si, pi),
                clip_amp=clip_amp,
            )
            received = [apply_channel_frame(f, ch, i) for i, f in enumerate(scaled)]
            preds = _predict(model, received, clip_amp)
            labels = np.array([f.label for f in frames])
            accuracy = float(np.mean(preds == labels))

            achieved = np.array([psr_db(frames[i], scaled[i]) for i in range(len(frames))])
            finite = achieved[np.isfinite(achieved)]
            achieved_mean = float(np.mean(finite)) if len(finite) else -math.inf
            if kind == "psr":
                psr_coord = value
                flagged = (
                    not (math.isinf(value) and value < 0)
                    and abs(achieved_mean - value) > 1.0
                )
            else:
                expected = base_psr + 20.0 * math.log10(value)
                psr_coord = achieved_mean
                flagged = abs(achieved_mean - float(np.mean(expected))) > 1.0
            rows.append({
                "channel_snr_db": float(channel_snr),
                "psr_db": psr_coord,
                "accuracy": accuracy,
                "n": len(frames),
                "flagged": flagged,
                "achieved_psr_db": achieved_mean,
                "beta" if kind == "beta" else "psr_target": value,
            })
            if progress is not None:
                progress(rows[-1])
    return rows


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    if x is None:
        return ""
    if isinstance(x, float) and math.isinf(x):
        return "-inf" if x < 0 else "inf"
    return f"{x:.6f}"


def emit_report(report: EvalReport, out_dir: str, prefix: str = "") -> list[str]:
    """Write per-SNR and confusion CSVs plus a key=value summary; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    tag = f"{prefix}_" if prefix else ""
    paths = []

    per_snr_path = os.path.join(out_dir, f"{tag}per_snr.csv")
    with open(per_snr_path, "w", encoding="utf-8") as fh:
        fh.write("snr_db,accuracy,n\n")
        for snr in sorted(report.per_snr):
            cell = report.per_snr[snr]
            fh.write(f"{snr:g},{_fmt(cell['accuracy'])},{cell['n']}\n")
    paths.append(per_snr_path)

    confusion_path = os.path.join(out_dir, f"{tag}confusion.csv")
    names = report.confusion.class_names or [
        str(i) for i in range(len(report.confusion.counts))
    ]
    with open(confusion_path, "w", encoding="utf-8") as fh:
        fh.write("true\\pred," + ",".join(names) + "\n")
        for i, row in enumerate(report.confusion.counts):
            fh.write(names[i] + "," + ",".join(str(int(v)) for v in row) + "\n")
    paths.append(confusion_path)

    summary_path = os.path.join(out_dir, f"{tag}summary.txt")
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write(f"mode={report.mode}\n")
        fh.write(f"overall_accuracy={_fmt(report.overall_accuracy)}\n")
        for snr in sorted(report.per_snr):
            cell = report.per_snr[snr]
            fh.write(f"accuracy_snr_{snr:g}={_fmt(cell['accuracy'])} n={cell['n']}\n")
        if report.psr_stats:
            for key in sorted(report.psr_stats):
                fh.write(f"psr_{key}_db={_fmt(report.psr_stats[key])}\n")
        for key in sorted(report.fingerprints):
            fh.write(f"fingerprint_{key}={report.fingerprints[key]}\n")
    paths.append(summary_path)
    return paths


def emit_sweep(rows: list[dict], out_dir: str, prefix: str = "") -> str:
    os.makedirs(out_dir, exist_ok=True)
    tag = f"{prefix}_" if prefix else ""
    path = os.path.join(out_dir, f"{tag}sweep.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("channel_snr_db,psr_db,accuracy,n,flagged\n")
        for row in rows:
            fh.write(
                f"{row['channel_snr_db']:g},{_fmt(row['psr_db'])},"
                f"{_fmt(row['accuracy'])},{row['n']},{int(row['flagged'])}\n"
            )
    return path


def save_report(report: EvalReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_report(path: str) -> EvalReport:
    with open(path, "r", encoding="utf-8") as fh:
        return EvalReport.from_dict(json.load(fh))
