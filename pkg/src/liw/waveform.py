"""Synthesis and domain mapping for modulated IQ frames.

Generates labeled complex-baseband frames (Gray-coded PSK/QAM/ASK symbols,
root-raised-cosine pulse shaping, random carrier phase), adds calibrated
AWGN, converts between the physical IQ domain and the clipped [0, 1] domain
used by the attack, and computes power ratios (SNR, PSR).

Dataset binary format (little-endian):
    magic "LIW1" | u32 frame_count | u32 frame_len | u8 scheme_count
    then per frame: u8 label | f32 snr_tag | 2L x f32 interleaved I/Q
A JSON sidecar ("<path>.json") records the generating DatasetSpec.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .seeds import derive_seed

SCHEME_NAMES = ("OOK", "4ASK", "BPSK", "QPSK", "8PSK", "16PSK", "16QAM", "64QAM")

#: Half-range of the affine map between physical IQ amplitudes and [0, 1].
#: 4.0 covers >99.99% of samples of a unit-RMS Gaussian-like waveform.
DEFAULT_CLIP_AMP = 4.0

_DATASET_MAGIC = b"LIW1"


# ---------------------------------------------------------------------------
# Modulation schemes
# ---------------------------------------------------------------------------

def _gray(n: int) -> int:
    return n ^ (n >> 1)


def _gray_position(m: int) -> np.ndarray:
    """Position of each symbol index in a length-m Gray sequence.

    pos[s] = p such that gray(p) == s; placing symbol s at slot pos[s]
    makes neighbouring slots differ in exactly one bit.
    """
    pos = np.empty(m, dtype=np.int64)
    for p in range(m):
        pos[_gray(p)] = p
    return pos


def _psk_constellation(m: int, phase_offset: float = 0.0) -> np.ndarray:
    pos = _gray_position(m)
    angles = 2.0 * np.pi * pos / m + phase_offset
    return np.exp(1j * angles)


def _pam_levels(m: int) -> np.ndarray:
    # odd levels -(m-1) .. +(m-1), Gray-ordered along the axis
    pos = _gray_position(m)
    return (2.0 * pos - (m - 1)).astype(np.float64)


def _ask_constellation(m: int) -> np.ndarray:
    levels = _pam_levels(m)
    levels /= np.sqrt(np.mean(levels**2))
    return levels.astype(np.complex128)


def _qam_constellation(m: int) -> np.ndarray:
    """Square QAM, Gray-coded independently per axis (I = high bits, Q = low)."""
    side = int(round(math.sqrt(m)))
    if side * side != m:
        raise ConfigError(f"QAM order {m} is not a perfect square")
    axis = _pam_levels(side)
    idx = np.arange(m)
    i_part = axis[idx // side]
    q_part = axis[idx % side]
    points = i_part + 1j * q_part
    return points / np.sqrt(np.mean(np.abs(points) ** 2))


def _build_constellation(name: str) -> tuple[int, np.ndarray]:
    if name == "OOK":
        return 1, np.array([0.0, math.sqrt(2.0)], dtype=np.complex128)
    if name == "4ASK":
        return 2, _ask_constellation(4)
    if name == "BPSK":
        return 1, _psk_constellation(2)
    if name == "QPSK":
        return 2, _psk_constellation(4, phase_offset=np.pi / 4)
    if name == "8PSK":
        return 3, _psk_constellation(8)
    if name == "16PSK":
        return 4, _psk_constellation(16)
    if name == "16QAM":
        return 4, _qam_constellation(16)
    if name == "64QAM":
        return 6, _qam_constellation(64)
    raise ConfigError(f"unknown modulation scheme {name!r} (known: {', '.join(SCHEME_NAMES)})")


@dataclass(frozen=True)
class ModulationScheme:
    """One digital modulation: Gray-coded constellation with unit mean power."""

    id: str
    bits_per_symbol: int
    constellation: np.ndarray

    @classmethod
    def from_name(cls, name: str) -> "ModulationScheme":
        bps, points = _build_constellation(name)
        points.setflags(write=False)
        return cls(id=name, bits_per_symbol=bps, constellation=points)

    @property
    def order(self) -> int:
        return 1 << self.bits_per_symbol


# ---------------------------------------------------------------------------
# Frames and specs
# ---------------------------------------------------------------------------

@dataclass
class IqFrame:
    """One complex-baseband frame with its ground-truth label and SNR tag."""

    samples: np.ndarray          # complex, length L
    label: int
    snr_tag: float               # dB; inf for noiseless
    seed: int = 0

    def __len__(self) -> int:
        return len(self.samples)

    def power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))


@dataclass
class UnitFrame:
    """Interleaved I/Q reals mapped affinely into [0, 1]."""

    values: np.ndarray           # float64, length 2L, all in [0, 1]
    clip_amp: float


@dataclass
class DatasetSpec:
    """Parameters of a synthetic labeled frame dataset."""

    schemes: tuple[str, ...] = SCHEME_NAMES
    frames_per_scheme_per_snr: int = 100
    snr_grid: tuple[float, ...] = (-10.0, -5.0, 0.0, 10.0, 20.0, 30.0)
    frame_len: int = 256
    sps: int = 8
    rolloff: float = 0.35
    filter_span: int = 8         # symbols covered by the RRC filter
    master_seed: int = 12345

    def validate(self) -> None:
        if not self.snr_grid:
            raise ConfigError("snr_grid must be nonempty")
        if self.frames_per_scheme_per_snr < 1:
            raise ConfigError("frames_per_scheme_per_snr must be >= 1")
        if not self.schemes:
            raise ConfigError("schemes must be nonempty")
        if self.frame_len % 2 != 0:
            raise ConfigError("frame_len must be even")
        if self.frame_len % self.sps != 0:
            raise ConfigError("frame_len must be divisible by sps")
        if self.filter_span % 2 != 0:
            raise ConfigError("filter_span must be even")
        for name in self.schemes:
            _build_constellation(name)

    def to_dict(self) -> dict:
        return {
            "schemes": list(self.schemes),
            "frames_per_scheme_per_snr": self.frames_per_scheme_per_snr,
            "snr_grid": list(self.snr_grid),
            "frame_len": self.frame_len,
            "sps": self.sps,
            "rolloff": self.rolloff,
            "filter_span": self.filter_span,
            "master_seed": self.master_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        spec = cls(
            schemes=tuple(d["schemes"]),
            frames_per_scheme_per_snr=int(d["frames_per_scheme_per_snr"]),
            snr_grid=tuple(float(s) for s in d["snr_grid"]),
            frame_len=int(d["frame_len"]),
            sps=int(d["sps"]),
            rolloff=float(d["rolloff"]),
            filter_span=int(d["filter_span"]),
            master_seed=int(d["master_seed"]),
        )
        spec.validate()
        return spec


# ---------------------------------------------------------------------------
# Pulse shaping and modulation
# ---------------------------------------------------------------------------

def rrc_taps(sps: int, rolloff: float, span: int) -> np.ndarray:
    """Root-raised-cosine impulse response, unit energy, span*sps+1 taps."""
    if not 0.0 < rolloff < 1.0:
        raise ConfigError("rolloff must be in (0, 1)")
    n_taps = span * sps + 1
    t = (np.arange(n_taps) - (n_taps - 1) / 2) / sps  # in symbol periods
    b = rolloff
    h = np.empty(n_taps)
    for i, ti in enumerate(t):
        if abs(ti) < 1e-12:
            h[i] = 1.0 + b * (4.0 / np.pi - 1.0)
        elif abs(abs(ti) - 1.0 / (4.0 * b)) < 1e-12:
            h[i] = (b / np.sqrt(2.0)) * (
                (1.0 + 2.0 / np.pi) * np.sin(np.pi / (4.0 * b))
                + (1.0 - 2.0 / np.pi) * np.cos(np.pi / (4.0 * b))
            )
        else:
            num = np.sin(np.pi * ti * (1.0 - b)) + 4.0 * b * ti * np.cos(np.pi * ti * (1.0 + b))
            den = np.pi * ti * (1.0 - (4.0 * b * ti) ** 2)
            h[i] = num / den
    return h / np.sqrt(np.sum(h**2))


def _draw_frame_randomness(rng: np.random.Generator, scheme: ModulationScheme,
                           n_symbols: int) -> tuple[np.ndarray, float]:
    """Symbol indices (MSB-first bit packing) and carrier phase for one frame."""
    bits = rng.integers(0, 2, size=n_symbols * scheme.bits_per_symbol)
    weights = 1 << np.arange(scheme.bits_per_symbol)[::-1]
    symbols = bits.reshape(n_symbols, scheme.bits_per_symbol) @ weights
    phase = float(rng.uniform(0.0, 2.0 * np.pi))
    return symbols, phase


def frame_ground_truth(scheme: ModulationScheme, seed: int,
                       spec: DatasetSpec) -> tuple[np.ndarray, float]:
    """Replay the symbol indices and carrier phase used by :func:`modulate`.

    Symbol m of the emitted frame corresponds to index m + filter_span/2 of
    the returned sequence (the leading transient is trimmed).
    """
    rng = np.random.default_rng(seed)
    n_symbols = spec.frame_len // spec.sps + spec.filter_span
    return _draw_frame_randomness(rng, scheme, n_symbols)


def modulate(scheme: ModulationScheme, seed: int, spec: DatasetSpec) -> IqFrame:
    """Synthesize one noiseless unit-RMS frame for the given scheme.

    Random bits -> Gray-mapped symbols -> RRC pulse shaping at spec.sps
    samples/symbol -> uniform random carrier phase -> trim filter
    transients -> power normalization. Deterministic in (scheme, seed, spec).
    """
    if spec.frame_len % spec.sps != 0:
        raise ConfigError("frame_len must be divisible by sps")
    rng = np.random.default_rng(seed)
    span = spec.filter_span
    n_symbols = spec.frame_len // spec.sps + span
    symbols, phase = _draw_frame_randomness(rng, scheme, n_symbols)
    points = scheme.constellation[symbols]

    upsampled = np.zeros(n_symbols * spec.sps, dtype=np.complex128)
    upsampled[:: spec.sps] = points
    taps = rrc_taps(spec.sps, spec.rolloff, span)
    shaped = np.convolve(upsampled, taps, mode="same")

    guard = (span // 2) * spec.sps
    samples = shaped[guard : guard + spec.frame_len] * np.exp(1j * phase)
    label = SCHEME_NAMES.index(scheme.id) if scheme.id in SCHEME_NAMES else -1
    frame = IqFrame(samples=samples, label=label, snr_tag=math.inf, seed=seed)
    return normalize_power(frame)


def normalize_power(frame: IqFrame) -> IqFrame:
    """Scale the frame to unit RMS amplitude."""
    p = frame.power()
    if p <= 0.0:
        raise ValueError("cannot normalize a zero-power frame")
    frame.samples = frame.samples / np.sqrt(p)
    return frame


def complex_awgn(rng: np.random.Generator, n: int) -> np.ndarray:
    """Unit-power circular complex Gaussian noise (I then Q draw order)."""
    re = rng.standard_normal(n)
    im = rng.standard_normal(n)
    return (re + 1j * im) / np.sqrt(2.0)


def add_awgn(frame: IqFrame, snr_db: float, noise_seed: int) -> IqFrame:
    """Add complex white Gaussian noise at the given SNR relative to frame power.

    Per-sample noise power is P_x / 10^(snr_db/10); the returned frame's
    snr_tag is updated to snr_db. snr_db = +inf returns an exact copy.
    """
    p_signal = frame.power()
    if p_signal <= 0.0:
        raise ValueError("cannot add noise relative to a zero-power frame")
    if math.isinf(snr_db) and snr_db > 0:
        return IqFrame(frame.samples.copy(), frame.label, snr_db, frame.seed)
    p_noise = p_signal / (10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(noise_seed)
    noise = complex_awgn(rng, len(frame.samples)) * np.sqrt(p_noise)
    return IqFrame(frame.samples + noise, frame.label, snr_db, frame.seed)


# ---------------------------------------------------------------------------
# Power metrics
# ---------------------------------------------------------------------------

def psr_db(original: IqFrame, perturbed: IqFrame) -> float:
    """Perturbation-to-signal ratio 10*log10(P_delta / P_x) in dB.

    Computed in the physical IQ domain. Returns -inf when the perturbation
    is exactly zero (sentinel, not an error).
    """
    if len(original.samples) != len(perturbed.samples):
        raise ValueError("frames must have the same length")
    p_x = original.power()
    if p_x <= 0.0:
        raise ValueError("original frame has zero power")
    delta = np.asarray(perturbed.samples, dtype=np.complex128) - np.asarray(
        original.samples, dtype=np.complex128
    )
    p_d = float(np.mean(np.abs(delta) ** 2))
    if p_d == 0.0:
        return -math.inf
    return 10.0 * math.log10(p_d / p_x)


# ---------------------------------------------------------------------------
# [0, 1] domain mapping
# ---------------------------------------------------------------------------

def interleave_iq(samples: np.ndarray) -> np.ndarray:
    """Complex samples -> interleaved reals [I0, Q0, I1, Q1, ...]."""
    out = np.empty(2 * len(samples), dtype=np.float64)
    out[0::2] = samples.real
    out[1::2] = samples.imag
    return out


def deinterleave_iq(values: np.ndarray) -> np.ndarray:
    """Interleaved reals -> complex samples."""
    return values[0::2] + 1j * values[1::2]


def to_unit_interval(frame: IqFrame, clip_amp: float = DEFAULT_CLIP_AMP) -> UnitFrame:
    """Map interleaved I/Q reals affinely into [0, 1].

    u = (clamp(s, -A, A) + A) / (2A). Out-of-range samples are clamped
    silently; use :func:`clipped_fraction` to inspect how many.
    """
    if clip_amp <= 0.0:
        raise ValueError("clip_amp must be positive")
    reals = interleave_iq(np.asarray(frame.samples, dtype=np.complex128))
    u = (np.clip(reals, -clip_amp, clip_amp) + clip_amp) / (2.0 * clip_amp)
    return UnitFrame(values=u, clip_amp=clip_amp)


def from_unit_interval(u: UnitFrame, like: IqFrame | None = None) -> IqFrame:
    """Inverse affine map back to the physical IQ domain.

    Exact (to roundoff) for samples that were within +/-clip_amp. Metadata
    (label, snr_tag, seed) is copied from `like` when given.
    """
    reals = np.asarray(u.values, dtype=np.float64) * (2.0 * u.clip_amp) - u.clip_amp
    samples = deinterleave_iq(reals)
    if like is not None:
        return IqFrame(samples, like.label, like.snr_tag, like.seed)
    return IqFrame(samples, label=0, snr_tag=math.nan, seed=0)


def clipped_fraction(frame: IqFrame, clip_amp: float = DEFAULT_CLIP_AMP) -> float:
    """Fraction of interleaved I/Q components outside [-clip_amp, +clip_amp]."""
    reals = interleave_iq(np.asarray(frame.samples, dtype=np.complex128))
    return float(np.mean(np.abs(reals) > clip_amp))


# ---------------------------------------------------------------------------
# Dataset synthesis and binary I/O
# ---------------------------------------------------------------------------

def synth_frames(spec: DatasetSpec) -> list[IqFrame]:
    """Generate all frames for schemes x snr_grid x frames_per_scheme_per_snr.

    Per-frame seeds derive from (master_seed, scheme index, snr index, frame
    index), so any frame can be regenerated independently. Noisy frames are
    re-normalized to unit RMS after noise injection.
    """
    spec.validate()
    schemes = [ModulationScheme.from_name(name) for name in spec.schemes]
    frames: list[IqFrame] = []
    for si, scheme in enumerate(schemes):
        for ni, snr in enumerate(spec.snr_grid):
            for fi in range(spec.frames_per_scheme_per_snr):
                seed = derive_seed(spec.master_seed, "frame", si, ni, fi)
                frame = modulate(scheme, seed, spec)
                frame.label = si
                if not (math.isinf(snr) and snr > 0):
                    noise_seed = derive_seed(spec.master_seed, "synthnoise", si, ni, fi)
                    frame = add_awgn(frame, snr, noise_seed)
                    frame = normalize_power(frame)
                else:
                    frame.snr_tag = snr
                frames.append(frame)
    return frames


def save_dataset(frames: list[IqFrame], path: str, scheme_count: int,
                 spec: DatasetSpec | None = None) -> None:
    """Write frames in the LIW1 binary format (+ JSON sidecar if spec given)."""
    if frames:
        frame_len = len(frames[0])
        if any(len(f) != frame_len for f in frames):
            raise ValueError("all frames must share one frame length")
    else:
        frame_len = spec.frame_len if spec is not None else 0
    if len(frames) > 0xFFFFFFFF:
        raise ValueError("frame count overflows the u32 header field")
    if scheme_count > 0xFF:
        raise ValueError("scheme count overflows the u8 header field")

    with open(path, "wb") as fh:
        fh.write(_DATASET_MAGIC)
        fh.write(struct.pack("<IIB", len(frames), frame_len, scheme_count))
        for frame in frames:
            fh.write(struct.pack("<Bf", frame.label, frame.snr_tag))
            reals = interleave_iq(np.asarray(frame.samples, dtype=np.complex128))
            fh.write(reals.astype("<f4").tobytes())
    if spec is not None:
        sidecar = {"format": "LIW1", "spec": spec.to_dict()}
        with open(path + ".json", "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_dataset(path: str) -> tuple[list[IqFrame], DatasetSpec | None]:
    """Read a LIW1 dataset; returns (frames, spec-from-sidecar-or-None)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _DATASET_MAGIC:
            raise ValueError(f"{path}: not a LIW1 dataset (magic {magic!r})")
        count, frame_len, _scheme_count = struct.unpack("<IIB", fh.read(9))
        record = struct.Struct("<Bf")
        frames = []
        for _ in range(count):
            label, snr = record.unpack(fh.read(record.size))
            raw = fh.read(8 * frame_len)
            if len(raw) != 8 * frame_len:
                raise ValueError(f"{path}: truncated frame payload")
            reals = np.frombuffer(raw, dtype="<f4").astype(np.float64)
            frames.append(IqFrame(deinterleave_iq(reals), int(label), float(snr)))

    spec = None
    try:
        with open(path + ".json", "r", encoding="utf-8") as fh:
            sidecar = json.load(fh)
        spec = DatasetSpec.from_dict(sidecar["spec"])
    except FileNotFoundError:
        pass
    if spec is not None:
        for i, frame in enumerate(frames):
            frame.seed = derive_seed(spec.master_seed, "loaded", i)
    else:
        for i, frame in enumerate(frames):
            frame.seed = i
    return frames, spec


def synthesize_dataset(spec: DatasetSpec, path: str) -> list[IqFrame]:
    """Generate the full dataset and write it (binary + sidecar)."""
    frames = synth_frames(spec)
    save_dataset(frames, path, scheme_count=len(spec.schemes), spec=spec)
    return frames


def file_fingerprint(path: str) -> str:
    """sha256 hex digest of a file's bytes."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
