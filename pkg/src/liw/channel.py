"""Practical transmission path: AWGN, uniform quantization, splice/split loop.

transmit() models the simulated hardware hop: gain, additive white Gaussian
noise with power referenced to the measured stream power, then receiver-side
quantization. Noise is drawn per frame-length block from seeds derived from
(noise_seed, block index), so a stream transmission and an equivalent
per-frame simulation consume identical noise samples.

Frame synchronization is idealized: streams carry their frame boundaries as
metadata and split() uses them directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .seeds import derive_seed
from .waveform import DEFAULT_CLIP_AMP, IqFrame, complex_awgn

_ALLOWED_QUANT_BITS = (0, 4, 8, 12, 16)


@dataclass
class ChannelConfig:
    snr_db: float = 10.0          # channel noise intensity; +inf disables noise
    quant_bits: int = 8           # receiver quantization depth; 0 disables
    gain: float = 1.0
    noise_seed: int = 0
    clip_amp: float = DEFAULT_CLIP_AMP

    def validate(self) -> None:
        if self.quant_bits not in _ALLOWED_QUANT_BITS:
            raise ConfigError(f"quant_bits must be one of {_ALLOWED_QUANT_BITS}")
        if self.gain <= 0.0:
            raise ConfigError("gain must be positive")
        if self.clip_amp <= 0.0:
            raise ConfigError("clip_amp must be positive")


@dataclass
class SignalStream:
    """Concatenated frames plus the metadata needed to split them again."""

    samples: np.ndarray
    frame_len: int
    frame_count: int
    boundary_index: list[int]
    labels: list[int] = field(default_factory=list)
    snr_tags: list[float] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Quantization
# ---------------------------------------------------------------------------

def quantize_values(values: np.ndarray, bits: int, clip_amp: float) -> np.ndarray:
    """Round reals to the nearest of 2^bits uniform levels spanning +/-clip_amp.

    Levels sit at (k + 0.5) * step for integer k (zero is not a level), with
    step = 2*clip_amp / (2^bits - 1); ties round away from zero. Values are
    clamped to +/-clip_amp first, so the maximum error for in-range values is
    step / 2.
    """
    if bits < 2:
        raise ValueError("bits must be >= 2")
    step = 2.0 * clip_amp / (2**bits - 1)
    v = np.clip(np.asarray(values, dtype=np.float64), -clip_amp, clip_amp)
    sign = np.where(v < 0.0, -1.0, 1.0)
    k = np.floor(np.abs(v) / step)
    k = np.minimum(k, 2 ** (bits - 1) - 1)
    return sign * (k + 0.5) * step


def quantize(frame: IqFrame, bits: int, clip_amp: float = DEFAULT_CLIP_AMP) -> IqFrame:
    """Quantize I and Q components of a frame independently."""
    re = quantize_values(frame.samples.real, bits, clip_amp)
    im = quantize_values(frame.samples.imag, bits, clip_amp)
    return IqFrame(re + 1j * im, frame.label, frame.snr_tag, frame.seed)


# ---------------------------------------------------------------------------
# Splice / transmit / split
# ---------------------------------------------------------------------------

def splice(frames: list[IqFrame]) -> SignalStream:
    """Concatenate frames (in order) into one transmit stream."""
    if not frames:
        return SignalStream(np.zeros(0, dtype=np.complex128), 0, 0, [])
    frame_len = len(frames[0])
    if any(len(f) != frame_len for f in frames):
        raise ValueError("all frames must share one frame length")
    samples = np.concatenate([np.asarray(f.samples, dtype=np.complex128) for f in frames])
    return SignalStream(
        samples=samples,
        frame_len=frame_len,
        frame_count=len(frames),
        boundary_index=[i * frame_len for i in range(len(frames))],
        labels=[f.label for f in frames],
        snr_tags=[f.snr_tag for f in frames],
        seeds=[f.seed for f in frames],
    )


def channel_noise_block(noise_seed: int, block_index: int, n: int) -> np.ndarray:
    """Unit-power complex noise for one frame-length block, seed-addressable."""
    rng = np.random.default_rng(derive_seed(noise_seed, "chan", block_index))
    return complex_awgn(rng, n)


def transmit(stream: SignalStream, ch: ChannelConfig) -> SignalStream:
    """Simulated hardware hop: gain -> AWGN -> receiver quantization.

    Noise power targets measured stream power / 10^(snr/10) and is drawn
    blockwise (one block per frame slot) so results are reproducible per
    block regardless of stream composition order.
    """
    ch.validate()
    out = np.asarray(stream.samples, dtype=np.complex128) * ch.gain
    if len(out) and not (math.isinf(ch.snr_db) and ch.snr_db > 0):
        p_signal = float(np.mean(np.abs(out) ** 2))
        p_noise = p_signal / (10.0 ** (ch.snr_db / 10.0))
        scale = math.sqrt(p_noise)
        block = stream.frame_len if stream.frame_len > 0 else len(out)
        noisy = out.copy()
        for bi in range(0, len(out), block):
            n = min(block, len(out) - bi)
            noisy[bi : bi + n] += scale * channel_noise_block(ch.noise_seed, bi // block, n)
        out = noisy
    if ch.quant_bits > 0:
        re = quantize_values(out.real, ch.quant_bits, ch.clip_amp)
        im = quantize_values(out.imag, ch.quant_bits, ch.clip_amp)
        out = re + 1j * im
    return SignalStream(
        samples=out,
        frame_len=stream.frame_len,
        frame_count=stream.frame_count,
        boundary_index=list(stream.boundary_index),
        labels=list(stream.labels),
        snr_tags=list(stream.snr_tags),
        seeds=list(stream.seeds),
    )


def split(stream: SignalStream, frame_len: int | None = None) -> list[IqFrame]:
    """Cut a received stream back into frames at the known boundaries."""
    if frame_len is None:
        frame_len = stream.frame_len
    if frame_len <= 0:
        return []
    if len(stream.samples) % frame_len != 0:
        raise ValueError(
            f"stream length {len(stream.samples)} is not divisible by frame_len {frame_len}"
        )
    count = len(stream.samples) // frame_len
    frames = []
    for i in range(count):
        label = stream.labels[i] if i < len(stream.labels) else 0
        snr = stream.snr_tags[i] if i < len(stream.snr_tags) else math.nan
        seed = stream.seeds[i] if i < len(stream.seeds) else 0
        frames.append(
            IqFrame(
                stream.samples[i * frame_len : (i + 1) * frame_len].copy(),
                label,
                snr,
                seed,
            )
        )
    return frames


def hardware_loop(frames: list[IqFrame], ch: ChannelConfig) -> list[IqFrame]:
    """Splice -> transmit -> split; the received dataset ready for evaluation."""
    if not frames:
        return []
    return split(transmit(splice(frames), ch))


def apply_channel_frame(frame: IqFrame, ch: ChannelConfig, frame_index: int = 0) -> IqFrame:
    """Per-frame channel: gain -> AWGN (frame-power reference) -> quantization.

    Uses the same per-block noise draws as :func:`transmit`, so a paired
    stream transmission differs only by the stream-vs-frame power reference.
    """
    ch.validate()
    samples = np.asarray(frame.samples, dtype=np.complex128) * ch.gain
    if len(samples) and not (math.isinf(ch.snr_db) and ch.snr_db > 0):
        p_signal = float(np.mean(np.abs(samples) ** 2))
        if p_signal <= 0.0:
            raise ValueError("cannot add noise relative to a zero-power frame")
        p_noise = p_signal / (10.0 ** (ch.snr_db / 10.0))
        samples = samples + math.sqrt(p_noise) * channel_noise_block(
            ch.noise_seed, frame_index, len(samples)
        )
    out = IqFrame(samples, frame.label, frame.snr_tag, frame.seed)
    if ch.quant_bits > 0:
        out = quantize(out, ch.quant_bits, ch.clip_amp)
    return out
