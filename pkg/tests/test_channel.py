import math

import numpy as np
import pytest

from liw.channel import (
    ChannelConfig,
    SignalStream,
    apply_channel_frame,
    hardware_loop,
    quantize,
    quantize_values,
    splice,
    split,
    transmit,
)
from liw.errors import ConfigError
from liw.waveform import DatasetSpec, IqFrame, ModulationScheme, modulate, synth_frames


def make_frames(n=3, frame_len=128, seed0=0):
    spec = DatasetSpec(schemes=("QPSK",), frame_len=frame_len, master_seed=1)
    scheme = ModulationScheme.from_name("QPSK")
    frames = []
    for i in range(n):
        frame = modulate(scheme, seed0 + i, spec)
        frame.label = i % 2
        frame.snr_tag = 30.0
        frames.append(frame)
    return frames


class TestQuantizer:
    def test_zero_maps_to_half_step(self):
        for bits in (4, 8, 12):
            step = 8.0 / (2**bits - 1)
            q = quantize_values(np.array([0.0]), bits, 4.0)
            assert abs(q[0]) == pytest.approx(step / 2)

    def test_max_error_half_step(self):
        rng = np.random.default_rng(0)
        for bits in (4, 8):
            step = 8.0 / (2**bits - 1)
            v = rng.uniform(-4.0, 4.0, 20000)
            q = quantize_values(v, bits, 4.0)
            assert np.max(np.abs(q - v)) <= step / 2 + 1e-12

    def test_outputs_lie_on_level_grid(self):
        bits = 4
        step = 8.0 / (2**bits - 1)
        levels = (np.arange(2**bits) - (2**bits - 1) / 2) * step
        q = quantize_values(np.random.default_rng(1).uniform(-6, 6, 5000), bits, 4.0)
        dist = np.min(np.abs(q[:, None] - levels[None, :]), axis=1)
        assert np.max(dist) < 1e-12

    def test_idempotent(self):
        rng = np.random.default_rng(2)
        v = rng.uniform(-5, 5, 10000)
        q1 = quantize_values(v, 8, 4.0)
        q2 = quantize_values(q1, 8, 4.0)
        assert np.array_equal(q1, q2)

    def test_ties_round_away_from_zero(self):
        step = 8.0 / (2**8 - 1)
        v = np.array([step, -step, 2 * step, -2 * step])
        q = quantize_values(v, 8, 4.0)
        assert np.allclose(q, [1.5 * step, -1.5 * step, 2.5 * step, -2.5 * step])

    def test_clamps_out_of_range(self):
        q = quantize_values(np.array([100.0, -100.0]), 8, 4.0)
        assert abs(q[0]) <= 4.0 and abs(q[1]) <= 4.0
        assert q[0] == -q[1]

    def test_frame_quantize_preserves_metadata(self):
        frame = make_frames(1)[0]
        q = quantize(frame, 8)
        assert q.label == frame.label and q.snr_tag == frame.snr_tag
        assert len(q) == len(frame)

    def test_bits_below_two_rejected(self):
        with pytest.raises(ValueError):
            quantize_values(np.zeros(4), 1, 4.0)


class TestSpliceSplit:
    def test_concatenation_arithmetic(self):
        frames = make_frames(3, frame_len=256)
        stream = splice(frames)
        assert len(stream.samples) == 768
        assert stream.frame_count == 3
        assert stream.boundary_index == [0, 256, 512]

    def test_single_frame_stream(self):
        frames = make_frames(1)
        stream = splice(frames)
        assert np.array_equal(stream.samples, frames[0].samples)

    def test_round_trip_exact(self):
        frames = make_frames(4)
        back = split(splice(frames))
        assert len(back) == 4
        for orig, rec in zip(frames, back):
            assert np.array_equal(orig.samples, rec.samples)
            assert rec.label == orig.label
            assert rec.snr_tag == orig.snr_tag
            assert rec.seed == orig.seed

    def test_heterogeneous_lengths_rejected(self):
        frames = make_frames(2)
        frames.append(IqFrame(np.zeros(64, dtype=complex), 0, 30.0))
        with pytest.raises(ValueError):
            splice(frames)

    def test_indivisible_length_rejected(self):
        stream = SignalStream(np.zeros(100, dtype=complex), 64, 1, [0])
        with pytest.raises(ValueError):
            split(stream)

    def test_empty(self):
        stream = splice([])
        assert split(stream) == []


class TestTransmit:
    def test_transparent_channel_is_identity(self):
        frames = make_frames(3)
        ch = ChannelConfig(snr_db=math.inf, quant_bits=0, gain=1.0)
        out = transmit(splice(frames), ch)
        assert np.array_equal(out.samples, splice(frames).samples)

    def test_very_high_snr_nearly_identity(self):
        frames = make_frames(3)
        ch = ChannelConfig(snr_db=100.0, quant_bits=0, gain=1.0, noise_seed=5)
        out = transmit(splice(frames), ch)
        assert np.max(np.abs(out.samples - splice(frames).samples)) < 1e-4

    def test_noise_power_calibration(self):
        frames = make_frames(64, frame_len=256)
        stream = splice(frames)
        ch = ChannelConfig(snr_db=10.0, quant_bits=0, noise_seed=3)
        out = transmit(stream, ch)
        p_sig = np.mean(np.abs(stream.samples) ** 2)
        p_noise = np.mean(np.abs(out.samples - stream.samples) ** 2)
        assert abs(p_noise - p_sig / 10) / (p_sig / 10) < 0.05

    def test_gain_doubles_rms_before_noise(self):
        frames = make_frames(2)
        stream = splice(frames)
        ch = ChannelConfig(snr_db=math.inf, quant_bits=0, gain=2.0)
        out = transmit(stream, ch)
        assert np.allclose(out.samples, 2.0 * stream.samples)

    def test_deterministic_given_seed(self):
        frames = make_frames(3)
        ch = ChannelConfig(snr_db=5.0, quant_bits=8, noise_seed=11)
        a = transmit(splice(frames), ch)
        b = transmit(splice(frames), ch)
        assert np.array_equal(a.samples, b.samples)

    def test_quantized_output_on_grid(self):
        frames = make_frames(2)
        ch = ChannelConfig(snr_db=20.0, quant_bits=8, noise_seed=2)
        out = transmit(splice(frames), ch)
        requant_re = quantize_values(out.samples.real, 8, ch.clip_amp)
        assert np.array_equal(requant_re, out.samples.real)

    def test_invalid_config_rejected(self):
        with pytest.raises(ConfigError):
            ChannelConfig(quant_bits=3).validate()
        with pytest.raises(ConfigError):
            ChannelConfig(gain=0.0).validate()


class TestHardwareLoop:
    def test_transparent_loop_is_identity(self):
        frames = make_frames(5)
        ch = ChannelConfig(snr_db=math.inf, quant_bits=0)
        received = hardware_loop(frames, ch)
        for orig, rec in zip(frames, received):
            assert np.array_equal(orig.samples, rec.samples)
            assert rec.label == orig.label

    def test_preserves_count_and_order_under_noise(self):
        frames = make_frames(7)
        ch = ChannelConfig(snr_db=10.0, quant_bits=8, noise_seed=1)
        received = hardware_loop(frames, ch)
        assert len(received) == 7
        assert [f.label for f in received] == [f.label for f in frames]

    def test_same_seed_identical_output(self):
        frames = make_frames(4)
        ch = ChannelConfig(snr_db=10.0, quant_bits=8, noise_seed=9)
        a = hardware_loop(frames, ch)
        b = hardware_loop(frames, ch)
        for fa, fb in zip(a, b):
            assert np.array_equal(fa.samples, fb.samples)

    def test_empty_input(self):
        assert hardware_loop([], ChannelConfig()) == []


class TestPerFrameChannel:
    def test_matches_stream_noise_draws(self):
        # same unit noise per block: only the power reference differs, and for
        # unit-RMS frames the stream and frame powers coincide
        frames = make_frames(3)
        ch = ChannelConfig(snr_db=10.0, quant_bits=0, noise_seed=4)
        looped = hardware_loop(frames, ch)
        direct = [apply_channel_frame(f, ch, i) for i, f in enumerate(frames)]
        stream_power = np.mean(np.abs(splice(frames).samples) ** 2)
        for i, (a, b) in enumerate(zip(looped, direct)):
            frame_power = frames[i].power()
            scale = math.sqrt(stream_power / frame_power)
            na = a.samples - frames[i].samples
            nb = b.samples - frames[i].samples
            assert np.allclose(na, nb * scale, atol=1e-12)

    def test_transparent_identity(self):
        frame = make_frames(1)[0]
        ch = ChannelConfig(snr_db=math.inf, quant_bits=0)
        out = apply_channel_frame(frame, ch, 0)
        assert np.array_equal(out.samples, frame.samples)
