"""Shared fixtures: small trained models and frame sets, built once per session."""

import functools
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from liw.model import Classifier, ModelConfig, TrainConfig, train
from liw.waveform import DatasetSpec, synth_frames


@functools.lru_cache(maxsize=None)
def cached_two_scheme_setup():
    """OOK vs QPSK classifier trained to ~1.0 at SNR 30; fast and reliable."""
    spec = DatasetSpec(schemes=("OOK", "QPSK"), frames_per_scheme_per_snr=60,
                       snr_grid=(10.0, 30.0), frame_len=128, master_seed=1)
    frames = synth_frames(spec)
    model = Classifier(ModelConfig(frame_len=128, num_classes=2,
                                   conv_channels=(12, 12), kernel=7,
                                   dense_units=32, seed=4))
    train(model, frames, TrainConfig(epochs=16, batch_size=32, seed=6))
    return model, frames
