"""Low-interception waveform toolkit.

Generates adversarial IQ waveforms that defeat a modulation-recognition
classifier at minimal perturbation energy, and evaluates how well they
survive additive channel noise, quantization, and a simulated
transmit/receive loop.
"""

__version__ = "0.1.0"

from .attack import AttackConfig, AttackResult, AttackState, batch_generate, generate_liw
from .channel import ChannelConfig, SignalStream, hardware_loop, quantize, splice, split, transmit
from .errors import AttackError, CheckpointError, ConfigError, LiwError, TrainingDiverged
from .evaluation import (
    ConfusionMatrix,
    EvalReport,
    SweepSpec,
    evaluate,
    hardware_loop_eval,
    practical_eval,
    sweep,
)
from .model import Checkpoint, Classifier, ModelConfig, TrainConfig, load_checkpoint, save_checkpoint, train
from .waveform import (
    DatasetSpec,
    IqFrame,
    ModulationScheme,
    UnitFrame,
    add_awgn,
    from_unit_interval,
    load_dataset,
    modulate,
    psr_db,
    save_dataset,
    synthesize_dataset,
    to_unit_interval,
)
