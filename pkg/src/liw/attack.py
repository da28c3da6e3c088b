"""Low-interception waveform generation by decoupled direction/norm descent.

Starting from a clean frame mapped into [0, 1], each iteration accumulates a
normalized loss-gradient step into a direction vector, multiplies the
perturbation norm bound by (1 - gamma) or (1 + gamma) depending on whether
the previous candidate already fools the classifier, and projects onto the
sphere of that radius around the original before clipping to [0, 1]. After
the final iteration the perturbation is amplified by beta, re-clipped, and
mapped back to the physical IQ domain.

The result log written by :func:`batch_generate` is JSON-lines, one record
per frame.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import quantize
from .errors import AttackError, ConfigError
from .seeds import derive_seed
from .waveform import (
    DEFAULT_CLIP_AMP,
    IqFrame,
    UnitFrame,
    from_unit_interval,
    psr_db,
    save_dataset,
    to_unit_interval,
)

_NORM_FLOOR = 1e-12


@dataclass
class AttackConfig:
    """Hyperparameters of the waveform attack.

    iterations is the loop count K (100 for ideal conditions, 10 for the
    practical recipe); alpha anneals from alpha_max to alpha_min on a cosine;
    gamma is the multiplicative norm-modify factor; beta scales the final
    perturbation. Targeted mode flips the gradient sign and drives the
    classifier toward target_label.
    """

    iterations: int = 100
    alpha_max: float = 1.0
    alpha_min: float = 0.01
    gamma: float = 0.05
    beta: float = 1.0
    targeted: bool = False
    target_label: int | None = None
    epsilon_init: float = 1.0
    clip_amp: float = DEFAULT_CLIP_AMP
    quant_bits: int = 0      # quantize the transmitted waveform before the success check
    use_best: bool = False   # return the smallest-norm adversarial iterate instead of the last

    def validate(self) -> None:
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must be in [0, 1)")
        if self.beta <= 0.0:
            raise ConfigError("beta must be positive")
        if not self.alpha_max >= self.alpha_min > 0.0:
            raise ConfigError("need alpha_max >= alpha_min > 0")
        if self.epsilon_init <= 0.0:
            raise ConfigError("epsilon_init must be positive")
        if self.targeted and self.target_label is None:
            raise ConfigError("targeted mode requires target_label")

    @property
    def gradient_sign(self) -> int:
        return -1 if self.targeted else 1


@dataclass
class AttackState:
    """Per-frame loop state after iteration k."""

    delta: np.ndarray            # accumulated direction (unnormalized)
    epsilon: float               # current norm bound
    x_tilde: np.ndarray          # candidate waveform in [0, 1]
    k: int = 0
    # (perturbation norm, candidate) of the smallest adversarial iterate seen
    best_adversarial: tuple[float, np.ndarray] | None = None


@dataclass
class AttackResult:
    liw: IqFrame
    success: bool
    psr_db: float
    iterations_used: int
    clamp_fraction: float
    epsilon_final: float
    label: int
    pred_before: int
    pred_after: int
    frame_index: int = -1

    def to_record(self) -> dict:
        return {
            "frame_index": self.frame_index,
            "label": self.label,
            "pred_before": self.pred_before,
            "pred_after": self.pred_after,
            "psr_db": self.psr_db,
            "epsilon_final": self.epsilon_final,
            "iterations": self.iterations_used,
            "clamp_fraction": self.clamp_fraction,
            "success": self.success,
        }


def cosine_alpha(k: int, cfg: AttackConfig) -> float:
    """Step size at iteration k (1-based): half-cosine from alpha_max to alpha_min."""
    if not 1 <= k <= cfg.iterations:
        raise ValueError(f"iteration {k} outside 1..{cfg.iterations}")
    if cfg.iterations == 1:
        return cfg.alpha_max
    span = cfg.alpha_max - cfg.alpha_min
    return cfg.alpha_min + 0.5 * span * (1.0 + math.cos(math.pi * (k - 1) / (cfg.iterations - 1)))


def adjust_epsilon(epsilon: float, was_adversarial: bool, gamma: float) -> float:
    """Shrink the norm bound when already adversarial, enlarge otherwise."""
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    return epsilon * (1.0 - gamma) if was_adversarial else epsilon * (1.0 + gamma)


def is_adversarial(predicted: int, label: int, cfg: AttackConfig) -> bool:
    """Non-targeted: any wrong class. Targeted: exactly the target class."""
    if cfg.targeted:
        return predicted == cfg.target_label
    return predicted != label


def _fallback_direction(n: int, frame_seed: int, k: int) -> np.ndarray:
    """Unit pseudorandom direction used when the gradient underflows."""
    rng = np.random.default_rng(derive_seed(frame_seed, "zerograd", k))
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def liw_iteration(state: AttackState, model, x: np.ndarray, label: int,
                  cfg: AttackConfig, frame_seed: int = 0) -> AttackState:
    """One attack iteration: gradient step, norm update, sphere projection, clip."""
    k = state.k + 1
    probs, _, grad = model.loss_and_input_gradient(state.x_tilde, label)
    if not np.all(np.isfinite(grad)):
        raise AttackError(f"non-finite gradient at iteration {k}")
    g = cfg.gradient_sign * grad
    g_norm = float(np.linalg.norm(g))
    if g_norm < _NORM_FLOOR:
        g = _fallback_direction(len(x), frame_seed, k)
        g_norm = 1.0

    delta = state.delta + cosine_alpha(k, cfg) * (g / g_norm)

    was_adversarial = is_adversarial(int(np.argmax(probs)), label, cfg)
    epsilon = adjust_epsilon(state.epsilon, was_adversarial, cfg.gamma)

    d_norm = float(np.linalg.norm(delta))
    if d_norm < _NORM_FLOOR:
        delta = _fallback_direction(len(x), frame_seed, k)
        d_norm = 1.0
    x_tilde = np.clip(x + epsilon * (delta / d_norm), 0.0, 1.0)

    best = state.best_adversarial
    if was_adversarial:
        norm_prev = float(np.linalg.norm(state.x_tilde - x))
        if best is None or norm_prev < best[0]:
            best = (norm_prev, state.x_tilde.copy())
    return AttackState(delta=delta, epsilon=epsilon, x_tilde=x_tilde, k=k,
                       best_adversarial=best)


def generate_liw(model, frame: IqFrame, cfg: AttackConfig) -> AttackResult:
    """Run the full attack on one frame and return the transmitted waveform.

    The success flag and PSR are evaluated on the waveform as transmitted:
    after beta amplification, re-clipping to [0, 1], float32 rounding, and
    (when cfg.quant_bits > 0) uniform quantization.
    """
    cfg.validate()
    unit = to_unit_interval(frame, cfg.clip_amp)
    x = unit.values
    label = cfg.target_label if cfg.targeted else frame.label

    probs0 = model.forward(x)
    pred_before = int(np.argmax(probs0))

    state = AttackState(delta=np.zeros_like(x), epsilon=cfg.epsilon_init,
                        x_tilde=x.copy(), k=0)
    for _ in range(cfg.iterations):
        state = liw_iteration(state, model, x, label, cfg, frame_seed=frame.seed)

    final_unit = state.x_tilde
    if cfg.use_best and state.best_adversarial is not None:
        final_unit = state.best_adversarial[1]

    amplified = x + cfg.beta * (final_unit - x)
    clipped = np.clip(amplified, 0.0, 1.0)
    clamp_fraction = float(np.mean((amplified < 0.0) | (amplified > 1.0)))

    physical = from_unit_interval(UnitFrame(clipped, cfg.clip_amp), like=frame)
    # float32 is the storage/transmission precision; evaluate what is sent
    physical.samples = physical.samples.astype(np.complex64).astype(np.complex128)
    liw_frame = IqFrame(physical.samples, frame.label, frame.snr_tag, frame.seed)

    transmitted = liw_frame
    if cfg.quant_bits > 0:
        transmitted = quantize(liw_frame, cfg.quant_bits, cfg.clip_amp)
    probs_after = model.forward(to_unit_interval(transmitted, cfg.clip_amp).values)
    pred_after = int(np.argmax(probs_after))

    success = (pred_after == cfg.target_label) if cfg.targeted else (pred_after != frame.label)
    return AttackResult(
        liw=liw_frame,
        success=success,
        psr_db=psr_db(frame, liw_frame),
        iterations_used=state.k,
        clamp_fraction=clamp_fraction,
        epsilon_final=state.epsilon,
        label=frame.label,
        pred_before=pred_before,
        pred_after=pred_after,
    )


# ---------------------------------------------------------------------------
# Batch generation
# ---------------------------------------------------------------------------

_WORKER: dict = {}


def _init_worker(model_cfg_dict, param_vector, attack_cfg):
    from .model import Classifier, ModelConfig

    model = Classifier(ModelConfig.from_dict(model_cfg_dict))
    model.set_param_vector(param_vector)
    _WORKER["model"] = model
    _WORKER["cfg"] = attack_cfg


def _attack_one(item):
    index, frame = item
    result = generate_liw(_WORKER["model"], frame, _WORKER["cfg"])
    result.frame_index = index
    return result


def batch_generate(model, frames, cfg: AttackConfig, jobs: int = 1,
                   liw_path: str | None = None, log_path: str | None = None,
                   scheme_count: int = 0):
    """Attack every frame; deterministic and independent of the jobs count.

    Returns (liw_frames, results). Optionally writes the LIW dataset in the
    binary frame format and a JSON-lines result log.
    """
    cfg.validate()
    results: list[AttackResult] = []
    if jobs <= 1 or len(frames) <= 1:
        for i, frame in enumerate(frames):
            r = generate_liw(model, frame, cfg)
            r.frame_index = i
            results.append(r)
    else:
        with ProcessPoolExecutor(
            max_workers=jobs,
            initializer=_init_worker,
            initargs=(model.cfg.to_dict(), model.param_vector(), cfg),
        ) as pool:
            chunk = max(1, len(frames) // (jobs * 4))
            results = list(pool.map(_attack_one, enumerate(frames), chunksize=chunk))

    liw_frames = [r.liw for r in results]
    if liw_path is not None:
        save_dataset(liw_frames, liw_path, scheme_count=scheme_count)
    if log_path is not None:
        write_attack_log(results, log_path)
    return liw_frames, results


def write_attack_log(results, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps(r.to_record(), sort_keys=True))
            fh.write("\n")


def read_attack_log(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def summarize_results(results) -> dict:
    """Aggregate success rate and PSR statistics over finite-PSR frames."""
    if not results:
        return {"frames": 0, "success_rate": 0.0, "mean_psr_db": None}
    psrs = [r.psr_db for r in results if math.isfinite(r.psr_db)]
    return {
        "frames": len(results),
        "success_rate": sum(r.success for r in results) / len(results),
        "mean_psr_db": float(np.mean(psrs)) if psrs else None,
        "min_psr_db": float(np.min(psrs)) if psrs else None,
        "max_psr_db": float(np.max(psrs)) if psrs else None,
        "mean_clamp_fraction": float(np.mean([r.clamp_fraction for r in results])),
    }
