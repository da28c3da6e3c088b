import math

import numpy as np
import pytest

from liw.attack import (
    AttackConfig,
    AttackState,
    adjust_epsilon,
    batch_generate,
    cosine_alpha,
    generate_liw,
    is_adversarial,
    liw_iteration,
    read_attack_log,
    summarize_results,
    write_attack_log,
)
from liw.errors import AttackError, ConfigError
from liw.model import Classifier, TrainConfig, train
from liw.waveform import IqFrame, psr_db, to_unit_interval

from tests.test_model import tiny_config, toy_frames


class StubModel:
    """Scriptable stand-in: fixed gradient and a controllable predicted class."""

    def __init__(self, n, gradient=None, predicted=0, num_classes=3):
        self.n = n
        self.num_classes = num_classes
        self.gradient = np.ones(n) if gradient is None else np.asarray(gradient, float)
        self.predicted = predicted
        self.calls = 0

    def _probs(self):
        probs = np.full(self.num_classes, 0.1 / (self.num_classes - 1))
        probs[self.predicted] = 0.9
        return probs

    def forward(self, u):
        return self._probs()

    def loss_and_input_gradient(self, u, label):
        self.calls += 1
        return self._probs(), 1.0, self.gradient.copy()


def unit_input(n=32, seed=0):
    return np.random.default_rng(seed).uniform(0.3, 0.7, n)


class TestSchedules:
    def test_cosine_endpoints(self):
        cfg = AttackConfig(iterations=100)
        assert cosine_alpha(1, cfg) == 1.0
        assert abs(cosine_alpha(100, cfg) - 0.01) < 1e-12

    def test_cosine_midpoint_is_mean_of_endpoints(self):
        cfg = AttackConfig(iterations=101)
        assert abs(cosine_alpha(51, cfg) - 0.505) < 1e-12

    def test_single_iteration_uses_alpha_max(self):
        cfg = AttackConfig(iterations=1)
        assert cosine_alpha(1, cfg) == 1.0

    def test_out_of_range_k(self):
        cfg = AttackConfig(iterations=10)
        with pytest.raises(ValueError):
            cosine_alpha(0, cfg)
        with pytest.raises(ValueError):
            cosine_alpha(11, cfg)

    def test_adjust_epsilon_examples(self):
        assert adjust_epsilon(1.0, True, 0.05) == pytest.approx(0.95)
        assert adjust_epsilon(1.0, False, 0.05) == pytest.approx(1.05)
        assert adjust_epsilon(0.5, True, 0.0) == 0.5

    def test_adjust_epsilon_requires_positive(self):
        with pytest.raises(ValueError):
            adjust_epsilon(0.0, True, 0.05)


class TestAdversarialTest:
    def test_non_targeted(self):
        cfg = AttackConfig()
        assert is_adversarial(2, 1, cfg)
        assert not is_adversarial(1, 1, cfg)

    def test_targeted(self):
        cfg = AttackConfig(targeted=True, target_label=2)
        assert is_adversarial(2, 1, cfg)
        assert not is_adversarial(0, 1, cfg)


class TestIteration:
    def test_epsilon_ratio_property(self):
        # over randomized runs the ratio is exactly 1-gamma or 1+gamma
        rng = np.random.default_rng(0)
        x = unit_input()
        for trial in range(50):
            predicted = int(rng.integers(0, 3))
            model = StubModel(len(x), gradient=rng.standard_normal(len(x)),
                              predicted=predicted)
            cfg = AttackConfig(iterations=20, gamma=0.05)
            state = AttackState(delta=np.zeros(len(x)), epsilon=1.0,
                                x_tilde=x.copy(), k=0)
            for _ in range(20):
                prev = state.epsilon
                state = liw_iteration(state, model, x, 1, cfg)
                ratio = state.epsilon / prev
                assert ratio == pytest.approx(0.95) or ratio == pytest.approx(1.05)

    def test_sphere_projection_pre_clip(self):
        rng = np.random.default_rng(1)
        x = unit_input(64, seed=2)
        model = StubModel(64, gradient=rng.standard_normal(64), predicted=1)
        cfg = AttackConfig(iterations=8, epsilon_init=0.05)
        state = AttackState(delta=np.zeros(64), epsilon=cfg.epsilon_init,
                            x_tilde=x.copy(), k=0)
        for _ in range(8):
            state = liw_iteration(state, model, x, 1, cfg)
            pre_clip = x + state.epsilon * state.delta / np.linalg.norm(state.delta)
            assert abs(np.linalg.norm(pre_clip - x) - state.epsilon) < 1e-6
            # with a small epsilon nothing clips, so the iterate is on the sphere
            assert abs(np.linalg.norm(state.x_tilde - x) - state.epsilon) < 1e-6

    def test_misclassified_frame_shrinks_epsilon(self):
        x = unit_input()
        model = StubModel(len(x), predicted=2)  # != label 1 -> adversarial
        cfg = AttackConfig(iterations=5)
        state = AttackState(delta=np.zeros(len(x)), epsilon=1.0, x_tilde=x.copy(), k=0)
        state = liw_iteration(state, model, x, 1, cfg)
        assert state.epsilon == pytest.approx(0.95)

    def test_correctly_classified_grows_epsilon(self):
        x = unit_input()
        model = StubModel(len(x), predicted=1)
        cfg = AttackConfig(iterations=5)
        state = AttackState(delta=np.zeros(len(x)), epsilon=1.0, x_tilde=x.copy(), k=0)
        state = liw_iteration(state, model, x, 1, cfg)
        assert state.epsilon == pytest.approx(1.05)

    def test_identical_gradients_accumulate(self):
        # constant alpha + identical gradients: ||delta|| doubles after 2 steps
        x = unit_input()
        g = np.random.default_rng(5).standard_normal(len(x))
        model = StubModel(len(x), gradient=g, predicted=1)
        cfg = AttackConfig(iterations=2, alpha_max=0.5, alpha_min=0.5)
        state = AttackState(delta=np.zeros(len(x)), epsilon=1.0, x_tilde=x.copy(), k=0)
        state = liw_iteration(state, model, x, 1, cfg)
        norm1 = np.linalg.norm(state.delta)
        state = liw_iteration(state, model, x, 1, cfg)
        norm2 = np.linalg.norm(state.delta)
        assert norm2 == pytest.approx(2 * norm1)

    def test_targeted_gradient_is_negated(self):
        x = unit_input()
        g = np.random.default_rng(6).standard_normal(len(x))
        plain = AttackConfig(iterations=1)
        targeted = AttackConfig(iterations=1, targeted=True, target_label=2)
        states = {}
        for name, cfg in (("plain", plain), ("targeted", targeted)):
            model = StubModel(len(x), gradient=g, predicted=1)
            state = AttackState(delta=np.zeros(len(x)), epsilon=1.0,
                                x_tilde=x.copy(), k=0)
            states[name] = liw_iteration(state, model, x, 2, cfg)
        assert np.allclose(states["plain"].delta, -states["targeted"].delta)

    def test_zero_gradient_falls_back_to_pseudorandom(self):
        x = unit_input()
        model = StubModel(len(x), gradient=np.zeros(len(x)), predicted=1)
        cfg = AttackConfig(iterations=3)
        state = AttackState(delta=np.zeros(len(x)), epsilon=1.0, x_tilde=x.copy(), k=0)
        s1 = liw_iteration(state, model, x, 1, cfg, frame_seed=42)
        assert np.linalg.norm(s1.delta) > 0
        # deterministic given the frame seed
        s2 = liw_iteration(state, model, x, 1, cfg, frame_seed=42)
        assert np.array_equal(s1.delta, s2.delta)

    def test_non_finite_gradient_aborts(self):
        x = unit_input()
        g = np.full(len(x), np.nan)
        model = StubModel(len(x), gradient=g, predicted=1)
        cfg = AttackConfig(iterations=1)
        state = AttackState(delta=np.zeros(len(x)), epsilon=1.0, x_tilde=x.copy(), k=0)
        with pytest.raises(AttackError):
            liw_iteration(state, model, x, 1, cfg)

    def test_best_adversarial_tracks_smallest_norm(self):
        x = unit_input()
        model = StubModel(len(x), gradient=np.ones(len(x)), predicted=2)
        cfg = AttackConfig(iterations=4)
        state = AttackState(delta=np.zeros(len(x)), epsilon=0.02, x_tilde=x.copy(), k=0)
        for _ in range(4):
            state = liw_iteration(state, model, x, 1, cfg)
        assert state.best_adversarial is not None
        # the first candidate (the unperturbed input, norm 0) is the smallest
        assert state.best_adversarial[0] == 0.0


def trained_toy_model():
    frames = toy_frames(n_per_class=50, seed=3)
    model = Classifier(tiny_config(num_classes=2, seed=1))
    train(model, frames, TrainConfig(epochs=8, batch_size=16, seed=5))
    return model, frames


class TestGenerateLiw:
    def test_attack_fools_trained_model(self):
        # the last iterate hovers around the decision boundary, so returning
        # the smallest adversarial iterate is the reliable success mode
        model, frames = trained_toy_model()
        cfg = AttackConfig(iterations=40, use_best=True)
        n_success = 0
        psrs = []
        for frame in frames[:10]:
            result = generate_liw(model, frame, cfg)
            n_success += result.success
            psrs.append(result.psr_db)
            assert len(result.liw) == len(frame)
        assert n_success >= 9
        assert np.mean(psrs) < -3.0

    def test_beta_one_returns_last_iterate_exactly(self):
        model, frames = trained_toy_model()
        frame = frames[0]
        cfg = AttackConfig(iterations=5, beta=1.0)
        result = generate_liw(model, frame, cfg)
        # replay the loop manually; beta=1 must reproduce x_tilde_K bit-for-bit
        x = to_unit_interval(frame, cfg.clip_amp).values
        state = AttackState(delta=np.zeros(len(x)), epsilon=cfg.epsilon_init,
                            x_tilde=x.copy(), k=0)
        for _ in range(cfg.iterations):
            state = liw_iteration(state, model, x, frame.label, cfg,
                                  frame_seed=frame.seed)
        from liw.waveform import UnitFrame, from_unit_interval

        expected = from_unit_interval(UnitFrame(state.x_tilde, cfg.clip_amp), like=frame)
        expected_f32 = expected.samples.astype(np.complex64)
        assert np.array_equal(result.liw.samples.astype(np.complex64), expected_f32)

    def test_beta_scales_psr_by_20log10(self):
        model, frames = trained_toy_model()
        frame = frames[1]
        # small epsilon keeps all values away from the [0,1] boundary: no clipping
        base = AttackConfig(iterations=6, epsilon_init=0.03, beta=1.0)
        amplified = AttackConfig(iterations=6, epsilon_init=0.03, beta=10.0)
        r1 = generate_liw(model, frame, base)
        r10 = generate_liw(model, frame, amplified)
        assert r1.clamp_fraction == 0.0
        assert r10.clamp_fraction == 0.0
        # float32 storage rounding bounds the attainable exactness here
        assert r10.psr_db - r1.psr_db == pytest.approx(20.0, abs=1e-3)

    def test_epsilon_dynamics_bound_final_norm(self):
        model, frames = trained_toy_model()
        frame = frames[2]
        cfg = AttackConfig(iterations=10)
        result = generate_liw(model, frame, cfg)
        lo = cfg.epsilon_init * (1 - cfg.gamma) ** 10
        hi = cfg.epsilon_init * (1 + cfg.gamma) ** 10
        assert lo <= result.epsilon_final <= hi

    def test_success_evaluated_after_quantization(self):
        model, frames = trained_toy_model()
        frame = frames[3]
        cfg = AttackConfig(iterations=15, quant_bits=8)
        result = generate_liw(model, frame, cfg)
        from liw.channel import quantize

        q = quantize(result.liw, 8, cfg.clip_amp)
        pred = int(np.argmax(model.forward(to_unit_interval(q, cfg.clip_amp).values)))
        assert result.success == (pred != frame.label)

    def test_validation_errors(self):
        with pytest.raises(ConfigError):
            AttackConfig(iterations=0).validate()
        with pytest.raises(ConfigError):
            AttackConfig(gamma=1.5).validate()
        with pytest.raises(ConfigError):
            AttackConfig(beta=0.0).validate()
        with pytest.raises(ConfigError):
            AttackConfig(targeted=True).validate()


class TestBatchGenerate:
    def test_empty_dataset(self, tmp_path):
        model, _ = trained_toy_model()
        liw_path = str(tmp_path / "liw.liw1")
        log_path = str(tmp_path / "log.jsonl")
        liw_frames, results = batch_generate(model, [], AttackConfig(iterations=2),
                                             liw_path=liw_path, log_path=log_path,
                                             scheme_count=2)
        assert liw_frames == [] and results == []
        assert open(log_path).read() == ""

    def test_parallel_matches_serial_bitwise(self, tmp_path):
        model, frames = trained_toy_model()
        cfg = AttackConfig(iterations=6)
        subset = frames[:6]
        paths = {}
        for jobs in (1, 2):
            liw_path = str(tmp_path / f"liw_{jobs}.liw1")
            log_path = str(tmp_path / f"log_{jobs}.jsonl")
            batch_generate(model, subset, cfg, jobs=jobs, liw_path=liw_path,
                           log_path=log_path, scheme_count=2)
            paths[jobs] = (liw_path, log_path)
        assert open(paths[1][0], "rb").read() == open(paths[2][0], "rb").read()
        assert open(paths[1][1]).read() == open(paths[2][1]).read()

    def test_log_round_trip(self, tmp_path):
        model, frames = trained_toy_model()
        cfg = AttackConfig(iterations=3)
        _, results = batch_generate(model, frames[:4], cfg)
        path = str(tmp_path / "log.jsonl")
        write_attack_log(results, path)
        records = read_attack_log(path)
        assert len(records) == 4
        assert records[0]["frame_index"] == 0
        assert set(records[0]) == {
            "frame_index", "label", "pred_before", "pred_after", "psr_db",
            "epsilon_final", "iterations", "clamp_fraction", "success",
        }

    def test_summary_stats(self):
        model, frames = trained_toy_model()
        _, results = batch_generate(model, frames[:5], AttackConfig(iterations=10))
        stats = summarize_results(results)
        assert stats["frames"] == 5
        assert 0.0 <= stats["success_rate"] <= 1.0
        assert stats["mean_psr_db"] is None or math.isfinite(stats["mean_psr_db"])
