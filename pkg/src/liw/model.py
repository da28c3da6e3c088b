"""Small convolutional classifier over IQ frames, written on plain numpy.

Forward inference, cross-entropy loss, parameter gradients for SGD training,
and exact analytic input gradients (the quantity the attack consumes). All
arithmetic runs in float64; parameters are canonically float32 so that
checkpoints round-trip bit-for-bit.

Architecture (lengths for the default frame_len L):
    input (2, L) as interleaved [0,1] values, recentered to [-1, 1]
    -> Conv1D(c1, k, same) + ReLU + MaxPool(2)
    -> Conv1D(c2, k, same) + ReLU + MaxPool(2)
    -> Dense(d) + ReLU -> Dense(C) -> softmax

Checkpoint format (little-endian): magic "LIWM" | u32 version | u32 header
length | JSON header (architecture, dataset fingerprint, metrics, param
count) | f32 parameter blob.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, ConfigError, TrainingDiverged
from .waveform import IqFrame, UnitFrame, to_unit_interval, DEFAULT_CLIP_AMP

_CHECKPOINT_MAGIC = b"LIWM"
_CHECKPOINT_VERSION = 1
_PROB_FLOOR = 1e-12


@dataclass
class ModelConfig:
    frame_len: int = 256
    num_classes: int = 8
    conv_channels: tuple[int, int] = (16, 16)
    kernel: int = 7
    stride: int = 1              # first-conv stride; stride = sps reads symbol-rate
    dense_units: int = 64
    seed: int = 0

    def validate(self) -> None:
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if self.frame_len % self.stride != 0:
            raise ConfigError("frame_len must be divisible by the first-conv stride")
        if (self.frame_len // self.stride) % 4 != 0:
            raise ConfigError("frame_len/stride must be divisible by 4 (two pooling stages)")
        if self.kernel % 2 != 1:
            raise ConfigError("kernel must be odd (same-padding convolutions)")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")

    def to_dict(self) -> dict:
        return {
            "frame_len": self.frame_len,
            "num_classes": self.num_classes,
            "conv_channels": list(self.conv_channels),
            "kernel": self.kernel,
            "stride": self.stride,
            "dense_units": self.dense_units,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            frame_len=int(d["frame_len"]),
            num_classes=int(d["num_classes"]),
            conv_channels=tuple(int(c) for c in d["conv_channels"]),
            kernel=int(d["kernel"]),
            stride=int(d.get("stride", 1)),
            dense_units=int(d["dense_units"]),
            seed=int(d["seed"]),
        )


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    split: float = 0.2

    def validate(self) -> None:
        if not 0.0 < self.split < 1.0:
            raise ConfigError("split must be in (0, 1)")
        if self.learning_rate <= 0.0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")


_PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4")


def _same_pad_cols(x: np.ndarray, k: int, stride: int = 1) -> np.ndarray:
    """im2col for same-padding conv. x: (B, L, C) -> (B, L/stride, k*C).

    The gathered array is already contiguous in (k, C) order, so the final
    reshape is free; weight matrices are flattened to match.
    """
    b, length, c = x.shape
    p = (k - 1) // 2
    xp = np.zeros((b, length + 2 * p, c), dtype=x.dtype)
    xp[:, p : p + length, :] = x
    out_len = length // stride
    idx = (np.arange(out_len) * stride)[:, None] + np.arange(k)[None, :]
    return xp[:, idx, :].reshape(b, out_len, k * c)


def _flatten_weight(w: np.ndarray) -> np.ndarray:
    """(Cout, Cin, k) -> (Cout, k*Cin), matching the im2col layout."""
    cout, cin, k = w.shape
    return np.ascontiguousarray(w.transpose(0, 2, 1)).reshape(cout, k * cin)


def _conv_same(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None,
               stride: int = 1):
    """Same-padding conv. x: (B, L, Cin), w: (Cout, Cin, k) -> (B, L/stride, Cout).

    Also returns the im2col matrix for reuse in the weight-gradient pass.
    """
    cols = _same_pad_cols(x, w.shape[2], stride)
    out = cols @ _flatten_weight(w).T
    if b is not None:
        out += b
    return out, cols


def _unflatten_weight_grad(dwf: np.ndarray, shape) -> np.ndarray:
    cout, cin, k = shape
    return np.ascontiguousarray(dwf.reshape(cout, k, cin).transpose(0, 2, 1))


def _conv_input_grad(dout: np.ndarray, w: np.ndarray, stride: int = 1,
                     length: int | None = None) -> np.ndarray:
    """Gradient of a same conv w.r.t. its input.

    For stride 1 this is another same conv with a flipped kernel; the strided
    case scatters each kernel tap back to its input positions.
    """
    if stride == 1:
        w_flip = w.transpose(1, 0, 2)[:, :, ::-1]  # (Cin, Cout, k), taps reversed
        grad, _ = _conv_same(dout, np.ascontiguousarray(w_flip))
        return grad
    bsz, out_len, cout = dout.shape
    _, cin, k = w.shape
    p = (k - 1) // 2
    dxp = np.zeros((bsz, length + 2 * p, cin), dtype=dout.dtype)
    base = np.arange(out_len) * stride
    for j in range(k):
        # positions base+j are distinct for a fixed tap, so += is collision-free
        dxp[:, base + j, :] += dout @ w[:, :, j]
    return dxp[:, p : p + length, :]


def _maxpool2(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    b, length, c = x.shape
    xr = x.reshape(b, length // 2, 2, c)
    first, second = xr[:, :, 0, :], xr[:, :, 1, :]
    take_second = second > first  # ties keep the first element
    return np.where(take_second, second, first), take_second


def _maxpool2_grad(dout: np.ndarray, take_second: np.ndarray, length: int) -> np.ndarray:
    b, half, c = dout.shape
    dx = np.zeros((b, half, 2, c), dtype=dout.dtype)
    dx[:, :, 0, :] = np.where(take_second, 0.0, dout)
    dx[:, :, 1, :] = np.where(take_second, dout, 0.0)
    return dx.reshape(b, length, c)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample -log p_label with a 1e-12 probability floor."""
    p = probs[np.arange(len(labels)), labels]
    return -np.log(np.maximum(p, _PROB_FLOOR))


class Classifier:
    """Conv net over unit-interval IQ frames; parameters are float32 arrays."""

    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        c1, c2 = cfg.conv_channels
        k = cfg.kernel
        flat = (cfg.frame_len // cfg.stride // 4) * c2
        rng = np.random.default_rng(cfg.seed)

        def fan_in_uniform(shape, fan_in):
            # He-style bound keeps ReLU activation variance stable with depth
            bound = np.sqrt(6.0 / fan_in)
            return rng.uniform(-bound, bound, size=shape).astype(np.float32)

        self.params: dict[str, np.ndarray] = {
            "w1": fan_in_uniform((c1, 2, k), 2 * k),
            "b1": np.zeros(c1, dtype=np.float32),
            "w2": fan_in_uniform((c2, c1, k), c1 * k),
            "b2": np.zeros(c2, dtype=np.float32),
            "w3": fan_in_uniform((cfg.dense_units, flat), flat),
            "b3": np.zeros(cfg.dense_units, dtype=np.float32),
            # zero-initialized head: untrained model outputs exactly uniform probs
            "w4": np.zeros((cfg.num_classes, cfg.dense_units), dtype=np.float32),
            "b4": np.zeros(cfg.num_classes, dtype=np.float32),
        }
        self._p64: dict[str, np.ndarray] | None = None

    # -- parameter access ---------------------------------------------------

    @property
    def num_classes(self) -> int:
        return self.cfg.num_classes

    def param_vector(self) -> np.ndarray:
        return np.concatenate([self.params[n].ravel() for n in _PARAM_NAMES])

    def set_param_vector(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float32)
        offset = 0
        for name in _PARAM_NAMES:
            p = self.params[name]
            n = p.size
            self.params[name] = vec[offset : offset + n].reshape(p.shape).copy()
            offset += n
        if offset != vec.size:
            raise CheckpointError(f"parameter blob has {vec.size} values, expected {offset}")
        self.invalidate()

    def invalidate(self) -> None:
        self._p64 = None

    def _f64(self) -> dict[str, np.ndarray]:
        if self._p64 is None:
            self._p64 = {n: self.params[n].astype(np.float64) for n in _PARAM_NAMES}
        return self._p64

    # -- forward / backward -------------------------------------------------

    def _as_batch(self, u) -> np.ndarray:
        if isinstance(u, UnitFrame):
            u = u.values
        arr = np.asarray(u, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != 2 * self.cfg.frame_len:
            raise ValueError(
                f"input must have {2 * self.cfg.frame_len} values per frame, got shape {arr.shape}"
            )
        return arr

    def _forward_cached(self, batch: np.ndarray) -> dict:
        p = self._f64()
        b = batch.shape[0]
        length = self.cfg.frame_len
        x = batch.reshape(b, length, 2)
        z0 = 2.0 * x - 1.0
        pre1, cols1 = _conv_same(z0, p["w1"], p["b1"], self.cfg.stride)
        a1 = np.maximum(pre1, 0.0)
        p1, arg1 = _maxpool2(a1)
        pre2, cols2 = _conv_same(p1, p["w2"], p["b2"])
        a2 = np.maximum(pre2, 0.0)
        p2, arg2 = _maxpool2(a2)
        flat = p2.reshape(b, -1)
        pre3 = flat @ p["w3"].T + p["b3"]
        h = np.maximum(pre3, 0.0)
        logits = h @ p["w4"].T + p["b4"]
        probs = _softmax(logits)
        return {
            "pre1": pre1, "cols1": cols1, "arg1": arg1, "p1": p1,
            "pre2": pre2, "cols2": cols2, "arg2": arg2,
            "flat": flat, "pre3": pre3, "h": h, "probs": probs,
        }

    def forward_batch(self, batch: np.ndarray) -> np.ndarray:
        """Class probabilities for a (B, 2L) batch of unit-interval frames."""
        return self._forward_cached(self._as_batch(batch))["probs"]

    def forward(self, u) -> np.ndarray:
        """Class probabilities for a single unit-interval frame."""
        return self.forward_batch(self._as_batch(u))[0]

    def loss(self, u, label: int) -> float:
        if not 0 <= label < self.cfg.num_classes:
            raise ValueError(f"label {label} out of range for {self.cfg.num_classes} classes")
        probs = self.forward(u)
        return float(cross_entropy(probs[None, :], np.array([label]))[0])

    def _backward(self, cache: dict, dlogits: np.ndarray,
                  want_params: bool) -> tuple[np.ndarray, dict | None]:
        p = self._f64()
        b, length = dlogits.shape[0], self.cfg.frame_len
        grads: dict[str, np.ndarray] | None = {} if want_params else None

        h, flat = cache["h"], cache["flat"]
        if want_params:
            grads["w4"] = dlogits.T @ h
            grads["b4"] = dlogits.sum(axis=0)
        dh = dlogits @ p["w4"]
        dpre3 = dh * (cache["pre3"] > 0.0)
        if want_params:
            grads["w3"] = dpre3.T @ flat
            grads["b3"] = dpre3.sum(axis=0)
        dflat = dpre3 @ p["w3"]

        c2 = self.cfg.conv_channels[1]
        l1 = length // self.cfg.stride
        dp2 = dflat.reshape(b, l1 // 4, c2)
        da2 = _maxpool2_grad(dp2, cache["arg2"], l1 // 2)
        dpre2 = da2 * (cache["pre2"] > 0.0)
        if want_params:
            shape2 = p["w2"].shape
            cols2 = cache["cols2"]
            dwf = dpre2.reshape(-1, shape2[0]).T @ cols2.reshape(-1, cols2.shape[2])
            grads["w2"] = _unflatten_weight_grad(dwf, shape2)
            grads["b2"] = dpre2.sum(axis=(0, 1))
        dp1 = _conv_input_grad(dpre2, p["w2"])

        da1 = _maxpool2_grad(dp1, cache["arg1"], l1)
        dpre1 = da1 * (cache["pre1"] > 0.0)
        if want_params:
            shape1 = p["w1"].shape
            cols1 = cache["cols1"]
            dwf = dpre1.reshape(-1, shape1[0]).T @ cols1.reshape(-1, cols1.shape[2])
            grads["w1"] = _unflatten_weight_grad(dwf, shape1)
            grads["b1"] = dpre1.sum(axis=(0, 1))
        dz0 = _conv_input_grad(dpre1, p["w1"], self.cfg.stride, length)
        dinput = (2.0 * dz0).reshape(b, 2 * length)
        return dinput, grads

    def input_gradient(self, u, label: int) -> np.ndarray:
        """Exact gradient of the cross-entropy loss w.r.t. the [0,1] input."""
        batch = self._as_batch(u)
        if batch.shape[0] != 1:
            raise ValueError("input_gradient expects a single frame")
        cache = self._forward_cached(batch)
        dlogits = cache["probs"].copy()
        dlogits[0, label] -= 1.0
        dinput, _ = self._backward(cache, dlogits, want_params=False)
        return dinput[0]

    def loss_and_input_gradient(self, u, label: int):
        """One fused pass: (probs, loss, input gradient) for a single frame."""
        batch = self._as_batch(u)
        cache = self._forward_cached(batch)
        probs = cache["probs"]
        loss = float(cross_entropy(probs, np.array([label]))[0])
        dlogits = probs.copy()
        dlogits[0, label] -= 1.0
        dinput, _ = self._backward(cache, dlogits, want_params=False)
        return probs[0], loss, dinput[0]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def frames_to_matrix(frames, clip_amp: float = DEFAULT_CLIP_AMP):
    """Stack frames into (N, 2L) unit-domain inputs plus label/snr vectors."""
    if not frames:
        raise ValueError("empty frame list")
    units = np.stack([to_unit_interval(f, clip_amp).values for f in frames])
    labels = np.array([f.label for f in frames], dtype=np.int64)
    snrs = np.array([f.snr_tag for f in frames], dtype=np.float64)
    return units, labels, snrs


@dataclass
class Checkpoint:
    arch: ModelConfig
    params: np.ndarray                  # float32 flat vector
    dataset_fingerprint: str = ""
    metrics: dict = field(default_factory=dict)


def _accuracy(model: Classifier, units: np.ndarray, labels: np.ndarray,
              batch: int = 512) -> float:
    hits = 0
    for i in range(0, len(units), batch):
        probs = model.forward_batch(units[i : i + batch])
        hits += int(np.sum(probs.argmax(axis=1) == labels[i : i + batch]))
    return hits / len(units)


def train(model: Classifier, frames, cfg: TrainConfig,
          dataset_fingerprint: str = "",
          clip_amp: float = DEFAULT_CLIP_AMP,
          verbose: bool = False) -> Checkpoint:
    """Minibatch SGD with momentum on cross-entropy. Deterministic per seed.

    Splits frames into train/validation once (seeded shuffle), records
    per-epoch accuracies, and aborts with TrainingDiverged if the loss goes
    non-finite.
    """
    cfg.validate()
    units, labels, _ = frames_to_matrix(frames, clip_amp)
    if labels.max() >= model.num_classes:
        raise ValueError("frame label out of range for this model")

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(units))
    n_val = max(1, int(round(len(units) * cfg.split)))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if len(train_idx) == 0:
        raise ValueError("training split is empty")
    units_tr, labels_tr = units[train_idx], labels[train_idx]
    units_va, labels_va = units[val_idx], labels[val_idx]

    velocity = {n: np.zeros(model.params[n].shape, dtype=np.float64) for n in _PARAM_NAMES}
    history = {"train_loss": [], "train_accuracy": [], "val_accuracy": []}

    n_train = len(units_tr)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n_train)
        epoch_loss = 0.0
        epoch_hits = 0
        for start in range(0, n_train, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            xb, yb = units_tr[idx], labels_tr[idx]
            cache = model._forward_cached(xb)
            losses = cross_entropy(cache["probs"], yb)
            batch_loss = float(losses.mean())
            if not np.isfinite(batch_loss):
                raise TrainingDiverged(
                    f"loss became non-finite at epoch {epoch + 1} "
                    f"(batch starting at {start}); reduce the learning rate"
                )
            if any(not np.isfinite(model.params[n]).all() for n in _PARAM_NAMES):
                raise TrainingDiverged(
                    f"parameters became non-finite at epoch {epoch + 1}; "
                    "reduce the learning rate"
                )
            epoch_loss += batch_loss * len(idx)
            epoch_hits += int(np.sum(cache["probs"].argmax(axis=1) == yb))
            dlogits = cache["probs"].copy()
            dlogits[np.arange(len(yb)), yb] -= 1.0
            dlogits /= len(yb)
            _, grads = model._backward(cache, dlogits, want_params=True)
            for name in _PARAM_NAMES:
                velocity[name] = cfg.momentum * velocity[name] - cfg.learning_rate * grads[name]
                model.params[name] = (
                    model.params[name].astype(np.float64) + velocity[name]
                ).astype(np.float32)
            model.invalidate()
        # running train accuracy over the epoch's minibatches (pre-update probs)
        history["train_loss"].append(epoch_loss / n_train)
        history["train_accuracy"].append(epoch_hits / n_train)
        history["val_accuracy"].append(_accuracy(model, units_va, labels_va))
        if verbose:
            print(
                f"epoch {epoch + 1:3d}  loss {history['train_loss'][-1]:.4f}  "
                f"train {history['train_accuracy'][-1]:.3f}  "
                f"val {history['val_accuracy'][-1]:.3f}"
            )

    metrics = {
        "epochs": cfg.epochs,
        "final_train_accuracy": history["train_accuracy"][-1],
        "final_val_accuracy": history["val_accuracy"][-1],
        "history": history,
    }
    return Checkpoint(
        arch=model.cfg,
        params=model.param_vector(),
        dataset_fingerprint=dataset_fingerprint,
        metrics=metrics,
    )


# ---------------------------------------------------------------------------
# Checkpoint I/O
# ---------------------------------------------------------------------------

def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    header = {
        "arch": ckpt.arch.to_dict(),
        "dataset_fingerprint": ckpt.dataset_fingerprint,
        "metrics": ckpt.metrics,
        "param_count": int(ckpt.params.size),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", _CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(ckpt.params.astype("<f4").tobytes())


def load_checkpoint(path: str) -> tuple[Classifier, Checkpoint]:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != _CHECKPOINT_MAGIC:
                raise CheckpointError(f"{path}: not a LIWM checkpoint (magic {magic!r})")
            raw = fh.read(8)
            if len(raw) != 8:
                raise CheckpointError(f"{path}: truncated header")
            version, header_len = struct.unpack("<II", raw)
            if version != _CHECKPOINT_VERSION:
                raise CheckpointError(
                    f"{path}: format version {version}, expected {_CHECKPOINT_VERSION}"
                )
            blob = fh.read(header_len)
            if len(blob) != header_len:
                raise CheckpointError(f"{path}: truncated header block")
            try:
                header = json.loads(blob.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
            count = int(header["param_count"])
            payload = fh.read(4 * count)
            if len(payload) != 4 * count:
                raise CheckpointError(f"{path}: truncated parameter blob")
            params = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from exc

    arch = ModelConfig.from_dict(header["arch"])
    model = Classifier(arch)
    model.set_param_vector(params)
    ckpt = Checkpoint(
        arch=arch,
        params=params,
        dataset_fingerprint=header.get("dataset_fingerprint", ""),
        metrics=header.get("metrics", {}),
    )
    return model, ckpt


def check_fingerprint(ckpt: Checkpoint, dataset_fingerprint: str) -> None:
    """Warn when a checkpoint is evaluated against a different dataset."""
    if ckpt.dataset_fingerprint and dataset_fingerprint and \
            ckpt.dataset_fingerprint != dataset_fingerprint:
        warnings.warn(
            "dataset fingerprint does not match the one recorded in the checkpoint",
            stacklevel=2,
        )
