"""Run configuration: INI file with sections, strict keys, flag overrides.

One master seed drives everything; per-stage seeds are derived by hashing
(master seed, purpose tag), so any config + seed pair reproduces identical
artifacts. Overrides take the form --section.key=value.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import re
from dataclasses import dataclass, field

from .attack import AttackConfig
from .channel import ChannelConfig
from .errors import ConfigError
from .evaluation import SweepSpec
from .model import ModelConfig, TrainConfig
from .seeds import derive_seed
from .waveform import DEFAULT_CLIP_AMP, DatasetSpec, SCHEME_NAMES

_OVERRIDE_RE = re.compile(r"^--([a-z]+)\.([a-z_0-9]+)=(.*)$")


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.split(",") if tok.strip())


def _parse_str_list(text: str) -> tuple[str, ...]:
    return tuple(tok.strip() for tok in text.split(",") if tok.strip())


def _parse_opt_int(text: str):
    return None if not text.strip() else int(text)


# section -> key -> (parser, default-as-text)
_SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "master_seed": (int, "12345"),
    },
    "dataset": {
        "schemes": (_parse_str_list, ",".join(SCHEME_NAMES)),
        "frames_per_scheme_per_snr": (int, "100"),
        "snr_grid": (_parse_float_list, "-10,-5,0,10,20,30"),
        "frame_len": (int, "256"),
        "sps": (int, "8"),
        "rolloff": (float, "0.35"),
        "filter_span": (int, "8"),
    },
    "model": {
        "conv_channels": (_parse_int_list, "16,16"),
        "kernel": (int, "7"),
        "dense_units": (int, "64"),
    },
    "train": {
        "epochs": (int, "30"),
        "batch_size": (int, "64"),
        "learning_rate": (float, "0.05"),
        "momentum": (float, "0.9"),
        "split": (float, "0.2"),
    },
    "attack": {
        "iterations": (int, "100"),
        "alpha_max": (float, "1.0"),
        "alpha_min": (float, "0.01"),
        "gamma": (float, "0.05"),
        "beta": (float, "1.0"),
        "targeted": (_parse_bool, "false"),
        "target_label": (_parse_opt_int, ""),
        "epsilon_init": (float, "1.0"),
        "clip_amp": (float, str(DEFAULT_CLIP_AMP)),
        "quant_bits": (int, "0"),
        "use_best": (_parse_bool, "false"),
        "source_snr": (str, "30"),
    },
    "channel": {
        "snr_db": (float, "10"),
        "quant_bits": (int, "8"),
        "gain": (float, "1.0"),
    },
    "eval": {
        "mode": (str, "ideal"),
    },
    "sweep": {
        "channel_snr_grid": (_parse_float_list, "0,10,20,30"),
        "beta_grid": (_parse_float_list, "1,2,5,10"),
        "psr_grid": (_parse_float_list, ""),
        "iterations": (int, "10"),
        "quant_bits": (int, "0"),
    },
    "paths": {
        "dataset": (str, "dataset.liw1"),
        "checkpoint": (str, "model.liwm"),
        "liw": (str, "liw.liw1"),
        "attack_log": (str, "attack_log.jsonl"),
        "report_dir": (str, "report"),
    },
}


@dataclass
class RunConfig:
    """Fully resolved configuration: raw values by (section, key)."""

    values: dict = field(default_factory=dict)

    def get(self, section: str, key: str):
        return self.values[section][key]

    # -- typed views ---------------------------------------------------------

    @property
    def master_seed(self) -> int:
        return self.get("run", "master_seed")

    def stage_seed(self, tag: str) -> int:
        return derive_seed(self.master_seed, tag)

    def dataset_spec(self) -> DatasetSpec:
        d = self.values["dataset"]
        spec = DatasetSpec(
            schemes=d["schemes"],
            frames_per_scheme_per_snr=d["frames_per_scheme_per_snr"],
            snr_grid=d["snr_grid"],
            frame_len=d["frame_len"],
            sps=d["sps"],
            rolloff=d["rolloff"],
            filter_span=d["filter_span"],
            master_seed=self.stage_seed("dataset"),
        )
        spec.validate()
        return spec

    def model_config(self) -> ModelConfig:
        d = self.values["model"]
        cfg = ModelConfig(
            frame_len=self.get("dataset", "frame_len"),
            num_classes=len(self.get("dataset", "schemes")),
            conv_channels=d["conv_channels"],
            kernel=d["kernel"],
            dense_units=d["dense_units"],
            seed=self.stage_seed("model"),
        )
        cfg.validate()
        return cfg

    def train_config(self) -> TrainConfig:
        d = self.values["train"]
        cfg = TrainConfig(
            epochs=d["epochs"],
            batch_size=d["batch_size"],
            learning_rate=d["learning_rate"],
            momentum=d["momentum"],
            seed=self.stage_seed("train"),
            split=d["split"],
        )
        cfg.validate()
        return cfg

    def attack_config(self) -> AttackConfig:
        d = self.values["attack"]
        cfg = AttackConfig(
            iterations=d["iterations"],
            alpha_max=d["alpha_max"],
            alpha_min=d["alpha_min"],
            gamma=d["gamma"],
            beta=d["beta"],
            targeted=d["targeted"],
            target_label=d["target_label"],
            epsilon_init=d["epsilon_init"],
            clip_amp=d["clip_amp"],
            quant_bits=d["quant_bits"],
            use_best=d["use_best"],
        )
        cfg.validate()
        return cfg

    def attack_source_snr(self) -> float | None:
        raw = self.get("attack", "source_snr").strip().lower()
        return None if raw in ("", "all") else float(raw)

    def channel_config(self) -> ChannelConfig:
        d = self.values["channel"]
        cfg = ChannelConfig(
            snr_db=d["snr_db"],
            quant_bits=d["quant_bits"],
            gain=d["gain"],
            noise_seed=self.stage_seed("channel"),
            clip_amp=self.get("attack", "clip_amp"),
        )
        cfg.validate()
        return cfg

    def sweep_spec(self) -> SweepSpec:
        d = self.values["sweep"]
        psr_grid = d["psr_grid"] if d["psr_grid"] else None
        beta_grid = None if psr_grid is not None else (d["beta_grid"] or None)
        attack = self.attack_config()
        attack.iterations = d["iterations"]
        attack.beta = 1.0
        spec = SweepSpec(
            channel_snr_grid=d["channel_snr_grid"],
            psr_grid=psr_grid,
            beta_grid=beta_grid,
            attack=attack,
            quant_bits=d["quant_bits"],
            noise_seed=self.stage_seed("sweep"),
            clip_amp=self.get("attack", "clip_amp"),
        )
        spec.validate()
        return spec

    def path(self, name: str) -> str:
        return self.get("paths", name)

    # -- serialization --------------------------------------------------------

    def to_canonical_dict(self) -> dict:
        out = {}
        for section in sorted(self.values):
            out[section] = {}
            for key in sorted(self.values[section]):
                value = self.values[section][key]
                if isinstance(value, tuple):
                    value = list(value)
                out[section][key] = value
        return out

    def config_hash(self) -> str:
        canon = json.dumps(self.to_canonical_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(canon).hexdigest()


def _parse_value(section: str, key: str, text: str):
    parser = _SCHEMA[section][key][0]
    try:
        return parser(text)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {text!r} ({exc})") from exc


def load_config(path: str | None = None, overrides: list[str] | None = None,
                seed: int | None = None) -> RunConfig:
    """Build a RunConfig from defaults, an optional INI file, and overrides.

    Unknown sections or keys are rejected with the offending name in the
    message. `seed` (the --seed flag) replaces [run] master_seed last.
    """
    values = {
        section: {key: _parse_value(section, key, default) for key, (_, default) in keys.items()}
        for section, keys in _SCHEMA.items()
    }

    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, text in parser.items(section):
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"{path}: unknown key {key!r} in section [{section}]")
                values[section][key] = _parse_value(section, key, text)

    for raw in overrides or []:
        match = _OVERRIDE_RE.match(raw)
        if not match:
            raise ConfigError(f"bad override {raw!r}; expected --section.key=value")
        section, key, text = match.groups()
        if section not in _SCHEMA or key not in _SCHEMA[section]:
            raise ConfigError(f"override {raw!r}: no such config key [{section}] {key}")
        values[section][key] = _parse_value(section, key, text)

    if seed is not None:
        values["run"]["master_seed"] = int(seed)
    return RunConfig(values=values)
