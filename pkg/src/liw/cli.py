"""Command-line pipeline driver.

Commands: synth, train, attack, eval, sweep, hwloop, report. Global flags:
--config PATH, --seed N, --jobs N, --out DIR; any other --section.key=value
argument overrides one config key. Every command writes its artifacts plus a
manifest (config hash, input fingerprints, version) into the run directory.

Exit codes: 0 success, 1 validation, 2 runtime, 3 I/O.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .attack import batch_generate, summarize_results
from .config import RunConfig, load_config
from .errors import ConfigError, LiwError
from .evaluation import (
    EvalReport,
    emit_report,
    emit_sweep,
    evaluate,
    hardware_loop_eval,
    load_report,
    practical_eval,
    save_report,
    sweep,
)
from .model import Classifier, check_fingerprint, load_checkpoint, save_checkpoint, train
from .waveform import file_fingerprint, load_dataset, synthesize_dataset

_COMMANDS = ("synth", "train", "attack", "eval", "sweep", "hwloop", "report")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); route through validation
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="liw", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=_COMMANDS)
    parser.add_argument("--config", default=None, help="INI config file")
    parser.add_argument("--seed", type=int, default=None, help="master seed override")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes")
    parser.add_argument("--out", default="runs/default", help="run directory")
    return parser


def _require(path: str, producer: str) -> str:
    if not os.path.exists(path):
        raise ConfigError(f"missing artifact {path!r}; run `liw {producer}` first")
    return path


def _write_manifest(out_dir: str, command: str, cfg: RunConfig,
                    inputs: dict[str, str], outputs: dict[str, str]) -> str:
    manifest = {
        "command": command,
        "config": cfg.to_canonical_dict(),
        "config_hash": cfg.config_hash(),
        "inputs": {name: file_fingerprint(p) for name, p in sorted(inputs.items())},
        "outputs": {name: file_fingerprint(p) for name, p in sorted(outputs.items())},
        "version": __version__,
    }
    path = os.path.join(out_dir, f"manifest_{command}.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _load_model(cfg: RunConfig, out: str):
    ckpt_path = _require(os.path.join(out, cfg.path("checkpoint")), "train")
    return load_checkpoint(ckpt_path), ckpt_path


def _load_frames(cfg: RunConfig, out: str, which: str = "dataset", producer: str = "synth"):
    path = _require(os.path.join(out, cfg.path(which)), producer)
    frames, _ = load_dataset(path)
    return frames, path


def cmd_synth(cfg: RunConfig, out: str, jobs: int) -> int:
    spec = cfg.dataset_spec()
    path = os.path.join(out, cfg.path("dataset"))
    frames = synthesize_dataset(spec, path)
    print(f"synth: wrote {len(frames)} frames to {path}")
    _write_manifest(out, "synth", cfg, {}, {"dataset": path, "sidecar": path + ".json"})
    return 0


def cmd_train(cfg: RunConfig, out: str, jobs: int) -> int:
    frames, dataset_path = _load_frames(cfg, out)
    model = Classifier(cfg.model_config())
    ckpt = train(
        model,
        frames,
        cfg.train_config(),
        dataset_fingerprint=file_fingerprint(dataset_path),
        clip_amp=cfg.get("attack", "clip_amp"),
        verbose=True,
    )
    ckpt_path = os.path.join(out, cfg.path("checkpoint"))
    save_checkpoint(ckpt, ckpt_path)
    print(
        f"train: val accuracy {ckpt.metrics['final_val_accuracy']:.3f}, "
        f"checkpoint {ckpt_path}"
    )
    _write_manifest(out, "train", cfg, {"dataset": dataset_path}, {"checkpoint": ckpt_path})
    return 0


def _select_source_frames(cfg: RunConfig, frames):
    source_snr = cfg.attack_source_snr()
    if source_snr is None:
        return frames
    selected = [f for f in frames if f.snr_tag == source_snr]
    if not selected:
        raise ConfigError(f"no frames with snr_tag {source_snr:g} in the dataset")
    return selected


def cmd_attack(cfg: RunConfig, out: str, jobs: int) -> int:
    (model, ckpt), ckpt_path = _load_model(cfg, out)
    frames, dataset_path = _load_frames(cfg, out)
    check_fingerprint(ckpt, file_fingerprint(dataset_path))
    selected = _select_source_frames(cfg, frames)
    liw_path = os.path.join(out, cfg.path("liw"))
    log_path = os.path.join(out, cfg.path("attack_log"))
    _, results = batch_generate(
        model,
        selected,
        cfg.attack_config(),
        jobs=jobs,
        liw_path=liw_path,
        log_path=log_path,
        scheme_count=len(cfg.get("dataset", "schemes")),
    )
    stats = summarize_results(results)
    mean_psr = stats["mean_psr_db"]
    print(
        f"attack: {stats['frames']} frames, success rate {stats['success_rate']:.3f}, "
        f"mean PSR {mean_psr:.2f} dB" if mean_psr is not None else
        f"attack: {stats['frames']} frames, success rate {stats['success_rate']:.3f}"
    )
    _write_manifest(
        out, "attack", cfg,
        {"dataset": dataset_path, "checkpoint": ckpt_path},
        {"liw": liw_path, "attack_log": log_path},
    )
    return 0


def _psr_stats_from_log(out: str, cfg: RunConfig) -> dict | None:
    log_path = os.path.join(out, cfg.path("attack_log"))
    if not os.path.exists(log_path):
        return None
    psrs = []
    with open(log_path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                value = json.loads(line).get("psr_db")
                if value is not None and np.isfinite(value):
                    psrs.append(value)
    if not psrs:
        return None
    return {"mean": float(np.mean(psrs)), "min": float(np.min(psrs)), "max": float(np.max(psrs))}


def cmd_eval(cfg: RunConfig, out: str, jobs: int) -> int:
    (model, ckpt), ckpt_path = _load_model(cfg, out)
    frames, dataset_path = _load_frames(cfg, out)
    check_fingerprint(ckpt, file_fingerprint(dataset_path))
    class_names = list(cfg.get("dataset", "schemes"))
    report_dir = os.path.join(out, cfg.path("report_dir"))
    inputs = {"dataset": dataset_path, "checkpoint": ckpt_path}
    outputs: dict[str, str] = {}
    mode = cfg.get("eval", "mode")
    if mode not in ("ideal", "practical"):
        raise ConfigError(f"[eval] mode must be 'ideal' or 'practical', got {mode!r}")

    def _run(tag: str, report: EvalReport):
        report.fingerprints = {
            "dataset": file_fingerprint(dataset_path),
            "checkpoint": file_fingerprint(ckpt_path),
            "config": cfg.config_hash(),
        }
        path = os.path.join(out, f"report_{tag}.json")
        save_report(report, path)
        outputs[f"report_{tag}"] = path
        for p in emit_report(report, report_dir, prefix=tag):
            outputs[os.path.basename(p)] = p
        print(f"eval[{tag}]: overall accuracy {report.overall_accuracy:.4f}")

    if mode == "ideal":
        _run("clean", evaluate(model, frames, class_names=class_names))
        liw_path = os.path.join(out, cfg.path("liw"))
        if os.path.exists(liw_path):
            liw_frames, _ = load_dataset(liw_path)
            report = evaluate(model, liw_frames, class_names=class_names)
            report.psr_stats = _psr_stats_from_log(out, cfg)
            _run("liw", report)
            inputs["liw"] = liw_path
    else:
        ch = cfg.channel_config()
        source = _select_source_frames(cfg, frames)
        _run("clean_practical",
             practical_eval(model, source, ch, class_names=class_names))
        liw_path = os.path.join(out, cfg.path("liw"))
        if os.path.exists(liw_path):
            liw_frames, _ = load_dataset(liw_path)
            report = practical_eval(model, liw_frames, ch, class_names=class_names)
            report.psr_stats = _psr_stats_from_log(out, cfg)
            _run("liw_practical", report)
            inputs["liw"] = liw_path

    _write_manifest(out, "eval", cfg, inputs, outputs)
    return 0


def cmd_sweep(cfg: RunConfig, out: str, jobs: int) -> int:
    (model, ckpt), ckpt_path = _load_model(cfg, out)
    frames, dataset_path = _load_frames(cfg, out)
    check_fingerprint(ckpt, file_fingerprint(dataset_path))
    selected = _select_source_frames(cfg, frames)
    spec = cfg.sweep_spec()
    spec.dataset_path = dataset_path
    spec.checkpoint_path = ckpt_path
    rows = sweep(spec, model, selected, jobs=jobs,
                 progress=lambda row: print(
                     f"sweep: snr {row['channel_snr_db']:+.1f} dB, "
                     f"psr {row['psr_db']:+.2f} dB -> accuracy {row['accuracy']:.3f}"
                     + (" [flagged]" if row["flagged"] else "")
                 ))
    report_dir = os.path.join(out, cfg.path("report_dir"))
    csv_path = emit_sweep(rows, report_dir)
    json_path = os.path.join(out, "sweep.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(
        out, "sweep", cfg,
        {"dataset": dataset_path, "checkpoint": ckpt_path},
        {"sweep_csv": csv_path, "sweep_json": json_path},
    )
    return 0


def cmd_hwloop(cfg: RunConfig, out: str, jobs: int) -> int:
    (model, ckpt), ckpt_path = _load_model(cfg, out)
    class_names = list(cfg.get("dataset", "schemes"))
    liw_path = os.path.join(out, cfg.path("liw"))
    if os.path.exists(liw_path):
        frames, _ = load_dataset(liw_path)
        source_path = liw_path
    else:
        frames, source_path = _load_frames(cfg, out)
        frames = _select_source_frames(cfg, frames)
    ch = cfg.channel_config()
    report = hardware_loop_eval(model, frames, ch, class_names=class_names)
    report.fingerprints = {
        "source": file_fingerprint(source_path),
        "checkpoint": file_fingerprint(ckpt_path),
        "config": cfg.config_hash(),
    }
    report_path = os.path.join(out, "report_loop.json")
    save_report(report, report_path)
    report_dir = os.path.join(out, cfg.path("report_dir"))
    paths = emit_report(report, report_dir, prefix="loop")
    print(f"hwloop: overall accuracy {report.overall_accuracy:.4f}")
    outputs = {"report_loop": report_path}
    outputs.update({os.path.basename(p): p for p in paths})
    _write_manifest(out, "hwloop", cfg, {"source": source_path, "checkpoint": ckpt_path},
                    outputs)
    return 0


def cmd_report(cfg: RunConfig, out: str, jobs: int) -> int:
    report_dir = os.path.join(out, cfg.path("report_dir"))
    found = False
    outputs: dict[str, str] = {}
    inputs: dict[str, str] = {}
    for name in sorted(os.listdir(out)) if os.path.isdir(out) else []:
        if name.startswith("report_") and name.endswith(".json"):
            tag = name[len("report_"):-len(".json")]
            path = os.path.join(out, name)
            report = load_report(path)
            for p in emit_report(report, report_dir, prefix=tag):
                outputs[os.path.basename(p)] = p
            inputs[name] = path
            print(f"report[{tag}]: overall accuracy {report.overall_accuracy:.4f}")
            found = True
    sweep_json = os.path.join(out, "sweep.json")
    if os.path.exists(sweep_json):
        with open(sweep_json, "r", encoding="utf-8") as fh:
            rows = json.load(fh)
        outputs["sweep.csv"] = emit_sweep(rows, report_dir)
        inputs["sweep.json"] = sweep_json
        found = True
    if not found:
        raise ConfigError(f"no report artifacts in {out!r}; run `liw eval` first")
    _write_manifest(out, "report", cfg, inputs, outputs)
    return 0


_HANDLERS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "attack": cmd_attack,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "hwloop": cmd_hwloop,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser = _build_parser()
        args, extra = parser.parse_known_args(argv)
        cfg = load_config(args.config, overrides=extra, seed=args.seed)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        os.makedirs(args.out, exist_ok=True)
        return _HANDLERS[args.command](cfg, args.out, args.jobs)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except LiwError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
