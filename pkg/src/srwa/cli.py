"""Command-line entry point: ``srwa {gen,train,ablate,eval}``."""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    DataFormatError,
    ShiftSpec,
    apply_shift,
    gen_gaussian_mixture,
    gen_two_moons,
    load_csv,
    save_csv,
)
from .evaluate import EvalReport, TargetMonitor, evaluate, project_domains, save_projection_csv
from .model import CheckpointError, load_checkpoint, save_checkpoint
from .pseudolabel import save_pseudo_csv
from .trainer import DEFAULT_ARMS, TrainConfig, TrainingDiverged, run_ablation, train, write_ablation_csv

PRESETS = ("two-moons", "gaussian-mixture")


class ConfigError(ValueError):
    pass


class UsageError(ValueError):
    pass


# -- config files -----------------------------------------------------------

TRAIN_FIELDS = {f.name: f for f in fields(TrainConfig)}
RUN_KEYS = {
    "data_dir": str,
    "seeds": "ints",
    "dump_pseudo": bool,
    "projection": bool,
}
GEN_KEYS = {
    "preset": str,
    "n": int,
    "noise": float,
    "classes": int,
    "sigma": float,
    "shift_rot": float,
    "shift_tx": float,
    "shift_ty": float,
    "shift_noise": float,
}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_ints(text: str) -> tuple[int, ...]:
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..")
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _coerce(key: str, text: str):
    if key in TRAIN_FIELDS:
        default = TRAIN_FIELDS[key].default
        kind = type(default)
        if kind is tuple:
            return _parse_ints(text)
    elif key in RUN_KEYS:
        kind = RUN_KEYS[key]
        if kind == "ints":
            return _parse_ints(text)
    elif key in GEN_KEYS:
        kind = GEN_KEYS[key]
    else:
        raise KeyError(key)
    if kind is bool:
        return _parse_bool(text)
    return kind(text.strip())


def parse_config_text(text: str, origin: str = "<config>") -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            out[key] = _coerce(key, value)
        except KeyError:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}") from None
        except ValueError as exc:
            raise ConfigError(f"{origin}:{lineno}: bad value for {key!r}: {exc}") from None
    return out


def apply_overrides(conf: dict, overrides: list[str]) -> dict:
    conf = dict(conf)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        try:
            conf[key] = _coerce(key, value)
        except KeyError:
            raise ConfigError(f"--set: unknown key {key!r}") from None
        except ValueError as exc:
            raise ConfigError(f"--set {key}: {exc}") from None
    return conf


def load_config(args) -> dict:
    conf = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        conf = parse_config_text(path.read_text(), str(path))
    conf = apply_overrides(conf, getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        conf["seed"] = args.seed
    return conf


def train_config_from(conf: dict) -> TrainConfig:
    try:
        return TrainConfig(**{k: v for k, v in conf.items() if k in TRAIN_FIELDS})
    except ValueError as exc:
        raise ConfigError(f"invalid training config: {exc}") from None


def config_snapshot_text(conf: dict) -> str:
    lines = [f"# srwa {__version__} config snapshot"]
    for key in sorted(conf):
        value = conf[key]
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def _full_snapshot(conf: dict, cfg: TrainConfig) -> dict:
    snap = {f.name: getattr(cfg, f.name) for f in fields(TrainConfig)}
    snap.update({k: v for k, v in conf.items() if k not in TRAIN_FIELDS})
    return snap


def _load_pair(conf: dict):
    data_dir = conf.get("data_dir")
    if not data_dir:
        raise ConfigError("config must set data_dir (directory with source.csv and target.csv)")
    paths = [Path(data_dir) / "source.csv", Path(data_dir) / "target.csv"]
    for p in paths:
        if not p.is_file():
            raise FileNotFoundError(f"dataset not found: {p}")
    return load_csv(paths[0]), load_csv(paths[1])


# -- commands ---------------------------------------------------------------


def cmd_gen(args) -> int:
    conf = load_config(args)
    for flag, key in (("preset", "preset"), ("n", "n"), ("noise", "noise"), ("classes", "classes"),
                      ("sigma", "sigma"), ("shift_rot", "shift_rot"), ("shift_tx", "shift_tx"),
                      ("shift_ty", "shift_ty"), ("shift_noise", "shift_noise")):
        value = getattr(args, flag, None)
        if value is not None:
            conf[key] = value
    preset = conf.get("preset", "two-moons")
    if preset not in PRESETS:
        raise UsageError(f"unknown preset {preset!r}; choose from: {', '.join(PRESETS)}")
    seed = int(conf.get("seed", 0))
    n = int(conf.get("n", 600))
    if preset == "two-moons":
        noise = float(conf.get("noise", 0.1))
        source = gen_two_moons(n, noise, seed)
        fresh = gen_two_moons(n, noise, seed + 1_000_003)
    else:
        classes = int(conf.get("classes", 3))
        angles = 2 * np.pi * np.arange(classes) / classes
        means = 3.0 * np.column_stack([np.cos(angles), np.sin(angles)])
        sigma = float(conf.get("sigma", 0.5))
        source = gen_gaussian_mixture(n, classes, means, sigma, seed)
        fresh = gen_gaussian_mixture(n, classes, means, sigma, seed + 1_000_003)
    spec = ShiftSpec(
        rotation=float(conf.get("shift_rot", 0.5)),
        translation=(float(conf.get("shift_tx", 0.0)), float(conf.get("shift_ty", 0.0))),
        noise_sigma=float(conf.get("shift_noise", 0.0)),
        seed=seed,
    )
    target = apply_shift(fresh, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(source, out / "source.csv")
    save_csv(target, out / "target.csv")
    print(f"wrote {out / 'source.csv'} and {out / 'target.csv'}")
    return 0


def cmd_train(args) -> int:
    started = time.time()
    conf = load_config(args)
    cfg = train_config_from(conf)
    source, target = _load_pair(conf)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    artifacts = {
        "history_iter": out / "history_iter.csv",
        "history_epoch": out / "history_epoch.csv",
        "checkpoint": out / "model.ckpt",
        "eval_report": out / "eval_report.txt",
        "eval_report_csv": out / "eval_report.csv",
        "config_snapshot": out / "config_snapshot.cfg",
    }
    if conf.get("projection", True):
        artifacts["projection"] = out / "projection.csv"
    if conf.get("dump_pseudo", False):
        artifacts["pseudo_labels"] = out / "pseudo_labels.csv"
    manifest = {
        "tool": "srwa",
        "version": __version__,
        "status": "running",
        "config": _full_snapshot(conf, cfg),
        "artifacts": {k: str(v) for k, v in artifacts.items()},
        "duration_s": None,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, default=list) + "\n")

    artifacts["config_snapshot"].write_text(config_snapshot_text(manifest["config"]))
    monitor = TargetMonitor(target, cfg.a_distance_every, cfg.seed)
    net, history = train(source, target.unlabeled(), cfg, monitor)
    history.write_iter_csv(artifacts["history_iter"])
    history.write_epoch_csv(artifacts["history_epoch"])
    save_checkpoint(net, artifacts["checkpoint"])
    pseudo = history.pseudo_sets[-1] if history.pseudo_sets else None
    report = evaluate(net, source, target, cfg.seed, pseudo if pseudo is not None and len(pseudo) else None)
    report.write(out)
    if "projection" in artifacts:
        proj, labels, domains = project_domains(net, source, target)
        save_projection_csv(proj.coords, labels, domains, artifacts["projection"])
    if "pseudo_labels" in artifacts:
        save_pseudo_csv(history.pseudo_sets, artifacts["pseudo_labels"])

    missing = [str(p) for p in artifacts.values() if not p.exists()]
    manifest["status"] = "ok" if not missing else "incomplete"
    manifest["duration_s"] = round(time.time() - started, 3)
    manifest_path.write_text(json.dumps(manifest, indent=2, default=list) + "\n")
    print(report.to_text(), end="")
    if missing:
        print(f"error: missing artifacts: {', '.join(missing)}", file=sys.stderr)
        return 1
    return 0


def cmd_ablate(args) -> int:
    conf = load_config(args)
    cfg = train_config_from(conf)
    source, target = _load_pair(conf)
    seeds = conf.get("seeds", (0, 1, 2, 3, 4))
    rows, summary = run_ablation(source, target, cfg, DEFAULT_ARMS, seeds, threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_ablation_csv(rows, summary, out / "ablation.csv")
    for name, mean, std in summary:
        print(f"{name:16s} {100 * mean:6.2f} +- {100 * std:5.2f}")
    return 0


def cmd_eval(args) -> int:
    conf = load_config(args)
    if args.data:
        conf["data_dir"] = args.data
    if not args.checkpoint:
        raise UsageError("eval needs --checkpoint PATH")
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    net = load_checkpoint(ckpt)
    source, target = _load_pair(conf)
    report = evaluate(net, source, target, int(conf.get("seed", 0)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write(out)
    proj, labels, domains = project_domains(net, source, target)
    save_projection_csv(proj.coords, labels, domains, out / "projection.csv")
    print(report.to_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key = value config file")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], help="override a config key")
    common.add_argument("--out", metavar="DIR", default=".", help="output directory")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")

    parser = argparse.ArgumentParser(prog="srwa", description=__doc__)
    parser.add_argument("--version", action="version", version=f"srwa {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[common], help="write source/target CSV datasets")
    gen.add_argument("--preset", help=f"one of: {', '.join(PRESETS)}")
    gen.add_argument("--n", type=int, help="samples per domain")
    gen.add_argument("--noise", type=float)
    gen.add_argument("--classes", type=int)
    gen.add_argument("--sigma", type=float)
    gen.add_argument("--shift-rot", dest="shift_rot", type=float, help="target rotation in radians")
    gen.add_argument("--shift-tx", dest="shift_tx", type=float)
    gen.add_argument("--shift-ty", dest="shift_ty", type=float)
    gen.add_argument("--shift-noise", dest="shift_noise", type=float)
    gen.set_defaults(func=cmd_gen)

    tr = sub.add_parser("train", parents=[common], help="train one model and write history and reports")
    tr.set_defaults(func=cmd_train)

    ab = sub.add_parser("ablate", parents=[common], help="run the standard ablation arms over seeds")
    ab.add_argument("--threads", type=int, default=None, help="worker threads (default: $SRWA_THREADS or 1)")
    ab.set_defaults(func=cmd_ablate)

    ev = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", metavar="PATH")
    ev.add_argument("--data", metavar="DIR", help="directory with source.csv and target.csv")
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, DataFormatError, CheckpointError, TrainingDiverged, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
