"""Command-line entry point: ``radarseg {generate,train,eval,bench,render}``.

Exit codes: 0 success, 1 usage error, 2 invalid input (missing or malformed
files, bad configuration), 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .core import DatasetError, dataset_stats, read_dataset, write_dataset

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3
VARIANTS = ("pointnet", "ssg", "msg", "mfg")


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass(frozen=True)
class CliConfig:
    subcommand: str
    dataset: Path | None
    config: Path | None
    checkpoints: tuple[Path, ...]
    out: Path | None
    seed: int | None
    variant: str | None
    frame: int | None

    @classmethod
    def from_args(cls, ns: argparse.Namespace) -> "CliConfig":
        ck = ns.checkpoint or []
        return cls(ns.command, ns.dataset, ns.config, tuple(ck), ns.out, ns.seed,
                   getattr(ns, "variant", None), getattr(ns, "frame", None))

    def validate(self):
        """Check required paths before any work starts."""
        needs = {
            "generate": ("out",),
            "train": ("dataset", "variant", "out"),
            "eval": ("dataset", "checkpoints", "out"),
            "bench": ("dataset", "checkpoints", "out"),
            "render": ("dataset", "frame", "out"),
        }[self.subcommand]
        for name in needs:
            if getattr(self, name) in (None, ()):
                flag = "checkpoint" if name == "checkpoints" else name
                raise UsageError(f"{self.subcommand}: --{flag} is required")
        if self.subcommand in ("eval", "render") and len(self.checkpoints) > 1:
            raise UsageError(f"{self.subcommand}: expects at most one --checkpoint")
        for path in [self.dataset, self.config, *self.checkpoints]:
            if path is not None and not path.is_file():
                raise InputError(f"no such file: {path}")
        if self.seed is not None and not 0 <= self.seed < 2 ** 64:
            raise InputError(f"--seed must be an unsigned 64-bit integer, got {self.seed}")


def _seed(value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {value!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="radarseg", description="Anomaly segmentation of 2D radar point clouds.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def common(p, dataset: bool = True):
        if dataset:
            p.add_argument("--dataset", type=Path, metavar="PATH", help="dataset CSV file")
        p.add_argument("--config", type=Path, metavar="PATH", help="JSON configuration file")
        p.add_argument("--out", type=Path, metavar="DIR", help="output directory")
        p.add_argument("--seed", type=_seed, metavar="U64",
                       help="random seed; overrides the config and is recorded in every output header")

    p = sub.add_parser("generate", help="write a synthetic dataset and its statistics sidecar")
    common(p, dataset=False)
    p.set_defaults(checkpoint=None, dataset=None)

    p = sub.add_parser("train", help="train a model and write a checkpoint plus a training log")
    common(p)
    p.add_argument("--variant", choices=VARIANTS, help="network architecture")
    p.set_defaults(checkpoint=None)

    p = sub.add_parser("eval", help="evaluate a checkpoint per sensor and scenario split")
    common(p)
    p.add_argument("--checkpoint", type=Path, action="append", metavar="PATH", help="model checkpoint")

    p = sub.add_parser("bench", help="time single-frame inference of one or more checkpoints")
    common(p)
    p.add_argument("--checkpoint", type=Path, action="append", metavar="PATH",
                   help="model checkpoint (repeatable)")

    p = sub.add_parser("render", help="draw one frame as an SVG scatter plot")
    common(p)
    p.add_argument("--frame", type=int, metavar="ID", help="frame id to draw")
    p.add_argument("--checkpoint", type=Path, action="append", metavar="PATH",
                   help="optional checkpoint; colors points as TP/FN/FP/TN")
    return parser


def _load_json(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(data, dict):
        raise InputError(f"{path}: expected a JSON object")
    return data


def _frames(path: Path):
    try:
        return read_dataset(path)
    except DatasetError as exc:
        raise InputError(f"{path}: {exc}") from None


def _write(path: Path, text: str):
    path.write_text(text, encoding="utf-8")
    print(path)


# ----------------------------------------------------------------------------- subcommands


def cmd_generate(cfg: CliConfig) -> int:
    from .synthgen import SceneConfig, generate_sequence

    raw = _load_json(cfg.config)
    if cfg.seed is not None:
        raw["seed"] = cfg.seed
    try:
        scene = SceneConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise InputError(f"scene config: {exc}") from None
    frames = generate_sequence(scene)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_dataset(frames, cfg.out / "dataset.csv")
    print(cfg.out / "dataset.csv")
    sidecar = {"seed": scene.seed, "frames": len(frames), "stats": dataset_stats(frames),
               "scene_config": scene.to_dict()}
    _write(cfg.out / "dataset_stats.json", json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_train(cfg: CliConfig) -> int:
    from .models import default_config
    from .pipeline import TrainConfig, train
    from .synthgen import by_sensor

    raw = _load_json(cfg.config)
    unknown = set(raw) - {"train", "model", "sensor"}
    if unknown:
        raise InputError(f"train config: unknown keys {sorted(unknown)}")
    tr = dict(raw.get("train", {}))
    model_kw = dict(raw.get("model", {}))
    if cfg.seed is not None:
        tr["seed"] = cfg.seed
    seed = int(tr.get("seed", 0))
    try:
        tcfg = TrainConfig.from_dict(tr)
        if "centroids" in model_kw:
            model_kw["centroids"] = tuple(model_kw["centroids"])
        mcfg = default_config(cfg.variant, seed=seed, **model_kw)
    except (TypeError, ValueError) as exc:
        raise InputError(f"train config: {exc}") from None
    frames = _frames(cfg.dataset)
    if "sensor" in raw:
        frames = by_sensor(frames, raw["sensor"])
        if not frames:
            raise InputError(f"no frames for sensor {raw['sensor']!r}")
    result = train(mcfg, tcfg, frames)
    cfg.out.mkdir(parents=True, exist_ok=True)
    result.save(cfg.out / "model.npz")
    print(cfg.out / "model.npz")
    _write(cfg.out / "trainlog.csv", result.log_csv())
    return EXIT_OK


def _checkpoint(path: Path):
    from .pipeline import load_checkpoint

    try:
        return load_checkpoint(path)
    except (OSError, KeyError, ValueError) as exc:
        raise InputError(f"{path}: not a valid checkpoint ({exc})") from None


def cmd_eval(cfg: CliConfig) -> int:
    from .pipeline import evaluate

    model, stats = _checkpoint(cfg.checkpoints[0])
    frames = _frames(cfg.dataset)
    report = evaluate(model, frames, stats)
    seed = 0 if cfg.seed is None else cfg.seed
    cfg.out.mkdir(parents=True, exist_ok=True)
    _write(cfg.out / "report.csv", report.to_csv(seed))
    _write(cfg.out / "predictions.csv", report.predictions_csv(seed))
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_bench(cfg: CliConfig) -> int:
    from .pipeline import bench_csv, bench_inference

    raw = _load_json(cfg.config)
    unknown = set(raw) - {"repetitions", "warmup", "frames"}
    if unknown:
        raise InputError(f"bench config: unknown keys {sorted(unknown)}")
    models = {}
    for path in cfg.checkpoints:
        name = path.stem
        while name in models:
            name += "_"
        models[name] = _checkpoint(path)
    frames = _frames(cfg.dataset)
    if "frames" in raw:
        frames = frames[:int(raw["frames"])]
    rows = bench_inference(models, frames, int(raw.get("repetitions", 10)), int(raw.get("warmup", 5)))
    cfg.out.mkdir(parents=True, exist_ok=True)
    _write(cfg.out / "bench.csv", bench_csv(rows, 0 if cfg.seed is None else cfg.seed))
    for r in rows:
        print(f"{r.name:<16}{r.variant:<10}{r.mean_ms:>10.3f} ms  candidates {r.candidates.get('all', 0.0):.2f}")
    return EXIT_OK


def cmd_render(cfg: CliConfig) -> int:
    from .pipeline import predict_frames
    from .render import write_svg

    frames = _frames(cfg.dataset)
    by_id = {f.frame_id: f for f in frames}
    if cfg.frame not in by_id:
        raise InputError(f"unknown frame id {cfg.frame}; valid ids are {min(by_id)}..{max(by_id)}")
    frame = by_id[cfg.frame]
    pred = None
    if cfg.checkpoints:
        model, stats = _checkpoint(cfg.checkpoints[0])
        pred = predict_frames(model, [frame], stats)[0]
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / f"frame_{cfg.frame}.svg"
    write_svg(path, frame, pred)
    print(path)
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
            "bench": cmd_bench, "render": cmd_render}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            raise UsageError("radarseg: a command is required (generate, train, eval, bench, render)")
        cfg = CliConfig.from_args(ns)
        cfg.validate()
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[cfg.subcommand](cfg)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # one-line diagnostic for anything unexpected
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
