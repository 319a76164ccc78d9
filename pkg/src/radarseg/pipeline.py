"""Training, evaluation and inference benchmarking.

Training follows the recipe: frames padded to a fixed size by duplicating
random targets, Adam with a step-halving learning rate, anomalies borrowed
from neighbouring frames, and a class-weighted loss. Evaluation reports
precision, recall and F1 on anomalous targets per sensor and per scenario.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .autodiff import AdamState, adam_step, lr_schedule, weighted_softmax_cross_entropy
from .core import MAX_TARGETS, Label, RadarFrame, RadarTarget, Scenario, SensorId
from .models import GroupStats, ModelConfig, SegmentationModel

log = logging.getLogger(__name__)

EVAL_FORMAT = "radarseg-eval/1"
TRAINLOG_FORMAT = "radarseg-trainlog/1"
BENCH_FORMAT = "radarseg-bench/1"


def _header(fmt: str, seed: int | None) -> str:
    return f"# {fmt}\n" if seed is None else f"# {fmt} seed={seed}\n"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 48
    epochs: int = 100
    pad_to: int = MAX_TARGETS
    neighbor_window: int = 3
    injection_prob: float = 0.75
    class_weights: tuple[float, float] = (1.0, 9.0)
    lr: float = 2e-4
    halve_every: int = 10
    neighbor_injection: bool = True
    mirror_prob: float = 0.5
    jitter: float = 0.1
    eval_every: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "class_weights", tuple(float(w) for w in self.class_weights))
        for name in ("batch_size", "epochs", "pad_to", "lr", "halve_every", "eval_every"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.neighbor_window < 0:
            raise ValueError("neighbor_window must be >= 0")
        if not 0.0 <= self.injection_prob <= 1.0 or not 0.0 <= self.mirror_prob <= 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
        if len(self.class_weights) != 2 or min(self.class_weights) <= 0:
            raise ValueError("need two positive class weights")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class_weights"] = list(self.class_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


# ----------------------------------------------------------------------------- frame preparation


@dataclass
class PaddedFrame:
    features: np.ndarray  # (pad_to, 5), raw units
    labels: np.ndarray  # (pad_to,)
    origin: np.ndarray  # padded row -> original target index
    n: int

    def deduplicate(self, per_row: np.ndarray) -> np.ndarray:
        """Values of the original targets, read from each target's first occurrence."""
        first = np.full(self.n, -1, dtype=np.int64)
        for row in range(len(self.origin) - 1, -1, -1):
            first[self.origin[row]] = row
        return np.asarray(per_row)[first]


def pad_frame(frame: RadarFrame | np.ndarray, pad_to: int, rng: np.random.Generator,
              labels: np.ndarray | None = None) -> PaddedFrame:
    """Fill a frame up to ``pad_to`` rows with uniformly drawn duplicates of its own targets."""
    if isinstance(frame, RadarFrame):
        feats, labs = frame.features, frame.labels
    else:
        feats = np.asarray(frame, dtype=np.float64)
        labs = np.zeros(len(feats), np.int64) if labels is None else np.asarray(labels)
    n = len(feats)
    if n < 1:
        raise ValueError("cannot pad an empty frame")
    if n > pad_to:
        raise ValueError(f"frame has {n} targets, more than pad_to={pad_to}")
    extra = rng.integers(0, n, size=pad_to - n)
    origin = np.concatenate([np.arange(n), extra]).astype(np.int64)
    return PaddedFrame(feats[origin], labs[origin], origin, n)


def augment_with_neighbor_anomalies(sequence: Sequence[RadarFrame], k: int, window: int = 3,
                                    prob: float = 0.75,
                                    rng: np.random.Generator | None = None) -> RadarFrame:
    """Frame ``k`` plus anomalies copied from up to ``window`` frames either side.

    Each neighbouring anomaly is inserted independently with probability
    ``prob``; insertions beyond the frame size limit are dropped.
    """
    rng = np.random.default_rng() if rng is None else rng
    frame = sequence[k]
    lo, hi = max(0, k - window), min(len(sequence) - 1, k + window)
    extra = []
    for j in range(lo, hi + 1):
        if j == k:
            continue
        for t in sequence[j].targets:
            if t.label == Label.ANOMALOUS and rng.random() < prob:
                extra.append(t)
    if not extra:
        return frame
    room = MAX_TARGETS - len(frame)
    return frame.with_targets(frame.targets + tuple(extra[:max(room, 0)]))


def mirror_frame(frame: RadarFrame) -> RadarFrame:
    """Reflect across the x axis (y -> -y); ranges and Doppler values are unchanged."""
    return frame.with_targets(
        RadarTarget(t.x, -t.y, t.v_d, t.v_d_comp, t.rcs, t.label) for t in frame.targets
    )


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, frames: Iterable[RadarFrame], floor: float = 1e-6) -> "FeatureStats":
        x = np.concatenate([f.features for f in frames], axis=0)
        return cls(x.mean(axis=0), np.maximum(x.std(axis=0), floor))

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.mean, np.float64).tobytes())
        h.update(np.asarray(self.std, np.float64).tobytes())
        return h.hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std],
                "checksum": self.checksum()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureStats":
        stats = cls(np.array(d["mean"], np.float64), np.array(d["std"], np.float64))
        if "checksum" in d and d["checksum"] != stats.checksum():
            raise ValueError("feature statistics checksum mismatch")
        return stats


def standardize(features: np.ndarray, stats: FeatureStats, floor: float = 1e-6) -> np.ndarray:
    return (features - stats.mean) / np.maximum(stats.std, floor)


def make_batch(padded: Sequence[PaddedFrame], stats: FeatureStats, dtype=np.float32):
    feats = np.stack([p.features for p in padded])
    return (standardize(feats, stats).astype(dtype), feats[..., :2].copy(),
            np.stack([p.origin for p in padded]), np.stack([p.labels for p in padded]))


# ----------------------------------------------------------------------------- metrics


def f1_from_pr(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if (p + r) > 0 else 0.0


@dataclass
class SplitMetrics:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    frames: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        return f1_from_pr(self.precision, self.recall)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def update(self, pred: np.ndarray, truth: np.ndarray):
        pred = np.asarray(pred).astype(bool)
        truth = np.asarray(truth).astype(bool)
        self.tp += int(np.sum(pred & truth))
        self.fp += int(np.sum(pred & ~truth))
        self.fn += int(np.sum(~pred & truth))
        self.tn += int(np.sum(~pred & ~truth))
        self.frames += 1


def confusion(pred, truth) -> SplitMetrics:
    m = SplitMetrics()
    m.update(pred, truth)
    return m


@dataclass
class EvalReport:
    splits: dict[str, SplitMetrics]
    predictions: dict[int, np.ndarray]
    mean_time_ms: float
    variant: str = ""

    def f1(self, split: str = "all") -> float:
        return self.splits[split].f1

    def to_csv(self, seed: int | None = None) -> str:
        buf = io.StringIO()
        buf.write(_header(EVAL_FORMAT, seed))
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["split", "frames", "tp", "fp", "fn", "tn", "precision", "recall", "f1"])
        for name, m in self.splits.items():
            w.writerow([name, m.frames, m.tp, m.fp, m.fn, m.tn, f"{m.precision:.6f}",
                        f"{m.recall:.6f}", f"{m.f1:.6f}"])
        return buf.getvalue()

    def predictions_csv(self, seed: int | None = None) -> str:
        buf = io.StringIO()
        buf.write(_header(EVAL_FORMAT, seed))
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame_id", "target_index", "prediction"])
        for fid, pred in self.predictions.items():
            for i, p in enumerate(pred):
                w.writerow([fid, i, int(p)])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"evaluation ({self.variant or 'model'}), mean inference {self.mean_time_ms:.2f} ms/frame",
                 f"{'split':<14}{'frames':>7}{'P':>9}{'R':>9}{'F1':>9}"]
        for name, m in self.splits.items():
            lines.append(f"{name:<14}{m.frames:>7}{m.precision:>9.4f}{m.recall:>9.4f}{m.f1:>9.4f}")
        return "\n".join(lines) + "\n"


def read_predictions(path: str | Path) -> dict[int, np.ndarray]:
    rows: dict[int, list] = {}
    with open(path, encoding="utf-8") as fh:
        lines = [l for l in fh if not l.startswith("#")]
    for row in csv.DictReader(lines):
        rows.setdefault(int(row["frame_id"]), []).append((int(row["target_index"]), int(row["prediction"])))
    return {fid: np.array([p for _, p in sorted(v)], dtype=np.int64) for fid, v in rows.items()}


# ----------------------------------------------------------------------------- inference


def predict_frames(model: SegmentationModel, frames: Sequence[RadarFrame], stats: FeatureStats,
                   batch_size: int = 48, pad_to: int = MAX_TARGETS,
                   stats_out: GroupStats | None = None) -> list[np.ndarray]:
    """Per-frame class predictions, computed in padded batches and de-duplicated."""
    rng = np.random.default_rng(0)
    preds: list[np.ndarray] = []
    for start in range(0, len(frames), batch_size):
        chunk = frames[start:start + batch_size]
        padded = [pad_frame(f, max(pad_to, len(f)), rng) for f in chunk]
        feats, pos, origin, _ = make_batch(padded, stats, model.params[next(iter(model.params))].dtype)
        logits = model.predict(feats, pos, origin, stats_out).logits
        cls = np.argmax(logits, axis=-1)
        preds.extend(p.deduplicate(c) for p, c in zip(padded, cls))
    return preds


def split_names(frame: RadarFrame) -> list[str]:
    names = ["all", frame.sensor_id.value]
    names.append("intersection" if frame.scenario == Scenario.INTERSECTION else "no_intersection")
    return names


def evaluate_predictions(frames: Sequence[RadarFrame], predictions: Sequence[np.ndarray],
                         variant: str = "", mean_time_ms: float = 0.0) -> EvalReport:
    order = ["all"] + [s.value for s in SensorId] + ["intersection", "no_intersection"]
    splits = {name: SplitMetrics() for name in order}
    for frame, pred in zip(frames, predictions):
        if len(pred) != len(frame):
            raise ValueError(f"frame {frame.frame_id}: {len(pred)} predictions for {len(frame)} targets")
        for name in split_names(frame):
            splits[name].update(pred, frame.labels)
    splits = {k: v for k, v in splits.items() if v.frames or k == "all"}
    return EvalReport(splits, {f.frame_id: np.asarray(p) for f, p in zip(frames, predictions)},
                      mean_time_ms, variant)


def evaluate(model: SegmentationModel, frames: Sequence[RadarFrame], stats: FeatureStats,
             batch_size: int = 48) -> EvalReport:
    t0 = time.perf_counter()
    preds = predict_frames(model, frames, stats, batch_size)
    elapsed = time.perf_counter() - t0
    return evaluate_predictions(frames, preds, model.variant.value,
                                1000.0 * elapsed / max(len(frames), 1))


# ----------------------------------------------------------------------------- training


@dataclass
class EpochLog:
    epoch: int
    lr: float
    loss: float
    val_f1: float | None
    seconds: float


@dataclass
class TrainResult:
    model: SegmentationModel
    stats: FeatureStats
    log: list[EpochLog]
    train_config: TrainConfig

    def save(self, path: str | Path):
        save_checkpoint(path, self.model, self.stats, {"train_config": self.train_config.to_dict()})

    def log_csv(self) -> str:
        return trainlog_csv(self.log, self.train_config.seed)


def trainlog_csv(entries: Sequence[EpochLog], seed: int | None = None) -> str:
    buf = io.StringIO()
    buf.write(_header(TRAINLOG_FORMAT, seed))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "lr", "loss", "val_f1", "seconds"])
    for e in entries:
        w.writerow([e.epoch, repr(e.lr), f"{e.loss:.8f}",
                    "" if e.val_f1 is None else f"{e.val_f1:.6f}", f"{e.seconds:.3f}"])
    return buf.getvalue()


def save_checkpoint(path: str | Path, model: SegmentationModel, stats: FeatureStats,
                    extra: dict | None = None) -> None:
    """Model weights plus the feature statistics needed to run it."""
    model.save(path, extra={"stats": stats.to_dict(), **(extra or {})})


def load_checkpoint(path: str | Path) -> tuple[SegmentationModel, FeatureStats]:
    model, extra = SegmentationModel.load(path)
    if "stats" not in extra:
        raise ValueError(f"{path}: checkpoint lacks feature statistics")
    return model, FeatureStats.from_dict(extra["stats"])


def split_train_test(frames: Sequence[RadarFrame], train_fraction: float = 0.8):
    """Contiguous split of a time-ordered sequence: head for training, tail for testing."""
    cut = int(round(len(frames) * train_fraction))
    return list(frames[:cut]), list(frames[cut:])


def _training_frame(seq, k, cfg: TrainConfig, rng) -> RadarFrame:
    frame = seq[k]
    if cfg.neighbor_injection and cfg.neighbor_window > 0:
        frame = augment_with_neighbor_anomalies(seq, k, cfg.neighbor_window, cfg.injection_prob, rng)
    if rng.random() < cfg.mirror_prob:
        frame = mirror_frame(frame)
    return frame


def train(model_config: ModelConfig, train_config: TrainConfig, train_frames: Sequence[RadarFrame],
          val_frames: Sequence[RadarFrame] | None = None,
          progress: Callable[[EpochLog], None] | None = None) -> TrainResult:
    """Fit a model on a time-ordered training sequence; deterministic for fixed seeds."""
    if not train_frames:
        raise ValueError("empty training split")
    if val_frames is not None and not val_frames:
        raise ValueError("empty validation split")
    cfg = train_config
    seq = list(train_frames)
    stats = FeatureStats.fit(seq)
    model = SegmentationModel(model_config)
    adam = AdamState()
    rng = np.random.default_rng([cfg.seed, 7])
    history: list[EpochLog] = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = lr_schedule(epoch, cfg.lr, cfg.halve_every)
        order = rng.permutation(len(seq))
        losses, weights = [], []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            padded = [pad_frame(_training_frame(seq, int(k), cfg, rng), cfg.pad_to, rng) for k in idx]
            feats, pos, origin, labels = make_batch(padded, stats)
            if cfg.jitter > 0:
                feats += rng.normal(0.0, cfg.jitter, feats.shape).astype(feats.dtype)
            model.zero_grad()
            loss = weighted_softmax_cross_entropy(model.forward(feats, pos, origin), labels,
                                                  cfg.class_weights)
            loss.backward()
            adam_step(model.params, {k: p.grad for k, p in model.params.items()}, adam, lr)
            losses.append(loss.item())
            weights.append(len(idx))
        val_f1 = None
        if val_frames is not None and ((epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs):
            val_f1 = evaluate(model, val_frames, stats).f1()
        entry = EpochLog(epoch, lr, float(np.average(losses, weights=weights)), val_f1,
                         time.perf_counter() - t0)
        history.append(entry)
        log.info("epoch %d lr %.2e loss %.4f val_f1 %s", epoch, lr, entry.loss, val_f1)
        if progress is not None:
            progress(entry)
    return TrainResult(model, stats, history, cfg)


# ----------------------------------------------------------------------------- benchmark


@dataclass
class BenchRow:
    name: str
    variant: str
    mean_ms: float
    std_ms: float
    frames: int
    repetitions: int
    candidates: dict[str, float]


def bench_inference(models: Mapping[str, tuple[SegmentationModel, FeatureStats]],
                    frames: Sequence[RadarFrame], repetitions: int = 10,
                    warmup: int = 5) -> list[BenchRow]:
    """Single-frame inference wall time per model plus mean grouping candidates per query form.

    Each repetition runs every frame once; the reported spread is over
    per-frame times. Warm-up passes are excluded.
    """
    rows = []
    for name, (model, stats) in models.items():
        inputs = []
        for f in frames:
            x = standardize(f.features, stats).astype(np.float32)
            inputs.append((x, f.features[:, :2]))
        gstats = GroupStats()
        for x, pos in inputs:
            model.predict(x, pos, None, gstats)
        times = []
        with threadpool_limits(1):
            for x, pos in inputs[:warmup]:
                model.predict(x, pos)
            for _ in range(repetitions):
                for x, pos in inputs:
                    t0 = time.perf_counter()
                    model.predict(x, pos)
                    times.append(time.perf_counter() - t0)
        t = np.array(times) * 1000.0
        cands = {"all": gstats.mean()}
        cands.update({k: gstats.totals[k] / gstats.queries[k] for k in gstats.queries
                      if gstats.queries[k]})
        rows.append(BenchRow(name, model.variant.value, float(t.mean()), float(t.std()),
                             len(frames), repetitions, cands))
    return rows


def bench_csv(rows: Sequence[BenchRow], seed: int | None = None) -> str:
    buf = io.StringIO()
    buf.write(_header(BENCH_FORMAT, seed))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "variant", "mean_ms", "std_ms", "frames", "repetitions",
                "candidates_all", "candidates_circle", "candidates_ring"])
    for r in rows:
        w.writerow([r.name, r.variant, f"{r.mean_ms:.4f}", f"{r.std_ms:.4f}", r.frames,
                    r.repetitions, f"{r.candidates.get('all', 0.0):.4f}",
                    f"{r.candidates.get('circle', 0.0):.4f}", f"{r.candidates.get('ring', 0.0):.4f}"])
    return buf.getvalue()
