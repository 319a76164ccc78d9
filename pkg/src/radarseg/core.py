"""Radar frame types, polar geometry, Doppler compensation and the CSV dataset format."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

MAX_RANGE = 70.0
MAX_TARGETS = 250

CSV_HEADER = (
    "frame_id",
    "sensor_id",
    "ego_speed",
    "ego_yaw_rate",
    "scenario",
    "x",
    "y",
    "v_d",
    "v_d_comp",
    "rcs",
    "label",
)

# Column order of the per-point feature matrix: (x, y, compensated Doppler, RCS, raw Doppler).
FEATURE_NAMES = ("x", "y", "v_d_comp", "rcs", "v_d")


class DatasetError(ValueError):
    """Raised for malformed dataset files; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(DatasetError):
    """A well-formed value that violates a frame or target invariant."""


class Label(enum.IntEnum):
    NORMAL = 0
    ANOMALOUS = 1


class SensorId(str, enum.Enum):
    CENTER = "center"
    LEFT = "left"
    RIGHT = "right"


class Scenario(str, enum.Enum):
    NORMAL = "normal"
    INTERSECTION = "intersection"


class PolarCoord(NamedTuple):
    r: float
    phi: float


def to_polar(x: float, y: float) -> PolarCoord:
    """Range and azimuth of a cartesian point; azimuth is 0 along +x, positive toward +y."""
    r = float(np.hypot(x, y))
    if r == 0.0:
        return PolarCoord(0.0, 0.0)
    # numpy's atan2 so scalar and vectorised azimuths agree bit for bit
    phi = float(np.arctan2(y, x))
    if phi == -math.pi:
        phi = math.pi
    return PolarCoord(r, phi)


def to_cartesian(r: float, phi: float) -> tuple[float, float]:
    return r * math.cos(phi), r * math.sin(phi)


def polar_arrays(xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`to_polar` for an ``(n, 2)`` array; returns ``(r, phi)``."""
    xy = np.asarray(xy, dtype=np.float64)
    r = np.hypot(xy[..., 0], xy[..., 1])
    phi = np.arctan2(xy[..., 1], xy[..., 0])
    phi = np.where(phi == -np.pi, np.pi, phi)
    phi = np.where(r == 0.0, 0.0, phi)
    return r, phi


@dataclass(frozen=True)
class EgoState:
    speed: float
    yaw_rate: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.speed) or self.speed < 0:
            raise ValidationError(f"ego speed must be finite and >= 0, got {self.speed}")
        if not math.isfinite(self.yaw_rate):
            raise ValidationError(f"ego yaw rate must be finite, got {self.yaw_rate}")


def compensate_doppler(v_d: float, phi: float, ego: EgoState) -> float:
    """Remove the ego-motion share of a raw Doppler velocity.

    A stationary target seen at azimuth ``phi`` from a vehicle driving at
    ``ego.speed`` measures ``-ego.speed * cos(phi)``; adding that term back
    yields zero. Yaw rate and mounting offsets are ignored.
    """
    return v_d + ego.speed * math.cos(phi)


def uncompensate_doppler(v_d_comp: float, phi: float, ego: EgoState) -> float:
    return v_d_comp - ego.speed * math.cos(phi)


@dataclass(frozen=True)
class RadarTarget:
    x: float
    y: float
    v_d: float
    v_d_comp: float
    rcs: float
    label: Label = Label.NORMAL

    def __post_init__(self):
        for name in FEATURE_NAMES:
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"target field {name} is not finite")
        if self.range > MAX_RANGE:
            raise ValidationError(
                f"target at ({self.x}, {self.y}) has range {self.range:.3f} m > {MAX_RANGE} m"
            )
        if not isinstance(self.label, Label):
            object.__setattr__(self, "label", Label(self.label))

    @property
    def range(self) -> float:
        return math.hypot(self.x, self.y)

    @property
    def polar(self) -> PolarCoord:
        return to_polar(self.x, self.y)

    @property
    def is_anomalous(self) -> bool:
        return self.label == Label.ANOMALOUS

    @classmethod
    def from_raw_doppler(cls, x: float, y: float, v_d: float, rcs: float, ego: EgoState,
                         label: Label = Label.NORMAL) -> "RadarTarget":
        """Build a target whose compensated Doppler is derived from ``v_d`` at its own azimuth."""
        phi = to_polar(x, y).phi
        return cls(x, y, v_d, compensate_doppler(v_d, phi, ego), rcs, label)


@dataclass(frozen=True)
class RadarFrame:
    frame_id: int
    sensor_id: SensorId
    ego: EgoState
    targets: tuple[RadarTarget, ...]
    scenario: Scenario = Scenario.NORMAL

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "sensor_id", SensorId(self.sensor_id))
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        n = len(self.targets)
        if n < 1:
            raise ValidationError(f"frame {self.frame_id} has no targets")
        if n > MAX_TARGETS:
            raise ValidationError(f"frame {self.frame_id} has {n} targets > {MAX_TARGETS}")

    def __len__(self) -> int:
        return len(self.targets)

    @cached_property
    def features(self) -> np.ndarray:
        """``(n, 5)`` float64 matrix in :data:`FEATURE_NAMES` order."""
        return np.array(
            [[t.x, t.y, t.v_d_comp, t.rcs, t.v_d] for t in self.targets], dtype=np.float64
        )

    @cached_property
    def labels(self) -> np.ndarray:
        return np.array([int(t.label) for t in self.targets], dtype=np.int64)

    @property
    def positions(self) -> np.ndarray:
        return self.features[:, :2]

    @property
    def n_anomalies(self) -> int:
        return int(self.labels.sum())

    def with_targets(self, targets: Iterable[RadarTarget]) -> "RadarFrame":
        return RadarFrame(self.frame_id, self.sensor_id, self.ego, tuple(targets), self.scenario)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_dataset(frames: Sequence[RadarFrame], path: str | Path) -> None:
    """Write frames as one CSV row per target. Frame ids must be strictly increasing."""
    prev = None
    for frame in frames:
        if prev is not None and frame.frame_id <= prev:
            raise ValidationError(f"frame ids must be strictly increasing ({prev} -> {frame.frame_id})")
        prev = frame.frame_id
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for frame in frames:
            head = [
                str(frame.frame_id),
                frame.sensor_id.value,
                _fmt(frame.ego.speed),
                _fmt(frame.ego.yaw_rate),
                frame.scenario.value,
            ]
            for t in frame.targets:
                writer.writerow(
                    head + [_fmt(t.x), _fmt(t.y), _fmt(t.v_d), _fmt(t.v_d_comp), _fmt(t.rcs),
                            str(int(t.label))]
                )


def _parse_float(text: str, name: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DatasetError(f"cannot parse {name}={text!r} as a number", line) from None
    if not math.isfinite(value):
        raise ValidationError(f"{name} is not finite", line)
    return value


def read_dataset(path: str | Path) -> list[RadarFrame]:
    """Parse a dataset CSV into frames, validating every frame and target invariant."""
    frames: list[RadarFrame] = []
    current_key = None
    current_head = None
    current_targets: list[RadarTarget] = []
    first_line = 0
    seen: set[int] = set()

    def flush():
        if current_head is None:
            return
        fid, sensor, ego, scenario = current_head
        try:
            frames.append(RadarFrame(fid, sensor, ego, tuple(current_targets), scenario))
        except ValidationError as exc:
            raise ValidationError(str(exc), first_line) from None

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise DatasetError(f"expected header {','.join(CSV_HEADER)}", 1)
        for row in reader:
            line = reader.line_num
            if len(row) != len(CSV_HEADER):
                raise DatasetError(f"expected {len(CSV_HEADER)} fields, got {len(row)}", line)
            try:
                fid = int(row[0])
            except ValueError:
                raise DatasetError(f"cannot parse frame_id={row[0]!r}", line) from None
            try:
                sensor = SensorId(row[1])
            except ValueError:
                raise DatasetError(f"unknown sensor_id {row[1]!r}", line) from None
            try:
                scenario = Scenario(row[4])
            except ValueError:
                raise DatasetError(f"unknown scenario {row[4]!r}", line) from None
            speed = _parse_float(row[2], "ego_speed", line)
            yaw = _parse_float(row[3], "ego_yaw_rate", line)
            x, y, v_d, v_c, rcs = (
                _parse_float(row[i], CSV_HEADER[i], line) for i in range(5, 10)
            )
            if row[10] not in ("0", "1"):
                raise DatasetError(f"label must be 0 or 1, got {row[10]!r}", line)
            key = (fid, sensor, row[2], row[3], scenario)
            if key != current_key:
                if current_key is not None and fid == current_key[0]:
                    raise DatasetError(f"inconsistent frame-level fields for frame {fid}", line)
                if fid in seen or (current_key is not None and fid < current_key[0]):
                    raise DatasetError(f"frame_id {fid} is out of order or not contiguous", line)
                flush()
                seen.add(fid)
                try:
                    ego = EgoState(speed, yaw)
                except ValidationError as exc:
                    raise ValidationError(str(exc), line) from None
                current_key = key
                current_head = (fid, sensor, ego, scenario)
                current_targets = []
                first_line = line
            try:
                current_targets.append(RadarTarget(x, y, v_d, v_c, rcs, Label(int(row[10]))))
            except ValidationError as exc:
                raise ValidationError(str(exc), line) from None
        flush()
    return frames


def dataset_stats(frames: Sequence[RadarFrame]) -> dict:
    """Anomalous-target fraction and fraction of frames holding at least one anomaly."""
    n_targets = sum(len(f) for f in frames)
    n_anom = sum(f.n_anomalies for f in frames)
    n_frames = len(frames)
    return {
        "frames": n_frames,
        "targets": n_targets,
        "anomalies": n_anom,
        "anomaly_fraction": n_anom / n_targets if n_targets else 0.0,
        "frames_with_anomaly_fraction": (
            sum(1 for f in frames if f.n_anomalies > 0) / n_frames if n_frames else 0.0
        ),
        "intersection_fraction": (
            sum(1 for f in frames if f.scenario == Scenario.INTERSECTION) / n_frames
            if n_frames else 0.0
        ),
    }
