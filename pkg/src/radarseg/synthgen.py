"""Seeded synthetic radar scenes with DoA ghosts and multi-path Doppler anomalies.

The ego vehicle drives along the world x axis past building walls, random
clutter and other traffic, slowing down at periodic intersections. Each
measurement cycle yields one frame per virtual sensor (center / left / right,
yawed views of the same scene). Two anomaly families are injected:

* **DoA ghosts** copy a moving-vehicle target's range and raw Doppler but
  place it at a wrong azimuth, so its compensated Doppler no longer matches.
* **Multi-path ghosts** are high-Doppler targets placed inside stationary
  clutter.

Scene evolution (ego speed, vehicles) is sequential; everything sampled per
frame draws from an RNG stream derived from ``(seed, step, sensor)``, so
frames do not depend on generation order.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (MAX_RANGE, MAX_TARGETS, EgoState, Label, RadarFrame, RadarTarget, Scenario,
                   SensorId, compensate_doppler, to_polar, uncompensate_doppler)

SENSOR_YAW_DEG = {SensorId.CENTER: 0.0, SensorId.LEFT: 25.0, SensorId.RIGHT: -25.0}
INTERSECTION_SPEED = 3.0  # m/s; slower frames are tagged IntersectionLike
MOVING_THRESHOLD = 1.0  # m/s of compensated Doppler

_STREAM_SCENE = 1
_STREAM_FRAME = 2


class TruncationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    frames: int = 2000
    dt: float = 0.1
    sensors: tuple[str, ...] = ("center",)
    # ego speed profile
    cruise_speed: float = 12.0
    cruise_variation: float = 2.0
    intersection_every: int = 300
    intersection_frames: int = 40
    intersection_speed: float = 1.0
    # background
    wall_points: float = 34.0
    wall_offset: tuple[float, float] = (8.0, 22.0)
    wall_length: tuple[float, float] = (20.0, 70.0)
    wall_gap: tuple[float, float] = (4.0, 25.0)
    clutter_points: float = 18.0
    # traffic
    vehicles: int = 5
    cluster_size: tuple[int, int] = (3, 8)
    vehicle_speed: tuple[float, float] = (5.0, 15.0)
    # anomalies: Poisson means per frame
    doa_rate: float = 0.7
    multipath_rate: float = 0.7
    doa_offset_deg: tuple[float, float] = (10.0, 50.0)
    multipath_radius: float = 2.0
    # measurement noise
    range_std: float = 0.1
    azimuth_std: float = 0.004
    doppler_std: float = 0.1
    rcs_std: float = 3.0
    wall_rcs: float = 2.0
    clutter_rcs: float = -6.0
    vehicle_rcs: float = 8.0
    # field of view
    max_range: float = MAX_RANGE
    fov_deg: float = 60.0

    def __post_init__(self):
        object.__setattr__(self, "sensors", tuple(SensorId(s).value for s in self.sensors))
        for name in ("doa_rate", "multipath_rate", "wall_points", "clutter_points"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not (0 < self.max_range <= MAX_RANGE) or not (0 < self.fov_deg <= 90):
            raise ValueError("field of view bounds must be positive (range <= 70 m, half-angle <= 90 deg)")
        if self.frames < 1 or self.dt <= 0:
            raise ValueError("need frames >= 1 and dt > 0")
        lo, hi = self.cluster_size
        if not 1 <= lo <= hi:
            raise ValueError("cluster_size must be 1 <= lo <= hi")

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown scene config keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)

    @classmethod
    def from_json(cls, path: str | Path) -> "SceneConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ----------------------------------------------------------------------------- anomaly injectors


def _fov(sensor: SensorId, fov_deg: float = 60.0) -> tuple[float, float]:
    c = math.radians(SENSOR_YAW_DEG[SensorId(sensor)])
    h = math.radians(fov_deg)
    return c - h, c + h


def is_moving(t: RadarTarget) -> bool:
    return abs(t.v_d_comp) > MOVING_THRESHOLD


def inject_doa_anomaly(frame: RadarFrame, rng: np.random.Generator, *,
                       offset_deg: float | None = None,
                       offset_range: tuple[float, float] = (10.0, 50.0),
                       fov_deg: float = 60.0) -> RadarFrame:
    """Add a ghost copying a moving target's range and raw Doppler at a shifted azimuth.

    The ghost's compensated Doppler is recomputed at its new azimuth. Frames
    without a normal moving target are returned unchanged.
    """
    sources = [t for t in frame.targets if t.label == Label.NORMAL and is_moving(t)]
    if not sources:
        return frame
    src = sources[int(rng.integers(len(sources)))]
    if offset_deg is None:
        offset_deg = float(rng.uniform(*offset_range)) * (1 if rng.random() < 0.5 else -1)
    r, phi = src.polar
    if offset_deg == 0.0:
        x, y, new_phi = src.x, src.y, phi
    else:
        lo, hi = _fov(frame.sensor_id, fov_deg)
        new_phi = min(max(phi + math.radians(offset_deg), lo), hi)
        x, y = r * math.cos(new_phi), r * math.sin(new_phi)
    v_comp = compensate_doppler(src.v_d, to_polar(x, y).phi, frame.ego)
    ghost = RadarTarget(x, y, src.v_d, v_comp, src.rcs, Label.ANOMALOUS)
    return frame.with_targets(frame.targets + (ghost,))


def multipath_speed_bounds(ego_speed: float) -> tuple[float, float]:
    """Range of |compensated Doppler| for a multi-path ghost: 1.5-3x ego speed, at least 3 m/s."""
    lo = max(1.5 * ego_speed, 3.0)
    return lo, max(3.0 * ego_speed, lo)


def inject_multipath_anomaly(frame: RadarFrame, rng: np.random.Generator, *,
                             radius: float = 2.0, rcs_mean: float = -6.0, rcs_std: float = 3.0,
                             fov_deg: float = 60.0) -> RadarFrame:
    """Add a high-Doppler ghost within ``radius`` of a random stationary target.

    Needs at least three normal stationary targets; otherwise a no-op.
    """
    stationary = [t for t in frame.targets if t.label == Label.NORMAL and not is_moving(t)]
    if len(stationary) < 3:
        return frame
    anchor = stationary[int(rng.integers(len(stationary)))]
    lo, hi = _fov(frame.sensor_id, fov_deg)
    for _ in range(20):
        rho = radius * math.sqrt(rng.random())
        ang = rng.uniform(0, 2 * math.pi)
        x, y = anchor.x + rho * math.cos(ang), anchor.y + rho * math.sin(ang)
        r, phi = to_polar(x, y)
        if r <= MAX_RANGE and lo <= phi <= hi:
            break
    else:
        x, y = anchor.x, anchor.y
        r, phi = to_polar(x, y)
    smin, smax = multipath_speed_bounds(frame.ego.speed)
    speed = rng.uniform(smin, smax) * (1 if rng.random() < 0.5 else -1)
    v_d = uncompensate_doppler(speed, phi, frame.ego)
    rcs = float(rng.normal(rcs_mean, rcs_std))
    ghost = RadarTarget.from_raw_doppler(x, y, v_d, rcs, frame.ego, Label.ANOMALOUS)
    return frame.with_targets(frame.targets + (ghost,))


# ----------------------------------------------------------------------------- scene evolution


@dataclass
class _Vehicle:
    x: float  # world
    y: float
    vx: float
    length: float = 4.5
    width: float = 1.8


@dataclass
class _Wall:
    side: int
    offset: float
    x0: float
    x1: float


@dataclass
class _SceneState:
    ego_x: float
    ego_speed: float
    vehicles: list
    walls: list


def ego_speed_profile(cfg: SceneConfig) -> np.ndarray:
    """Cruise with slow sinusoidal variation, dipping to ``intersection_speed`` periodically."""
    steps = np.arange(cfg.frames)
    cruise = cfg.cruise_speed + cfg.cruise_variation * np.sin(2 * np.pi * steps / 173.0)
    phase = (steps + cfg.intersection_every // 2) % max(cfg.intersection_every, 1)
    ramp = 15
    core = cfg.intersection_frames
    # 0 in the stop phase, 1 while cruising, linear ramps in between
    blend = np.clip(np.minimum(phase - core, cfg.intersection_every - phase) / ramp, 0.0, 1.0)
    blend = np.where(phase < core, 0.0, blend)
    return cfg.intersection_speed + (cruise - cfg.intersection_speed) * blend


def _spawn_vehicle(rng, ego_x: float, cfg: SceneConfig, near: bool) -> _Vehicle:
    lane = rng.choice([0.0, -3.5, 3.5, 7.0], p=[0.3, 0.25, 0.3, 0.15])
    speed = rng.uniform(*cfg.vehicle_speed)
    direction = -1.0 if lane > 0 else 1.0
    lo = 8.0 if near else 55.0
    return _Vehicle(ego_x + rng.uniform(lo, 75.0), lane + rng.normal(0, 0.3), direction * speed)


def _extend_walls(rng, walls: list, ego_x: float, cfg: SceneConfig):
    for side in (-1, 1):
        mine = [w for w in walls if w.side == side]
        end = max((w.x1 for w in mine), default=ego_x - 20.0)
        while end < ego_x + cfg.max_range + 30.0:
            start = end + rng.uniform(*cfg.wall_gap)
            length = rng.uniform(*cfg.wall_length)
            walls.append(_Wall(side, rng.uniform(*cfg.wall_offset), start, start + length))
            end = start + length
    walls[:] = [w for w in walls if w.x1 > ego_x - 10.0]


def scene_states(cfg: SceneConfig) -> list[_SceneState]:
    rng = np.random.default_rng([cfg.seed, _STREAM_SCENE])
    speeds = ego_speed_profile(cfg)
    ego_x = 0.0
    vehicles = [_spawn_vehicle(rng, ego_x, cfg, near=True) for _ in range(cfg.vehicles)]
    walls: list = []
    states = []
    for step in range(cfg.frames):
        _extend_walls(rng, walls, ego_x, cfg)
        states.append(_SceneState(ego_x, float(speeds[step]),
                                  [_Vehicle(v.x, v.y, v.vx, v.length, v.width) for v in vehicles],
                                  [_Wall(w.side, w.offset, w.x0, w.x1) for w in walls]))
        ego_x += speeds[step] * cfg.dt
        for i, v in enumerate(vehicles):
            v.x += v.vx * cfg.dt
            rel = v.x - ego_x
            if rel < -15.0 or rel > 90.0:
                vehicles[i] = _spawn_vehicle(rng, ego_x, cfg, near=False)
    return states


# ----------------------------------------------------------------------------- measurement


def _in_view(x: np.ndarray, y: np.ndarray, lo: float, hi: float, max_range: float) -> np.ndarray:
    r = np.hypot(x, y)
    phi = np.arctan2(y, x)
    return (r <= max_range) & (r > 0.5) & (phi >= lo) & (phi <= hi)


def _measure(rng, cfg: SceneConfig, ego: EgoState, x, y, v_abs, rcs, lo, hi) -> list[RadarTarget]:
    """Apply range/azimuth/Doppler/RCS noise and build targets inside the field of view."""
    n = len(x)
    if n == 0:
        return []
    r = np.hypot(x, y) + rng.normal(0, cfg.range_std, n)
    phi = np.arctan2(y, x) + rng.normal(0, cfg.azimuth_std, n)
    radial = v_abs + rng.normal(0, cfg.doppler_std, n)
    rcs = rcs + rng.normal(0, cfg.rcs_std, n)
    out = []
    for ri, pi, vi, si in zip(r, phi, radial, rcs):
        if not (0 < ri <= cfg.max_range and lo <= pi <= hi):
            continue
        xi, yi = float(ri * math.cos(pi)), float(ri * math.sin(pi))
        if math.hypot(xi, yi) > MAX_RANGE:
            continue
        phi_i = to_polar(xi, yi).phi
        v_d = uncompensate_doppler(float(vi), phi_i, ego)
        out.append(RadarTarget(xi, yi, v_d, compensate_doppler(v_d, phi_i, ego), float(si)))
    return out


def _background(rng, cfg: SceneConfig, state: _SceneState, lo: float, hi: float):
    xs, ys = [], []
    # walls: spread Poisson(wall_points) points along the visible wall length
    pieces = []
    for w in state.walls:
        a, b = w.x0 - state.ego_x, w.x1 - state.ego_x
        a, b = max(a, 0.5), min(b, cfg.max_range)
        if b > a:
            pieces.append((a, b, w.side * w.offset))
    if pieces:
        lengths = np.array([b - a for a, b, _ in pieces])
        k = rng.poisson(cfg.wall_points)
        which = rng.choice(len(pieces), size=k, p=lengths / lengths.sum())
        for j in which:
            a, b, off = pieces[j]
            xs.append(rng.uniform(a, b))
            ys.append(off + rng.normal(0, 0.3))
    xs, ys = np.array(xs), np.array(ys)
    keep = _in_view(xs, ys, lo, hi, cfg.max_range) if len(xs) else np.zeros(0, bool)
    wx, wy = xs[keep], ys[keep]
    # clutter: uniform over the field-of-view sector
    k = rng.poisson(cfg.clutter_points)
    rr = cfg.max_range * np.sqrt(rng.uniform(0.01, 1.0, k))
    pp = rng.uniform(lo, hi, k)
    cx, cy = rr * np.cos(pp), rr * np.sin(pp)
    return (wx, wy), (cx, cy)


def _vehicle_points(rng, cfg: SceneConfig, state: _SceneState, lo: float, hi: float):
    xs, ys, vs = [], [], []
    for v in state.vehicles:
        rel_x, rel_y = v.x - state.ego_x, v.y
        if not _in_view(np.array([rel_x]), np.array([rel_y]), lo, hi, cfg.max_range)[0]:
            continue
        k = int(rng.integers(cfg.cluster_size[0], cfg.cluster_size[1] + 1))
        px = rel_x + rng.uniform(-v.length / 2, v.length / 2, k)
        py = rel_y + rng.uniform(-v.width / 2, v.width / 2, k)
        rng_ = np.hypot(px, py)
        # radial component of the vehicle's ground velocity
        vs.extend(v.vx * px / rng_)
        xs.extend(px)
        ys.extend(py)
    return np.array(xs), np.array(ys), np.array(vs)


def _truncate(targets: list[RadarTarget], limit: int, frame_id: int) -> list[RadarTarget]:
    if len(targets) <= limit:
        return targets
    warnings.warn(f"frame {frame_id}: {len(targets)} targets exceed {limit}, dropping the farthest",
                  TruncationWarning, stacklevel=3)
    order = sorted(range(len(targets)), key=lambda i: (targets[i].range, i))
    keep = sorted(order[:limit])
    return [targets[i] for i in keep]


def generate_frame(cfg: SceneConfig, state: _SceneState, step: int, sensor: SensorId,
                   frame_id: int) -> RadarFrame:
    """Sample one sensor's measurement of a scene state, including injected anomalies."""
    sensor = SensorId(sensor)
    s_idx = list(SensorId).index(sensor)
    rng = np.random.default_rng([cfg.seed, _STREAM_FRAME, step, s_idx])
    ego = EgoState(state.ego_speed, 0.0)
    lo, hi = _fov(sensor, cfg.fov_deg)
    (wx, wy), (cx, cy) = _background(rng, cfg, state, lo, hi)
    vx, vy, vv = _vehicle_points(rng, cfg, state, lo, hi)
    targets = (
        _measure(rng, cfg, ego, wx, wy, np.zeros(len(wx)), np.full(len(wx), cfg.wall_rcs), lo, hi)
        + _measure(rng, cfg, ego, cx, cy, np.zeros(len(cx)), np.full(len(cx), cfg.clutter_rcs), lo, hi)
        + _measure(rng, cfg, ego, vx, vy, vv, np.full(len(vx), cfg.vehicle_rcs), lo, hi)
    )
    n_doa = int(rng.poisson(cfg.doa_rate))
    n_mp = int(rng.poisson(cfg.multipath_rate))
    targets = _truncate(targets, MAX_TARGETS - n_doa - n_mp, frame_id)
    if not targets:
        # an empty measurement is not a valid frame; keep a single clutter return at max range
        phi = 0.5 * (lo + hi)
        x, y = cfg.max_range * 0.5 * math.cos(phi), cfg.max_range * 0.5 * math.sin(phi)
        targets = [RadarTarget.from_raw_doppler(x, y, -ego.speed * math.cos(to_polar(x, y).phi),
                                                cfg.clutter_rcs, ego)]
    scenario = Scenario.INTERSECTION if ego.speed < INTERSECTION_SPEED else Scenario.NORMAL
    frame = RadarFrame(frame_id, sensor, ego, tuple(targets), scenario)
    # interleave the two families in a seeded order
    kinds = ["doa"] * n_doa + ["mp"] * n_mp
    rng.shuffle(kinds)
    for kind in kinds:
        if kind == "doa":
            frame = inject_doa_anomaly(frame, rng, offset_range=cfg.doa_offset_deg, fov_deg=cfg.fov_deg)
        else:
            frame = inject_multipath_anomaly(frame, rng, radius=cfg.multipath_radius,
                                             rcs_mean=cfg.clutter_rcs, rcs_std=cfg.rcs_std,
                                             fov_deg=cfg.fov_deg)
    return frame


def generate_sequence(cfg: SceneConfig) -> list[RadarFrame]:
    """All frames of the configured drive, sensor-interleaved per measurement cycle.

    Frame ids count up across sensors; a pure function of ``cfg``.
    """
    states = scene_states(cfg)
    frames = []
    fid = 0
    for step, state in enumerate(states):
        for sensor in cfg.sensors:
            frames.append(generate_frame(cfg, state, step, SensorId(sensor), fid))
            fid += 1
    return frames


def by_sensor(frames: Sequence[RadarFrame], sensor: str | SensorId) -> list[RadarFrame]:
    sensor = SensorId(sensor)
    return [f for f in frames if f.sensor_id == sensor]
