"""PointNet and PointNet++ (SSG / MSG / MFG) segmentation networks for radar frames.

Inputs are batches of per-point features ``(B, N, 5)`` together with the raw
sensor-frame positions ``(B, N, 2)`` used for grouping. Frames padded by
duplicating targets carry an ``origin`` map (row -> row of its first
occurrence); the networks evaluate only first occurrences and copy results to
duplicates, so padding never changes a prediction.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import grouping
from .autodiff import (Tensor, add_bias, concat, gather, load_params, matmul, max_reduce, relu,
                       no_grad, reshape, save_params, segment_max)
from .grouping import GroupForm, GroupSpec

MODEL_FORMAT = "radarseg-model/1"
N_CLASSES = 2
N_FEATURES = 5


class Variant(str, enum.Enum):
    POINTNET = "pointnet"
    SSG = "ssg"
    MSG = "msg"
    MFG = "mfg"


@dataclass(frozen=True)
class SALayerConfig:
    """``n_centroids=None`` means every point is a centroid (no sampling)."""

    n_centroids: int | None
    specs: tuple[GroupSpec, ...]
    mlp: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"n_centroids": self.n_centroids, "specs": [s.to_dict() for s in self.specs],
                "mlp": list(self.mlp)}

    @classmethod
    def from_dict(cls, d: dict) -> "SALayerConfig":
        return cls(d["n_centroids"], tuple(GroupSpec.from_dict(s) for s in d["specs"]),
                   tuple(d["mlp"]))


@dataclass(frozen=True)
class ModelConfig:
    variant: Variant
    sa_layers: tuple[SALayerConfig, ...] = ()
    fp_mlps: tuple[tuple[int, ...], ...] = ()
    head: tuple[int, ...] = (128, 64)
    # PointNet only
    local_mlp: tuple[int, ...] = (64, 64)
    global_mlp: tuple[int, ...] = (128, 256)
    offset_scale: float = 10.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.variant == Variant.POINTNET:
            return
        if not self.sa_layers:
            raise ValueError("PointNet++ configs need at least one SA layer")
        if self.sa_layers[0].n_centroids is not None:
            raise ValueError("the first SA layer must use every point as a centroid")
        if len(self.fp_mlps) != len(self.sa_layers):
            raise ValueError("need one FP layer per SA layer")
        for layer in self.sa_layers:
            if not layer.specs:
                raise ValueError("SA layer without group specs")
        first = self.sa_layers[0].specs
        circles = sum(s.form == GroupForm.CIRCLE for s in first)
        rings = sum(s.form == GroupForm.RING for s in first)
        if self.variant == Variant.SSG and (len(first) != 1 or circles != 1):
            raise ValueError("SSG uses exactly one circle per SA layer")
        if self.variant == Variant.MSG and (circles < 2 or rings):
            raise ValueError("MSG needs at least two circles and no rings")
        if self.variant == Variant.MFG and (circles < 1 or rings < 1):
            raise ValueError("MFG needs at least one circle and one ring")

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "sa_layers": [l.to_dict() for l in self.sa_layers],
            "fp_mlps": [list(m) for m in self.fp_mlps],
            "head": list(self.head),
            "local_mlp": list(self.local_mlp),
            "global_mlp": list(self.global_mlp),
            "offset_scale": self.offset_scale,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            Variant(d["variant"]),
            tuple(SALayerConfig.from_dict(l) for l in d["sa_layers"]),
            tuple(tuple(m) for m in d["fp_mlps"]),
            tuple(d["head"]),
            tuple(d["local_mlp"]),
            tuple(d["global_mlp"]),
            float(d["offset_scale"]),
            int(d["seed"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls.from_dict(json.loads(text))


def _layer1_specs(variant: Variant, k: int) -> tuple[GroupSpec, ...]:
    c, r = GroupForm.CIRCLE, GroupForm.RING
    if variant == Variant.SSG:
        return (GroupSpec(c, 5.0, k),)
    if variant == Variant.MSG:
        return (GroupSpec(c, 2.5, k), GroupSpec(c, 5.0, k), GroupSpec(c, 10.0, k))
    return (GroupSpec(c, 2.5, k), GroupSpec(c, 5.0, k), GroupSpec(r, 2.0, k), GroupSpec(r, 4.0, k))


def default_config(variant: str | Variant, *, width: float = 1.0, k: int = 16,
                   centroids: tuple[int, int] = (64, 16), seed: int = 0) -> ModelConfig:
    """Default architecture per variant; ``width`` scales every hidden layer."""
    variant = Variant(variant)

    def w(*sizes):
        return tuple(max(2, int(round(s * width))) for s in sizes)

    if variant == Variant.POINTNET:
        return ModelConfig(variant, local_mlp=w(64, 64), global_mlp=w(128, 256),
                           head=w(128, 64), seed=seed)
    specs1 = _layer1_specs(variant, k)
    specs2 = tuple(GroupSpec(s.form, s.size * 2, s.max_samples) for s in specs1)
    specs3 = (GroupSpec(GroupForm.CIRCLE, 200.0, centroids[0]),)
    per_spec1 = w(32, 32, 64)
    per_spec2 = w(64, 64, 128)
    sa = (
        SALayerConfig(None, specs1, per_spec1),
        SALayerConfig(centroids[0], specs2, per_spec2),
        SALayerConfig(centroids[1], specs3, w(128, 256)),
    )
    fp = (w(128, 128), w(128, 128), w(128, 128))
    return ModelConfig(variant, sa, fp, head=w(128,), seed=seed)


@dataclass
class SegmentationOutput:
    logits: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.logits)):
            raise FloatingPointError("non-finite logits")

    @property
    def classes(self) -> np.ndarray:
        # np.argmax keeps the first maximum, so ties resolve to Normal
        return np.argmax(self.logits, axis=-1)

    def __len__(self):
        return self.logits.shape[-2]


# ----------------------------------------------------------------------------- parameters


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out)).astype(dtype)


def _mlp_params(rng, prefix: str, widths: Sequence[int], dtype) -> dict[str, np.ndarray]:
    out = {}
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        out[f"{prefix}.{i}.W"] = _glorot(rng, a, b, dtype)
        out[f"{prefix}.{i}.b"] = np.zeros(b, dtype=dtype)
    return out


def init_params(config: ModelConfig, dtype=np.float32) -> dict[str, np.ndarray]:
    """Seeded Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(config.seed)
    p: dict[str, np.ndarray] = {}
    if config.variant == Variant.POINTNET:
        local = (N_FEATURES,) + config.local_mlp
        p.update(_mlp_params(rng, "local", local, dtype))
        p.update(_mlp_params(rng, "global", (local[-1],) + config.global_mlp, dtype))
        head_in = local[-1] + config.global_mlp[-1]
        p.update(_mlp_params(rng, "head", (head_in,) + config.head + (N_CLASSES,), dtype))
        return p
    widths = [N_FEATURES]
    for li, layer in enumerate(config.sa_layers):
        for si, _ in enumerate(layer.specs):
            p.update(_mlp_params(rng, f"sa{li}.s{si}", (2 + widths[-1],) + layer.mlp, dtype))
        widths.append(layer.mlp[-1] * len(layer.specs))
    # FP layers run coarse -> fine; fp{li} writes level li features
    coarse = widths[-1]
    for li in reversed(range(len(config.sa_layers))):
        mlp = config.fp_mlps[li]
        p.update(_mlp_params(rng, f"fp{li}", (coarse + widths[li],) + mlp, dtype))
        coarse = mlp[-1]
    p.update(_mlp_params(rng, "head", (coarse,) + config.head + (N_CLASSES,), dtype))
    return p


def count_params(params: dict) -> int:
    return int(sum(np.asarray(v.data if isinstance(v, Tensor) else v).size for v in params.values()))


def _mlp(x: Tensor, params: dict, prefix: str, last_linear: bool = False) -> Tensor:
    i = 0
    while f"{prefix}.{i}.W" in params:
        i += 1
    for j in range(i):
        x = add_bias(matmul(x, params[f"{prefix}.{j}.W"]), params[f"{prefix}.{j}.b"])
        if not (last_linear and j == i - 1):
            x = relu(x)
    return x


# ----------------------------------------------------------------------------- batching helpers


def canonical_rows(origin: np.ndarray) -> np.ndarray:
    return np.flatnonzero(origin == np.arange(len(origin)))


def _compact(origin: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-frame first-occurrence rows, padded to a common width.

    Returns ``(keep, keep_origin, expand)``: ``keep[b]`` lists the rows to
    evaluate (padded by repeating the first), ``keep_origin`` is the origin map
    within the compacted frame and ``expand[b, i]`` points every original row
    at its compacted representative.
    """
    B, N = origin.shape
    canon = [canonical_rows(o) for o in origin]
    M = max(len(c) for c in canon)
    keep = np.zeros((B, M), dtype=np.int64)
    keep_origin = np.zeros((B, M), dtype=np.int64)
    expand = np.zeros((B, N), dtype=np.int64)
    for b, c in enumerate(canon):
        keep[b, :len(c)] = c
        keep[b, len(c):] = c[0]
        keep_origin[b, :len(c)] = np.arange(len(c))
        pos_of = np.empty(N, dtype=np.int64)
        pos_of[c] = np.arange(len(c))
        expand[b] = pos_of[origin[b]]
    return keep, keep_origin, expand


def _prepare(features, positions, origin):
    feats = features.data if isinstance(features, Tensor) else np.asarray(features)
    if feats.ndim == 2:
        feats = feats[None]
        if positions is not None:
            positions = np.asarray(positions)[None]
        if origin is not None:
            origin = np.asarray(origin)[None]
    if feats.shape[1] == 0:
        raise ValueError("a frame needs at least one point")
    if feats.shape[-1] != N_FEATURES:
        raise ValueError(f"expected {N_FEATURES} features per point, got {feats.shape[-1]}")
    if positions is None:
        positions = feats[..., :2]
    positions = np.asarray(positions, dtype=np.float64)
    B, N = feats.shape[:2]
    if origin is None:
        origin = np.broadcast_to(np.arange(N), (B, N))
    origin = np.asarray(origin, dtype=np.int64)
    return feats, positions, origin


@dataclass
class GroupStats:
    """Candidate counts (points satisfying a query before truncation/fill), per query form."""

    totals: dict = field(default_factory=lambda: {f.value: 0 for f in GroupForm})
    queries: dict = field(default_factory=lambda: {f.value: 0 for f in GroupForm})

    def add(self, form: GroupForm, counts: np.ndarray):
        self.totals[form.value] += int(counts.sum())
        self.queries[form.value] += int(counts.size)

    def mean(self, form: GroupForm | None = None) -> float:
        if form is None:
            q = sum(self.queries.values())
            return sum(self.totals.values()) / q if q else 0.0
        q = self.queries[GroupForm(form).value]
        return self.totals[GroupForm(form).value] / q if q else 0.0


def _canonical_mask(origin: np.ndarray) -> np.ndarray:
    return origin == np.arange(origin.shape[1])


def group_batch(positions: np.ndarray, origin: np.ndarray, centroids: np.ndarray,
                specs: Sequence[GroupSpec]) -> list[grouping.GroupingResult]:
    """Run each query over first-occurrence rows only.

    ``centroids`` (B, M) are row indices; a duplicated centroid sits on its
    source's position and therefore gets the same group.
    """
    return grouping.query_batch(positions, centroids, specs, valid=_canonical_mask(origin))


def sample_batch(positions: np.ndarray, origin: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Farthest-point sample ``m`` first-occurrence rows per frame.

    Frames with fewer than ``m`` distinct points repeat their first sample;
    the returned origin map marks those repeats.
    """
    cent, taken = grouping.fps_batch(positions, m, valid=_canonical_mask(origin))
    steps = np.arange(m)[None, :]
    cent_origin = np.where(steps < taken[:, None], steps, 0)
    return cent, cent_origin


def interpolation_weights(fine: np.ndarray, coarse: np.ndarray, coarse_origin: np.ndarray,
                          k: int = 3, eps: float = 1e-8) -> np.ndarray:
    """Dense ``(B, Nf, Nc)`` inverse-square-distance weights over the ``k`` nearest coarse points.

    A coarse point at distance zero takes the full weight.
    """
    B, Nf = fine.shape[:2]
    Nc = coarse.shape[1]
    nn, d = grouping.knn_batch(fine, coarse, min(k, Nc), valid=_canonical_mask(coarse_origin))
    with np.errstate(divide="ignore"):
        w = 1.0 / np.maximum(d * d, eps)
    exact = d[..., 0] == 0.0
    w[exact] = 0.0
    w[exact, 0] = 1.0
    w /= w.sum(axis=-1, keepdims=True)
    W = np.zeros((B, Nf, Nc))
    np.put_along_axis(W, nn, w, axis=2)
    return W


# ----------------------------------------------------------------------------- layers


def sa_layer(positions: np.ndarray, features: Tensor, origin: np.ndarray, centroids: np.ndarray,
             group_specs: Sequence[GroupSpec], params: dict, prefix: str,
             offset_scale: float = 10.0, stats: GroupStats | None = None,
             centroid_origin: np.ndarray | None = None, dense: bool = False):
    """Set abstraction: group around ``centroids`` per spec, shared MLP, max-pool, concat.

    Grouped positions enter the MLP as centroid-local offsets divided by
    ``offset_scale``, followed by the grouped features. By default only the
    real members of each group are evaluated (fill repeats cannot change a
    max) and rows of duplicated centroids get a single-member placeholder
    group; ``dense=True`` evaluates the full fixed-size groups instead.

    Returns ``(centroid positions (B, M, 2), features Tensor (B, M, sum of widths))``.
    """
    if not group_specs:
        raise ValueError("sa_layer needs at least one group spec")
    B, N = positions.shape[:2]
    M = centroids.shape[1]
    cpos = np.take_along_axis(positions, centroids[..., None], axis=1)
    corig = origin if centroid_origin is None else centroid_origin
    real = corig == np.arange(corig.shape[1])
    flat_feat = None if dense else reshape(features, (B * N, features.shape[-1]))
    outs = []
    grouped = group_batch(positions, origin, centroids, group_specs)
    for si, (spec, res) in enumerate(zip(group_specs, grouped)):
        idx, counts = res.indices, res.counts
        if stats is not None:
            stats.add(spec.form, counts[real])
        if dense:
            gpos = positions[np.arange(B)[:, None, None], idx]
            offsets = (gpos - cpos[:, :, None, :]) / offset_scale
            gfeat = gather(features, idx, batch_dims=1)
            x = concat([Tensor(offsets.astype(features.dtype)), gfeat], axis=-1)
            outs.append(max_reduce(_mlp(x, params, f"{prefix}.s{si}"), axis=2))
            continue
        size = np.where(real, np.clip(counts, 1, spec.max_samples), 1)
        keep = np.arange(spec.max_samples)[None, None, :] < size[..., None]
        bb, mm, _ = np.nonzero(keep)
        members = idx[keep]
        offsets = (positions[bb, members] - cpos[bb, mm]) / offset_scale
        gfeat = gather(flat_feat, bb * N + members)
        x = concat([Tensor(offsets.astype(features.dtype)), gfeat], axis=-1)
        x = _mlp(x, params, f"{prefix}.s{si}")
        starts = np.r_[0, np.cumsum(size.reshape(-1))[:-1]]
        pooled = segment_max(x, starts)
        outs.append(reshape(pooled, (B, M, pooled.shape[-1])))
    return cpos, (outs[0] if len(outs) == 1 else concat(outs, axis=-1))


def fp_layer(fine_positions: np.ndarray, coarse_positions: np.ndarray, coarse_features: Tensor,
             skip_features, params: dict, prefix: str, coarse_origin: np.ndarray | None = None):
    """Feature propagation: interpolate coarse features onto fine points, concat skip, unit MLP."""
    if coarse_positions.shape[1] == 0:
        raise ValueError("no coarse points to interpolate from")
    if coarse_origin is None:
        B, Nc = coarse_positions.shape[:2]
        coarse_origin = np.broadcast_to(np.arange(Nc), (B, Nc))
    W = interpolation_weights(fine_positions, coarse_positions, coarse_origin)
    x = matmul(Tensor(W.astype(coarse_features.dtype)), coarse_features)
    if skip_features is not None:
        x = concat([x, skip_features], axis=-1)
    return _mlp(x, params, prefix)


# ----------------------------------------------------------------------------- networks


def pointnet_forward(features, params: dict, config: ModelConfig, positions=None, origin=None,
                     stats: GroupStats | None = None) -> Tensor:
    """Vanilla PointNet segmentation (no transform nets): local MLP, global max-pool, head."""
    feats, _, origin = _prepare(features, positions, origin)
    keep, _, expand = _compact(origin)
    x = Tensor(np.take_along_axis(feats, keep[..., None], axis=1))
    local = _mlp(x, params, "local")
    glob = max_reduce(_mlp(local, params, "global"), axis=1)
    B, M = keep.shape
    # broadcast the global feature to every point: row b of glob for each of M points
    g = gather(glob, np.broadcast_to(np.arange(B)[:, None], (B, M)))
    logits = _mlp(concat([local, g], axis=-1), params, "head", last_linear=True)
    return gather(logits, expand, batch_dims=1)


def pointnetpp_forward(features, params: dict, config: ModelConfig, positions=None, origin=None,
                       stats: GroupStats | None = None) -> Tensor:
    """PointNet++ segmentation: SA stack, mirrored FP stack, per-point head."""
    feats, pos, origin = _prepare(features, positions, origin)
    keep, level_origin, expand = _compact(origin)
    pos = np.take_along_axis(pos, keep[..., None], axis=1)
    x0 = Tensor(np.take_along_axis(feats, keep[..., None], axis=1))

    levels = [(pos, x0, level_origin)]
    for li, layer in enumerate(config.sa_layers):
        lpos, lfeat, lorig = levels[-1]
        if layer.n_centroids is None:
            cent, corig = np.broadcast_to(np.arange(lpos.shape[1]), lpos.shape[:2]), lorig
        else:
            cent, corig = sample_batch(lpos, lorig, layer.n_centroids)
        cpos, cfeat = sa_layer(lpos, lfeat, lorig, np.ascontiguousarray(cent), layer.specs,
                               params, f"sa{li}", config.offset_scale, stats, corig)
        levels.append((cpos, cfeat, corig))

    _, x, xorig = levels[-1]
    for li in reversed(range(len(config.sa_layers))):
        fpos, ffeat, forig = levels[li]
        cpos = levels[li + 1][0]
        x = fp_layer(fpos, cpos, x, ffeat, params, f"fp{li}", coarse_origin=xorig)
        xorig = forig
    logits = _mlp(x, params, "head", last_linear=True)
    return gather(logits, expand, batch_dims=1)


class SegmentationModel:
    """Parameters plus configuration; ``forward`` builds a differentiable graph."""

    def __init__(self, config: ModelConfig, params: dict | None = None, dtype=np.float32):
        self.config = config
        raw = params if params is not None else init_params(config, dtype)
        self.params = {k: Tensor(np.asarray(v, dtype=dtype), requires_grad=True, name=k)
                       for k, v in raw.items()}

    @property
    def variant(self) -> Variant:
        return self.config.variant

    def num_params(self) -> int:
        return count_params(self.params)

    def forward(self, features, positions=None, origin=None, stats: GroupStats | None = None) -> Tensor:
        if self.config.variant == Variant.POINTNET:
            return pointnet_forward(features, self.params, self.config, positions, origin, stats)
        return pointnetpp_forward(features, self.params, self.config, positions, origin, stats)

    def predict(self, features, positions=None, origin=None,
                stats: GroupStats | None = None) -> SegmentationOutput:
        with no_grad():
            logits = self.forward(features, positions, origin, stats).data
        if np.ndim(features) == 2:
            logits = logits[0]
        return SegmentationOutput(logits)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def save(self, path, extra: dict | None = None):
        meta = {"format": MODEL_FORMAT, "config": self.config.to_dict()}
        if extra:
            meta["extra"] = extra
        save_params(path, self.state(), meta)

    @classmethod
    def load(cls, path, dtype=np.float32) -> tuple["SegmentationModel", dict]:
        params, meta = load_params(path)
        if meta.get("format") != MODEL_FORMAT:
            raise ValueError(f"{path}: not a {MODEL_FORMAT} checkpoint")
        model = cls(ModelConfig.from_dict(meta["config"]), params, dtype)
        return model, meta.get("extra", {})
