"""Neighborhood queries for set-abstraction layers.

All kernels are exact scans over every point pair; radar frames carry at
most 250 points, so no spatial index is needed. Orderings are fully
deterministic: ties in the primary key are resolved by range, azimuth and
finally index, which keeps outputs permutation-equivariant and training
reproducible.

Each query exists in a single-cloud form (``ball_query``, ``ring_query``,
``fps``, ``knn``) and a batched form working on ``(B, N, 2)`` arrays with a
per-point ``valid`` mask; invalid points are never selected. The single-cloud
functions are thin wrappers around the batched ones.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import polar_arrays


class GroupForm(str, enum.Enum):
    CIRCLE = "circle"
    RING = "ring"


@dataclass(frozen=True)
class GroupSpec:
    """One neighborhood query: a ball of radius ``size`` or an origin-centred ring of width ``size``."""

    form: GroupForm
    size: float
    max_samples: int

    def __post_init__(self):
        object.__setattr__(self, "form", GroupForm(self.form))
        if not self.size > 0:
            raise ValueError(f"group size must be > 0, got {self.size}")
        if int(self.max_samples) < 1:
            raise ValueError(f"max_samples must be >= 1, got {self.max_samples}")
        object.__setattr__(self, "max_samples", int(self.max_samples))

    def to_dict(self) -> dict:
        return {"form": self.form.value, "size": self.size, "max_samples": self.max_samples}

    @classmethod
    def from_dict(cls, d: dict) -> "GroupSpec":
        return cls(GroupForm(d["form"]), float(d["size"]), int(d["max_samples"]))


@dataclass(frozen=True)
class GroupingResult:
    """Per-centroid index lists (``indices[c]`` has length ``max_samples``).

    ``counts[c]`` is the number of points that satisfied the query before
    truncation and fill; it feeds the candidate-count statistics.
    """

    indices: np.ndarray
    counts: np.ndarray

    def groups(self) -> list[list[int]]:
        return [list(map(int, row)) for row in self.indices]


# ----------------------------------------------------------------------------- helpers


def _as_batch(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 3 or pts.shape[-1] != 2:
        raise ValueError(f"expected points of shape (B, N, 2), got {pts.shape}")
    if pts.shape[1] == 0:
        raise ValueError("empty point cloud")
    return pts


def _valid_mask(points: np.ndarray, valid) -> np.ndarray:
    if valid is None:
        return np.ones(points.shape[:2], dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != points.shape[:2]:
        raise ValueError(f"valid mask shape {valid.shape} does not match points {points.shape[:2]}")
    if not valid.any(axis=1).all():
        raise ValueError("empty point cloud (no valid points)")
    return valid


def _tie_order(points: np.ndarray, by_azimuth_first: bool) -> np.ndarray:
    """Per-frame permutation sorting points by the secondary keys, then index."""
    r, phi = polar_arrays(points)
    idx = np.broadcast_to(np.arange(points.shape[1]), r.shape)
    keys = (idx, r, phi) if by_azimuth_first else (idx, phi, r)
    return np.lexsort(keys, axis=-1)


def _sorted_candidates(primary: np.ndarray, valid: np.ndarray, tie_perm: np.ndarray):
    """Order every centroid's candidates by (primary, secondary keys, index).

    A stable sort over points already arranged in tie-break order yields the
    full lexicographic order with a single argsort.
    """
    key = np.where(valid[:, None, :], primary, np.inf)
    key = np.take_along_axis(key, tie_perm[:, None, :], axis=2)
    order = np.argsort(key, axis=2, kind="stable")
    sorted_key = np.take_along_axis(key, order, axis=2)
    return np.take_along_axis(np.broadcast_to(tie_perm[:, None, :], key.shape), order, axis=2), sorted_key


def _fill(chosen: np.ndarray, counts: np.ndarray, centroids: np.ndarray, k: int) -> np.ndarray:
    B, M, n = chosen.shape
    if n < k:
        chosen = np.concatenate([chosen, np.repeat(chosen[..., :1], k - n, axis=2)], axis=2)
    else:
        chosen = chosen[..., :k]
    first = np.where(counts > 0, chosen[..., 0], centroids)
    slot = np.arange(k)[None, None, :]
    return np.where(slot < counts[..., None], chosen, first[..., None]).astype(np.int64)


def _check_centroids(centroids, B: int, N: int) -> np.ndarray:
    c = np.asarray(centroids)
    if not np.issubdtype(c.dtype, np.integer) or c.ndim != 2 or c.shape[0] != B:
        raise ValueError(f"centroids must be integer indices of shape (B, M), got {c.shape}")
    if c.size and (c.min() < 0 or c.max() >= N):
        raise IndexError("centroid index out of range")
    return c.astype(np.int64)


# ----------------------------------------------------------------------------- batched kernels


def query_batch(points, centroids, specs: Sequence[GroupSpec], valid=None) -> list[GroupingResult]:
    """Run several group specs over a batch, sharing one sort per query form.

    ``points`` is ``(B, N, 2)``, ``centroids`` ``(B, M)`` point indices and
    ``valid`` an optional ``(B, N)`` mask of selectable points. Returns one
    :class:`GroupingResult` per spec with ``indices (B, M, K)``, ``counts (B, M)``.
    """
    pts = _as_batch(points)
    B, N = pts.shape[:2]
    valid = _valid_mask(pts, valid)
    cent = _check_centroids(centroids, B, N)
    for s in specs:
        if not isinstance(s, GroupSpec):
            raise TypeError("specs must be GroupSpec instances")
    results: list[GroupingResult | None] = [None] * len(specs)
    cpos = np.take_along_axis(pts, cent[..., None], axis=1)
    for form in GroupForm:
        members = [i for i, s in enumerate(specs) if s.form == form]
        if not members:
            continue
        if form == GroupForm.CIRCLE:
            diff = cpos[:, :, None, :] - pts[:, None, :, :]
            primary = np.hypot(diff[..., 0], diff[..., 1])
            tie = _tie_order(pts, by_azimuth_first=False)
            bounds = [specs[i].size for i in members]
        else:
            r, _ = polar_arrays(pts)
            rc = np.take_along_axis(r, cent, axis=1)
            primary = np.abs(rc[:, :, None] - r[:, None, :])
            tie = _tie_order(pts, by_azimuth_first=True)
            bounds = [specs[i].size / 2.0 for i in members]
        kmax = max(specs[i].max_samples for i in members)
        order, skey = _sorted_candidates(primary, valid, tie)
        order, skey = order[..., :kmax], skey[..., :kmax]
        inside = np.where(valid[:, None, :], primary, np.inf)
        for i, bound in zip(members, bounds):
            counts = (inside <= bound).sum(axis=2)
            results[i] = GroupingResult(_fill(order, counts, cent, specs[i].max_samples), counts)
    return results  # type: ignore[return-value]


def fps_batch(points, m: int, valid=None) -> tuple[np.ndarray, np.ndarray]:
    """Farthest-point sampling per frame over valid points.

    Returns ``(indices (B, m), taken (B,))`` where frames with fewer than
    ``m`` valid points repeat their first sample after ``taken`` picks.
    """
    pts = _as_batch(points)
    B, N = pts.shape[:2]
    valid = _valid_mask(pts, valid)
    if m < 1:
        raise ValueError("m must be >= 1")
    r, phi = polar_arrays(pts)
    perm = np.lexsort((np.broadcast_to(np.arange(N), r.shape), phi, -r), axis=-1)
    rank = np.empty_like(perm)
    np.put_along_axis(rank, perm, np.broadcast_to(np.arange(N), perm.shape), axis=1)
    big = N + 1
    rows = np.arange(B)
    start = np.argmin(np.where(valid, rank, big), axis=1)
    out = np.empty((B, m), dtype=np.int64)
    out[:, 0] = start
    taken = valid.sum(axis=1).clip(max=m)
    picked = ~valid
    picked[rows, start] = True
    min_d = np.hypot(*(pts - pts[rows, start][:, None, :]).transpose(2, 0, 1))
    for step in range(1, m):
        cand = np.where(picked, -np.inf, min_d)
        best = cand.max(axis=1)
        tie = (cand == best[:, None]) & ~picked
        nxt = np.argmin(np.where(tie, rank, big), axis=1)
        nxt = np.where(step < taken, nxt, out[:, 0])
        out[:, step] = nxt
        picked[rows, nxt] = True
        np.minimum(min_d, np.hypot(*(pts - pts[rows, nxt][:, None, :]).transpose(2, 0, 1)), out=min_d)
    return out, taken


def knn_batch(query_points, reference, k: int, valid=None) -> tuple[np.ndarray, np.ndarray]:
    """``k`` nearest valid reference points per query point, ties by (range, azimuth, index).

    Returns ``(indices (B, Q, k), distances (B, Q, k))``; if a frame has fewer
    than ``k`` valid references the surplus slots carry distance ``inf``.
    """
    ref = _as_batch(reference)
    q = np.asarray(query_points, dtype=np.float64)
    if q.ndim != 3 or q.shape[0] != ref.shape[0]:
        raise ValueError(f"query shape {q.shape} does not match reference {ref.shape}")
    valid = _valid_mask(ref, valid)
    if k < 1:
        raise ValueError("k must be >= 1")
    diff = q[:, :, None, :] - ref[:, None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    order, skey = _sorted_candidates(dist, valid, _tie_order(ref, by_azimuth_first=False))
    if order.shape[2] < k:
        raise ValueError(f"k={k} exceeds the reference size {order.shape[2]}")
    return order[..., :k].astype(np.int64), skey[..., :k]


# ----------------------------------------------------------------------------- single-cloud API


def _as_cloud(cloud) -> np.ndarray:
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 2)
    if cloud.shape[0] == 0:
        raise ValueError("empty point cloud")
    return cloud


def _centroid_indices(cloud: np.ndarray, centroids) -> np.ndarray:
    """Accept centroid indices (1-D ints) or centroid positions that are cloud members."""
    c = np.asarray(centroids)
    if c.ndim == 1 and np.issubdtype(c.dtype, np.integer):
        if c.size and (c.min() < 0 or c.max() >= cloud.shape[0]):
            raise IndexError("centroid index out of range")
        return c.astype(np.int64)
    pos = np.asarray(c, dtype=np.float64).reshape(-1, 2)
    d2 = ((pos[:, None, :] - cloud[None, :, :]) ** 2).sum(-1)
    idx = d2.argmin(axis=1)
    if not np.all(d2[np.arange(len(idx)), idx] == 0.0):
        raise ValueError("centroids must be members of the cloud")
    return idx


def _single(cloud, centroids, spec: GroupSpec) -> GroupingResult:
    cloud = _as_cloud(cloud)
    cidx = _centroid_indices(cloud, centroids)
    res = query_batch(cloud[None], cidx[None], [spec])[0]
    return GroupingResult(res.indices[0], res.counts[0])


def ball_query(cloud, centroids, radius: float, k: int) -> GroupingResult:
    """The ``k`` nearest points within ``radius`` (inclusive) of each centroid.

    Groups are ordered by (distance, range, azimuth); short groups are padded
    by repeating their first member, and a centroid with no neighbours at all
    gets its own index.
    """
    if not radius > 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    return _single(cloud, centroids, GroupSpec(GroupForm.CIRCLE, radius, k))


def ring_query(cloud, centroids, width: float, k: int) -> GroupingResult:
    """The ``k`` points whose range differs least from the centroid's, within ``width / 2``.

    The ring is centred on the sensor origin and spans the full field of view.
    Groups are ordered by (|range difference|, azimuth, range).
    """
    if not width > 0:
        raise ValueError(f"width must be > 0, got {width}")
    return _single(cloud, centroids, GroupSpec(GroupForm.RING, width, k))


def query(cloud, centroids, spec: GroupSpec) -> GroupingResult:
    return _single(cloud, centroids, spec)


def fps(cloud, m: int) -> np.ndarray:
    """Farthest-point sampling of ``m`` distinct indices.

    Starts from the farthest point from the origin (ties: smaller azimuth,
    then index) and repeatedly adds the point farthest from the selected set,
    breaking ties by larger range, smaller azimuth, smaller index.
    """
    cloud = _as_cloud(cloud)
    n = cloud.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"cannot sample {m} of {n} points")
    return fps_batch(cloud[None], m)[0][0]


def knn(query_points, reference, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and distances of the ``k`` nearest reference points for each query point.

    Ties in distance are broken by (range, azimuth, index) of the reference point.
    """
    reference = _as_cloud(reference)
    q = np.asarray(query_points, dtype=np.float64).reshape(-1, 2)
    n = reference.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must be within 1..{n}")
    idx, dist = knn_batch(q[None], reference[None], k)
    return idx[0], dist[0]
