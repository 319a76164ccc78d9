"""SVG scatter plots of single radar frames.

Targets are drawn in sensor coordinates with x pointing up (forward) and y to
the left, so the plot reads like a bird's-eye view. Marker area follows RCS;
moving targets get an arrow along the line of sight whose length follows the
compensated Doppler velocity.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .core import Label, RadarFrame

ARROW_THRESHOLD = 1.0  # m/s; slower targets are drawn without an arrow

COLORS = {
    "stationary": "#7f7f7f",
    "moving": "#1f77b4",
    "anomalous": "#d62728",
    "TP": "#2ca02c",
    "FN": "#ff7f0e",
    "FP": "#9467bd",
    "TN": "#7f7f7f",
}


def point_categories(frame: RadarFrame, predictions: Sequence[int] | None = None) -> list[str]:
    """Ground-truth categories, or confusion categories when predictions are given."""
    labels = frame.labels
    if predictions is None:
        return [
            "anomalous" if lab == Label.ANOMALOUS
            else ("moving" if abs(t.v_d_comp) > ARROW_THRESHOLD else "stationary")
            for t, lab in zip(frame.targets, labels)
        ]
    pred = np.asarray(predictions)
    if pred.shape != labels.shape:
        raise ValueError(f"frame {frame.frame_id}: {len(pred)} predictions for {len(labels)} targets")
    table = {(1, 1): "TP", (0, 1): "FN", (1, 0): "FP", (0, 0): "TN"}
    return [table[int(p), int(t)] for p, t in zip(pred, labels)]


def _marker_radius(rcs: float) -> float:
    # about 1 px per 5 dBsm, clipped so that weak targets stay visible
    return float(np.clip(3.0 + rcs / 5.0, 1.5, 9.0))


def render_frame(frame: RadarFrame, predictions: Sequence[int] | None = None, *,
                 size: int = 600, margin: int = 50, arrow_scale: float = 0.5) -> str:
    """Return the SVG document for one frame. ``arrow_scale`` is meters per m/s."""
    xy = frame.positions
    cats = point_categories(frame, predictions)
    # world extent: always include the sensor origin
    lo = np.minimum(xy.min(axis=0), 0.0) - 2.0
    hi = np.maximum(xy.max(axis=0), 0.0) + 2.0
    span = float(max(hi[0] - lo[0], hi[1] - lo[1]))
    scale = (size - 2 * margin) / span

    def to_px(x: float, y: float) -> tuple[float, float]:
        # forward (x) is up, left (+y) is left
        return margin + (hi[1] - y) * scale, margin + (hi[0] - x) * scale

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f"<title>{escape(f'frame {frame.frame_id} ({frame.sensor_id.value}, {frame.scenario.value})')}</title>",
        '<defs><marker id="head" markerWidth="6" markerHeight="6" refX="5" refY="3" '
        'orient="auto"><path d="M0,0 L6,3 L0,6 z" fill="#333"/></marker></defs>',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
    ]
    # axes through the origin
    ox, oy = to_px(0.0, 0.0)
    out.append(f'<line class="axis" x1="{margin}" y1="{oy:.2f}" x2="{size - margin}" y2="{oy:.2f}" stroke="#ccc"/>')
    out.append(f'<line class="axis" x1="{ox:.2f}" y1="{margin}" x2="{ox:.2f}" y2="{size - margin}" stroke="#ccc"/>')
    out.append(f'<text x="{size / 2:.0f}" y="{size - 12}" text-anchor="middle" font-size="12">y [m]</text>')
    out.append(f'<text x="14" y="{size / 2:.0f}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 14 {size / 2:.0f})">x [m]</text>')
    step = 10.0 if span > 30 else 5.0
    for tick in np.arange(math.ceil(lo[1] / step) * step, hi[1], step):
        px, _ = to_px(0.0, tick)
        out.append(f'<text class="tick" x="{px:.2f}" y="{size - margin + 14}" text-anchor="middle" '
                   f'font-size="10">{tick:g}</text>')
    for tick in np.arange(math.ceil(lo[0] / step) * step, hi[0], step):
        _, py = to_px(tick, 0.0)
        out.append(f'<text class="tick" x="{margin - 6}" y="{py + 3:.2f}" text-anchor="end" '
                   f'font-size="10">{tick:g}</text>')

    for t in frame.targets:
        if abs(t.v_d_comp) <= ARROW_THRESHOLD:
            continue
        r = math.hypot(t.x, t.y)
        ux, uy = (t.x / r, t.y / r) if r > 0 else (1.0, 0.0)
        x0, y0 = to_px(t.x, t.y)
        x1, y1 = to_px(t.x + ux * t.v_d_comp * arrow_scale, t.y + uy * t.v_d_comp * arrow_scale)
        out.append(f'<line class="arrow" x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" '
                   'stroke="#333" stroke-width="1" marker-end="url(#head)"/>')
    for t, cat in zip(frame.targets, cats):
        px, py = to_px(t.x, t.y)
        out.append(f'<circle class="{cat}" cx="{px:.2f}" cy="{py:.2f}" r="{_marker_radius(t.rcs):.2f}" '
                   f'fill="{COLORS[cat]}" fill-opacity="0.8"/>')
    # legend
    used = [c for c in COLORS if c in cats]
    for i, cat in enumerate(used):
        y = margin + 14 * i
        out.append(f'<circle cx="{size - margin + 8}" cy="{y}" r="4" fill="{COLORS[cat]}"/>')
        out.append(f'<text x="{size - margin + 15}" y="{y + 4}" font-size="10">{cat}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path: str | Path, frame: RadarFrame, predictions: Sequence[int] | None = None) -> None:
    Path(path).write_text(render_frame(frame, predictions), encoding="utf-8")
