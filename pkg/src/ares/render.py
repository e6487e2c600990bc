"""Static SVG rendering of flock trajectories: one frame per key state."""

from __future__ import annotations

import math
import os
from typing import Sequence

import numpy as np

from .flock import FlockAction, FlockConfig, FlockParams, fitness, flock_step, project_action

_CANVAS = 640.0
_MARGIN = 60.0


def plan_states(
    initial: FlockConfig,
    blocks: Sequence[Sequence[np.ndarray]],
    params: FlockParams,
) -> list[FlockConfig]:
    """States at the initial configuration and after each committed block."""
    states = [initial]
    c = initial
    for block in blocks:
        for flat in block:
            a = FlockAction(np.asarray(flat, dtype=float).reshape(c.b, 2))
            c = flock_step(c, project_action(a, c, params), params)
        states.append(c)
    return states


def _world_box(states: Sequence[FlockConfig], params: FlockParams):
    pts = np.concatenate([c.x for c in states], axis=0)
    lo = pts.min(axis=0) - (params.w + 1.0)
    hi = pts.max(axis=0) + (params.w + 1.0)
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
    center = 0.5 * (lo + hi)
    return center, span


def _svg_frame(
    c: FlockConfig, params: FlockParams, label: str, center, span
) -> str:
    scale = (_CANVAS - 2.0 * _MARGIN) / span

    def to_px(p):
        # world -> screen, y axis flipped
        sx = _CANVAS / 2.0 + (p[0] - center[0]) * scale
        sy = _CANVAS / 2.0 - (p[1] - center[1]) * scale
        return sx, sy

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_CANVAS:.0f}" '
        f'height="{_CANVAS:.0f}" viewBox="0 0 {_CANVAS:.0f} {_CANVAS:.0f}">',
        f'<rect width="{_CANVAS:.0f}" height="{_CANVAS:.0f}" fill="white"/>',
        f'<text x="12" y="22" font-family="monospace" font-size="14" '
        f'fill="#333">{label}</text>',
    ]
    for i in range(c.b):
        pos = c.x[i]
        vel = c.v[i]
        speed = float(np.linalg.norm(vel))
        unit = vel / speed if speed > 0 else np.array([1.0, 0.0])
        perp = np.array([-unit[1], unit[0]])
        w1 = to_px(pos + 0.5 * params.w * perp)
        w2 = to_px(pos - 0.5 * params.w * perp)
        tail = to_px(pos)
        head = to_px(pos + vel)
        parts.append(
            f'<line x1="{w1[0]:.2f}" y1="{w1[1]:.2f}" x2="{w2[0]:.2f}" '
            f'y2="{w2[1]:.2f}" stroke="#444" stroke-width="2.5"/>'
        )
        parts.append(
            f'<line x1="{tail[0]:.2f}" y1="{tail[1]:.2f}" x2="{head[0]:.2f}" '
            f'y2="{head[1]:.2f}" stroke="#4682b4" stroke-width="1.5"/>'
        )
        # arrowhead: two short strokes at +-150 degrees off the heading
        ang = math.atan2(head[1] - tail[1], head[0] - tail[0])
        for off in (2.618, -2.618):
            hx = head[0] + 7.0 * math.cos(ang + off)
            hy = head[1] + 7.0 * math.sin(ang + off)
            parts.append(
                f'<line x1="{head[0]:.2f}" y1="{head[1]:.2f}" x2="{hx:.2f}" '
                f'y2="{hy:.2f}" stroke="#4682b4" stroke-width="1.5"/>'
            )
        parts.append(
            f'<circle cx="{tail[0]:.2f}" cy="{tail[1]:.2f}" r="3" fill="#111"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def render_plan_frames(
    initial: FlockConfig,
    blocks: Sequence[Sequence[np.ndarray]],
    params: FlockParams,
    out_dir: str,
) -> list[str]:
    """Write one SVG per key frame (initial, each level, final); the final
    level doubles as the final frame. Returns the written paths."""
    states = plan_states(initial, blocks, params)
    center, span = _world_box(states, params)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    last = len(states) - 1
    for idx, state in enumerate(states):
        if idx == 0:
            stem = "frame_000_initial"
        elif idx == last:
            stem = f"frame_{idx:03d}_final"
        else:
            stem = f"frame_{idx:03d}_level{idx:03d}"
        label = (
            f"{stem.split('_', 2)[-1]}  J={fitness(state, params):.6g}  "
            f"birds={state.b}"
        )
        path = os.path.join(out_dir, stem + ".svg")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(_svg_frame(state, params, label, center, span))
            fh.write("\n")
        paths.append(path)
    return paths
