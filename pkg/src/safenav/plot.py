"""Deterministic SVG rendering of a map, its cost band and agent trajectories."""

from __future__ import annotations

from pathlib import Path

from safenav import envsim
from safenav.executor import Trajectory

SCALE = 10.0
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22"]


def _f(v: float) -> str:
    return f"{v:.2f}"


def render_svg(m: envsim.Map, trajectories: list[tuple[str, Trajectory]] | None = None) -> str:
    """SVG text for ``m`` with one polyline per (run, agent) trajectory.

    The cost field is drawn as two bands: cost >= 1 (within r/2 of an obstacle)
    and cost > 0 (within r).
    """
    w, h = m.width * SCALE, m.height * SCALE
    r = m.influence_radius

    def X(x):
        return _f(x * SCALE)

    def Y(y):
        return _f((m.height - y) * SCALE)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(w)}" height="{_f(h)}" '
        f'viewBox="0 0 {_f(w)} {_f(h)}">',
        '<defs><clipPath id="bounds"><rect x="0" y="0" '
        f'width="{_f(w)}" height="{_f(h)}"/></clipPath></defs>',
        f'<rect x="0" y="0" width="{_f(w)}" height="{_f(h)}" fill="#ffffff" stroke="#000000"/>',
        '<g clip-path="url(#bounds)">',
    ]
    for pad, color in ((r, "#fde0c5"), (r / 2, "#f9b384")):
        for o in m.rects:
            out.append(f'<rect x="{X(o.x0 - pad)}" y="{Y(o.y1 + pad)}" '
                       f'width="{_f((o.x1 - o.x0 + 2 * pad) * SCALE)}" '
                       f'height="{_f((o.y1 - o.y0 + 2 * pad) * SCALE)}" rx="{_f(pad * SCALE)}" '
                       f'fill="{color}"/>')
        for c in m.circles:
            out.append(f'<circle cx="{X(c.cx)}" cy="{Y(c.cy)}" r="{_f((c.radius + pad) * SCALE)}" '
                       f'fill="{color}"/>')
    for o in m.rects:
        out.append(f'<rect x="{X(o.x0)}" y="{Y(o.y1)}" width="{_f((o.x1 - o.x0) * SCALE)}" '
                   f'height="{_f((o.y1 - o.y0) * SCALE)}" fill="#404040"/>')
    for c in m.circles:
        out.append(f'<circle cx="{X(c.cx)}" cy="{Y(c.cy)}" r="{_f(c.radius * SCALE)}" fill="#404040"/>')
    out.append("</g>")
    for k, (run_id, tr) in enumerate(trajectories or []):
        if len(tr) == 0:
            continue
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{X(x)},{Y(y)}" for x, y in tr.pos)
        out.append(f'<polyline data-run="{run_id}" data-agent="{tr.agent_id}" points="{pts}" '
                   f'fill="none" stroke="{color}" stroke-width="2"/>')
        (sx, sy), (gx, gy) = tr.pos[0], tr.pos[-1]
        out.append(f'<circle cx="{X(sx)}" cy="{Y(sy)}" r="4" fill="{color}"/>')
        out.append(f'<rect x="{_f(gx * SCALE - 4)}" y="{_f((m.height - gy) * SCALE - 4)}" '
                   f'width="8" height="8" fill="none" stroke="{color}" stroke-width="2"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_file(m: envsim.Map, runs: dict[str, list[Trajectory]], out: str | Path,
              run_id: str | None = None) -> int:
    """Write the SVG; returns the number of polylines drawn."""
    selected = [(rid, tr) for rid in sorted(runs) if run_id is None or rid == run_id
                for tr in runs[rid]]
    Path(out).write_text(render_svg(m, selected))
    return sum(1 for _, tr in selected if len(tr))
