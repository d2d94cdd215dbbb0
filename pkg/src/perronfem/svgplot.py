"""Deterministic SVG heatmaps of nodal fields on triangular meshes.

Triangles are flat-shaded by the mean of their vertex values through a
fixed five-stop color ramp; output bytes depend only on the input arrays,
so images can be diffed across runs.
"""

from __future__ import annotations

import numpy as np

from .mesh import TriMesh

# five-stop ramp, dark blue -> teal -> green -> yellow
_RAMP = (
    (0.0, (68, 1, 84)),
    (0.25, (59, 82, 139)),
    (0.5, (33, 145, 140)),
    (0.75, (94, 201, 98)),
    (1.0, (253, 231, 37)),
)

_CANVAS = 420.0
_MARGIN = 20.0


def _color(s: float) -> str:
    s = min(max(s, 0.0), 1.0)
    for (s0, c0), (s1, c1) in zip(_RAMP, _RAMP[1:]):
        if s <= s1:
            w = 0.0 if s1 == s0 else (s - s0) / (s1 - s0)
            rgb = tuple(round(a + w * (b - a)) for a, b in zip(c0, c1))
            return "#%02x%02x%02x" % rgb
    return "#%02x%02x%02x" % _RAMP[-1][1]


def render_heatmap(field: np.ndarray, mesh: TriMesh) -> str:
    """SVG document for a nodal field; a constant field renders in the low
    ramp color with the (equal) min and max annotated."""
    field = np.asarray(field, dtype=float)
    if field.shape != (mesh.n_vertices,):
        raise ValueError(f"field must have one value per vertex "
                         f"({mesh.n_vertices}), got shape {field.shape}")

    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    span = hi - lo
    scale = (_CANVAS - 2 * _MARGIN) / max(span[0], span[1], 1e-300)

    def to_px(p):
        x = _MARGIN + (p[0] - lo[0]) * scale
        y = _MARGIN + (hi[1] - p[1]) * scale  # flip: SVG y grows downward
        return x, y

    vmin = float(field.min())
    vmax = float(field.max())
    # nonnegative fields are colored on [0, max]: zero values (eliminated
    # boundary nodes) get the bottom of the ramp, strictly positive fields
    # never touch it
    lo_anchor = 0.0 if vmin >= 0.0 else vmin
    width = _CANVAS
    height = 2 * _MARGIN + span[1] * scale + 24.0

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1f}" '
        f'height="{height:.1f}" viewBox="0 0 {width:.1f} {height:.1f}">',
        f'<rect width="{width:.1f}" height="{height:.1f}" fill="white"/>',
    ]
    means = field[mesh.triangles].mean(axis=1)
    for tri, mean in zip(mesh.triangles, means):
        s = 1.0 if vmax == lo_anchor else (mean - lo_anchor) / (vmax - lo_anchor)
        pts = " ".join("%.3f,%.3f" % to_px(mesh.vertices[v]) for v in tri)
        parts.append(f'<polygon points="{pts}" fill="{_color(float(s))}" '
                     f'stroke="none"/>')
    label = (f"min = max = {vmin!r}" if vmin == vmax
             else f"min = {vmin!r}  max = {vmax!r}")
    parts.append(f'<text x="{_MARGIN:.1f}" y="{height - 8.0:.1f}" '
                 f'font-family="monospace" font-size="12">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_heatmap(field: np.ndarray, mesh: TriMesh, path) -> None:
    """Write the heatmap to a file (bytes are deterministic)."""
    svg = render_heatmap(field, mesh)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(svg)


def render_strip(fields: np.ndarray, times: np.ndarray, mesh: TriMesh,
                 max_frames: int = 6) -> str:
    """Row of mini heatmaps at evenly spaced times, shared color scale."""
    fields = np.asarray(fields, dtype=float)
    times = np.asarray(times, dtype=float)
    n_frames = min(max_frames, len(times))
    picks = np.unique(np.linspace(0, len(times) - 1, n_frames).round()
                      .astype(int))

    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    span = hi - lo
    cell = 150.0
    pad = 12.0
    scale = (cell - 2 * pad) / max(span[0], span[1], 1e-300)
    vmin = float(fields[picks].min())
    vmax = float(fields[picks].max())

    width = cell * len(picks)
    height = 2 * pad + span[1] * scale + 20.0
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1f}" '
        f'height="{height:.1f}" viewBox="0 0 {width:.1f} {height:.1f}">',
        f'<rect width="{width:.1f}" height="{height:.1f}" fill="white"/>',
    ]
    for frame, k in enumerate(picks):
        x0 = frame * cell + pad
        field = fields[k]
        means = field[mesh.triangles].mean(axis=1)
        for tri, mean in zip(mesh.triangles, means):
            s = 0.0 if vmax == vmin else (mean - vmin) / (vmax - vmin)
            pts = " ".join(
                "%.3f,%.3f" % (x0 + (mesh.vertices[v][0] - lo[0]) * scale,
                               pad + (hi[1] - mesh.vertices[v][1]) * scale)
                for v in tri)
            parts.append(f'<polygon points="{pts}" '
                         f'fill="{_color(float(s))}" stroke="none"/>')
        parts.append(f'<text x="{x0:.1f}" y="{height - 6.0:.1f}" '
                     f'font-family="monospace" font-size="10">'
                     f't = {times[k]:.6g}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
