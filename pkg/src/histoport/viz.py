"""Dependency-free EOH pictures: a PPM heatmap and an SVG arrow overlay."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

# blue -> teal -> yellow ramp, sampled at five anchors
_ANCHORS = np.array([[48, 18, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]], dtype=np.float64)


def colormap(values) -> np.ndarray:
    """Map values in ``[0, 1]`` to ``uint8`` RGB."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * (len(_ANCHORS) - 1)
    lo = np.minimum(np.floor(v).astype(int), len(_ANCHORS) - 2)
    t = (v - lo)[..., None]
    return np.round(_ANCHORS[lo] * (1 - t) + _ANCHORS[lo + 1] * t).astype(np.uint8)


def max_bin_map(eoh: np.ndarray) -> np.ndarray:
    """Per-pixel maximal bin value, rescaled so a uniform histogram reads 0 and a delta reads 1."""
    eoh = np.asarray(eoh, dtype=np.float64)
    m = eoh.shape[0]
    return (eoh.max(axis=0) - 1.0 / m) / (1.0 - 1.0 / m)


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    # the header is three newline-terminated lines, as written by write_ppm
    magic, dims, depth, body = raw.split(b"\n", 3)
    if magic != b"P6" or depth != b"255":
        raise ValueError("not an 8-bit binary PPM")
    w, h = (int(t) for t in dims.split())
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)


def eoh_heatmap(path, eoh: np.ndarray) -> np.ndarray:
    rgb = colormap(max_bin_map(eoh))
    write_ppm(path, rgb)
    return rgb


def eoh_arrows_svg(eoh: np.ndarray, stride: int = 8, scale: float | None = None, background=None) -> str:
    """One segment per bin at every ``stride``-th pixel; length is proportional to the bin value.

    Bin ``k`` points along ``2 pi k / M`` (counter-clockwise from +x, y up).
    """
    eoh = np.asarray(eoh, dtype=np.float64)
    m, h, w = eoh.shape
    if stride < 1:
        raise ValueError("stride must be positive")
    scale = stride * 0.9 if scale is None else scale
    px = 4  # svg units per pixel
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * px}" height="{h * px}" viewBox="0 0 {w * px} {h * px}">']
    if background is not None:
        bg = colormap(max_bin_map(background) if background.ndim == 3 else background)
        out.append('<g shape-rendering="crispEdges">')
        for r in range(h):
            for c in range(w):
                R, Gc, B = bg[r, c]
                out.append(f'<rect x="{c * px}" y="{r * px}" width="{px}" height="{px}" fill="rgb({R},{Gc},{B})"/>')
        out.append("</g>")
    dirs = [(math.cos(2 * math.pi * k / m), -math.sin(2 * math.pi * k / m)) for k in range(m)]
    out.append('<g stroke="black" stroke-width="0.6">')
    for r in range(0, h, stride):
        for c in range(0, w, stride):
            x0, y0 = (c + 0.5) * px, (r + 0.5) * px
            for k, (dx, dy) in enumerate(dirs):
                length = eoh[k, r, c] * scale * px
                out.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x0 + dx * length:.2f}" y2="{y0 + dy * length:.2f}"/>')
    out.append("</g></svg>")
    return "\n".join(out) + "\n"


__all__ = ["colormap", "max_bin_map", "write_ppm", "read_ppm", "eoh_heatmap", "eoh_arrows_svg"]
