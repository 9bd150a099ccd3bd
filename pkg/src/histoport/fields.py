"""Representation-typed feature fields and their rotation.

Pixel ``(r, c)`` of an ``H x W`` raster sits at the spatial coordinate
``x = c - (W - 1) / 2``, ``y = (H - 1) / 2 - r`` (x right, y up, origin at
the raster center).  Rotating a raster by ``theta`` means
``out(p) = in(R(theta)^-1 p)``; a quarter turn therefore equals
``np.rot90(img, 1)`` on the last two axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .groups import GroupElement, RepSpec, rep_matrix

HALF_PI = math.pi / 2


@dataclass
class FeatureField:
    """``K`` feature fields of dimension ``rep.dim`` on an ``H x W`` raster."""

    tensor: np.ndarray
    rep: RepSpec

    def __post_init__(self):
        self.tensor = np.asarray(self.tensor, dtype=np.float64)
        if self.tensor.ndim != 4:
            raise ValueError("feature field tensor must be K x D x H x W")
        if self.tensor.shape[1] != self.rep.dim:
            raise ValueError(f"group dimension {self.tensor.shape[1]} does not match {self.rep} (dim {self.rep.dim})")
        if min(self.tensor.shape[2:]) < 1:
            raise ValueError("empty raster")

    @property
    def k(self) -> int:
        return self.tensor.shape[0]

    @property
    def spatial(self) -> tuple[int, int]:
        return self.tensor.shape[2], self.tensor.shape[3]

    def flat(self) -> np.ndarray:
        """Channels-first ``(K * D, H, W)`` layout used by the networks."""
        k, d, h, w = self.tensor.shape
        return self.tensor.reshape(k * d, h, w)

    @classmethod
    def from_flat(cls, data, rep: RepSpec) -> FeatureField:
        data = np.asarray(data, dtype=np.float64)
        c, h, w = data.shape
        if c % rep.dim:
            raise ValueError(f"{c} channels cannot hold fields of dimension {rep.dim}")
        return cls(data.reshape(c // rep.dim, rep.dim, h, w), rep)


def _quarter_turns(theta: float, tol: float = 1e-12) -> int | None:
    q = theta / HALF_PI
    k = round(q)
    return k % 4 if abs(q - k) <= tol else None


def _snap(v: np.ndarray) -> np.ndarray:
    r = np.round(v)
    return np.where(np.abs(v - r) <= 1e-9, r, v)


@lru_cache(maxsize=512)
def rotation_operator(h: int, w: int, theta: float, method: str = "bilinear") -> tuple[np.ndarray, np.ndarray]:
    """Source pixel indices and weights (``(h*w, taps)``) realising a raster rotation."""
    if method not in ("bilinear", "nearest"):
        raise ValueError(f"unknown interpolation {method!r}")
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    x, y = cc - cx, cy - rr
    c, s = math.cos(theta), math.sin(theta)
    xs, ys = c * x + s * y, -s * x + c * y
    rs, cs = _snap(cy - ys).reshape(-1), _snap(xs + cx).reshape(-1)
    if method == "nearest":
        r0, c0 = np.floor(rs + 0.5).astype(int), np.floor(cs + 0.5).astype(int)
        ok = (r0 >= 0) & (r0 < h) & (c0 >= 0) & (c0 < w)
        src = np.where(ok, r0 * w + c0, 0)[:, None]
        return src, ok.astype(np.float64)[:, None]
    r0, c0 = np.floor(rs).astype(int), np.floor(cs).astype(int)
    fr, fc = rs - r0, cs - c0
    taps_r = np.stack([r0, r0, r0 + 1, r0 + 1], axis=1)
    taps_c = np.stack([c0, c0 + 1, c0, c0 + 1], axis=1)
    wts = np.stack([(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc], axis=1)
    ok = (taps_r >= 0) & (taps_r < h) & (taps_c >= 0) & (taps_c < w)
    src = np.where(ok, taps_r * w + taps_c, 0)
    return src, np.where(ok, wts, 0.0)


def rotate_raster(image, theta: float, method: str = "bilinear") -> np.ndarray:
    """Rotate the last two axes of ``image`` about the raster center.

    Quarter turns of square rasters (and half turns of any raster) are exact
    index permutations.  Samples falling outside the raster read as zero.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[-2:]
    k = _quarter_turns(theta)
    if k is not None and (h == w or k % 2 == 0):
        return np.rot90(image, k, axes=(-2, -1)).copy()
    src, wts = rotation_operator(h, w, float(theta) % (2 * math.pi), method)
    lead = image.shape[:-2]
    flat = image.reshape(-1, h * w)
    # taps accumulate in a fixed order so results do not depend on the leading shape
    out = flat[:, src[:, 0]] * wts[:, 0]
    for t in range(1, src.shape[1]):
        out += flat[:, src[:, t]] * wts[:, t]
    return out.reshape(lead + (h, w))


def rotate_tensor(x: T.Tensor, theta: float, method: str = "bilinear") -> T.Tensor:
    """Differentiable :func:`rotate_raster` of a ``(C, H, W)`` tensor."""
    c, h, w = x.shape
    k = _quarter_turns(theta)
    if k is not None and (h == w or k % 2 == 0):
        idx = np.rot90(np.arange(c * h * w).reshape(c, h, w), k, axes=(1, 2)).copy()
        return T.linear_gather(x, idx)
    src, wts = rotation_operator(h, w, float(theta) % (2 * math.pi), method)
    offsets = (np.arange(c) * h * w)[:, None, None]
    full_src = (src[None] + offsets).reshape(c, h, w, -1)
    full_w = np.broadcast_to(wts, (c,) + wts.shape).reshape(c, h, w, -1)
    return T.linear_gather(x, full_src, full_w)


def transform_field(field: FeatureField, g: GroupElement, method: str = "bilinear") -> FeatureField:
    """``[T_g f](x) = rho(g) f(R(g)^-1 x)``: spatial rotation, then the group action per pixel."""
    rho = rep_matrix(field.rep, g)
    rotated = rotate_raster(field.tensor, g.angle, method)
    out = np.einsum("de,kehw->kdhw", rho, rotated)
    return FeatureField(out, field.rep)


def transform_flat(data: np.ndarray, rep: RepSpec, g: GroupElement, method: str = "bilinear") -> np.ndarray:
    """:func:`transform_field` on the channels-first ``(K * D, H, W)`` layout."""
    return transform_field(FeatureField.from_flat(data, rep), g, method).flat()


def group_pool(field: FeatureField) -> FeatureField:
    """Average over the group of each field's signal, i.e. its frequency-zero coefficient."""
    if field.rep.kind not in ("irrep_sum", "quotient_irrep_sum"):
        raise ValueError(f"group pooling needs Fourier coefficient fields, got {field.rep}")
    return FeatureField(field.tensor[:, :1].copy(), RepSpec.trivial())


def group_pool_tensor(x: T.Tensor, rep: RepSpec) -> T.Tensor:
    """Differentiable group pooling of a ``(K * D, H, W)`` tensor to ``(K, H, W)``."""
    if rep.kind not in ("irrep_sum", "quotient_irrep_sum"):
        raise ValueError(f"group pooling needs Fourier coefficient fields, got {rep}")
    c, h, w = x.shape
    k = c // rep.dim
    idx = (np.arange(k) * rep.dim)[:, None, None] * h * w + np.arange(h * w).reshape(1, h, w)
    return T.linear_gather(x, idx)
