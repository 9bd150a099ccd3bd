"""Equivariant orientation histograms (EOHs).

A coefficient field ``H`` (one ``irrep_sum(jc)`` field per pixel) is sampled
at the ``N`` angles of ``C_N`` and normalized per pixel with a softmax.
Bin ``i`` stands for the angle ``2 pi i / N``.  Rotating the input image by
``g_i`` rotates the map spatially and shifts the bins by ``i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .fields import FeatureField, rotate_raster, rotation_operator
from .groups import discretization_matrix, fourier_basis


@dataclass
class EOHMap:
    """``N x H x W`` per-pixel histograms over ``C_N``."""

    tensor: np.ndarray

    def __post_init__(self):
        self.tensor = np.asarray(self.tensor, dtype=np.float64)
        if self.tensor.ndim != 3:
            raise ValueError("EOH map must be N x H x W")

    @property
    def n(self) -> int:
        return self.tensor.shape[0]

    def is_normalized(self, tol: float = 1e-6) -> bool:
        return bool((self.tensor >= 0).all() and np.abs(self.tensor.sum(axis=0) - 1).max() <= tol)


def sample_so2_signal(coeffs, angle: float) -> float:
    """``a0 + sum_j a_j cos(j g) + b_j sin(j g)`` for coefficients ``[a0, a1, b1, ...]``."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 1 or coeffs.size % 2 == 0:
        raise ValueError("coefficient vector must have length 1 + 2 jc")
    jc = coeffs.size // 2
    return float(fourier_basis(np.array([angle]), jc)[0] @ coeffs)


def eoh_logits_tensor(coeffs: T.Tensor, n: int, quotient: bool = False) -> T.Tensor:
    """Pre-softmax group discretization of a single ``(1 + 2 jc, H, W)`` coefficient field."""
    d = coeffs.shape[0]
    if d % 2 == 0:
        raise ValueError("coefficient field must have 1 + 2 jc channels")
    q = discretization_matrix(n, d // 2, quotient)
    return T.channel_mix(q, coeffs, 1)


def generate_eoh_tensor(coeffs: T.Tensor, n: int, quotient: bool = False) -> T.Tensor:
    """Differentiable EOH: discretize at ``N`` angles, softmax over the bins."""
    return T.softmax(eoh_logits_tensor(coeffs, n, quotient), axis=0)


def generate_eoh(field: FeatureField, n: int) -> EOHMap:
    if field.rep.kind != "irrep_sum":
        raise ValueError(f"EOH generation needs an irrep_sum field, got {field.rep}")
    if field.k != 1:
        raise ValueError("EOH generation expects a single coefficient field")
    with T.no_grad():
        out = generate_eoh_tensor(T.Tensor(field.tensor[0]), n)
    return EOHMap(out.data)


def transform_eoh(eoh, i: int, method: str = "bilinear") -> np.ndarray:
    """Action of ``g_i`` in ``C_N`` on an ``N x H x W`` map: rotate by ``2 pi i / N``, shift bins by ``i``."""
    arr = eoh.tensor if isinstance(eoh, EOHMap) else np.asarray(eoh, dtype=np.float64)
    n = arr.shape[0]
    return np.roll(rotate_raster(arr, 2 * math.pi * i / n, method), i, axis=0)


def _check_divides(n: int, m: int) -> None:
    if m < 1 or n % m:
        raise ValueError(f"subgroup order {m} does not divide {n}")


def subsample_group(eoh, m: int) -> np.ndarray:
    """Keep the bins of ``C_M`` inside ``C_N`` (indices ``0, N/M, 2N/M, ...``); no renormalization."""
    arr = eoh.tensor if isinstance(eoh, EOHMap) else np.asarray(eoh, dtype=np.float64)
    n = arr.shape[0]
    _check_divides(n, m)
    return arr[:: n // m].copy()


def alignment_channels(n: int, m: int) -> np.ndarray:
    """``(N, M)`` table: row ``i`` keeps source bin ``(k N/M - i) mod N`` as channel ``k``."""
    _check_divides(n, m)
    return (np.arange(m)[None, :] * (n // m) - np.arange(n)[:, None]) % n


def subgroup_alignment(crop_eoh, m: int, method: str = "bilinear") -> np.ndarray:
    """``N x M x h x w`` stack of rotated, bin-shifted and subsampled copies of a crop map.

    Row ``i`` equals ``subsample_group(transform_eoh(crop, i), M)``; only the
    ``M`` surviving bins are rotated.
    """
    arr = crop_eoh.tensor if isinstance(crop_eoh, EOHMap) else np.asarray(crop_eoh, dtype=np.float64)
    n, h, w = arr.shape
    if h % 2 == 0 or w % 2 == 0:
        raise ValueError("crop sides must be odd so that rotation pivots on a pixel")
    chans = alignment_channels(n, m)
    out = np.empty((n, m, h, w))
    for i in range(n):
        out[i] = rotate_raster(arr[chans[i]], 2 * math.pi * i / n, method)
    return out


def subgroup_alignment_tensor(crop_eoh: T.Tensor, m: int, method: str = "bilinear") -> T.Tensor:
    """Differentiable :func:`subgroup_alignment` as one sparse gather."""
    n, h, w = crop_eoh.shape
    if h % 2 == 0 or w % 2 == 0:
        raise ValueError("crop sides must be odd so that rotation pivots on a pixel")
    src, wts = _alignment_operator(n, m, h, w, method)
    return T.linear_gather(crop_eoh, src, wts)


def _alignment_operator(n, m, h, w, method):
    chans = alignment_channels(n, m)
    taps = 4 if method == "bilinear" else 1
    src = np.empty((n, m, h * w, taps), dtype=np.intp)
    wts = np.empty((n, m, h * w, taps))
    for i in range(n):
        s, wt = rotation_operator(h, w, (2 * math.pi * i / n) % (2 * math.pi), method)
        src[i] = chans[i][:, None, None] * (h * w) + s[None]
        wts[i] = wt[None]
    return src.reshape(n, m, h, w, taps), wts.reshape(n, m, h, w, taps)


__all__ = [
    "EOHMap", "sample_so2_signal", "eoh_logits_tensor", "generate_eoh_tensor", "generate_eoh",
    "transform_eoh", "subsample_group", "alignment_channels", "subgroup_alignment",
    "subgroup_alignment_tensor",
]
