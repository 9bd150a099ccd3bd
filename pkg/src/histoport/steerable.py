"""SO(2)-steerable kernels, equivariant convolution and network assembly.

A kernel mapping an input irrep of frequency ``m`` to an output irrep of
frequency ``n`` is a sum of analytic harmonic elements
``G_r(rho) * angular(phi)``, where ``G_r`` is a Gaussian ring at integer
radius ``r``.  Every element satisfies
``kappa(R x) = rho_out(R) kappa(x) rho_in(R)^-1`` exactly, so quarter turns
of the sampled raster are exact and other angles are approximate only
through rasterization.

Rasters follow the convention of :mod:`histoport.fields`: kernel tap
``K[a, b]`` sits at the offset ``x = b - h``, ``y = h - a`` with ``h = k // 2``.
Since :func:`histoport.tensor.conv2d` is a cross-correlation, the layer
computes ``out(x) = sum_d kappa(d) in(x + d)``, which is equivariant for
kernels obeying the constraint above.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .fields import FeatureField, group_pool_tensor, transform_field
from .groups import (
    CN,
    QUOTIENT,
    AliasingError,
    GroupDomainError,
    GroupElement,
    RepSpec,
    discretization_matrix,
    projection_matrix,
    rotation_matrix,
)

SIGMA = 0.6
FLIP = np.array([[1.0, 0.0], [0.0, -1.0]])


# ---------------------------------------------------------------- kernel basis

@dataclass(frozen=True)
class BasisElement:
    ring: int
    mu: int  # angular frequency of the harmonic
    kind: str  # "A" or "B"
    m: int
    n: int
    sigma: float = SIGMA
    scale: float = 1.0

    def evaluate(self, x, y) -> np.ndarray:
        """Analytic value at points ``(x, y)``; shape ``x.shape + (d_out, d_in)``.

        Harmonics with ``mu > 0`` vanish at the origin where the angle is undefined.
        """
        x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
        rho, phi = np.hypot(x, y), np.arctan2(y, x)
        g = self.scale * np.exp(-((rho - self.ring) ** 2) / (2 * self.sigma ** 2))
        if self.mu:
            g = np.where(rho > 1e-12, g, 0.0)
        m, n = self.m, self.n
        signed = n - m if (self.kind == "A" and m and n) else self.mu
        c, s = np.cos(signed * phi), np.sin(signed * phi)
        if m == 0 and n == 0:
            ang = np.ones(x.shape + (1, 1))
        elif m == 0:
            col = [c, s] if self.kind == "A" else [-s, c]
            ang = np.stack(col, axis=-1)[..., None]
        elif n == 0:
            row = [c, s] if self.kind == "A" else [s, -c]
            ang = np.stack(row, axis=-1)[..., None, :]
        else:
            rot = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
            ang = rot if self.kind == "A" else rot @ FLIP
        return g[..., None, None] * ang


@dataclass
class KernelBasis:
    m: int
    n: int
    size: int
    elements: list[BasisElement]
    rasters: np.ndarray  # (B, k, k, d_out, d_in)

    def __len__(self) -> int:
        return len(self.elements)

    @property
    def d_in(self) -> int:
        return 1 if self.m == 0 else 2

    @property
    def d_out(self) -> int:
        return 1 if self.n == 0 else 2


def grid_offsets(k: int) -> tuple[np.ndarray, np.ndarray]:
    h = k // 2
    a, b = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    return (b - h).astype(np.float64), (h - a).astype(np.float64)



def _candidates(m: int, n: int) -> list[tuple[str, int]]:
    if m == 0 and n == 0:
        return [("A", 0)]
    if m == 0:
        return [("A", n), ("B", n)]
    if n == 0:
        return [("A", m), ("B", m)]
    return [("A", abs(n - m)), ("B", n + m)]


def build_kernel_basis(m: int, n: int, k: int = 5, rings: Sequence[int] | None = None,
                       sigma: float = SIGMA, bandlimit: float | None = None) -> KernelBasis:
    """Harmonic basis from frequency ``m`` to frequency ``n`` on a ``k x k`` raster.

    Ring 0 only admits angular frequency 0.  With ``bandlimit`` set, ring
    ``r`` additionally drops harmonics above ``bandlimit * r``.  Each element
    is scaled to unit Frobenius norm on the raster.
    """
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")
    h = k // 2
    rings = list(range(h + 1)) if rings is None else [int(r) for r in rings]
    if any(r < 0 or r > h for r in rings):
        raise ValueError(f"rings must lie in [0, {h}]")
    x, y = grid_offsets(k)
    elements, rasters = [], []
    for r in rings:
        for kind, mu in _candidates(m, n):
            if r == 0 and mu != 0:
                continue
            if bandlimit is not None and mu > bandlimit * r:
                continue
            el = BasisElement(r, mu, kind, m, n, sigma)
            raster = el.evaluate(x, y)
            norm = np.linalg.norm(raster)
            if norm < 1e-12:
                continue
            el = BasisElement(r, mu, kind, m, n, sigma, 1.0 / norm)
            elements.append(el)
            rasters.append(raster / norm)
    d_out, d_in = (1 if n == 0 else 2), (1 if m == 0 else 2)
    arr = np.stack(rasters) if rasters else np.zeros((0, k, k, d_out, d_in))
    return KernelBasis(m, n, k, elements, arr)


def steerability_residual(el: BasisElement, theta: float, x, y) -> float:
    """``max |kappa(R x) - rho_out kappa(x) rho_in^-1|`` at the given points."""
    c, s = math.cos(theta), math.sin(theta)
    lhs = el.evaluate(c * x - s * y, s * x + c * y)
    r_out = rotation_matrix(el.n * theta) if el.n else np.ones((1, 1))
    r_in = rotation_matrix(-el.m * theta) if el.m else np.ones((1, 1))
    rhs = r_out @ el.evaluate(x, y) @ r_in
    return float(np.abs(lhs - rhs).max())


# ------------------------------------------------------------ conv layer

def _blocks(rep: RepSpec) -> list[tuple[int, int, int]]:
    """``(frequency, channel offset, dim)`` of each irrep block."""
    out, at = [], 0
    for f in rep.frequencies:
        d = 1 if f == 0 else 2
        out.append((f, at, d))
        at += d
    return out


def _check_conv_rep(rep: RepSpec) -> None:
    if rep.kind == "regular":
        raise ValueError("steerable convolutions act on irrep-sum fields, not on regular ones")


class SteerableConvLayer:
    """Equivariant convolution between sums of irreps.

    ``coefficients`` has shape ``(K_out, K_in, B)`` where ``B`` counts the
    basis elements over every (input block, output block) pair; a trainable
    bias acts on the frequency-zero channel of each output field.
    """

    def __init__(self, rep_in: RepSpec, rep_out: RepSpec, k_in: int, k_out: int, size: int = 5,
                 rings=None, bias: bool = True, bandlimit: float | None = 1.0, gain: float = 1.0,
                 rng=None, padding: int | None = None):
        _check_conv_rep(rep_in)
        _check_conv_rep(rep_out)
        self.rep_in, self.rep_out = rep_in, rep_out
        self.k_in, self.k_out, self.size = k_in, k_out, size
        self.padding = size // 2 if padding is None else padding
        d_in, d_out = rep_in.dim, rep_out.dim
        full, fan = [], []
        self.bases = []
        for fo, oo, do in _blocks(rep_out):
            for fi, oi, di in _blocks(rep_in):
                basis = build_kernel_basis(fi, fo, size, rings, bandlimit=bandlimit)
                self.bases.append((fo, fi, basis))
                for raster in basis.rasters:
                    emb = np.zeros((d_out, d_in, size, size))
                    emb[oo:oo + do, oi:oi + di] = raster.transpose(2, 3, 0, 1)
                    full.append(emb)
                    fan.append((fo, do))
        self.basis_tensor = np.stack(full) if full else np.zeros((0, d_out, d_in, size, size))
        counts: dict[int, int] = {}
        for fo, _ in fan:
            counts[fo] = counts.get(fo, 0) + 1
        std = np.array([math.sqrt(gain * do / (k_in * counts[fo])) for fo, do in fan])
        rng = np.random.default_rng(rng)
        self.coefficients = T.parameter(rng.normal(size=(k_out, k_in, len(fan))) * std, "coefficients")
        self.bias_channels = np.array([i * d_out for i in range(k_out)], dtype=np.intp) \
            if bias and 0 in rep_out.frequencies else np.zeros(0, dtype=np.intp)
        self.bias = T.parameter(np.zeros(len(self.bias_channels)), "bias") if len(self.bias_channels) else None

    @property
    def num_basis(self) -> int:
        return self.basis_tensor.shape[0]

    def parameters(self) -> list[T.Tensor]:
        return [self.coefficients] + ([self.bias] if self.bias is not None else [])

    def kernel(self) -> T.Tensor:
        """Effective ``(K_out * D_out, K_in * D_in, k, k)`` kernel."""
        w = T.einsum("oib,bdexy->odiexy", self.coefficients, T.Tensor(self.basis_tensor))
        ko, ki, d_out, d_in = self.k_out, self.k_in, self.rep_out.dim, self.rep_in.dim
        return T.reshape(w, (ko * d_out, ki * d_in, self.size, self.size))

    def apply(self, x: T.Tensor) -> T.Tensor:
        if x.shape[0] != self.k_in * self.rep_in.dim:
            raise ValueError(f"conv expects {self.k_in} fields of {self.rep_in}, got {x.shape[0]} channels")
        out = T.conv2d(x, self.kernel(), self.padding)
        if self.bias is not None:
            out = T.bias_add(out, self.bias, self.bias_channels)
        return out


def steerable_conv_forward(f: FeatureField, layer: SteerableConvLayer) -> FeatureField:
    if f.rep != layer.rep_in or f.k != layer.k_in:
        raise ValueError(f"field {f.k} x {f.rep} does not match layer input {layer.k_in} x {layer.rep_in}")
    with T.no_grad():
        out = layer.apply(T.Tensor(f.flat()))
    return FeatureField.from_flat(out.data, layer.rep_out)


# ------------------------------------------------------------ nonlinearity

def default_elu_samples(jc: int) -> int:
    s = 2 * (1 + 2 * jc)
    return s + (-s) % 4


def _elu_matrices(rep: RepSpec, samples: int | None):
    jc = rep.j
    s = default_elu_samples(jc) if samples is None else samples
    if s < 2 * (1 + 2 * jc):
        raise AliasingError(f"{s} samples are below the bound {2 * (1 + 2 * jc)} for jc={jc}")
    if s % 4:
        raise ValueError("sample count must be a multiple of 4")
    return discretization_matrix(s, jc), projection_matrix(s, jc)


def fourier_elu_tensor(x: T.Tensor, rep: RepSpec, samples: int | None = None) -> T.Tensor:
    """Sample each field at ``S`` angles, apply elu, project back to coefficients."""
    if rep.kind == "trivial" or (rep.kind == "irrep_sum" and rep.j == 0):
        return T.elu(x)
    if rep.kind != "irrep_sum":
        raise ValueError(f"Fourier elu needs an irrep_sum field, got {rep}")
    q, p = _elu_matrices(rep, samples)
    k = x.shape[0] // rep.dim
    return T.channel_mix(p, T.elu(T.channel_mix(q, x, k)), k)


def fourier_pointwise_elu(f: FeatureField, samples: int | None = None) -> FeatureField:
    with T.no_grad():
        out = fourier_elu_tensor(T.Tensor(f.flat()), f.rep, samples)
    return FeatureField.from_flat(out.data, f.rep)


# ------------------------------------------------------------ network specs

@dataclass
class Conv:
    rep: RepSpec
    width: int
    size: int = 5
    bias: bool = True
    bandlimit: float | None = 1.0
    gain: float = 1.0


@dataclass
class ELU:
    samples: int | None = None


@dataclass
class Pool:
    size: int = 2
    stride: int | None = None
    padding: int = 0


@dataclass
class Upsample:
    factor: int = 2


@dataclass
class Residual:
    body: list = field(default_factory=list)


@dataclass
class SkipPush:
    pass


@dataclass
class SkipAdd:
    pass


@dataclass
class GroupPool:
    pass


@dataclass
class SpatialMean:
    pass


@dataclass
class Discretize:
    n: int


@dataclass
class NetworkSpec:
    rep_in: RepSpec
    k_in: int
    layers: list
    name: str = ""


class _Built:
    def __init__(self, kind, rep_in, k_in, rep_out, k_out, params=(), fn=None, children=None, module=None):
        self.kind, self.rep_in, self.k_in, self.rep_out, self.k_out = kind, rep_in, k_in, rep_out, k_out
        self.params, self.fn, self.children, self.module = list(params), fn, children, module


class Network:
    """Assembled layer sequence; :meth:`apply` is differentiable, ``__call__`` maps fields."""

    def __init__(self, spec: NetworkSpec, built: list[_Built]):
        self.spec = spec
        self.layers = built
        self.rep_in, self.k_in = spec.rep_in, spec.k_in
        self.rep_out = built[-1].rep_out if built else spec.rep_in
        self.k_out = built[-1].k_out if built else spec.k_in

    def parameters(self) -> list[T.Tensor]:
        out = []

        def walk(layers):
            for b in layers:
                out.extend(b.params)
                if b.children:
                    walk(b.children)
        walk(self.layers)
        return out

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def apply(self, x: T.Tensor) -> T.Tensor:
        if x.shape[0] != self.k_in * self.rep_in.dim:
            raise ValueError(f"network expects {self.k_in * self.rep_in.dim} channels, got {x.shape[0]}")
        return _run(self.layers, x, [])

    def __call__(self, f: FeatureField) -> FeatureField:
        if f.rep != self.rep_in:
            raise ValueError(f"network input is {self.rep_in}, got {f.rep}")
        with T.no_grad():
            out = self.apply(T.Tensor(f.flat()))
        return FeatureField.from_flat(out.data, self.rep_out)


def _run(layers, x, skips):
    for b in layers:
        if b.kind == "residual":
            x = T.add(x, _run(b.children, x, []))
        elif b.kind == "push":
            skips.append(x)
        elif b.kind == "add":
            s = skips.pop()
            if s.shape != x.shape:
                raise ValueError(f"skip connection shape {s.shape} does not match {x.shape}")
            x = T.add(x, s)
        else:
            x = b.fn(x)
    return x


def _spatial_mean(x: T.Tensor) -> T.Tensor:
    c, h, w = x.shape
    return T.reshape(T.mul(T.tsum(x, (1, 2)), 1.0 / (h * w)), (c, 1, 1))


def _discretizer(rep: RepSpec, k: int, n: int):
    if rep.kind == "irrep_sum":
        q, out = discretization_matrix(n, rep.j), RepSpec.regular(n)
    elif rep.kind == "quotient_irrep_sum":
        q = discretization_matrix(n, rep.j, quotient=True)
        out = RepSpec("regular", n=n // 2, group=QUOTIENT)
    else:
        raise ValueError(f"cannot discretize {rep}")
    return (lambda x: T.channel_mix(q, x, k)), out


def _build(layers, rep, k, rng, skip_stack) -> tuple[list[_Built], RepSpec, int]:
    built = []
    for spec in layers:
        if isinstance(spec, Conv):
            layer = SteerableConvLayer(rep, spec.rep, k, spec.width, spec.size, bias=spec.bias,
                                       bandlimit=spec.bandlimit, gain=spec.gain, rng=rng)
            b = _Built("conv", rep, k, spec.rep, spec.width, layer.parameters(), layer.apply, module=layer)
        elif isinstance(spec, ELU):
            if rep.kind not in ("trivial", "irrep_sum"):
                raise ValueError(f"ELU cannot follow a {rep} field")
            if rep.kind == "irrep_sum":
                _elu_matrices(rep, spec.samples)
            b = _Built("elu", rep, k, rep, k, fn=lambda x, r=rep, s=spec.samples: fourier_elu_tensor(x, r, s))
        elif isinstance(spec, Pool):
            if rep.kind == "regular":
                raise ValueError("pooling expects irrep or trivial fields")
            b = _Built("pool", rep, k, rep, k, fn=lambda x, s=spec, d=rep.dim: T.max_pool2d(
                x, s.size, s.stride, s.padding, group_size=d))
        elif isinstance(spec, Upsample):
            b = _Built("upsample", rep, k, rep, k, fn=lambda x, f=spec.factor: T.upsample_bilinear(x, f))
        elif isinstance(spec, Residual):
            children, r2, k2 = _build(spec.body, rep, k, rng, [])
            if (r2, k2) != (rep, k):
                raise ValueError(f"residual body maps {k} x {rep} to {k2} x {r2}")
            b = _Built("residual", rep, k, rep, k, children=children)
        elif isinstance(spec, SkipPush):
            skip_stack.append((rep, k))
            b = _Built("push", rep, k, rep, k)
        elif isinstance(spec, SkipAdd):
            if not skip_stack:
                raise ValueError("SkipAdd without a matching SkipPush")
            if skip_stack.pop() != (rep, k):
                raise ValueError("skip connection joins different representation types")
            b = _Built("add", rep, k, rep, k)
        elif isinstance(spec, GroupPool):
            if rep.kind not in ("irrep_sum", "quotient_irrep_sum"):
                raise ValueError(f"group pooling needs coefficient fields, got {rep}")
            b = _Built("group_pool", rep, k, RepSpec.trivial(), k, fn=lambda x, r=rep: group_pool_tensor(x, r))
        elif isinstance(spec, SpatialMean):
            b = _Built("mean", rep, k, rep, k, fn=_spatial_mean)
        elif isinstance(spec, Discretize):
            fn, out = _discretizer(rep, k, spec.n)
            b = _Built("discretize", rep, k, out, k, fn=fn)
        else:
            raise TypeError(f"unknown layer description {spec!r}")
        built.append(b)
        rep, k = b.rep_out, b.k_out
    return built, rep, k


def assemble_network(spec: NetworkSpec, rng=None) -> Network:
    rng = np.random.default_rng(rng)
    skips: list = []
    built, _, _ = _build(spec.layers, spec.rep_in, spec.k_in, rng, skips)
    if skips:
        raise ValueError(f"{len(skips)} SkipPush without a matching SkipAdd")
    return Network(spec, built)


# ------------------------------------------------------------ residual check

def element_for(rep: RepSpec, g: GroupElement) -> GroupElement:
    """Express a rotation as a member of the finite group a regular rep lives on."""
    if rep.kind != "regular" or g.is_discrete and (g.period == math.pi) == (rep.group == QUOTIENT):
        return g
    period = math.pi if rep.group == QUOTIENT else 2 * math.pi
    steps = (g.angle % period) * rep.n / period
    i = round(steps)
    if abs(steps - i) > 1e-9:
        raise GroupDomainError(f"rotation {g.angle} is not an element of the {rep.n}-element group")
    if rep.group == QUOTIENT:
        return GroupElement.quotient_cyclic(i, 2 * rep.n)
    return GroupElement.cyclic(i, rep.n)


def equivariance_residual(net: Network, f: FeatureField, g: GroupElement, method: str = "bilinear") -> float:
    """``max |net(T_g f) - T_g net(f)|`` with the right input and output actions."""
    lhs = net(transform_field(f, element_for(f.rep, g), method))
    rhs = transform_field(net(f), element_for(net.rep_out, g), method)
    return float(np.abs(lhs.tensor - rhs.tensor).max())


__all__ = [
    "BasisElement", "KernelBasis", "build_kernel_basis", "steerability_residual", "grid_offsets",
    "SteerableConvLayer", "steerable_conv_forward", "fourier_elu_tensor", "fourier_pointwise_elu",
    "default_elu_samples", "Conv", "ELU", "Pool", "Upsample", "Residual", "SkipPush", "SkipAdd",
    "GroupPool", "SpatialMean", "Discretize", "NetworkSpec", "Network", "assemble_network",
    "element_for", "equivariance_residual", "CN",
]
