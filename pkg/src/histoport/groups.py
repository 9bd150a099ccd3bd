"""Planar rotation groups, their real representations and Fourier sampling.

Angles follow the math convention: counter-clockwise positive, with spatial
coordinates ``x`` to the right and ``y`` upwards.

Fourier coefficient vectors are always laid out as
``[a_0, a_1, b_1, a_2, b_2, ..., a_jc, b_jc]``.  Quotient (``SO(2)/C_2``)
representations are evaluated in the doubled angle ``alpha = 2 * theta`` so
that a frequency-``q`` quotient channel is a frequency-``2q`` channel of the
full group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

SO2 = "SO(2)"
CN = "C_N"
QUOTIENT = "SO(2)/C_2"


class AliasingError(ValueError):
    """Sampling count below the Nyquist bound ``1 + 2 * jc``."""


class GroupDomainError(ValueError):
    """Group element incompatible with the representation it is fed to."""


@dataclass(frozen=True)
class GroupElement:
    """A planar rotation, optionally tagged as the ``index``-th element of ``C_order``."""

    angle: float
    index: int | None = None
    order: int | None = None
    period: float = TWO_PI

    @classmethod
    def rotation(cls, theta: float) -> GroupElement:
        return cls(float(theta) % TWO_PI)

    @classmethod
    def cyclic(cls, i: int, n: int) -> GroupElement:
        if n < 1:
            raise ValueError("cyclic group order must be positive")
        i = int(i) % n
        return cls(TWO_PI * i / n, index=i, order=n)

    @classmethod
    def quotient(cls, theta: float) -> GroupElement:
        return cls(float(theta) % math.pi, period=math.pi)

    @classmethod
    def quotient_cyclic(cls, i: int, n: int) -> GroupElement:
        """``i``-th of the ``n // 2`` elements of ``C_n / C_2`` (angles in ``[0, pi)``)."""
        if n % 2:
            raise ValueError("quotient C_N/C_2 needs even N")
        half = n // 2
        i = int(i) % half
        return cls(math.pi * i / half, index=i, order=half, period=math.pi)

    @property
    def is_discrete(self) -> bool:
        return self.index is not None

    def __mul__(self, other: GroupElement) -> GroupElement:
        period = min(self.period, other.period)
        if self.is_discrete and other.is_discrete and self.order == other.order:
            i = (self.index + other.index) % self.order
            return GroupElement(period * i / self.order, index=i, order=self.order, period=period)
        return GroupElement((self.angle + other.angle) % period, period=period)

    def inverse(self) -> GroupElement:
        if self.is_discrete:
            i = (-self.index) % self.order
            return GroupElement(self.period * i / self.order, index=i, order=self.order, period=self.period)
        return GroupElement((-self.angle) % self.period, period=self.period)

    def regular_index(self, n: int) -> int:
        """Index of this element inside ``C_n``; raises if it is not a member."""
        if not self.is_discrete:
            raise GroupDomainError("regular representation needs a discrete group element")
        if (self.index * n) % self.order:
            raise GroupDomainError(f"element {self.index}/{self.order} is not in C_{n}")
        return (self.index * n // self.order) % n


@dataclass(frozen=True)
class RepSpec:
    """Descriptor of one of the supported representations.

    ``j`` is the frequency for ``irrep`` and the cutoff ``jc`` for the two
    sums; ``n`` is the group order of ``regular``.
    """

    kind: str
    j: int = 0
    n: int = 0
    group: str = SO2

    KINDS = ("trivial", "standard", "irrep", "irrep_sum", "regular", "quotient_irrep_sum")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown representation kind {self.kind!r}")
        if self.j < 0:
            raise ValueError("frequencies are non-negative")
        if self.kind == "regular" and self.n < 1:
            raise ValueError("regular representation needs a positive group order")

    @classmethod
    def trivial(cls, group: str = SO2) -> RepSpec:
        return cls("trivial", group=group)

    @classmethod
    def standard(cls, group: str = SO2) -> RepSpec:
        return cls("standard", j=1, group=group)

    @classmethod
    def irrep(cls, j: int, group: str = SO2) -> RepSpec:
        return cls("irrep", j=j, group=group)

    @classmethod
    def irrep_sum(cls, jc: int) -> RepSpec:
        return cls("irrep_sum", j=jc)

    @classmethod
    def regular(cls, n: int) -> RepSpec:
        return cls("regular", n=n, group=CN)

    @classmethod
    def quotient_irrep_sum(cls, jc: int) -> RepSpec:
        return cls("quotient_irrep_sum", j=jc, group=QUOTIENT)

    @property
    def dim(self) -> int:
        if self.kind == "trivial":
            return 1
        if self.kind == "standard":
            return 2
        if self.kind == "irrep":
            return 1 if self.j == 0 else 2
        if self.kind == "regular":
            return self.n
        return 1 + 2 * self.j

    @property
    def frequencies(self) -> tuple[int, ...]:
        """Full-group frequency of each irreducible block, in channel order."""
        if self.kind == "trivial":
            return (0,)
        if self.kind == "standard":
            return (1,)
        if self.kind == "irrep":
            return (self.j,)
        if self.kind == "irrep_sum":
            return tuple(range(self.j + 1))
        if self.kind == "quotient_irrep_sum":
            return tuple(2 * q for q in range(self.j + 1))
        raise ValueError("regular representation is not a sum of SO(2) irreps")

    def __str__(self) -> str:
        if self.kind == "regular":
            return f"regular({self.n})"
        if self.kind in ("trivial", "standard"):
            return self.kind
        return f"{self.kind}({self.j})"


def rotation_matrix(alpha: float) -> np.ndarray:
    c, s = math.cos(alpha), math.sin(alpha)
    return np.array([[c, -s], [s, c]])


def _irrep_block(freq: int, angle: float) -> np.ndarray:
    if freq == 0:
        return np.ones((1, 1))
    return rotation_matrix(freq * angle)


def block_diag_irreps(freqs, angle: float) -> np.ndarray:
    dims = [1 if f == 0 else 2 for f in freqs]
    out = np.zeros((sum(dims), sum(dims)))
    at = 0
    for f, d in zip(freqs, dims):
        out[at:at + d, at:at + d] = _irrep_block(f, angle)
        at += d
    return out


def regular_matrix(n: int, i: int) -> np.ndarray:
    """Cyclic permutation ``(v_0..v_{n-1}) -> (v_{n-i}, ..., v_{n-1}, v_0, ...)``."""
    out = np.zeros((n, n))
    k = np.arange(n)
    out[k, (k - i) % n] = 1.0
    return out


def rep_matrix(rep: RepSpec, g: GroupElement) -> np.ndarray:
    """The matrix ``rho(g)`` of size ``rep.dim``."""
    if rep.kind == "regular":
        return regular_matrix(rep.n, g.regular_index(rep.n))
    if rep.kind == "quotient_irrep_sum":
        # frequencies are already doubled; evaluating at theta is evaluating at alpha = 2 theta
        return block_diag_irreps(rep.frequencies, g.angle)
    if g.period != TWO_PI and any(f % 2 for f in rep.frequencies):
        raise GroupDomainError(f"{rep} is not well defined on the quotient group")
    return block_diag_irreps(rep.frequencies, g.angle)


def fourier_basis(angles, jc: int) -> np.ndarray:
    """Rows ``[1, cos t, sin t, ..., cos jc t, sin jc t]`` for each angle ``t``."""
    angles = np.asarray(angles, dtype=np.float64)
    cols = [np.ones_like(angles)]
    for j in range(1, jc + 1):
        cols.append(np.cos(j * angles))
        cols.append(np.sin(j * angles))
    return np.stack(cols, axis=-1)


def sample_angles(n: int, quotient: bool = False) -> np.ndarray:
    """Angles of the ``C_n`` elements, or of ``C_n/C_2`` (``n/2`` angles in ``[0, pi)``)."""
    if quotient:
        if n % 2:
            raise ValueError("quotient discretization needs even N")
        return math.pi * np.arange(n // 2) / (n // 2)
    return TWO_PI * np.arange(n) / n


def check_nyquist(n: int, jc: int) -> None:
    if n < 1 + 2 * jc:
        raise AliasingError(f"N={n} samples cannot resolve frequencies up to {jc} (need N >= {1 + 2 * jc})")


def discretization_matrix(n: int, jc: int, quotient: bool = False) -> np.ndarray:
    """Change of basis from Fourier coefficients to samples on ``C_N`` (or ``C_N/C_2``).

    Quotient rows sit at ``N/2`` angles in ``[0, pi)`` and the basis is
    evaluated in the doubled angle.
    """
    if n < 1 or jc < 0:
        raise ValueError("need N >= 1 and jc >= 0")
    check_nyquist(n, jc)
    angles = sample_angles(n, quotient)
    if quotient:
        angles = 2.0 * angles
    return fourier_basis(angles, jc)


def _fit_scaling(samples_count: int, jc: int) -> np.ndarray:
    d = np.full(1 + 2 * jc, 2.0 / samples_count)
    d[0] = 1.0 / samples_count
    return d


def fit_coefficients(samples, n: int, jc: int, quotient: bool = False) -> np.ndarray:
    """Project samples on ``C_N`` back to Fourier coefficients (``D Q^T samples``).

    ``samples`` may carry trailing axes; the leading axis indexes the group.
    Exact inverse of :func:`discretization_matrix` for band-limited signals.
    """
    samples = np.asarray(samples, dtype=np.float64)
    count = n // 2 if quotient else n
    if samples.shape[0] != count:
        raise ValueError(f"expected {count} samples along axis 0, got {samples.shape[0]}")
    check_nyquist(count, jc)
    return np.tensordot(projection_matrix(n, jc, quotient), samples, axes=1)


def projection_matrix(n: int, jc: int, quotient: bool = False) -> np.ndarray:
    """The ``(1 + 2 jc) x S`` matrix ``D Q^T`` used by :func:`fit_coefficients`."""
    q = discretization_matrix(n, jc, quotient)
    return _fit_scaling(q.shape[0], jc)[:, None] * q.T


def coefficient_action(jc: int, g: GroupElement) -> np.ndarray:
    """How rotating a signal by ``g`` acts on its coefficient vector."""
    return rep_matrix(RepSpec.irrep_sum(jc), g)
