"""Pick and place heads over the discretized action space.

* ``f_p``: equivariant U-Net, group pooling, two 1x1 convs, softmax over pixels.
* ``f_theta``: equivariant conv stack on a crop with a quotient head sampled at
  ``N/2`` angles in ``[0, pi)`` (a parallel-jaw grasp is symmetric under pi).
* place: scene encoder ``phi`` (EOHs over ``C_M``) and crop encoder ``psi``
  (EOHs over ``C_N``); the crop map is aligned into ``N`` rotated ``M``-bin
  kernels and cross-correlated with the padded scene map.

Pick angles are absolute; place angles are the pick-to-place rotation.
Crops are odd so rotations pivot on the pick pixel.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import tensor as T
from .eoh import generate_eoh_tensor, subgroup_alignment_tensor
from .fields import rotate_tensor
from .groups import AliasingError, RepSpec
from .steerable import (
    ELU,
    Conv,
    Discretize,
    GroupPool,
    NetworkSpec,
    Pool,
    Residual,
    SkipAdd,
    SkipPush,
    SpatialMean,
    Upsample,
    assemble_network,
)

DESCRIPTORS = ("eoh", "invariant")


@dataclass
class PolicyConfig:
    n: int = 36
    m: int = 12
    crop_pick: int = 25
    crop_place: int = 25
    channels: int = 1
    jc_pick: int = 3
    jc_angle: int = 6
    jc_place: int = 3
    width_pick: int = 4
    width_angle: int = 4
    width_place: int = 4
    head_gain: float = 0.01
    descriptor: str = "eoh"
    seed: int = 0

    def validate(self) -> None:
        if self.descriptor not in DESCRIPTORS:
            raise ValueError(f"descriptor must be one of {DESCRIPTORS}")
        if self.n % self.m:
            raise ValueError(f"M={self.m} does not divide N={self.n}")
        if self.n % 2:
            raise ValueError("N must be even for the pi-symmetric pick angle")
        if self.m < 1 + 2 * self.jc_place:
            raise AliasingError(f"M={self.m} is below the bound {1 + 2 * self.jc_place}")
        if self.n // 2 < 1 + 2 * self.jc_angle:
            raise AliasingError(f"N/2={self.n // 2} cannot resolve quotient frequencies up to {self.jc_angle}")
        if self.crop_pick % 2 == 0 or self.crop_place % 2 == 0:
            raise ValueError("crop sides must be odd")
        if min(self.width_pick, self.width_angle, self.width_place, self.channels) < 1:
            raise ValueError("widths and channels must be positive")

    @property
    def pad(self) -> int:
        return (self.crop_place - 1) // 2

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "desk": PolicyConfig(),
    # structural stand-in for the full-scale setting (RGB-D input, fine angle grid)
    "paper": PolicyConfig(n=180, m=12, channels=4, width_pick=16, width_angle=16, width_place=16),
}


def preset(name: str, **overrides) -> PolicyConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    cfg = replace(PRESETS[name], **overrides)
    cfg.validate()
    return cfg


def pick_position_spec(cfg: PolicyConfig) -> NetworkSpec:
    r, k = RepSpec.irrep_sum(cfg.jc_pick), cfg.width_pick
    block = lambda: Residual([Conv(r, k), ELU(), Conv(r, k)])  # noqa: E731
    triv = RepSpec.trivial()
    return NetworkSpec(triv, cfg.channels, [
        Conv(r, k), ELU(),
        block(), ELU(), SkipPush(), Pool(),
        Conv(r, k), ELU(), SkipPush(), Pool(),
        block(), ELU(),
        Upsample(), SkipAdd(), Conv(r, k), ELU(),
        block(), ELU(),
        Upsample(), SkipAdd(), Conv(r, k), ELU(),
        Conv(r, k),
        GroupPool(),
        Conv(triv, k, size=1), ELU(),
        Conv(triv, 1, size=1, gain=cfg.head_gain),
    ], name="pick_position")


def pick_angle_spec(cfg: PolicyConfig) -> NetworkSpec:
    r, k = RepSpec.irrep_sum(cfg.jc_angle), cfg.width_angle
    centered = Pool(size=3, stride=2, padding=1)
    return NetworkSpec(RepSpec.trivial(), cfg.channels, [
        Conv(r, k), ELU(), centered,
        Conv(r, k), ELU(),
        Conv(r, k), ELU(), centered,
        Conv(r, k), ELU(),
        # the head reaches the doubled frequencies, so it keeps every harmonic
        Conv(RepSpec.quotient_irrep_sum(cfg.jc_angle), 1, bandlimit=None, gain=cfg.head_gain),
        SpatialMean(),
        Discretize(cfg.n),
    ], name="pick_angle")


def place_encoder_spec(cfg: PolicyConfig, name: str) -> NetworkSpec:
    r, k = RepSpec.irrep_sum(cfg.jc_place), cfg.width_place
    layers = [Conv(r, k), ELU(), Conv(r, k), ELU(), Conv(r, k), ELU()]
    if cfg.descriptor == "eoh":
        layers.append(Conv(r, 1, gain=cfg.head_gain))
    else:
        layers += [Conv(r, cfg.m, gain=cfg.head_gain), GroupPool()]
    return NetworkSpec(RepSpec.trivial(), cfg.channels, layers, name=name)


@dataclass
class Action:
    u: int
    v: int
    theta_index: int
    kind: str = "pick"

    def validate(self, h: int, w: int, n: int) -> None:
        bins = n // 2 if self.kind == "pick" else n
        if not (0 <= self.u < h and 0 <= self.v < w):
            raise ValueError(f"pixel ({self.u}, {self.v}) outside {h}x{w}")
        if not 0 <= self.theta_index < bins:
            raise ValueError(f"angle index {self.theta_index} outside [0, {bins})")

    def angle(self, n: int) -> float:
        """Pick angles live on [0, pi), place angles on [0, 2 pi); both use steps of 2 pi / N."""
        return 2 * math.pi * self.theta_index / n


def extract_crop(obs, u: int, v: int, side: int) -> np.ndarray:
    """``side x side`` window centered on pixel ``(u, v)`` with zero fill outside."""
    obs = np.asarray(obs, dtype=np.float64)
    h = side // 2
    padded = np.pad(obs, ((0, 0), (h, h), (h, h)))
    return padded[:, u:u + side, v:v + side].copy()


class PolicyBundle:
    """The three heads with their shared hyperparameters."""

    def __init__(self, cfg: PolicyConfig | None = None):
        self.cfg = cfg or PolicyConfig()
        self.cfg.validate()
        rng = np.random.default_rng(self.cfg.seed)
        self.f_p = assemble_network(pick_position_spec(self.cfg), rng)
        self.f_theta = assemble_network(pick_angle_spec(self.cfg), rng)
        self.phi = assemble_network(place_encoder_spec(self.cfg, "scene_encoder"), rng)
        self.psi = assemble_network(place_encoder_spec(self.cfg, "crop_encoder"), rng)

    @property
    def networks(self) -> dict:
        return {"f_p": self.f_p, "f_theta": self.f_theta, "phi": self.phi, "psi": self.psi}

    def parameters(self) -> list[T.Tensor]:
        return [p for net in self.networks.values() for p in net.parameters()]

    def parameter_counts(self) -> dict[str, int]:
        return {k: net.num_parameters() for k, net in self.networks.items()}

    # -- differentiable heads (used by training) --

    def pick_logits(self, obs: T.Tensor) -> T.Tensor:
        c, h, w = obs.shape
        out = self.f_p.apply(obs)
        return T.reshape(out, (h * w,))

    def pick_angle_logits(self, crop: T.Tensor) -> T.Tensor:
        if crop.shape[1] % 2 == 0 or crop.shape[1] != crop.shape[2]:
            raise ValueError("pick crop must be square with an odd side")
        out = self.f_theta.apply(crop)
        return T.reshape(out, (self.cfg.n // 2,))

    def scene_descriptors(self, obs: T.Tensor) -> T.Tensor:
        p = self.cfg.pad
        enc = self.phi.apply(T.pad2d(obs, p))
        return generate_eoh_tensor(enc, self.cfg.m) if self.cfg.descriptor == "eoh" else enc

    def crop_kernels(self, crop: T.Tensor) -> T.Tensor:
        cfg = self.cfg
        if crop.shape[1] != cfg.crop_place or crop.shape[2] != cfg.crop_place:
            raise ValueError(f"place crop must be {cfg.crop_place}x{cfg.crop_place}")
        enc = self.psi.apply(crop)
        if cfg.descriptor == "eoh":
            return subgroup_alignment_tensor(generate_eoh_tensor(enc, cfg.n), cfg.m)
        # invariant descriptors carry no bins: rotate the maps spatially only
        rows = [rotate_tensor(enc, 2 * math.pi * i / cfg.n) for i in range(cfg.n)]
        return T.stack(rows, axis=0)

    def place_logits(self, obs: T.Tensor, crop: T.Tensor) -> T.Tensor:
        """``N x H x W`` correlation scores, used as joint logits."""
        scene = self.scene_descriptors(obs)
        kernels = self.crop_kernels(crop)
        return T.conv2d(scene, kernels, padding=0)

    # -- inference --

    def _check_obs(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        if obs.ndim != 3 or obs.shape[0] != self.cfg.channels:
            raise ValueError(f"observation must be {self.cfg.channels} x H x W")
        return obs

    def pick_position(self, obs) -> np.ndarray:
        obs = self._check_obs(obs)
        depth = 4  # two stride-2 pools
        if obs.shape[1] % depth or obs.shape[2] % depth:
            raise ValueError(f"H and W must be divisible by {depth}")
        with T.no_grad():
            probs = T.softmax(self.pick_logits(T.Tensor(obs)), axis=0)
        return probs.data.reshape(obs.shape[1:])

    def pick_angle(self, crop) -> np.ndarray:
        with T.no_grad():
            return T.softmax(self.pick_angle_logits(T.Tensor(crop)), axis=0).data

    def place_distribution(self, obs, crop) -> np.ndarray:
        obs = self._check_obs(obs)
        with T.no_grad():
            return self.place_logits(T.Tensor(obs), T.Tensor(crop)).data

    def act(self, obs) -> tuple[Action, Action]:
        obs = self._check_obs(obs)
        return select_actions(
            self.pick_position(obs),
            lambda u, v: self.pick_angle(extract_crop(obs, u, v, self.cfg.crop_pick)),
            lambda u, v: self.place_distribution(obs, extract_crop(obs, u, v, self.cfg.crop_place)),
        )


def _argmax_first(a: np.ndarray) -> int:
    # np.argmax returns the first maximal entry in row-major order
    return int(np.argmax(a.reshape(-1)))


def select_actions(pick_map, pick_angle_fn, place_fn, obs=None) -> tuple[Action, Action]:
    """Greedy decoding: pick pixel, then the angle there, then the joint place argmax.

    ``pick_angle_fn`` and ``place_fn`` receive the chosen pick pixel; ties
    resolve to the lowest row-major index.
    """
    pick_map = np.asarray(pick_map)
    h, w = pick_map.shape
    u, v = divmod(_argmax_first(pick_map), w)
    theta = _argmax_first(np.asarray(pick_angle_fn(u, v)))
    scores = np.asarray(place_fn(u, v))
    n, hh, ww = scores.shape
    flat = _argmax_first(scores)
    t, rest = divmod(flat, hh * ww)
    pu, pv = divmod(rest, ww)
    return Action(u, v, theta, "pick"), Action(pu, pv, t, "place")


__all__ = [
    "PolicyConfig", "PRESETS", "preset", "PolicyBundle", "Action", "select_actions", "extract_crop",
    "pick_position_spec", "pick_angle_spec", "place_encoder_spec", "DESCRIPTORS",
]
