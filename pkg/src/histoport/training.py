"""Behavior cloning on kitting demonstrations: targets, augmentation, training, evaluation."""

from __future__ import annotations

import copy
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as T
from .fields import rotate_raster
from .kitting import (
    Demo,
    KittingConfig,
    apply_action,
    check_success,
    generate_episode,
    make_demo,
    oracle_actions,
    render_observation,
)
from .optim import AdamState, adam_step
from .policy import Action, PolicyBundle, PolicyConfig, extract_crop

METRIC_COLUMNS = ("iteration", "loss_pick_pos", "loss_pick_angle", "loss_place", "eval_success_rate", "wall_seconds")
# evaluation scenes come from a seed range no training run draws from
EVAL_SEED_BASE = 1_000_000


@dataclass
class TrainConfig:
    iterations: int = 5000
    lr: float = 1e-4
    eval_every: int = 1000
    eval_episodes: int = 50
    demos: int = 10
    augment_rotate: bool = True
    augment_translate: bool = True
    translate_range: int = 8
    seed: int = 0
    policy: PolicyConfig = field(default_factory=PolicyConfig)

    def validate(self) -> None:
        for name in ("iterations", "eval_every", "eval_episodes", "demos"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.translate_range < 0:
            raise ValueError("translate_range must be non-negative")
        self.policy.validate()

    def to_flat(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "policy"}
        pol = self.policy.to_dict()
        pol.pop("seed")  # one seed drives both
        out.update(pol)
        return out

    @classmethod
    def from_flat(cls, doc: dict) -> TrainConfig:
        """Inverse of :meth:`to_flat`; unknown keys raise ``KeyError``."""
        own = {f.name for f in fields(cls)} - {"policy"}
        pol = {f.name for f in fields(PolicyConfig)} - {"seed"}
        unknown = set(doc) - own - pol
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        tc = cls(**{k: v for k, v in doc.items() if k in own})
        tc.policy = PolicyConfig(**{k: v for k, v in doc.items() if k in pol}, seed=tc.seed)
        tc.validate()
        return tc


def kitting_config(pc: PolicyConfig, **kw) -> KittingConfig:
    return KittingConfig(n=pc.n, crop=pc.crop_pick, channels=pc.channels, **kw)


# -- targets --

def make_targets(step, dims: tuple[int, int, int]) -> tuple[int, int, int]:
    """Flat class indices ``(pick pixel, pick angle, place)`` for an ``H x W`` scene and ``N`` bins."""
    h, w, n = dims
    pick, place = step.pick, step.place
    pick.validate(h, w, n)
    place.validate(h, w, n)
    return pick.u * w + pick.v, pick.theta_index, place.theta_index * h * w + place.u * w + place.v


def unflatten_targets(idx: tuple[int, int, int], dims: tuple[int, int, int]) -> tuple[Action, Action]:
    h, w, n = dims
    pu, pv = divmod(idx[0], w)
    t, rest = divmod(idx[2], h * w)
    qu, qv = divmod(rest, w)
    return Action(pu, pv, idx[1], "pick"), Action(qu, qv, t, "place")


# -- augmentation --

def shift_raster(img: np.ndarray, du: int, dv: int) -> np.ndarray:
    """Integer translation by ``(du, dv)`` pixels with zero fill."""
    out = np.zeros_like(img)
    h, w = img.shape[-2:]
    src_r, dst_r = slice(max(0, -du), min(h, h - du)), slice(max(0, du), min(h, h + du))
    src_c, dst_c = slice(max(0, -dv), min(w, w - dv)), slice(max(0, dv), min(w, w + dv))
    out[..., dst_r, dst_c] = img[..., src_r, src_c]
    return out


def transform_pixel(u: int, v: int, i: int, n: int, du: int, dv: int, h: int, w: int) -> tuple[int, int]:
    """Image of pixel ``(u, v)`` under a rotation by ``2 pi i / N`` about the center, then a shift."""
    x, y = v - (w - 1) / 2, (h - 1) / 2 - u
    a = 2 * math.pi * i / n
    c, s = math.cos(a), math.sin(a)
    xr, yr = c * x - s * y, s * x + c * y
    return int(round((h - 1) / 2 - yr)) + du, int(round(xr + (w - 1) / 2)) + dv


TOOL_MIN, CAVITY_MAX = 0.3, 0.1


def augment(obs, pick: Action, place: Action, rng, n: int, rotate: bool = True, translate: int = 8,
            tries: int = 100):
    """Random ``C_N`` rotation plus integer shift; labels follow the same rigid map.

    Returns ``(obs, pick, place, (i, du, dv))``.  Falls back to the unaugmented
    pair if no draw keeps both action pixels on the tool and in the cavity.
    """
    obs = np.asarray(obs, dtype=np.float64)
    _, h, w = obs.shape
    for _ in range(tries):
        i = int(rng.integers(n)) if rotate else 0
        du, dv = (int(d) for d in rng.integers(-translate, translate + 1, size=2)) if translate else (0, 0)
        pu, pv = transform_pixel(pick.u, pick.v, i, n, du, dv, h, w)
        qu, qv = transform_pixel(place.u, place.v, i, n, du, dv, h, w)
        if not (0 <= pu < h and 0 <= pv < w and 0 <= qu < h and 0 <= qv < w):
            continue
        out = shift_raster(rotate_raster(obs, 2 * math.pi * i / n), du, dv)
        if out[0, pu, pv] < TOOL_MIN or out[0, qu, qv] > CAVITY_MAX:
            continue
        return (out, Action(pu, pv, (pick.theta_index + i) % (n // 2), "pick"),
                Action(qu, qv, place.theta_index, "place"), (i, du, dv))
    return obs, pick, place, (0, 0, 0)


# -- losses --

def step_losses(bundle: PolicyBundle, obs: np.ndarray, pick: Action, place: Action) -> tuple[T.Tensor, T.Tensor, T.Tensor]:
    cfg = bundle.cfg
    _, h, w = obs.shape
    pos, ang, plc = make_targets(_Step(pick, place), (h, w, cfg.n))
    x = T.Tensor(obs)
    l_pos = T.cross_entropy_loss(bundle.pick_logits(x), pos)
    crop_a = T.Tensor(extract_crop(obs, pick.u, pick.v, cfg.crop_pick))
    l_ang = T.cross_entropy_loss(bundle.pick_angle_logits(crop_a), ang)
    crop_p = T.Tensor(extract_crop(obs, pick.u, pick.v, cfg.crop_place))
    l_plc = T.cross_entropy_loss(T.reshape(bundle.place_logits(x, crop_p), (cfg.n * h * w,)), plc)
    return l_pos, l_ang, l_plc


@dataclass
class _Step:
    pick: Action
    place: Action


# -- training --

@dataclass
class TrainResult:
    bundle: PolicyBundle
    metrics: list[dict]
    best_success: float | None
    best_iteration: int | None
    final_loss: float
    snapshots: dict[int, float] = field(default_factory=dict)


def demo_steps(dataset: list[Demo]) -> list:
    return [s for d in dataset for s in d.steps]


def make_dataset(count: int, seed: int, kcfg: KittingConfig | None = None) -> list[Demo]:
    return [make_demo(seed + k, kcfg) for k in range(count)]


def train(config: TrainConfig, dataset: list[Demo], log=None, eval_fn=None) -> TrainResult:
    """Batch-size-one Adam on the summed three-head cross-entropy.

    ``log`` (optional) receives each metric row as it is produced;
    ``eval_fn(bundle) -> success`` replaces the default held-out evaluation.
    """
    config.validate()
    steps = demo_steps(dataset)
    if not steps:
        raise ValueError("empty dataset")
    pc = config.policy
    for d in dataset:
        if d.n != pc.n:
            raise ValueError(f"dataset uses N={d.n}, config N={pc.n}")
    if any(s.obs.shape[0] != pc.channels for s in steps):
        raise ValueError("dataset channels do not match the policy config")
    bundle = PolicyBundle(pc)
    params = bundle.parameters()
    opt = AdamState(lr=config.lr)
    rng = np.random.default_rng([config.seed, 1])
    if eval_fn is None:
        kcfg = kitting_config(pc)
        eval_fn = lambda b: evaluate(b, config.eval_episodes, config.seed, kcfg).success_rate  # noqa: E731
    metrics, snapshots = [], {}
    best, best_it, best_weights = None, None, None
    t0 = time.perf_counter()
    total = float("nan")
    for it in range(1, config.iterations + 1):
        s = steps[int(rng.integers(len(steps)))]
        obs, pick, place, _ = augment(
            s.obs, s.pick, s.place, rng, pc.n, config.augment_rotate,
            config.translate_range if config.augment_translate else 0,
        )
        losses = step_losses(bundle, obs, pick, place)
        loss = T.add(T.add(losses[0], losses[1]), losses[2])
        for p in params:
            p.zero_grad()
        T.backward(loss)
        adam_step(opt, params)
        total = float(loss.data)
        row = dict(zip(METRIC_COLUMNS[1:4], (float(v.data) for v in losses)))
        row["iteration"], row["eval_success_rate"] = it, None
        if it % config.eval_every == 0 or it == config.iterations:
            sr = float(eval_fn(bundle))
            row["eval_success_rate"] = sr
            snapshots[it] = sr
            if best is None or sr > best:
                best, best_it = sr, it
                best_weights = [p.data.copy() for p in params]
        row["wall_seconds"] = time.perf_counter() - t0
        metrics.append(row)
        if log is not None:
            log(row)
    if best_weights is not None:
        for p, wv in zip(params, best_weights):
            p.data[...] = wv
    return TrainResult(bundle, metrics, best, best_it, total, snapshots)


# -- evaluation --

@dataclass
class EvalReport:
    success_rate: float
    mean_translation_error: float
    mean_rotation_error: float
    seconds_per_inference: float
    episodes: int

    def as_row(self) -> dict:
        return asdict(self)


class OraclePolicy:
    """Scripted expert; reads the scene instead of the observation."""

    def __init__(self, n: int = 36):
        self.n = n

    def act_scene(self, obs, scene):
        return oracle_actions(scene, self.n)


class RandomPolicy:
    """Uniform pick pixel, pick angle and place action."""

    def __init__(self, n: int = 36, seed: int = 0):
        self.n, self.rng = n, np.random.default_rng(seed)

    def act_scene(self, obs, scene):
        _, h, w = obs.shape
        r = self.rng.integers([h, w, self.n // 2, h, w, self.n])
        return Action(int(r[0]), int(r[1]), int(r[2]), "pick"), Action(int(r[3]), int(r[4]), int(r[5]), "place")


def eval_seeds(episodes: int, seed: int) -> range:
    start = EVAL_SEED_BASE + seed * 10_000
    return range(start, start + episodes)


def evaluate(policy, episodes: int, seed: int, kcfg: KittingConfig | None = None) -> EvalReport:
    """Roll out one pick-place per held-out episode; success on a 0 to 100 scale."""
    kcfg = kcfg or KittingConfig()
    n = kcfg.n
    wins, terr, rerr, secs = 0, [], [], []
    act = getattr(policy, "act_scene", None)
    if act is None:
        act = lambda obs, scene: policy.act(obs)  # noqa: E731
        n = policy.cfg.n
    for s in eval_seeds(episodes, seed):
        scene = generate_episode(s, kcfg)
        obs = render_observation(scene, kcfg.channels, kcfg.supersample)
        t0 = time.perf_counter()
        pick, place = act(obs, scene)
        secs.append(time.perf_counter() - t0)
        out = apply_action(scene, pick, place, n)
        ok, dt, dr = check_success(out)
        wins += ok
        terr.append(dt)
        rerr.append(abs(dr))
    return EvalReport(100.0 * wins / episodes, float(np.mean(terr)), float(np.mean(rerr)),
                      float(np.median(secs)), episodes)


def snapshot_weights(bundle: PolicyBundle) -> list[np.ndarray]:
    return [p.data.copy() for p in bundle.parameters()]


def clone_bundle(bundle: PolicyBundle) -> PolicyBundle:
    return copy.deepcopy(bundle)


__all__ = [
    "TrainConfig", "TrainResult", "EvalReport", "OraclePolicy", "RandomPolicy", "METRIC_COLUMNS",
    "make_targets", "unflatten_targets", "augment", "shift_raster", "transform_pixel", "step_losses",
    "train", "evaluate", "eval_seeds", "make_dataset", "demo_steps", "kitting_config", "snapshot_weights",
    "clone_bundle",
]
