"""Runtime invariant suite behind ``histoport check``.

Each check is a deterministic function returning a measured residual (or
rate) that is compared with a fixed bound.  Everything here is seeded, so two
runs print the same table.
"""

from __future__ import annotations

import math
import tempfile
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.ndimage import gaussian_filter

from . import groups as G
from . import tensor as T
from .eoh import generate_eoh_tensor, subgroup_alignment, subsample_group, transform_eoh
from .fields import FeatureField, group_pool, rotate_raster, transform_field
from .gradcheck import gradcheck
from .steerable import (
    ELU,
    Conv,
    NetworkSpec,
    SteerableConvLayer,
    assemble_network,
    build_kernel_basis,
    equivariance_residual,
    steerability_residual,
)


@dataclass
class Check:
    module: str
    name: str
    fn: Callable[[], float]
    bound: float
    kind: str = "max"  # "max": value <= bound; "min": value >= bound

    def run(self) -> tuple[float, bool]:
        v = float(self.fn())
        ok = v <= self.bound if self.kind == "max" else v >= self.bound
        return v, bool(ok and math.isfinite(v))


def _reps():
    return [G.RepSpec.trivial(), G.RepSpec.standard(), G.RepSpec.irrep(3), G.RepSpec.irrep_sum(4),
            G.RepSpec.regular(12), G.RepSpec.quotient_irrep_sum(3)]


def _elements(rep, rng, count):
    out = []
    for _ in range(count):
        if rep.kind == "regular":
            out.append(G.GroupElement.cyclic(int(rng.integers(rep.n)), rep.n))
        elif rep.group == G.QUOTIENT:
            out.append(G.GroupElement.quotient(rng.uniform(0, math.pi)))
        else:
            out.append(G.GroupElement.rotation(rng.uniform(0, 2 * math.pi)))
    return out


def homomorphism() -> float:
    rng = np.random.default_rng(0)
    worst = 0.0
    for rep in _reps():
        a, b = _elements(rep, rng, 100), _elements(rep, rng, 100)
        for g1, g2 in zip(a, b):
            d = G.rep_matrix(rep, g1) @ G.rep_matrix(rep, g2) - G.rep_matrix(rep, g1 * g2)
            worst = max(worst, np.abs(d).max())
    return worst


def orthogonality() -> float:
    rng = np.random.default_rng(1)
    worst = 0.0
    for rep in _reps():
        for g in _elements(rep, rng, 100):
            m = G.rep_matrix(rep, g)
            worst = max(worst, np.abs(m.T @ m - np.eye(rep.dim)).max())
    return worst


def inverse() -> float:
    rng = np.random.default_rng(2)
    worst = 0.0
    for rep in _reps():
        for g in _elements(rep, rng, 100):
            d = G.rep_matrix(rep, g.inverse()) - np.linalg.inv(G.rep_matrix(rep, g))
            worst = max(worst, np.abs(d).max())
    return worst


def intertwiner() -> float:
    worst = 0.0
    for n in (4, 12, 36, 180):
        jc = (n - 1) // 2 if n < 12 else 5
        q = G.discretization_matrix(n, jc)
        for i in range(n):
            g = G.GroupElement.cyclic(i, n)
            d = q @ G.coefficient_action(jc, g) - G.regular_matrix(n, i) @ q
            worst = max(worst, np.abs(d).max())
    return worst


def fourier_round_trip() -> float:
    rng = np.random.default_rng(3)
    worst = 0.0
    for n in (3, 8, 16, 36):
        for jc in range(0, (n - 1) // 2 + 1):
            v = rng.normal(size=1 + 2 * jc)
            worst = max(worst, np.abs(G.fit_coefficients(G.discretization_matrix(n, jc) @ v, n, jc) - v).max())
            if n % 2 == 0 and n // 2 >= 1 + 2 * jc:
                qv = G.discretization_matrix(n, jc, True) @ v
                worst = max(worst, np.abs(G.fit_coefficients(qv, n, jc, True) - v).max())
    return worst


def gradients() -> float:
    rng = np.random.default_rng(4)
    x = T.Tensor(rng.normal(size=(2, 6, 6)), requires_grad=True)
    w = T.Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
    r, r2, r3 = (T.Tensor(rng.normal(size=s)) for s in ((3, 6, 6), (2, 6, 6), (2, 3, 3)))
    errs = [
        gradcheck(lambda a, b: T.tsum(T.mul(T.conv2d(a, b, 1), r)), [x, w]),
        gradcheck(lambda a: T.tsum(T.mul(T.elu(a), r2)), [x]),
        gradcheck(lambda a: T.cross_entropy_loss(T.reshape(a, (72,)), 5), [x]),
        gradcheck(lambda a: T.tsum(T.mul(T.max_pool2d(a, 2), r3)), [x]),
    ]
    return max(errs)


def field_action_law() -> float:
    rng = np.random.default_rng(5)
    worst = 0.0
    for rep in (G.RepSpec.standard(), G.RepSpec.irrep_sum(3)):
        f = FeatureField(rng.normal(size=(2, rep.dim, 8, 8)), rep)
        for a in range(4):
            for b in range(4):
                g1, g2 = G.GroupElement.rotation(a * math.pi / 2), G.GroupElement.rotation(b * math.pi / 2)
                d = transform_field(transform_field(f, g1), g2).tensor - transform_field(f, g2 * g1).tensor
                worst = max(worst, np.abs(d).max())
    return worst


def group_pool_commutes() -> float:
    rng = np.random.default_rng(6)
    f = FeatureField(rng.normal(size=(2, 7, 8, 8)), G.RepSpec.irrep_sum(3))
    g = G.GroupElement.rotation(math.pi / 2)
    return float(np.abs(group_pool(transform_field(f, g)).tensor - rotate_raster(group_pool(f).tensor, g.angle)).max())


def kernel_constraint() -> float:
    thetas = np.linspace(0, 2 * math.pi, 36, endpoint=False)
    pts = np.random.default_rng(7).uniform(-2.5, 2.5, size=(2, 40))
    worst = 0.0
    for m in range(7):
        for n in range(7):
            for el in build_kernel_basis(m, n).elements:
                for th in thetas:
                    worst = max(worst, steerability_residual(el, th, pts[0], pts[1]))
    return worst


def kernel_raster_quarter_turn() -> float:
    worst = 0.0
    for m in range(7):
        for n in range(7):
            for ras in build_kernel_basis(m, n).rasters:
                k = ras.transpose(2, 3, 0, 1)
                for q in range(1, 4):
                    g = G.GroupElement.rotation(q * math.pi / 2)
                    rout = G.rep_matrix(G.RepSpec.irrep(n), g)
                    rin_inv = G.rep_matrix(G.RepSpec.irrep(m), g.inverse())
                    rhs = np.einsum("ab,bcyx,cd->adyx", rout, np.rot90(k, q, axes=(2, 3)), rin_inv)
                    worst = max(worst, np.abs(k - rhs).max())
    return worst


def conv_equivariance() -> float:
    rng = np.random.default_rng(8)
    spec = NetworkSpec(G.RepSpec.trivial(), 1, [
        Conv(G.RepSpec.irrep_sum(3), 2), ELU(), Conv(G.RepSpec.irrep_sum(2), 2),
    ])
    net = assemble_network(spec, rng)
    f = FeatureField(rng.normal(size=(1, 1, 12, 12)), G.RepSpec.trivial())
    return equivariance_residual(net, f, G.GroupElement.rotation(math.pi / 2))


def _coeff_map(seed, jc=3, size=16):
    rng = np.random.default_rng(seed)
    return gaussian_filter(rng.normal(size=(1 + 2 * jc, size, size)), (0, 1.5, 1.5))


def eoh_normalized() -> float:
    with T.no_grad():
        e = generate_eoh_tensor(T.Tensor(_coeff_map(9)), 12).data
    return float(max(np.abs(e.sum(0) - 1).max(), -min(e.min(), 0.0)))


def eoh_quarter_turn() -> float:
    rng = np.random.default_rng(10)
    worst = 0.0
    for s in range(3):
        spec = NetworkSpec(G.RepSpec.trivial(), 1, [Conv(G.RepSpec.irrep_sum(3), 2), ELU(), Conv(G.RepSpec.irrep_sum(3), 1)])
        net = assemble_network(spec, rng)
        img = gaussian_filter(rng.normal(size=(1, 16, 16)), (0, 1.5, 1.5))
        with T.no_grad():
            a = generate_eoh_tensor(net.apply(T.Tensor(img)), 36).data
            b = generate_eoh_tensor(net.apply(T.Tensor(np.rot90(img, 1, axes=(1, 2)).copy())), 36).data
        worst = max(worst, np.abs(b - transform_eoh(a, 9)).max())
    return worst


def subsample_commutes() -> float:
    rng = np.random.default_rng(11)
    e = rng.random((36, 9, 9))
    worst = 0.0
    for k in range(12):
        lhs = subsample_group(transform_eoh(e, 3 * k), 12)
        rhs = transform_eoh(subsample_group(e, 12), k)
        worst = max(worst, np.abs(lhs - rhs).max())
    return worst


def alignment_brute_force() -> float:
    rng = np.random.default_rng(12)
    e = rng.random((36, 9, 9))
    worst = 0.0
    for m in (2, 4, 6, 12, 18, 36):
        fast = subgroup_alignment(e, m)
        brute = np.stack([subsample_group(transform_eoh(e, i), m) for i in range(36)])
        worst = max(worst, np.abs(fast - brute).max())
    return worst


def _bundle():
    from .policy import PolicyBundle, PolicyConfig

    return PolicyBundle(PolicyConfig(seed=0))


def _smooth(shape, seed):
    return gaussian_filter(np.random.default_rng(seed).normal(size=shape), (0, 1.5, 1.5))


def pick_position_equivariance() -> float:
    b = _bundle()
    obs = _smooth((1, 64, 64), 13)
    with T.no_grad():
        a = b.pick_logits(T.Tensor(obs)).data.reshape(64, 64)
        r = b.pick_logits(T.Tensor(np.rot90(obs, 1, axes=(1, 2)).copy())).data.reshape(64, 64)
    return float(np.abs(r - np.rot90(a)).max())


def pick_angle_half_turn() -> float:
    b = _bundle()
    crop = _smooth((1, 25, 25), 14)
    return float(np.abs(b.pick_angle(crop) - b.pick_angle(np.rot90(crop, 2, axes=(1, 2)).copy())).max())


def pick_angle_quarter_shift() -> float:
    b = _bundle()
    crop = _smooth((1, 25, 25), 15)
    a, r = b.pick_angle(crop), b.pick_angle(np.rot90(crop, 1, axes=(1, 2)).copy())
    return float(np.abs(r - np.roll(a, b.cfg.n // 4)).max())


def place_scene_side() -> float:
    b = _bundle()
    obs, crop = _smooth((1, 64, 64), 16), _smooth((1, 25, 25), 17)
    a = b.place_distribution(obs, crop)
    r = b.place_distribution(np.rot90(obs, 1, axes=(1, 2)).copy(), crop)
    return float(np.abs(r - np.roll(np.rot90(a, 1, axes=(1, 2)), b.cfg.n // 4, axis=0)).max())


def place_crop_side() -> float:
    b = _bundle()
    obs, crop = _smooth((1, 64, 64), 18), _smooth((1, 25, 25), 19)
    a = b.place_distribution(obs, crop)
    r = b.place_distribution(obs, np.rot90(crop, 1, axes=(1, 2)).copy())
    return float(np.abs(r - np.roll(a, -(b.cfg.n // 4), axis=0)).max())


def parameter_count_gap() -> float:
    from .policy import PolicyBundle, PolicyConfig

    a = PolicyBundle(PolicyConfig(n=36)).parameter_counts()
    b = PolicyBundle(PolicyConfig(n=180)).parameter_counts()
    return float(sum(abs(a[k] - b[k]) for k in a))


def kitting_determinism() -> float:
    from .kitting import generate_episode, oracle_actions, render_observation

    a, b = generate_episode(21), generate_episode(21)
    same = (np.array_equal(a.shape.vertices, b.shape.vertices) and a.tool == b.tool and a.kit == b.kit
            and np.array_equal(render_observation(a), render_observation(b)) and oracle_actions(a) == oracle_actions(b))
    return 0.0 if same else 1.0


def render_quarter_turn() -> float:
    from .kitting import generate_episode, render_observation

    worst = 0.0
    for s in range(5):
        sc = generate_episode(s)
        d = render_observation(sc.rotated_quarter()) - np.rot90(render_observation(sc), 1, axes=(1, 2))
        worst = max(worst, np.abs(d).max())
    return worst


def oracle_closure() -> float:
    from .kitting import apply_action, generate_episode, oracle_actions

    ok = 0
    for s in range(500):
        sc = generate_episode(s)
        ok += apply_action(sc, *oracle_actions(sc, 36), 36).state == "kitted"
    return 100.0 * ok / 500


def success_monotone() -> float:
    from dataclasses import replace

    from .kitting import check_success, generate_episode

    rng = np.random.default_rng(22)
    flips = 0
    for s in range(10):
        sc = generate_episode(s)
        x, y, th = sc.kit
        for _ in range(10):
            d = rng.uniform(-1.2, 1.2, size=3) * np.array([1, 1, 0.1])
            prev = True
            for t in np.linspace(0, 1, 6):
                ok = check_success(replace(sc, tool=(x + t * d[0], y + t * d[1], th + t * d[2])))[0]
                flips += ok and not prev
                prev = ok
    return float(flips)


def target_round_trip() -> float:
    from .policy import Action
    from .training import _Step, make_targets, unflatten_targets

    rng = np.random.default_rng(23)
    bad = 0
    for _ in range(1000):
        r = rng.integers([64, 64, 18, 64, 64, 36])
        a, b = Action(*map(int, r[:3]), "pick"), Action(*map(int, r[3:]), "place")
        bad += unflatten_targets(make_targets(_Step(a, b), (64, 64, 36)), (64, 64, 36)) != (a, b)
    return float(bad)


def augmentation_consistency() -> float:
    """Largest pixel disagreement between augmented labels and the oracle on the moved scene."""
    from dataclasses import replace

    from .kitting import generate_episode, oracle_actions, render_observation
    from .training import augment

    rng = np.random.default_rng(24)
    worst = 0.0
    for s in range(20):
        sc = generate_episode(s)
        pick, place = oracle_actions(sc)
        obs, p2, q2, (i, du, dv) = augment(render_observation(sc), pick, place, rng, 36)
        a = 2 * math.pi * i / 36
        c, sn = math.cos(a), math.sin(a)
        move = lambda pose: (c * pose[0] - sn * pose[1] + dv, sn * pose[0] + c * pose[1] - du, pose[2] + a)  # noqa: E731
        moved = replace(sc, tool=move(sc.tool), kit=move(sc.kit))
        o_pick, o_place = oracle_actions(moved)
        if o_pick.theta_index != p2.theta_index or o_place.theta_index != q2.theta_index:
            return math.inf
        worst = max(worst, abs(o_pick.u - p2.u), abs(o_pick.v - p2.v))
    return worst


def evaluation_side_effect_free() -> float:
    from .policy import PolicyBundle, PolicyConfig
    from .training import evaluate

    b = PolicyBundle(PolicyConfig(seed=1))
    before = [p.data.copy() for p in b.parameters()]
    evaluate(b, 2, 0)
    return float(sum(np.abs(p.data - q).max() for p, q in zip(b.parameters(), before)))


def checkpoint_round_trip() -> float:
    from .io import load_checkpoint, save_checkpoint
    from .policy import PolicyBundle, PolicyConfig

    b = PolicyBundle(PolicyConfig(seed=2))
    with tempfile.TemporaryDirectory() as d:
        save_checkpoint(d, b)
        back, _ = load_checkpoint(d, b.cfg)
    return float(sum(not np.array_equal(p.data, q.data) for p, q in zip(b.parameters(), back.parameters())))


def conv_layer_zero() -> float:
    layer = SteerableConvLayer(G.RepSpec.irrep_sum(2), G.RepSpec.irrep_sum(2), 1, 1, rng=0)
    layer.coefficients.data[...] = 0
    with T.no_grad():
        out = layer.apply(T.Tensor(np.random.default_rng(25).normal(size=(5, 8, 8))))
    return float(np.abs(out.data).max())


CHECKS = [
    Check("group_algebra", "homomorphism", homomorphism, 1e-10),
    Check("group_algebra", "orthogonality", orthogonality, 1e-12),
    Check("group_algebra", "inverse", inverse, 1e-10),
    Check("group_algebra", "discretization/regular intertwiner", intertwiner, 1e-10),
    Check("group_algebra", "fit after discretize is identity", fourier_round_trip, 1e-10),
    Check("tensor_engine", "finite-difference gradients", gradients, 1e-4),
    Check("fields", "group action law (quarter turns)", field_action_law, 1e-10),
    Check("fields", "group pooling commutes with rotation", group_pool_commutes, 1e-10),
    Check("steerable", "analytic kernel constraint", kernel_constraint, 1e-9),
    Check("steerable", "rasterized quarter-turn constraint", kernel_raster_quarter_turn, 1e-9),
    Check("steerable", "zero coefficients give zero output", conv_layer_zero, 0.0),
    Check("steerable", "network quarter-turn equivariance", conv_equivariance, 1e-10),
    Check("eoh", "per-pixel normalization", eoh_normalized, 1e-12),
    Check("eoh", "quarter-turn equivariance", eoh_quarter_turn, 1e-5),
    Check("eoh", "subsampling commutes with C_M", subsample_commutes, 1e-12),
    Check("eoh", "alignment equals brute force", alignment_brute_force, 0.0),
    Check("policy", "pick position quarter turn", pick_position_equivariance, 1e-5),
    Check("policy", "pick angle half-turn invariance", pick_angle_half_turn, 1e-6),
    Check("policy", "pick angle quarter-turn bin shift", pick_angle_quarter_shift, 1e-5),
    Check("policy", "place scene-side equivariance", place_scene_side, 1e-4),
    Check("policy", "place crop-side equivariance", place_crop_side, 1e-4),
    Check("policy", "parameter count independent of N", parameter_count_gap, 0.0),
    Check("kitting_env", "determinism", kitting_determinism, 0.0),
    Check("kitting_env", "render quarter turn", render_quarter_turn, 0.02),
    Check("kitting_env", "oracle closure over 500 seeds (%)", oracle_closure, 99, "min"),
    Check("kitting_env", "success monotone in pose error (flips)", success_monotone, 0.0),
    Check("training", "target flatten round trip (mismatches)", target_round_trip, 0.0),
    Check("training", "augmentation label consistency (px)", augmentation_consistency, 1.0),
    Check("training", "evaluation leaves weights unchanged", evaluation_side_effect_free, 0.0),
    Check("cli", "checkpoint round trip (mismatched tensors)", checkpoint_round_trip, 0.0),
]


def run_checks(checks=None, out=print) -> bool:
    checks = CHECKS if checks is None else checks
    rows = []
    for c in checks:
        try:
            v, ok = c.run()
            shown = f"{v:.3e}"
        except Exception as e:  # a crashing invariant is a failing invariant
            v, ok, shown = math.nan, False, f"error: {type(e).__name__}: {e}"
        rows.append((c, shown, ok))
    width = max(len(f"{c.module}: {c.name}") for c, _, _ in rows)
    for c, shown, ok in rows:
        rel = "<=" if c.kind == "max" else ">="
        out(f"{'PASS' if ok else 'FAIL'}  {f'{c.module}: {c.name}':<{width}}  {shown}  ({rel} {c.bound:g})")
    failed = [c for c, _, ok in rows if not ok]
    out(f"{len(rows) - len(failed)}/{len(rows)} invariants hold")
    return not failed


__all__ = ["Check", "CHECKS", "run_checks"]
