import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from histoport.kitting import (
    KittingConfig,
    Scene,
    ShapeSpec,
    _trace_outline,
    apply_action,
    check_success,
    generate_episode,
    oracle_actions,
    render_layers,
    render_observation,
    wrap_angle,
)
from histoport.policy import Action


def winding_inside(poly, pts):
    """Independent point-in-polygon: nonzero winding number by summed signed angles."""
    total = np.zeros(pts.shape[:-1])
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        da, db = a - pts, b - pts
        cross = da[..., 0] * db[..., 1] - da[..., 1] * db[..., 0]
        dot = (da * db).sum(-1)
        total += np.arctan2(cross, dot)
    return np.abs(total) > np.pi


def fine_grid(h=64, w=64, ss=8):
    off = (np.arange(ss) + 0.5) / ss - 0.5
    xs = (np.arange(w)[:, None] + off).reshape(-1) - (w - 1) / 2
    ys = (h - 1) / 2 - (np.arange(h)[:, None] + off).reshape(-1)
    xx, yy = np.meshgrid(xs, ys)
    return np.stack([xx, yy], -1)


@pytest.fixture(scope="module")
def scenes():
    return [generate_episode(s) for s in range(1000)]


def test_same_seed_bit_identical():
    a, b = generate_episode(11), generate_episode(11)
    assert np.array_equal(a.shape.vertices, b.shape.vertices)
    assert a.tool == b.tool and a.kit == b.kit
    assert np.array_equal(render_observation(a), render_observation(b))
    assert oracle_actions(a) == oracle_actions(b)


def test_different_seeds_differ():
    assert generate_episode(1).tool != generate_episode(2).tool


def test_no_overlaps_over_1000_seeds(scenes):
    grid = fine_grid()
    for sc in scenes:
        box = sc.plate_polygon()
        tool = sc.shape.world(sc.tool)
        # both parts inside the workspace
        for pts in (box, tool):
            assert (np.abs(pts) < 32).all()
        lo = np.minimum(tool.min(0), box.min(0)) - 1
        hi = np.maximum(tool.max(0), box.max(0)) + 1
        sel = grid[(grid[..., 0] >= lo[0]) & (grid[..., 0] <= hi[0]) & (grid[..., 1] >= lo[1]) & (grid[..., 1] <= hi[1])]
        assert not (winding_inside(tool, sel) & winding_inside(box, sel)).any()


def brute_iou(poly, theta, ss=8):
    ext = np.abs(poly).max() + 1
    ax = np.arange(-ext, ext, 1 / ss) + 0.5 / ss
    pts = np.stack(np.meshgrid(ax, ax), -1)
    c, s = math.cos(theta), math.sin(theta)
    a = winding_inside(poly, pts)
    b = winding_inside(poly @ np.array([[c, -s], [s, c]]).T, pts)
    return (a & b).sum() / (a | b).sum()


def test_shapes_are_asymmetric(scenes):
    for sc in scenes[:60]:
        worst = max(brute_iou(sc.shape.vertices, 2 * math.pi * i / 36) for i in range(1, 36))
        # the generator rasterizes at 4x, the oracle at 8x: allow the sampling difference
        assert worst <= 0.85 + 0.01


def test_shape_size_and_centering(scenes):
    for sc in scenes[:200]:
        v = sc.shape.vertices
        assert 10 - 1e-9 <= sc.shape.diameter <= 14 + 1e-9
        x, y = v[:, 0], v[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cr = x * yn - xn * y
        area = cr.sum() / 2
        assert area > 0  # counter-clockwise
        assert abs(((x + xn) * cr).sum() / (6 * area)) <= 1e-9
        assert abs(((y + yn) * cr).sum() / (6 * area)) <= 1e-9


def test_outline_tracer():
    sq = _trace_outline({(0, 0), (1, 0), (0, 1), (1, 1)})
    assert sq.shape == (4, 2)
    assert _trace_outline({(0, 0), (1, 1)}) is None  # pinch at a shared corner
    ring = {(i, j) for i in range(3) for j in range(3)} - {(1, 1)}
    assert _trace_outline(ring) is None  # hole


# -- rendering --

def test_empty_scene_renders_zero():
    assert np.array_equal(render_observation(None), np.zeros((1, 64, 64)))


def test_render_values_by_construction():
    sc = generate_episode(5)
    obs = render_observation(sc)[0]
    pick, place = oracle_actions(sc)
    assert obs[pick.u, pick.v] == pytest.approx(0.4)
    assert obs[place.u, place.v] == 0.0
    layers = render_layers(sc)
    plate_px = np.argwhere(layers["plate"] == 1.0)
    assert len(plate_px) > 0
    assert obs[tuple(plate_px[0])] == pytest.approx(0.2)
    assert obs.min() >= 0 and obs.max() <= 0.4 + 1e-12


def test_render_quarter_turn(scenes):
    for sc in scenes[:20]:
        a = render_observation(sc)
        b = render_observation(sc.rotated_quarter())
        assert np.abs(b - np.rot90(a, 1, axes=(1, 2))).max() <= 0.02


def test_render_channels():
    sc = generate_episode(2)
    obs = render_observation(sc, channels=4)
    assert obs.shape == (4, 64, 64)
    np.testing.assert_array_equal(obs[0], render_observation(sc)[0])


# -- oracle --

def make_scene(theta_tool, theta_kit):
    sc = generate_episode(8)
    return replace(sc, tool=sc.tool[:2] + (theta_tool,), kit=sc.kit[:2] + (theta_kit,))


def test_oracle_zero_orientation_change():
    assert oracle_actions(make_scene(0.7, 0.7))[1].theta_index == 0


def test_oracle_quarter_turn_index():
    assert oracle_actions(make_scene(0.0, math.pi / 2), 36)[1].theta_index == 9


def test_oracle_pick_bin_is_mod_pi():
    sc = make_scene(math.pi + 2 * math.pi * 3 / 36, 0.0)
    assert oracle_actions(sc, 36)[0].theta_index == 3


def test_oracle_requires_table():
    with pytest.raises(ValueError):
        oracle_actions(replace(generate_episode(1), state="kitted"))


def test_oracle_closure_500_seeds(scenes):
    fails = []
    for sc in scenes[:500]:
        pick, place = oracle_actions(sc, 36)
        if apply_action(sc, pick, place, 36).state != "kitted":
            fails.append(sc)
    assert len(fails) <= 5
    # every failure is angle quantization: the finer grid closes it
    for sc in fails:
        pick, place = oracle_actions(sc, 180)
        assert apply_action(sc, pick, place, 180).state == "kitted"


# -- dynamics and success --

def test_pick_off_tool_is_noop():
    sc = generate_episode(3)
    obs = render_observation(sc)[0]
    u, v = np.argwhere(obs == 0)[0]
    out = apply_action(sc, Action(int(u), int(v), 0), Action(30, 30, 4, "place"))
    assert out is sc


def test_oracle_offset_three_pixels_misplaced():
    sc = generate_episode(4)
    pick, place = oracle_actions(sc)
    assert apply_action(sc, pick, place).state == "kitted"
    moved = apply_action(sc, pick, replace(place, v=place.v + 3))
    assert moved.state == "misplaced"


def test_success_exact_pose():
    sc = generate_episode(6)
    ok, dt, dr = check_success(replace(sc, tool=sc.kit))
    assert ok and dt == 0.0 and dr == 0.0


def test_success_offset_beyond_clearance():
    sc = generate_episode(6)
    x, y, th = sc.kit
    assert not check_success(replace(sc, tool=(x + sc.clearance + 2, y, th)))[0]
    assert not check_success(replace(sc, tool=(x, y - sc.clearance - 2, th)))[0]


def test_success_thirty_degrees_off(scenes):
    for sc in scenes[:50]:
        x, y, th = sc.kit
        for sign in (1, -1):
            assert not check_success(replace(sc, tool=(x, y, th + sign * math.pi / 6)))[0]


def test_wrap_angle():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 400),
    dx=st.floats(-1.5, 1.5), dy=st.floats(-1.5, 1.5), dth=st.floats(-0.15, 0.15),
    t=st.floats(0, 1),
)
def test_success_monotone_in_pose_error(seed, dx, dy, dth, t):
    sc = generate_episode(seed)
    x, y, th = sc.kit
    far = replace(sc, tool=(x + dx, y + dy, th + dth))
    near = replace(sc, tool=(x + t * dx, y + t * dy, th + t * dth))
    if check_success(far)[0]:
        assert check_success(near)[0]


def test_shape_world_transform():
    s = ShapeSpec(np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]))
    w = s.world((2.0, 3.0, math.pi / 2))
    np.testing.assert_allclose(w[0], [2.0, 4.0], atol=1e-12)


def test_generation_budget():
    from histoport.kitting import GenerationError

    with pytest.raises(GenerationError):
        generate_episode(0, KittingConfig(iou_bound=0.0, attempts=5))


def test_scene_is_frozen():
    sc = generate_episode(0)
    with pytest.raises(Exception):
        sc.state = "kitted"
    assert isinstance(sc, Scene)
