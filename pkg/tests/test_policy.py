import math

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from histoport import tensor as T
from histoport.groups import AliasingError
from histoport.policy import (
    Action,
    PolicyBundle,
    PolicyConfig,
    extract_crop,
    preset,
    select_actions,
)


@pytest.fixture(scope="module")
def bundle():
    return PolicyBundle(PolicyConfig(seed=3))


def smooth(shape, seed, sigma=1.5):
    rng = np.random.default_rng(seed)
    return gaussian_filter(rng.normal(size=shape), (0, sigma, sigma))


def rot90(a, k=1):
    return np.rot90(a, k, axes=(-2, -1))


# -- configuration --

def test_config_validation():
    with pytest.raises(ValueError):
        PolicyConfig(n=36, m=8).validate()
    with pytest.raises(ValueError):
        PolicyConfig(crop_pick=24).validate()
    with pytest.raises(AliasingError):
        PolicyConfig(n=36, m=6).validate()  # M below 1 + 2 * 3
    with pytest.raises(ValueError):
        PolicyConfig(descriptor="sift").validate()


def test_presets():
    assert preset("desk").n == 36
    assert preset("paper").n == 180 and preset("paper").channels == 4
    assert preset("desk", m=18).m == 18
    with pytest.raises(KeyError):
        preset("laptop")


def test_pad_is_half_crop():
    assert PolicyConfig(crop_place=25).pad == 12


# -- pick position --

def test_pick_position_sums_to_one(bundle):
    for seed in range(3):
        p = bundle.pick_position(smooth((1, 64, 64), seed))
        assert p.shape == (64, 64)
        assert abs(p.sum() - 1) <= 1e-6 and (p >= 0).all()


def test_pick_position_quarter_turn_equivariance(bundle):
    obs = smooth((1, 64, 64), 4)
    with T.no_grad():
        a = bundle.pick_logits(T.Tensor(obs)).data.reshape(64, 64)
        b = bundle.pick_logits(T.Tensor(rot90(obs).copy())).data.reshape(64, 64)
    assert np.abs(b - rot90(a)).max() <= 1e-5
    p, q = bundle.pick_position(obs), bundle.pick_position(rot90(obs).copy())
    assert np.abs(q - rot90(p)).max() <= 1e-5


def test_pick_position_shape_checks(bundle):
    with pytest.raises(ValueError):
        bundle.pick_position(np.zeros((1, 62, 64)))
    with pytest.raises(ValueError):
        bundle.pick_position(np.zeros((2, 64, 64)))


# -- pick angle --

def test_pick_angle_is_distribution(bundle):
    p = bundle.pick_angle(smooth((1, 25, 25), 5))
    assert p.shape == (18,)
    assert abs(p.sum() - 1) <= 1e-12


def test_pick_angle_half_turn_invariance(bundle):
    for seed in range(3):
        crop = smooth((1, 25, 25), 10 + seed)
        a = bundle.pick_angle(crop)
        b = bundle.pick_angle(rot90(crop, 2).copy())
        assert np.abs(a - b).max() <= 1e-6


def test_pick_angle_quarter_turn_shifts_nine_bins(bundle):
    for seed in range(3):
        crop = smooth((1, 25, 25), 20 + seed)
        a = bundle.pick_angle(crop)
        b = bundle.pick_angle(rot90(crop).copy())
        assert np.abs(b - np.roll(a, 9)).max() <= 1e-5


def test_pick_angle_zero_crop_uniform(bundle):
    p = bundle.pick_angle(np.zeros((1, 25, 25)))
    np.testing.assert_allclose(p, np.full(18, 2 / 36), atol=1e-12)


def test_pick_angle_even_crop_rejected(bundle):
    with pytest.raises(ValueError):
        bundle.pick_angle(np.zeros((1, 24, 24)))


# -- place --

@pytest.fixture(scope="module")
def place_pair():
    obs = smooth((1, 64, 64), 30)
    crop = smooth((1, 25, 25), 31)
    return obs, crop


def test_place_shape(bundle, place_pair):
    obs, crop = place_pair
    assert bundle.place_distribution(obs, crop).shape == (36, 64, 64)


def test_place_scene_side_equivariance(bundle, place_pair):
    obs, crop = place_pair
    a = bundle.place_distribution(obs, crop)
    b = bundle.place_distribution(rot90(obs).copy(), crop)
    expect = np.roll(rot90(a), 9, axis=0)
    assert np.abs(b - expect).max() <= 1e-4


def test_place_crop_side_equivariance(bundle, place_pair):
    obs, crop = place_pair
    a = bundle.place_distribution(obs, crop)
    b = bundle.place_distribution(obs, rot90(crop).copy())
    assert np.abs(b - np.roll(a, -9, axis=0)).max() <= 1e-4


def test_place_wrong_crop(bundle, place_pair):
    obs, _ = place_pair
    with pytest.raises(ValueError):
        bundle.place_distribution(obs, np.zeros((1, 23, 23)))


def test_invariant_descriptor_mode():
    b = PolicyBundle(PolicyConfig(descriptor="invariant", seed=1))
    obs, crop = smooth((1, 64, 64), 40), smooth((1, 25, 25), 41)
    s = b.place_distribution(obs, crop)
    assert s.shape == (36, 64, 64)
    s2 = b.place_distribution(rot90(obs).copy(), crop)
    assert np.abs(s2 - np.roll(rot90(s), 9, axis=0)).max() <= 1e-4


def test_parameter_counts_independent_of_n():
    a = PolicyBundle(PolicyConfig(n=36)).parameter_counts()
    b = PolicyBundle(PolicyConfig(n=180)).parameter_counts()
    assert a == b
    assert all(isinstance(v, int) and v > 0 for v in a.values())


def test_place_encoders_match_in_size(bundle):
    counts = bundle.parameter_counts()
    assert counts["phi"] == counts["psi"]


# -- action selection --

def test_select_pick_delta():
    pick = np.zeros((8, 8))
    pick[3, 5] = 1
    place = np.zeros((4, 8, 8))
    a, b = select_actions(pick, lambda u, v: np.eye(4)[2], lambda u, v: place)
    assert (a.u, a.v, a.theta_index) == (3, 5, 2)
    assert (b.u, b.v, b.theta_index) == (0, 0, 0)


def test_select_place_delta():
    place = np.zeros((36, 64, 64))
    place[7, 10, 20] = 5.0
    _, b = select_actions(np.ones((64, 64)), lambda u, v: np.ones(18), lambda u, v: place)
    assert (b.u, b.v, b.theta_index, b.kind) == (10, 20, 7, "place")


def test_select_ties_lowest_flat_index():
    pick = np.zeros((5, 5))
    pick[1, 4] = pick[3, 0] = 2.0
    place = np.zeros((3, 5, 5))
    place[2, 0, 0] = place[1, 4, 4] = 1.0
    seen = []
    a, b = select_actions(pick, lambda u, v: seen.append((u, v)) or np.array([1.0, 1.0]), lambda u, v: place)
    assert (a.u, a.v, a.theta_index) == (1, 4, 0)
    assert seen == [(1, 4)]
    assert (b.theta_index, b.u, b.v) == (1, 4, 4)


def test_action_validation():
    Action(0, 0, 17, "pick").validate(64, 64, 36)
    with pytest.raises(ValueError):
        Action(0, 0, 18, "pick").validate(64, 64, 36)
    Action(63, 63, 35, "place").validate(64, 64, 36)
    with pytest.raises(ValueError):
        Action(64, 0, 0, "place").validate(64, 64, 36)
    assert math.isclose(Action(0, 0, 9, "place").angle(36), math.pi / 2)


def test_extract_crop_centered_and_zero_filled():
    obs = np.arange(25.0).reshape(1, 5, 5)
    c = extract_crop(obs, 0, 0, 3)
    assert c.shape == (1, 3, 3)
    assert c[0, 1, 1] == 0.0 and c[0, 0, 0] == 0.0
    np.testing.assert_array_equal(c[0, 1:, 1:], obs[0, :2, :2])
    assert extract_crop(obs, 2, 2, 5)[0, 2, 2] == obs[0, 2, 2]


def test_act_returns_valid_actions(bundle):
    obs = smooth((1, 64, 64), 50)
    a, b = bundle.act(obs)
    a.validate(64, 64, 36)
    b.validate(64, 64, 36)
