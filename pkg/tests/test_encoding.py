import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anglegraph import encoding as enc
from anglegraph.errors import DegenerateVector, UnknownEncoder
from helpers import random_pairs, random_rotation, rot_z


def test_unit_direction():
    np.testing.assert_array_equal(enc.unit_direction((2, 0, 0)), [1, 0, 0])
    np.testing.assert_allclose(enc.unit_direction((1, 1, 0)), [0.70710678, 0.70710678, 0], atol=1e-8)


def test_unit_direction_scale_invariant():
    rng = np.random.default_rng(0)
    for _ in range(100):
        p = rng.normal(size=3)
        c = rng.uniform(0.01, 100)
        np.testing.assert_allclose(enc.unit_direction(c * p), enc.unit_direction(p), atol=1e-12)


def test_unit_direction_degenerate():
    with pytest.raises(DegenerateVector):
        enc.unit_direction((0, 0, 1e-9))


@pytest.mark.parametrize("u, v, expected", [
    ((1, 0, 0), (1, 0, 0), 0.0),
    ((1, 0, 0), (0, 1, 0), 90.0),
    ((1, 0, 0), (-1, 0, 0), 180.0),
])
def test_angle_between(u, v, expected):
    assert enc.angle_between(np.array(u, float), np.array(v, float)) == expected


def test_angle_between_clamps():
    rng = np.random.default_rng(0)
    over = [u for u in (enc.unit_direction(rng.normal(size=3)) for _ in range(2000)) if np.dot(u, u) > 1.0]
    assert over, "expected some unit vectors whose self-dot rounds above 1"
    for u in over:
        assert enc.angle_between(u, u) == 0.0
    assert enc.angle_between(np.array([-1.0 - 1e-15, 0, 0]), np.array([1.0, 0, 0])) == 180.0


def test_relative_absolute_euclidean_examples():
    pi, pj = (1, 2, 3), (4, 6, 8)
    r = enc.encode_relative(pi, pj, 0.5)
    assert r.geo == (-3, -4, -5) and r.reflectance == 0.5 and r.d_enc == 4
    assert enc.encode_absolute(pi, pj).geo == (3, 4, 5)
    assert enc.encode_euclidean(pi, pj).geo == (9, 16, 25)
    assert enc.encode_relative(pi, pi).geo == (0, 0, 0)
    assert enc.encode_euclidean(pi, pi).geo == (0, 0, 0)


def test_translation_cancels_in_relative():
    rng = np.random.default_rng(1)
    for _ in range(50):
        pi, pj, t = rng.normal(size=(3, 3)) * 10
        # exact only when the additions are exact; use dyadic values
        pi, pj, t = (np.round(x * 64) / 64 for x in (pi, pj, t))
        assert enc.encode_relative(pi + t, pj + t).geo == enc.encode_relative(pi, pj).geo


def test_absolute_symmetric_and_definitional():
    rng = np.random.default_rng(2)
    for _ in range(50):
        pi, pj = rng.normal(size=(2, 3))
        a = enc.encode_absolute(pi, pj).geo
        assert a == enc.encode_absolute(pj, pi).geo
        assert a == tuple(abs(v) for v in enc.encode_relative(pi, pj).geo)
        assert enc.encode_euclidean(pi, pj).geo == tuple(v * v for v in enc.encode_relative(pi, pj).geo)


@pytest.mark.parametrize("pi, pj, expected", [
    ((1, 0, 0), (2, 0, 0), (0.0, 180.0, 0.0)),
    ((1, 0, 0), (0, 1, 0), (90.0, 135.0, -45.0)),
    ((1, 1, 0), (0, 1, 1), (60.0, 120.0, 0.0)),  # value checked with a plain math.acos script
])
def test_angle_golden(pi, pj, expected):
    geo = enc.encode_angle(pi, pj).geo
    np.testing.assert_allclose(geo, expected, atol=1e-9, rtol=0)


def test_angle_normalized_range():
    geo = enc.encode_angle((1, 0, 0), (0, 1, 0), normalize=True).geo
    np.testing.assert_allclose(geo, (0.5, 0.75, -0.25), atol=1e-12)


def test_angle_coincident_points():
    assert enc.encode_angle((3, 1, 2), (3, 1, 2)).geo == (0.0, 0.0, 180.0)


def test_angle_degenerate_input():
    with pytest.raises(DegenerateVector):
        enc.encode_angle((0, 0, 0), (1, 0, 0))


def test_angle_relative_composition():
    f = enc.encode_angle_relative((1, 0, 0), (2, 0, 0), 0.2)
    assert f.geo + (f.reflectance,) == (0.0, 180.0, 0.0, -1.0, 0.0, 0.0, 0.2)
    assert f.d_enc == 7
    rng = np.random.default_rng(3)
    for _ in range(20):
        pi, pj = rng.normal(size=(2, 3)) * 5
        ar = enc.encode_angle_relative(pi, pj, 0.3, normalize=True)
        assert ar.geo == enc.encode_angle(pi, pj, normalize=True).geo + enc.encode_relative(pi, pj).geo


@pytest.mark.parametrize("name", enc.ENCODERS)
def test_dispatch(name):
    pi, pj = (1.0, 1.0, 0.0), (0.0, 1.0, 1.0)
    direct = getattr(enc, f"encode_{name}")(pi, pj, 0.7)
    assert enc.encode_pair(name, pi, pj, 0.7) == direct
    assert direct.d_enc == enc.feature_dim(name)


def test_unknown_encoder():
    with pytest.raises(UnknownEncoder):
        enc.encode_pair("cosine", (1, 0, 0), (0, 1, 0))


def test_batch_matches_pairs():
    rng = np.random.default_rng(4)
    a, b = random_pairs(rng, 30)
    refl = rng.uniform(size=30)
    for name in enc.ENCODERS:
        batch = enc.encode_batch(name, a, b, refl, normalize=False)
        for k in range(30):
            np.testing.assert_array_equal(batch[k], enc.encode_pair(name, a[k], b[k], refl[k]).as_array())


def test_rotation_invariance_of_angles():
    rng = np.random.default_rng(5)
    a, b = random_pairs(rng, 1000)
    base, _ = enc.encode_geo("angle", a, b, normalize=False)
    for _ in range(100):
        rot = random_rotation(rng)
        geo, _ = enc.encode_geo("angle", a @ rot.T, b @ rot.T, normalize=False)
        assert np.abs(geo - base).max() <= 1e-7


def test_rotation_equivariance_of_relative():
    rng = np.random.default_rng(6)
    a, b = random_pairs(rng, 1000)
    base, _ = enc.encode_geo("relative", a, b)
    for _ in range(100):
        rot = random_rotation(rng)
        geo, _ = enc.encode_geo("relative", a @ rot.T, b @ rot.T)
        assert np.abs(geo - base @ rot.T).max() <= 1e-9


@pytest.mark.parametrize("name", ["absolute", "euclidean"])
def test_absolute_euclidean_change_under_rotation(name):
    pi, pj = np.array([5.0, 0, 0]), np.array([6.0, 0, 0])
    rot = rot_z(np.pi / 4)
    before = enc.encode_pair(name, pi, pj).geo
    after = enc.encode_pair(name, rot @ pi, rot @ pj).geo
    assert np.abs(np.subtract(before, after)).max() > 0.1


def test_translation_changes_angle_features():
    pi, pj = np.array([1.0, 0, 0]), np.array([0.0, 1, 0])
    t = np.array([10.0, 0, 0])
    before = enc.encode_angle(pi, pj).geo
    after = enc.encode_angle(pi + t, pj + t).geo
    assert abs(after[0] - before[0]) > 1.0


def test_translation_invariance_of_distance_encoders():
    rng = np.random.default_rng(7)
    a, b = random_pairs(rng, 200)
    t = np.array([0.25, -3.5, 8.0])
    for name in ("relative", "absolute", "euclidean"):
        g0, _ = enc.encode_geo(name, a, b)
        g1, _ = enc.encode_geo(name, a + t, b + t)
        np.testing.assert_allclose(g1, g0, atol=1e-12)


coord = st.floats(-50, 50, allow_nan=False)
point = st.tuples(coord, coord, coord).filter(lambda p: math.dist(p, (0, 0, 0)) > 1e-3)


@settings(max_examples=300, deadline=None)
@given(point, point)
def test_angle_identities(pi, pj):
    am1, am2, am3 = enc.encode_angle(pi, pj).geo
    assert (am1 + am2) + am3 == pytest.approx(180.0, abs=1e-12)
    assert 0 <= am1 <= 180 and 0 <= am2 <= 180
    assert -180 <= am3 <= 180
    assert am1 == enc.encode_angle(pj, pi).geo[0]
    n = enc.feature_dim("angle")
    assert n == 4


@settings(max_examples=300, deadline=None)
@given(point, point)
def test_am2_swap_identity(pi, pj):
    pi, pj = np.array(pi), np.array(pj)
    if np.linalg.norm(pi - pj) < 1e-6:
        return
    r = (pi - pj) / np.linalg.norm(pi - pj)
    nj = enc.unit_direction(pj)
    assert enc.angle_between(r, nj) + enc.angle_between(-r, nj) == pytest.approx(180.0, abs=1e-7)


def test_normalized_angles_stay_in_unit_range():
    rng = np.random.default_rng(8)
    a, b = random_pairs(rng, 5000, lo=0.5, hi=40)
    geo, _ = enc.encode_geo("angle", a, b, normalize=True)
    assert geo.min() >= -1.0 and geo.max() <= 1.0
    assert np.isfinite(geo).all()


@pytest.mark.parametrize("name", enc.ENCODERS)
def test_center_jacobian_matches_finite_differences(name):
    rng = np.random.default_rng(9)
    a, b = random_pairs(rng, 50, lo=2, hi=10)
    _, jac = enc.encode_geo(name, a, b, normalize=True, jacobian=True)
    h = 1e-6
    for c in range(3):
        dp = np.zeros(3)
        dp[c] = h
        gp, _ = enc.encode_geo(name, a + dp, b, normalize=True)
        gm, _ = enc.encode_geo(name, a - dp, b, normalize=True)
        np.testing.assert_allclose(jac[:, :, c], (gp - gm) / (2 * h), rtol=1e-5, atol=1e-7)
