"""Geometric features for a (center, neighbor) point pair.

Five encoders map a pair plus the neighbor's reflectance to a feature
vector ``geo + (reflectance,)``:

==============  =========================================  =====
name            geo                                        d_enc
==============  =========================================  =====
relative        p_i - p_j                                  4
absolute        |p_i - p_j|                                4
euclidean       (p_i - p_j) ** 2, per axis                 4
angle           (AM1, AM2, AM3)                            4
angle_relative  (AM1, AM2, AM3, p_i - p_j)                 7
==============  =========================================  =====

The angle triple uses the unit rays ``n_i``, ``n_j`` from the sensor origin
and the unit difference ``r_ij = (p_i - p_j) / |p_i - p_j|``::

    AM1 = angle(n_i, n_j)
    AM2 = angle(r_ij, n_j)
    AM3 = 180 - (AM1 + AM2)

in degrees. AM3 is taken literally and can be negative. With
``normalize=True`` the three angles are divided by 180. Coincident points
give ``(0, 0, 180)``.

The array functions work on batches of pairs; the ``encode_*`` pair
functions wrap them for single points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVector, UnknownEncoder
from .pointcloud_io import MIN_RANGE

ENCODERS = ("euclidean", "absolute", "relative", "angle", "angle_relative")
GEO_DIM = {"euclidean": 3, "absolute": 3, "relative": 3, "angle": 3, "angle_relative": 6}

_DEG = 180.0 / np.pi


def geo_dim(encoder):
    try:
        return GEO_DIM[encoder]
    except KeyError:
        raise UnknownEncoder(f"unknown encoder {encoder!r}; expected one of {ENCODERS}") from None


def feature_dim(encoder):
    return geo_dim(encoder) + 1


@dataclass(frozen=True)
class EncodedFeature:
    geo: tuple
    reflectance: float

    @property
    def d_enc(self):
        return len(self.geo) + 1

    def as_array(self):
        return np.array(self.geo + (self.reflectance,))


def unit_direction(p):
    p = np.asarray(p, dtype=np.float64)
    n = np.linalg.norm(p)
    if not n >= MIN_RANGE:
        raise DegenerateVector(f"|p| = {n} is below {MIN_RANGE}")
    return p / n


def angle_between(u, v):
    """Angle in degrees between two unit vectors; the cosine is clamped so the result is never NaN."""
    c = np.clip(np.dot(u, v), -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))


def _rows_dot(a, b):
    return a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1] + a[:, 2] * b[:, 2]


def _norms(a):
    return np.sqrt(_rows_dot(a, a))


def _angles(centers, neighbors, normalize, jacobian):
    cn = np.maximum(_norms(centers), MIN_RANGE)
    qn = np.maximum(_norms(neighbors), MIN_RANGE)
    n_i = centers / cn[:, None]
    n_j = neighbors / qn[:, None]
    d = centers - neighbors
    dn = _norms(d)
    same = dn == 0
    r = d / np.where(same, 1.0, dn)[:, None]

    c1 = np.clip(_rows_dot(n_i, n_j), -1.0, 1.0)
    c2 = np.clip(_rows_dot(r, n_j), -1.0, 1.0)
    am1 = np.degrees(np.arccos(c1))
    am2 = np.degrees(np.arccos(c2))
    am1[same] = 0.0
    am2[same] = 0.0
    am3 = 180.0 - (am1 + am2)
    scale = 1.0 / 180.0 if normalize else 1.0
    geo = np.column_stack([am1, am2, am3]) * scale
    if not jacobian:
        return geo, None

    # d arccos(c) / dc = -1 / sqrt(1 - c^2); zero where the cosine saturates
    def darccos(c):
        s = 1.0 - c * c
        out = np.zeros_like(c)
        ok = s > 0
        out[ok] = -_DEG / np.sqrt(s[ok])
        return out

    dc1 = (n_j - c1[:, None] * n_i) / cn[:, None]
    dc2 = (n_j - c2[:, None] * r) / np.where(same, 1.0, dn)[:, None]
    g1 = darccos(c1)[:, None] * dc1
    g2 = darccos(c2)[:, None] * dc2
    g1[same] = 0.0
    g2[same] = 0.0
    jac = np.stack([g1, g2, -(g1 + g2)], axis=1) * scale
    return geo, jac


def encode_geo(encoder, centers, neighbors, normalize=True, jacobian=False):
    """Geometric block for a batch of pairs.

    Returns ``geo`` of shape (E, geo_dim) and, when ``jacobian`` is set, the
    derivative of ``geo`` with respect to the center point, shape
    (E, geo_dim, 3).
    """
    geo_dim(encoder)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    neighbors = np.asarray(neighbors, dtype=np.float64).reshape(-1, 3)
    e = len(centers)
    d = centers - neighbors
    eye = np.broadcast_to(np.eye(3), (e, 3, 3))
    if encoder == "relative":
        return d, (eye.copy() if jacobian else None)
    if encoder == "absolute":
        return np.abs(d), (eye * np.sign(d)[:, :, None] if jacobian else None)
    if encoder == "euclidean":
        return d * d, (eye * (2.0 * d)[:, :, None] if jacobian else None)
    geo, jac = _angles(centers, neighbors, normalize, jacobian)
    if encoder == "angle":
        return geo, jac
    geo = np.concatenate([geo, d], axis=1)
    if jacobian:
        jac = np.concatenate([jac, eye], axis=1)
    return geo, jac


def encode_batch(encoder, centers, neighbors, reflectance, normalize=True):
    """Full feature rows ``geo + (reflectance,)``, shape (E, d_enc)."""
    geo, _ = encode_geo(encoder, centers, neighbors, normalize)
    refl = np.asarray(reflectance, dtype=np.float64).reshape(-1, 1)
    return np.concatenate([geo, np.broadcast_to(refl, (len(geo), 1))], axis=1)


def _pair(encoder, p_i, p_j, refl, normalize):
    if encoder in ("angle", "angle_relative"):
        unit_direction(p_i)
        unit_direction(p_j)
    geo, _ = encode_geo(encoder, p_i, p_j, normalize)
    return EncodedFeature(tuple(float(v) for v in geo[0]), float(refl))


def encode_relative(p_i, p_j, refl=0.0):
    return _pair("relative", p_i, p_j, refl, False)


def encode_absolute(p_i, p_j, refl=0.0):
    return _pair("absolute", p_i, p_j, refl, False)


def encode_euclidean(p_i, p_j, refl=0.0):
    return _pair("euclidean", p_i, p_j, refl, False)


def encode_angle(p_i, p_j, refl=0.0, normalize=False):
    return _pair("angle", p_i, p_j, refl, normalize)


def encode_angle_relative(p_i, p_j, refl=0.0, normalize=False):
    return _pair("angle_relative", p_i, p_j, refl, normalize)


def encode_pair(encoder, p_i, p_j, refl=0.0, normalize=False):
    """Single-pair entry point dispatching on the encoder name."""
    geo_dim(encoder)
    return _pair(encoder, p_i, p_j, refl, normalize)
