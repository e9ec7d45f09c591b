import numpy as np


def random_rotation(rng):
    """Haar-uniform proper rotation."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def rot_z(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def random_pairs(rng, n, lo=1.0, hi=30.0):
    """Pairs of points with norms in [lo, hi] and distinct members."""
    def pts():
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return d * rng.uniform(lo, hi, size=(n, 1))
    return pts(), pts()
