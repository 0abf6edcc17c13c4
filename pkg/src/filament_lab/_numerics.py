"""Small numerical helpers: finite-difference weights, local interpolation, fits."""

from dataclasses import dataclass

import numpy as np
from scipy import stats


def fd_weights(z, x, m):
    """Fornberg weights for derivatives 0..m at ``z`` from nodes ``x``.

    Returns an array of shape (m + 1, len(x)).
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    c = np.zeros((m + 1, n))
    c1, c4 = 1.0, x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5, c4 = 1.0, c4, x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


def derivative(f, h, order, accuracy=4):
    """Finite-difference derivative of samples on a uniform grid along axis 0.

    Centered stencils in the interior, shifted (one-sided) stencils near the
    ends, same stencil width everywhere.
    """
    f = np.asarray(f)
    n = f.shape[0]
    width = order + accuracy - (1 if order % 2 == 0 else 0)
    width = min(width + (1 - width % 2), n)
    half = width // 2
    out = np.empty(f.shape, dtype=np.result_type(f, float))
    centered = fd_weights(0.0, np.arange(-half, half + 1), order)[order] / h**order
    inner = slice(half, n - half)
    acc = np.zeros_like(out[inner])
    for k, w in enumerate(centered):
        acc = acc + w * f[k : n - width + 1 + k]
    out[inner] = acc
    for i in list(range(half)) + list(range(n - half, n)):
        start = min(max(i - half, 0), n - width)
        nodes = np.arange(start, start + width)
        w = fd_weights(float(i), nodes.astype(float), order)[order] / h**order
        out[i] = np.tensordot(w, f[nodes], axes=(0, 0))
    return out


def lagrange4(values, x_min, h, points):
    """Cubic (4-point Lagrange) interpolation of uniformly sampled data.

    ``values`` has the sample axis first; trailing axes are carried along.
    Points are assumed to lie inside [x_min, x_min + (n-1) h].
    """
    values = np.asarray(values)
    n = values.shape[0]
    pos = (np.asarray(points, dtype=float) - x_min) / h
    i = np.clip(np.floor(pos).astype(np.int64) - 1, 0, n - 4)
    u = pos - i
    w0 = -(u - 1) * (u - 2) * (u - 3) / 6
    w1 = u * (u - 2) * (u - 3) / 2
    w2 = -u * (u - 1) * (u - 3) / 2
    w3 = u * (u - 1) * (u - 2) / 6
    extra = (slice(None),) + (None,) * (values.ndim - 1)
    return (
        w0[extra] * values[i]
        + w1[extra] * values[i + 1]
        + w2[extra] * values[i + 2]
        + w3[extra] * values[i + 3]
    )


def trapezoid_cumulative(f, h, start):
    """Cumulative trapezoid integral of ``f`` (axis 0) measured from node ``start``."""
    f = np.asarray(f)
    steps = 0.5 * h * (f[1:] + f[:-1])
    out = np.zeros(f.shape, dtype=np.result_type(f, float))
    out[start + 1 :] = np.cumsum(steps[start:], axis=0)
    out[:start] = -np.cumsum(steps[:start][::-1], axis=0)[::-1]
    return out


@dataclass(frozen=True)
class PowerFit:
    exponent: float
    interval: tuple
    prefactor: float
    n_points: int

    def to_dict(self):
        return {
            "exponent": self.exponent,
            "interval": list(self.interval),
            "prefactor": self.prefactor,
            "n_points": self.n_points,
        }


def fit_power_law(t, values):
    """Least-squares fit of values ~ C t^p in log-log space with a 95% interval."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    keep = (t > 0) & (v > 0) & np.isfinite(v)
    lt, lv = np.log(t[keep]), np.log(v[keep])
    n = lt.size
    if n < 3:
        raise ValueError("need at least three positive samples")
    res = stats.linregress(lt, lv)
    half = stats.t.ppf(0.975, n - 2) * res.stderr if n > 2 else np.inf
    return PowerFit(
        float(res.slope),
        (float(res.slope - half), float(res.slope + half)),
        float(np.exp(res.intercept)),
        int(n),
    )


def mgs_rows(F):
    """Modified Gram-Schmidt on the rows of (..., 3, 3) frames, T row first."""
    F = np.array(F, dtype=float, copy=True)
    T = F[..., 0, :] / np.linalg.norm(F[..., 0, :], axis=-1, keepdims=True)
    e1 = F[..., 1, :] - np.sum(F[..., 1, :] * T, axis=-1, keepdims=True) * T
    e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
    e2 = F[..., 2, :] - np.sum(F[..., 2, :] * T, axis=-1, keepdims=True) * T
    e2 -= np.sum(e2 * e1, axis=-1, keepdims=True) * e1
    e2 /= np.linalg.norm(e2, axis=-1, keepdims=True)
    F[..., 0, :], F[..., 1, :], F[..., 2, :] = T, e1, e2
    return F
