"""Curves, moving frames, curvature and torsion, and the spatial frame ODE.

Frames are stored as arrays of shape (n, 3, 3) whose rows are (T, e1, e2);
the complex normal is N = e1 + i e2. The spatial frame ODE is

    T' = Re(g N),    N' = -conj(g) T,

with g the filament function c exp(i(int tau + gamma)).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import _kernels
from ._numerics import derivative, lagrange4, mgs_rows, trapezoid_cumulative
from .errors import ContractError, DegenerateInputError, GridTooCoarseError, RangeError

TOL_FRAME = 1e-10
TOL_ARCLEN = 1e-6


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    h: float
    n: int

    def __post_init__(self):
        if not self.h > 0:
            raise ContractError("grid step must be positive")
        if self.n < 2:
            raise ContractError("grid needs at least two nodes")

    @classmethod
    def symmetric(cls, n, h):
        """Grid with n nodes centred on 0; for even n the node n//2 sits at 0."""
        return cls(-(n // 2) * h, h, n)

    @classmethod
    def span(cls, x_max, h):
        """Odd-sized grid covering [-x_max, x_max] with a node at 0."""
        m = int(round(x_max / h))
        return cls(-m * h, h, 2 * m + 1)

    @property
    def nodes(self):
        return self.x_min + self.h * np.arange(self.n)

    @property
    def x_max(self):
        return self.x_min + self.h * (self.n - 1)

    @property
    def extent(self):
        """Periodic extent n*h."""
        return self.n * self.h

    def nearest_index(self, x):
        return int(np.clip(round((x - self.x_min) / self.h), 0, self.n - 1))

    def contains(self, x):
        x = np.asarray(x)
        slack = 1e-12 * max(1.0, abs(self.x_min), abs(self.x_max))
        return bool(np.all((x >= self.x_min - slack) & (x <= self.x_max + slack)))

    def to_dict(self):
        return {"x_min": self.x_min, "h": self.h, "n": self.n}


@dataclass(frozen=True)
class Curve:
    grid: Grid1D
    points: np.ndarray
    arclength: bool = True

    def __post_init__(self):
        if self.points.shape != (self.grid.n, 3):
            raise ContractError("points must have shape (n, 3)")

    def tangent_modulus(self):
        return np.linalg.norm(np.diff(self.points, axis=0), axis=1) / self.grid.h


@dataclass(frozen=True)
class FrameField:
    grid: Grid1D
    frames: np.ndarray  # (n, 3, 3), rows T, e1, e2

    @classmethod
    def from_vectors(cls, grid, T, e1, e2):
        return cls(grid, np.stack([T, e1, e2], axis=1))

    @property
    def T(self):
        return self.frames[:, 0, :]

    @property
    def e1(self):
        return self.frames[:, 1, :]

    @property
    def e2(self):
        return self.frames[:, 2, :]

    @property
    def N(self):
        return self.frames[:, 1, :] + 1j * self.frames[:, 2, :]


@dataclass(frozen=True)
class FrenetData:
    grid: Grid1D
    c: np.ndarray
    tau: np.ndarray
    gamma: float = 0.0

    def __post_init__(self):
        if np.any(self.c < 0):
            raise ContractError("curvature must be nonnegative")
        object.__setattr__(self, "gamma", float(self.gamma) % (2 * np.pi))


@dataclass(frozen=True)
class FilamentFunction:
    grid: Grid1D
    g: np.ndarray


@dataclass(frozen=True)
class CornerData:
    A_plus: np.ndarray
    A_minus: np.ndarray
    B_plus: np.ndarray
    B_minus: np.ndarray
    theta: float
    fit_residual: dict = field(default_factory=dict)


CANONICAL_FRAME = np.eye(3)


def _as_frame(seed):
    F = np.asarray(seed, dtype=float)
    if F.shape != (3, 3):
        raise ContractError("a frame seed is a 3x3 array with rows T, e1, e2")
    if np.max(np.abs(F @ F.T - np.eye(3))) > 1e-8:
        raise ContractError("seed frame is not orthonormal within 1e-8")
    return F


def arclength_resample(points, target_h):
    """Resample ordered points to uniform arc-length spacing ``target_h``."""
    P = np.asarray(points, dtype=float)
    if P.ndim != 2 or P.shape[1] != 3 or P.shape[0] < 4:
        raise ContractError("need at least four points in R^3")
    chords = np.linalg.norm(np.diff(P, axis=0), axis=1)
    if np.any(chords == 0):
        raise DegenerateInputError("two consecutive points coincide")
    u = np.concatenate([[0.0], np.cumsum(chords)])
    spline = CubicSpline(u, P, axis=0)
    # arc length of the spline by composite Gauss-Legendre on each knot interval
    xg, wg = np.polynomial.legendre.leggauss(8)
    mid = 0.5 * (u[1:] + u[:-1])
    half = 0.5 * np.diff(u)
    q = mid[:, None] + half[:, None] * xg[None, :]
    speed = np.linalg.norm(spline(q, 1), axis=-1)
    seg = half * (speed @ wg)
    s_knots = np.concatenate([[0.0], np.cumsum(seg)])
    total = s_knots[-1]
    if target_h >= total:
        raise GridTooCoarseError("target spacing exceeds the curve length")
    n = int(np.floor(total / target_h * (1 + 1e-12))) + 1
    s_out = target_h * np.arange(n)
    # invert s(u) by Newton iterations started from linear interpolation
    u_out = np.interp(s_out, s_knots, u)
    for _ in range(30):
        k = np.clip(np.searchsorted(u, u_out, side="right") - 1, 0, len(u) - 2)
        a = u[k]
        # arc length from knot a to u_out with 8-point Gauss on [a, u_out]
        hm = 0.5 * (u_out - a)
        qq = (a + hm)[:, None] + hm[:, None] * xg[None, :]
        s_now = s_knots[k] + hm * (np.linalg.norm(spline(qq, 1), axis=-1) @ wg)
        step = (s_now - s_out) / np.linalg.norm(spline(u_out, 1), axis=-1)
        u_out = u_out - step
        if np.max(np.abs(step)) < 1e-15 * max(1.0, u[-1]):
            break
    return Curve(Grid1D(0.0, float(target_h), n), spline(u_out), True)


def frenet_data(curve, gamma=0.0):
    """Curvature and torsion of an arc-length curve by 4th-order differences."""
    if not curve.arclength:
        raise ContractError("frenet_data needs an arc-length parametrized curve")
    if curve.grid.n < 5:
        raise ContractError("need at least five nodes")
    h = curve.grid.h
    d1 = derivative(curve.points, h, 1)
    d2 = derivative(curve.points, h, 2)
    d3 = derivative(curve.points, h, 3)
    c = np.linalg.norm(d2, axis=1)
    # relative floor, raised to the round-off level of the second difference
    noise = 1e3 * np.finfo(float).eps * max(1.0, np.abs(curve.points).max()) / h**2
    floor = max(1e-8 * c.max(), noise)
    c = np.where(c > noise, c, 0.0)
    tau = np.zeros_like(c)
    ok = c > floor
    tau[ok] = np.einsum("ij,ij->i", np.cross(d1[ok], d2[ok]), d3[ok]) / c[ok] ** 2
    return FrenetData(curve.grid, c, tau, gamma)


def filament_function(fd):
    """g = c exp(i(int_0^x tau + gamma)), trapezoid accumulated from the node nearest 0."""
    i0 = fd.grid.nearest_index(0.0)
    phase = trapezoid_cumulative(fd.tau, fd.grid.h, i0) + fd.gamma
    return FilamentFunction(fd.grid, fd.c * np.exp(1j * phase))


def midpoint_values(values, grid):
    """Cubic interpolation of node samples at the n-1 cell midpoints."""
    mids = grid.nodes[:-1] + 0.5 * grid.h
    if grid.n < 4:
        return 0.5 * (values[1:] + values[:-1])
    return lagrange4(values, grid.x_min, grid.h, mids)


def march_frames(seed, g_nodes, g_mid, h, stride=1, renorm=True):
    """Low-level RK4 march from a seed; returns (frames, int F, int int F)."""
    return _kernels.march_x(
        np.ascontiguousarray(seed, dtype=float),
        np.ascontiguousarray(g_nodes, dtype=complex),
        np.ascontiguousarray(g_mid, dtype=complex),
        float(h),
        renorm,
        int(stride),
    )


def integrate_parallel_frame_x(g, plus_seed, minus_seed=None, g_mid=None):
    """Integrate T' = Re(g N), N' = -conj(g) T outward from the node nearest 0.

    The node at 0 carries ``plus_seed``; nodes to the left are reached from
    ``minus_seed``. ``g_mid`` optionally supplies exact midpoint values of g;
    otherwise they are interpolated with cubics.
    """
    grid = g.grid
    Fp = _as_frame(plus_seed)
    Fm = Fp if minus_seed is None else _as_frame(minus_seed)
    i0 = grid.nearest_index(0.0)
    if abs(grid.nodes[i0]) > grid.h:
        raise ContractError("grid has no node at or next to x = 0")
    gn = np.asarray(g.g, dtype=complex)
    gm = midpoint_values(gn, grid) if g_mid is None else np.asarray(g_mid, dtype=complex)
    out = np.empty((grid.n, 3, 3))
    right, _, _ = march_frames(Fp, gn[i0:], gm[i0:], grid.h)
    out[i0:] = right
    if i0 > 0:
        left, _, _ = march_frames(Fm, gn[i0::-1], gm[i0 - 1 :: -1], -grid.h)
        out[: i0 + 1] = left[::-1]
        out[i0] = Fp
    return FrameField(grid, out)


def curve_from_tangent(T, grid, base_point=(0.0, 0.0, 0.0), base_index=None):
    T = np.asarray(T, dtype=float)
    if np.max(np.abs(np.linalg.norm(T, axis=1) - 1)) > 1e-8:
        raise ContractError("tangent field is not unit within 1e-8")
    if base_index is None:
        base_index = grid.nearest_index(0.0)
    pts = trapezoid_cumulative(T, grid.h, base_index) + np.asarray(base_point, float)
    return Curve(grid, pts, True)


def _check_unit(v, name):
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1) > 1e-8:
        raise ContractError(f"{name} is not a unit vector within 1e-8")
    return v


def measure_corner_angle(T_plus, T_minus):
    """Corner angle arccos(-T+ . T-); a straight line gives pi."""
    a = _check_unit(T_plus, "T_plus")
    b = _check_unit(T_minus, "T_minus")
    return float(np.arccos(np.clip(-np.dot(a, b), -1.0, 1.0)))


def frame_orthonormality_defect(f):
    F = f.frames if isinstance(f, FrameField) else np.asarray(f)
    G = np.einsum("...ik,...jk->...ij", F, F)
    if G.size == 0:
        return 0.0
    norms = np.abs(np.sqrt(np.einsum("...ii->...i", G)) - 1)
    off = np.abs(G[..., [0, 0, 1], [1, 2, 2]])
    return float(max(norms.max(), off.max()))


def kabsch(source, target):
    """Rigid motion (R, shift) minimising |R source + shift - target| over rows."""
    P = np.asarray(source, float)
    Q = np.asarray(target, float)
    pc, qc = P.mean(axis=0), Q.mean(axis=0)
    H = (P - pc).T @ (Q - qc)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return R, qc - R @ pc


def rigid_alignment_error(source, target):
    R, shift = kabsch(source, target)
    aligned = np.asarray(source) @ R.T + shift
    return float(np.max(np.linalg.norm(aligned - target, axis=1)))


def interpolate_frames(frames, grid, x):
    """Cubic interpolation of a frame field at points ``x``, re-orthonormalized."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not grid.contains(x):
        raise RangeError("interpolation point outside the frame grid")
    return mgs_rows(lagrange4(frames, grid.x_min, grid.h, x))


# -- CSV -----------------------------------------------------------------


def _fmt(v):
    return repr(float(v))


def write_table(path, header, columns):
    cols = [np.asarray(c, dtype=float) for c in columns]
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_table(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return header, data


def write_curve_csv(curve, path):
    x = curve.grid.nodes
    write_table(path, ["x", "px", "py", "pz"], [x, *curve.points.T])


def read_curve_csv(path):
    _, d = read_table(path)
    x = d[:, 0]
    grid = Grid1D(float(x[0]), float(x[1] - x[0]), len(x))
    return Curve(grid, d[:, 1:4].copy(), True)


_FRAME_COLS = ["x", "Tx", "Ty", "Tz", "e1x", "e1y", "e1z", "e2x", "e2y", "e2z"]


def write_frames_csv(f, path):
    flat = f.frames.reshape(f.grid.n, 9)
    write_table(path, _FRAME_COLS, [f.grid.nodes, *flat.T])


def read_frames_csv(path):
    _, d = read_table(path)
    x = d[:, 0]
    grid = Grid1D(float(x[0]), float(x[1] - x[0]), len(x))
    return FrameField(grid, d[:, 1:].reshape(-1, 3, 3).copy())


def write_frenet_csv(fd, path):
    write_table(path, ["x", "c", "tau"], [fd.grid.nodes, fd.c, fd.tau])


def frame_from_curve(curve, index):
    """Frame (T, n, -b) of a curve at a node, compatible with ``filament_function``.

    With g = c exp(+i int tau) and T' = Re(g N), N' = -conj(g) T the frame must
    be left-handed (e2 = -binormal) for torsion to keep its usual sign. Where
    the curvature vanishes any unit normal is used.
    """
    h = curve.grid.h
    d1 = derivative(curve.points, h, 1)[index]
    d2 = derivative(curve.points, h, 2)[index]
    T = d1 / np.linalg.norm(d1)
    n = d2 - np.dot(d2, T) * T
    if np.linalg.norm(n) < 1e-12:
        trial = np.eye(3)[np.argmin(np.abs(T))]
        n = trial - np.dot(trial, T) * T
    n /= np.linalg.norm(n)
    return np.array([T, n, -np.cross(T, n)])
