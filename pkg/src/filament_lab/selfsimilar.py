"""The self-similar family: profile frame at t = 1, corner data and the angle law.

The profile solves

    T' = Re(alpha e^{-i x^2/4} N),    N' = -alpha e^{i x^2/4} T,

from a canonical frame at x = 0. Its tangent tends to A+ / A- as x -> +/-inf
and e^{i alpha^2 log|x|} N tends to B+ / B-.
"""

import functools
import json
import warnings
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from ._numerics import derivative, lagrange4
from .errors import ContractError, DomainError, FitUnstableError, RangeError, ResolutionError


@dataclass(frozen=True)
class SelfSimilarProfile:
    alpha: float
    profile_frame: geo.FrameField
    corner: geo.CornerData
    tail_window: tuple

    @functools.cached_property
    def _curve_data(self):
        return _profile_curve(self)

    @property
    def curve_at_one(self):
        """chi_alpha(1, .) on the profile grid, corner of the t -> 0 trace at the origin."""
        return self._curve_data[0]

    @property
    def base_offset_mismatch(self):
        return self._curve_data[1]


@dataclass(frozen=True)
class RotationFit:
    R: np.ndarray
    residual: float


def _profile_coefficient(alpha, x):
    return alpha * np.exp(-0.25j * x * x)


def integrate_profile(alpha, x_max=200.0, h=5e-4, tail_window=None, seed=None):
    """Two-sided RK4 integration of the profile ODE from a canonical seed."""
    if alpha < 0:
        raise DomainError("alpha must be nonnegative")
    if alpha > 1:
        warnings.warn("alpha > 1 lies outside the small-alpha regime", stacklevel=2)
    if x_max < 50:
        raise ContractError("x_max must be at least 50")
    if h * x_max > 0.5:
        raise ResolutionError("h * x_max > 0.5: the x^2/4 oscillation is unresolved")
    grid = geo.Grid1D.span(x_max, h)
    x = grid.nodes
    g = geo.FilamentFunction(grid, _profile_coefficient(alpha, x))
    g_mid = _profile_coefficient(alpha, x[:-1] + 0.5 * h)
    F0 = geo.CANONICAL_FRAME if seed is None else seed
    frames = geo.integrate_parallel_frame_x(g, F0, F0, g_mid=g_mid)
    window = (50.0, grid.x_max) if tail_window is None else tuple(tail_window)
    p = SelfSimilarProfile(float(alpha), frames, None, window)
    corner = extract_asymptotics(p, window)
    return SelfSimilarProfile(float(alpha), frames, corner, window)


def _tail_phase(alpha, x):
    # next-order phase of the oscillating 1/x correction: x^2/4 + alpha^2 log|x|
    return 0.25 * x * x + alpha * alpha * np.log(np.abs(x))


def _tail_basis(x, phase, kind):
    one = np.ones_like(x)
    c1, s1 = np.cos(phase), np.sin(phase)
    if kind == "frame":
        # A + O(1/x) oscillation + next order (1/x^2, doubled phase)
        cols = [one, c1 / x, s1 / x, 1 / x**2, np.cos(2 * phase) / x**2, np.sin(2 * phase) / x**2]
    else:
        # antiderivative of the frame ansatz: const + 1/x + oscillation / x^2
        cols = [one, 1 / x, c1 / x**2, s1 / x**2]
    return np.stack(cols, axis=1)


def _tail_fit(x, values, phase, kind="frame"):
    """Least-squares tail fit; returns the constant term and the rms residual."""
    basis = _tail_basis(x, phase, kind)
    coef, *_ = np.linalg.lstsq(basis, values, rcond=None)
    resid = values - basis @ coef
    return coef[0], float(np.sqrt(np.mean(np.abs(resid) ** 2)))


def _window_masks(p, window):
    x = p.profile_frame.grid.nodes
    lo, hi = window
    if lo < 50 or hi > p.profile_frame.grid.x_max + 1e-9 or hi <= lo:
        raise ContractError("tail window must lie in the grid with x_lo >= 50")
    if (hi * hi - lo * lo) / (8 * np.pi) < 10:
        raise FitUnstableError("tail window covers fewer than 10 oscillation periods")
    ax = np.abs(x)
    m = (ax >= lo) & (ax <= hi)
    return x, m & (x > 0), m & (x < 0)


def extract_asymptotics(p, window=None):
    """Fit A+/- and B+/- from the tails of the profile frame."""
    window = p.tail_window if window is None else window
    x, plus, minus = _window_masks(p, window)
    f = p.profile_frame
    a = p.alpha
    out, resid = {}, {}
    for key, m in (("plus", plus), ("minus", minus)):
        xs = x[m]
        ph = _tail_phase(a, xs)
        A, rA = _tail_fit(xs, f.T[m], ph)
        A = A / np.linalg.norm(A)
        modulated = np.exp(1j * a * a * np.log(np.abs(xs)))[:, None] * f.N[m]
        B, rB = _tail_fit(xs, modulated, ph)
        out[key] = (A, B)
        resid[f"A_{key}"] = rA
        resid[f"B_{key}"] = rB
    theta = geo.measure_corner_angle(out["plus"][0], out["minus"][0])
    return geo.CornerData(out["plus"][0], out["minus"][0], out["plus"][1], out["minus"][1], theta, resid)


def angle_from_alpha(alpha):
    if np.any(np.asarray(alpha) < 0):
        raise DomainError("alpha must be nonnegative")
    return 2.0 * np.arcsin(np.exp(-0.5 * np.pi * np.asarray(alpha, dtype=float) ** 2))


def alpha_from_angle(theta):
    th = np.asarray(theta, dtype=float)
    if np.any(th <= 0) or np.any(th > np.pi):
        raise DomainError("theta must lie in (0, pi]")
    return np.sqrt(np.maximum(-(2.0 / np.pi) * np.log(np.sin(0.5 * th)), 0.0))


def selfsimilar_frame(p, t, x):
    """Frames T(t,x) = T_alpha(1, x/sqrt t) (rows T, e1, e2), cubic interpolation."""
    if t <= 0:
        raise DomainError("t must be positive")
    y = np.asarray(x, dtype=float) / np.sqrt(t)
    grid = p.profile_frame.grid
    if not grid.contains(y):
        raise RangeError("x/sqrt(t) outside the profile grid")
    out = geo.interpolate_frames(p.profile_frame.frames, grid, y)
    return out[0] if np.ndim(x) == 0 else out


def _profile_curve(p):
    f = p.profile_frame
    grid = f.grid
    chi = geo.curve_from_tangent(f.T, grid, (0.0, 0.0, 0.0), grid.nearest_index(0.0))
    x, plus, minus = _window_masks(p, p.tail_window)
    consts = []
    for m, A in ((plus, p.corner.A_plus), (minus, p.corner.A_minus)):
        xs = x[m]
        C, _ = _tail_fit(xs, chi.points[m] - xs[:, None] * A[None, :], _tail_phase(p.alpha, xs), "curve")
        consts.append(C)
    base = -0.5 * (consts[0] + consts[1])
    mismatch = float(np.linalg.norm(consts[0] - consts[1]))
    return geo.Curve(grid, chi.points + base, True), mismatch


def selfsimilar_curve(p, t, grid):
    """chi(t, x) = sqrt(t) chi_alpha(1, x/sqrt t); chi(0, x) = x A+/- with the corner at 0."""
    if t <= 0:
        raise DomainError("t must be positive")
    rt = np.sqrt(t)
    y = grid.nodes / rt
    pg = p.profile_frame.grid
    if not pg.contains(y):
        raise RangeError("grid / sqrt(t) outside the profile grid")
    pts = rt * lagrange4(p.curve_at_one.points, pg.x_min, pg.h, y)
    return geo.Curve(grid, pts, True)


def corner_trace(p, grid):
    """The t = 0 trace x A+ (x > 0), x A- (x < 0)."""
    x = grid.nodes
    A = np.where(x[:, None] >= 0, p.corner.A_plus, p.corner.A_minus)
    return geo.Curve(grid, x[:, None] * A, True)


def psi_alpha(alpha, t, x):
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("t must be positive")
    x = np.asarray(x, dtype=float)
    return alpha * np.exp(0.25j * x * x / t) / np.sqrt(t)


def binormal_residual(curves, times=None):
    """Max-norm of chi_t - chi_x ^ chi_xx over interior nodes and interior times.

    Centered differences of second order in both t and x.
    """
    if len(curves) < 3:
        raise ContractError("need at least three time slices")
    grid = curves[0].grid
    for c in curves:
        if c.grid != grid:
            raise ContractError("time slices live on different grids")
    if times is None:
        raise ContractError("slice times are required")
    times = np.asarray(times, dtype=float)
    dts = np.diff(times)
    if np.max(np.abs(dts - dts[0])) > 1e-9 * abs(dts[0]):
        raise ContractError("time slices must be uniformly spaced")
    dt, h = dts[0], grid.h
    P = np.stack([c.points for c in curves])
    chi_t = (P[2:] - P[:-2]) / (2 * dt)
    mid = P[1:-1]
    chi_x = (mid[:, 2:] - mid[:, :-2]) / (2 * h)
    chi_xx = (mid[:, 2:] - 2 * mid[:, 1:-1] + mid[:, :-2]) / h**2
    res = chi_t[:, 1:-1] - np.cross(chi_x, chi_xx)
    return float(np.max(np.abs(res)))


def fit_rotation(source, target):
    """Proper rotation R minimizing sum |R s_k - t_k|^2 (orthogonal Procrustes)."""
    S = np.asarray(source, dtype=float).reshape(-1, 3)
    Q = np.asarray(target, dtype=float).reshape(-1, 3)
    U, _, Vt = np.linalg.svd(S.T @ Q)
    d = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    resid = float(np.max(np.abs(S @ R.T - Q))) if len(S) else 0.0
    return RotationFit(R, resid)


def profile_record(p):
    c = p.corner
    return {
        "alpha": p.alpha,
        "theta_measured": c.theta,
        "theta_formula": float(angle_from_alpha(p.alpha)),
        "A_plus": [float(v) for v in c.A_plus],
        "A_minus": [float(v) for v in c.A_minus],
        "B_plus": {"re": [float(v) for v in c.B_plus.real], "im": [float(v) for v in c.B_plus.imag]},
        "B_minus": {"re": [float(v) for v in c.B_minus.real], "im": [float(v) for v in c.B_minus.imag]},
        "dot_A": float(np.dot(c.A_plus, c.A_minus)),
        "dot_A_formula": float(2 * np.exp(-np.pi * p.alpha**2) - 1),
        "tail_window": [float(v) for v in p.tail_window],
        "frame_defect": geo.frame_orthonormality_defect(p.profile_frame),
        "grid": p.profile_frame.grid.to_dict(),
        "fit_residual": dict(sorted(c.fit_residual.items())),
    }


def dumps(obj):
    """Deterministic JSON with 17-significant-digit floats."""
    return json.dumps(_round17(obj), indent=2, sort_keys=True) + "\n"


def _round17(obj):
    if isinstance(obj, float):
        if not np.isfinite(obj):
            return str(obj)
        return float(format(obj, ".17g"))
    if isinstance(obj, (np.floating,)):
        return _round17(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, dict):
        return {str(k): _round17(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_round17(v) for v in obj]
    return obj


def write_profile_json(p, path):
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps(profile_record(p)))


def schroedinger_map_residual(frames_by_time, times, h):
    """Max of T_t - T ^ T_xx (centered in t, 4th-order in x) over interior nodes."""
    F = np.stack(frames_by_time)[..., 0, :]
    dt = times[1] - times[0]
    Tt = (F[2:] - F[:-2]) / (2 * dt)
    Tmid = F[1:-1]
    Txx = np.stack([derivative(Tm, h, 2) for Tm in Tmid])
    res = Tt - np.cross(Tmid, Txx)
    return float(np.max(np.abs(res[:, 3:-3])))
