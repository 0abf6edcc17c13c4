"""Frames and curves from a solution psi of the gauged NLS, and the t -> 0 diagnostics.

The parallel frame obeys, in x at fixed t and in t at fixed x,

    T_x = Re(conj(psi) N),      N_x = -psi T,
    T_t = Im(conj(psi_x) N),    N_t = -i psi_x T - (i/2)(|psi|^2 - a(t)) N,

and the curve is chi(t, x) = P + int_{t_ref}^t (T ^ T_x)(tau, x0) dtau + int_{x0}^x T(t, s) ds.

Strategy: evolve the frame in t at x0 (usually 0, where psi_x is small),
then at each output time march in x with a step that resolves the
e^{-i x^2/4t} oscillation. The x-march also records int F and int int F so
that box and triangle averages of the oscillating frame, and their exact
derivatives, are available on the coarse output grid without aliasing.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import geometry as geo
from . import nlsolver as nls
from . import scattering as sc
from . import selfsimilar as ss
from ._kernels import march_t
from ._numerics import PowerFit, fit_power_law, lagrange4, mgs_rows
from .errors import ContractError, DomainError, FitUnstableError, HypothesisAuditError, RangeError, ResolutionError

# -- psi sources -------------------------------------------------------------------


class SelfSimilarSource:
    """psi = psi_alpha = alpha e^{i x^2/4t} / sqrt(t) with a(t) = alpha^2 / t."""

    def __init__(self, alpha):
        self.alpha = float(alpha)
        self.gauge = nls.GaugeSpec("critical" if alpha > 0 else "zero", self.alpha)

    def conj_psi(self, t, x):
        return self.alpha * np.exp(-0.25j * np.asarray(x) ** 2 / t) / np.sqrt(t)

    def time_coefficients(self, t, x0):
        t = np.asarray(t, dtype=float)
        psi = self.alpha * np.exp(0.25j * x0 * x0 / t) / np.sqrt(t)
        psi_x = psi * 0.5j * x0 / t
        return psi_x, np.zeros_like(t)

    def native_nodes(self):
        return None

    def conj_psi_series(self, t, x0):
        t = np.asarray(t, dtype=float)
        return self.alpha * np.exp(-0.25j * x0 * x0 / t) / np.sqrt(t)

    def speed_bound(self, t):
        return self.alpha / np.sqrt(t)


class ZeroSource(SelfSimilarSource):
    def __init__(self):
        super().__init__(0.0)


class PseudoConformalSource:
    """psi(t, x) = e^{i x^2/4t} t^{-1/2} (alpha + conj u(1/t, x/t)) from a u-trajectory.

    Slices of u are needed at every time where frames are built in x; the
    time series at x0 = 0 uses the probe series recorded at every step.
    """

    def __init__(self, alpha, u_traj, probes, upsample=8):
        self.alpha = float(alpha)
        self.gauge = nls.GaugeSpec("critical", self.alpha)
        self.u_traj = u_traj
        self.probes = probes
        self.upsample = int(upsample)
        order = np.argsort(probes.s)
        ls = np.log(probes.s[order])
        self._u0 = CubicSpline(ls, probes.u0[order])
        self._uy0 = CubicSpline(ls, probes.uy0[order])
        self._cache = {}

    def native_nodes(self):
        return np.sort(1.0 / self.probes.s)[::-1]

    def time_coefficients(self, t, x0):
        if x0 != 0:
            raise ContractError("the pseudo-conformal source provides time data at x0 = 0 only")
        t = np.asarray(t, dtype=float)
        ls = np.log(1.0 / t)
        u0 = self._u0(ls)
        uy0 = self._uy0(ls)
        psi_x = t**-1.5 * np.conj(uy0)
        b = (np.abs(self.alpha + u0) ** 2 - self.alpha**2) / (2 * t)
        return psi_x, b

    def conj_psi_series(self, t, x0):
        if x0 != 0:
            raise ContractError("the pseudo-conformal source provides time data at x0 = 0 only")
        t = np.asarray(t, dtype=float)
        return (self.alpha + self._u0(np.log(1.0 / t))) / np.sqrt(t)

    def _envelope(self, t):
        key = float(t)
        if key not in self._cache:
            self._cache.clear()
            s = 1.0 / t
            k = self.u_traj.index_of(s)
            grid = self.u_traj.grid
            n, q = grid.n, self.upsample
            c = np.fft.fft(self.u_traj.values[k])
            pad = np.zeros(n * q, dtype=complex)
            pad[: n // 2] = c[: n // 2]
            pad[-n // 2 :] = c[-n // 2 :]
            fine = np.fft.ifft(pad) * q
            y = grid.x_min + (grid.h / q) * np.arange(n * q)
            U = np.exp(-0.25j * y * y / s) * fine
            self._cache[key] = (U, grid.x_min, grid.h / q, y[-1])
        return self._cache[key]

    def conj_psi(self, t, x):
        U, y0, hy, y1 = self._envelope(t)
        y = np.asarray(x, dtype=float) / t
        if y.min() < y0 or y.max() > y1:
            raise RangeError("x/t leaves the u-grid")
        base = self.alpha * np.exp(-0.25j * np.asarray(x) ** 2 / t)
        return (base + lagrange4(U, y0, hy, y)) / np.sqrt(t)

    def speed_bound(self, t):
        return (self.alpha + np.max(np.abs(self.u_traj.values))) / np.sqrt(t)


# -- time evolution at x0 --------------------------------------------------------------


@dataclass(frozen=True)
class FrameTimeSeries:
    x0: float
    times: np.ndarray
    frames: np.ndarray
    conj_psi: np.ndarray  # conj(psi)(t, x0) at the nodes

    def frame_at(self, t, rtol=1e-9):
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > rtol * t:
            raise KeyError(f"time {t} is not a node of the series")
        return self.frames[k]


def time_ladder(t_start, t_stop, x0=0.0, rel=0.05, phase=0.1, include=()):
    """Geometric ladder with |dt| <= rel t and, off x0 = 0, |dt| x0^2 / (4 t^2) <= phase."""
    pts = [t_start]
    t = t_start
    sign = 1.0 if t_stop > t_start else -1.0
    marks = sorted({float(v) for v in include if min(t_start, t_stop) < v < max(t_start, t_stop)} | {t_stop}, key=lambda v: sign * v)
    for stop in marks:
        while sign * (stop - t) > 1e-14 * stop:
            lo = min(t, stop)
            dt = rel * lo
            if x0 != 0:
                dt = min(dt, phase * 4 * lo * lo / (x0 * x0))
            t_next = t + sign * dt
            if sign * (t_next - stop) > -0.2 * dt:
                t_next = stop
            pts.append(t_next)
            t = t_next
    return np.array(pts)


def evolve_frame_time(source, x0, seed_frame, t_start, t_stop, nodes=None, rel=0.05, include=()):
    """RK4 in t for the frame at x0, re-orthonormalized every step."""
    F0 = geo._as_frame(seed_frame)
    if nodes is None:
        native = source.native_nodes()
        if native is not None:
            lo, hi = min(t_start, t_stop), max(t_start, t_stop)
            nodes = native[(native >= lo * (1 - 1e-12)) & (native <= hi * (1 + 1e-12))]
            nodes = nodes[::-1] if t_stop > t_start else nodes
        else:
            nodes = time_ladder(t_start, t_stop, x0, rel, include=include)
    nodes = np.asarray(nodes, dtype=float)
    if abs(nodes[0] - t_start) > 1e-9 * t_start:
        raise ContractError("time nodes must start at t_start")
    dts = np.diff(nodes)
    lows = np.minimum(nodes[:-1], nodes[1:])
    if np.any(np.abs(dts) > rel * lows * (1 + 1e-6)):
        raise ResolutionError(f"time step exceeds {rel} t")
    mids = 0.5 * (nodes[:-1] + nodes[1:])
    p_n, b_n = source.time_coefficients(nodes, x0)
    p_m, b_m = source.time_coefficients(mids, x0)
    frames = march_t(
        F0,
        np.ascontiguousarray(p_n, dtype=complex),
        np.ascontiguousarray(p_m, dtype=complex),
        np.ascontiguousarray(b_n, dtype=float),
        np.ascontiguousarray(b_m, dtype=float),
        np.ascontiguousarray(dts),
        True,
    )
    return FrameTimeSeries(float(x0), nodes, frames, source.conj_psi_series(nodes, x0))


# -- frames in x at fixed t --------------------------------------------------------------


@dataclass(frozen=True)
class FrameTrajectory:
    times: np.ndarray
    grid: geo.Grid1D
    frames: np.ndarray  # (nt, n, 3, 3)
    int1: np.ndarray  # int_0^x F
    int2: np.ndarray  # int_0^x int_0^y F
    source: object
    series: FrameTimeSeries
    alpha: float
    fine_steps: tuple = ()

    def field(self, k):
        return geo.FrameField(self.grid, self.frames[k])

    def index_of(self, t):
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * t:
            raise KeyError(f"no slice at t = {t}")
        return k

    def triangle_average(self, k, H):
        """Average of F over [x - H, x + H] with the hat weight, at output nodes."""
        m = int(round(H / self.grid.h))
        I2 = self.int2[k]
        out = np.full(self.frames[k].shape, np.nan)
        out[m:-m] = (I2[2 * m :] - 2 * I2[m:-m] + I2[: -2 * m]) / (m * self.grid.h) ** 2
        return out

    def triangle_derivative(self, k, H):
        """Exact x-derivative of ``triangle_average``."""
        m = int(round(H / self.grid.h))
        I1 = self.int1[k]
        out = np.full(self.frames[k].shape, np.nan)
        out[m:-m] = (I1[2 * m :] - 2 * I1[m:-m] + I1[: -2 * m]) / (m * self.grid.h) ** 2
        return out


def fine_step(t, x_extent, h_out, phase=0.05, source=None):
    """Fine x-step dividing h_out such that the local phase x h / 2t stays below ``phase``."""
    need = phase * 2 * t / max(x_extent, 1e-300)
    if source is not None:
        need = min(need, 0.2 / max(source.speed_bound(t), 1e-300))
    m = max(1, int(np.ceil(h_out / need)))
    return h_out / m, m


def _march_side(source, t, F0, x_end, h_f, stride):
    m = int(round(abs(x_end) / h_f))
    sgn = 1.0 if x_end > 0 else -1.0
    xs = sgn * h_f * np.arange(m + 1)
    g_nodes = source.conj_psi(t, xs)
    g_mid = source.conj_psi(t, xs[:-1] + 0.5 * sgn * h_f)
    return geo.march_frames(F0, g_nodes, g_mid, sgn * h_f, stride)


def frames_at_time(source, t, F0, x_max, h_out, phase=0.05):
    """Frames, int F and int int F on the symmetric output grid [-x_max, x_max] at time t."""
    grid = geo.Grid1D.span(x_max, h_out)
    half = grid.n // 2
    h_f, m = fine_step(t, x_max, h_out, phase, source)
    fr = np.empty((grid.n, 3, 3))
    i1 = np.empty_like(fr)
    i2 = np.empty_like(fr)
    xr = half * h_out
    R = _march_side(source, t, F0, xr, h_f, m)
    L = _march_side(source, t, F0, -xr, h_f, m)
    for dest, r, l in ((fr, R[0], L[0]), (i1, R[1], L[1]), (i2, R[2], L[2])):
        dest[half:] = r
        dest[: half + 1] = l[::-1]
    fr[half] = F0
    return grid, fr, i1, i2, h_f


def build_frame_slices(source, series, times, x_max, h_out=1e-3, phase=0.05):
    """x-marches seeded by the time series at every requested time."""
    if series.x0 != 0:
        raise ContractError("slices are seeded from a series at x0 = 0")
    times = np.asarray(times, dtype=float)
    out_f, out_1, out_2, steps = [], [], [], []
    grid = None
    for t in times:
        grid, fr, i1, i2, h_f = frames_at_time(source, t, series.frame_at(t), x_max, h_out, phase)
        out_f.append(fr)
        out_1.append(i1)
        out_2.append(i2)
        steps.append(h_f)
    return FrameTrajectory(times, grid, np.array(out_f), np.array(out_1), np.array(out_2), source, series, source.alpha, tuple(steps))


def commutation_defect(source, seed, t_a, t_b, x1, rel=0.05, h=None):
    """|F(t_b, x1)| computed by (t then x) versus (x then t), starting from the frame at (t_a, 0)."""
    h = h if h is not None else fine_step(min(t_a, t_b), abs(x1), abs(x1) / 64)[0]
    n = max(1, int(round(abs(x1) / h)))
    hx = x1 / n

    def march_x_at(t, F):
        xs = hx * np.arange(n + 1)
        fr, _, _ = geo.march_frames(F, source.conj_psi(t, xs), source.conj_psi(t, xs[:-1] + 0.5 * hx), hx)
        return fr[-1]

    s1 = evolve_frame_time(source, 0.0, seed, t_a, t_b, rel=rel)
    path1 = march_x_at(t_b, s1.frames[-1])
    F_ax = march_x_at(t_a, seed)
    s2 = evolve_frame_time(source, x1, F_ax, t_a, t_b, rel=rel)
    return float(np.max(np.abs(path1 - s2.frames[-1])))


# -- curves --------------------------------------------------------------------------------


@dataclass(frozen=True)
class CurveFamily:
    times: np.ndarray
    grid: geo.Grid1D
    points: np.ndarray  # (nt, n, 3)
    corner_point: np.ndarray  # extrapolated chi(0, x0)

    def curve(self, k):
        return geo.Curve(self.grid, self.points[k], True)


def _time_integral(series):
    """Cumulative int (T ^ T_x)(tau, x0) dtau along the series, in sigma = sqrt(tau)."""
    T = series.frames[:, 0, :]
    N = series.frames[:, 1, :] + 1j * series.frames[:, 2, :]
    Tx = np.real(series.conj_psi[:, None] * N)
    sig = np.sqrt(series.times)
    integrand = 2 * sig[:, None] * np.cross(T, Tx)
    steps = 0.5 * (integrand[1:] + integrand[:-1]) * np.diff(sig)[:, None]
    cum = np.concatenate([np.zeros((1, 3)), np.cumsum(steps, axis=0)])
    return cum, integrand


def reconstruct_curve(ft, P=(0.0, 0.0, 0.0), t_ref=None):
    """chi(t, x) on the slice times, anchored at chi(t_ref, x0) = P (t_ref defaults to the series start)."""
    series = ft.series
    cum, integrand = _time_integral(series)
    t_ref = series.times[0] if t_ref is None else t_ref
    k_ref = int(np.argmin(np.abs(series.times - t_ref)))
    if abs(series.times[k_ref] - t_ref) > 1e-9 * t_ref:
        raise ContractError("t_ref must be a node of the time series")
    P = np.asarray(P, dtype=float)
    anchors = {}
    for t in ft.times:
        k = int(np.argmin(np.abs(series.times - t)))
        anchors[t] = P + cum[k] - cum[k_ref]
    pts = np.stack([anchors[t][None, :] + ft.int1[i, :, 0, :] for i, t in enumerate(ft.times)])
    # closure to t = 0: the integrand tends to a constant in sigma
    k_min = int(np.argmin(series.times))
    corner = P + cum[k_min] - cum[k_ref] - integrand[k_min] * np.sqrt(series.times[k_min])
    return CurveFamily(ft.times.copy(), ft.grid, pts, corner)


# -- modulated normal and rates -----------------------------------------------------------


@dataclass(frozen=True)
class ModulatedNormal:
    times: np.ndarray
    grid: geo.Grid1D
    values: np.ndarray  # (nt, n, 3) complex, NaN at x = 0
    alpha: float


def modulation_phase(alpha, t, x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return alpha**2 * np.log(np.abs(x) / np.sqrt(t))


def modulated_normal(ft, alpha=None):
    alpha = ft.alpha if alpha is None else alpha
    x = ft.grid.nodes
    N = ft.frames[..., 1, :] + 1j * ft.frames[..., 2, :]
    out = np.empty(N.shape, dtype=complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        for k, t in enumerate(ft.times):
            out[k] = np.exp(1j * modulation_phase(alpha, t, x))[:, None] * N[k]
    out[:, np.abs(x) < 0.5 * ft.grid.h, :] = np.nan
    return ModulatedNormal(ft.times.copy(), ft.grid, out, float(alpha))


@dataclass(frozen=True)
class RateFit:
    quantity: str
    t: np.ndarray
    values: np.ndarray
    exponent: float
    interval: tuple
    target: float
    exact: bool = False

    def to_dict(self):
        return {
            "quantity": self.quantity,
            "t": list(map(float, self.t)),
            "values": list(map(float, self.values)),
            "exponent": self.exponent,
            "interval": list(self.interval),
            "target": self.target,
            "exact": self.exact,
        }


def _rate(name, t, values, target, min_points=5):
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if np.all(v == 0):
        return RateFit(name, t, v, np.inf, (np.inf, np.inf), target, True)
    usable = v > 0
    if usable.sum() < min_points:
        raise FitUnstableError(f"{name}: fewer than {min_points} usable times")
    fit = fit_power_law(t[usable], v[usable])
    return RateFit(name, t, v, fit.exponent, fit.interval, target)


def _reference_rows(times, t_fit_min):
    k_min = int(np.argmin(times))
    rows = [k for k in range(len(times)) if k != k_min and times[k] >= t_fit_min]
    return k_min, rows


def tangent_limit_rate(ft, probes, reference=None, t_fit_min=None, target=0.25):
    """Fit |T(t, x) - T_ref(x)| ~ t^p at each probe.

    ``reference`` maps probe -> vector (e.g. the tangent of chi_0). Without
    it the smallest-time slice is the reference and times below
    ``t_fit_min`` (default 4 t_min) are skipped.
    """
    times = ft.times
    if reference is None:
        t_fit_min = 4 * times.min() if t_fit_min is None else t_fit_min
        k_min, rows = _reference_rows(times, t_fit_min)
    else:
        t_fit_min = times.min() if t_fit_min is None else t_fit_min
        rows = [k for k in range(len(times)) if times[k] >= t_fit_min]
    if np.ptp(np.log10(times)) < 1.5:
        raise FitUnstableError("times span less than 1.5 decades")
    out = []
    for x in probes:
        j = ft.grid.nearest_index(x)
        ref = ft.frames[k_min, j, 0, :] if reference is None else np.asarray(reference[x], dtype=float)
        vals = [np.linalg.norm(ft.frames[k, j, 0, :] - ref) for k in rows]
        out.append(_rate(f"T(x={x:g})", times[rows], vals, target))
    return out


def normal_limit_rate(mn, probes, t_fit_min=None, target=0.25, raw=False, frames=None):
    """Same as the tangent rate for the modulated normal (or the raw N when ``raw``)."""
    times = mn.times
    t_fit_min = 4 * times.min() if t_fit_min is None else t_fit_min
    k_min, rows = _reference_rows(times, t_fit_min)
    if np.ptp(np.log10(times)) < 1.5:
        raise FitUnstableError("times span less than 1.5 decades")
    out = []
    for x in probes:
        j = mn.grid.nearest_index(x)
        if raw:
            V = frames[:, j, 1, :] + 1j * frames[:, j, 2, :]
        else:
            V = mn.values[:, j, :]
        vals = [np.linalg.norm(V[k] - V[k_min]) for k in rows]
        out.append(_rate(("N" if raw else "Ntilde") + f"(x={x:g})", times[rows], vals, target))
    return out


# -- trace system -------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceDefect:
    t: float
    defect: float
    defect_relative: float
    delta: float
    delta_expected: float
    delta_uplus: float
    defect_at_expected: float
    x_range: tuple
    smoothing: float
    by_time: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "t": self.t,
            "defect": self.defect,
            "defect_relative": self.defect_relative,
            "delta": self.delta,
            "delta_expected": self.delta_expected,
            "delta_uplus": self.delta_uplus,
            "defect_at_expected": self.defect_at_expected,
            "x_range": list(self.x_range),
            "smoothing": self.smoothing,
            "by_time": {repr(float(k)): v for k, v in sorted(self.by_time.items())},
        }


def trace_coefficient(sd, x):
    """(1/sqrt(4 pi i)) u+^(x/2) e^{-i alpha^2 log|x|} from the spectral coefficients of u+."""
    xi = np.fft.fftshift(nls.wavenumbers(sd.grid))
    c = np.fft.fftshift(sd.spectrum())
    vals = lagrange4(c, xi[0], xi[1] - xi[0], np.asarray(x) / 2)
    return vals / (sc.KERNEL_SCALE * nls.SQRT_I) * np.exp(-1j * sd.alpha**2 * np.log(np.abs(x)))


def _trace_fields(ft, k, x_sel, H):
    x = ft.grid.nodes[x_sel]
    a = ft.alpha
    t = ft.times[k]
    ST = ft.triangle_average(k, H)[x_sel]
    dST = ft.triangle_derivative(k, H)[x_sel]
    SN = ST[:, 1, :] + 1j * ST[:, 2, :]
    dSN = dST[:, 1, :] + 1j * dST[:, 2, :]
    ph = np.exp(1j * modulation_phase(a, t, x))[:, None]
    Nt = ph * SN
    dNt = ph * (dSN + 1j * (a * a / x)[:, None] * SN)
    return x, ST[:, 0, :], dST[:, 0, :], Nt, dNt


def _trace_residuals(K, T, dT, Nt, dNt, delta):
    C = (K * np.exp(1j * delta))[:, None]
    r1 = dT - np.real(C * Nt)
    r2 = dNt + np.conj(C) * T
    return r1, r2


def trace_system_defect(ft, sd, alpha=None, x_range=(0.2, 2.0), smoothing=0.1, k=None):
    """Defect of T_x = Re(K N~), N~_x = -conj(K) T at the smallest time, K the u+-coefficient.

    One global phase delta is fitted; it is reported relative to g, i.e. as the
    phase of g / (fitted coefficient), which the definition of u+ predicts to be
    alpha^2 log 2.
    """
    from scipy.optimize import minimize_scalar

    alpha = ft.alpha if alpha is None else alpha
    x = ft.grid.nodes
    sel = (np.abs(x) >= x_range[0]) & (np.abs(x) <= x_range[1])
    m = int(round(smoothing / ft.grid.h))
    if sel.nonzero()[0].min() < m or sel.nonzero()[0].max() >= len(x) - m:
        raise RangeError("smoothing window leaves the grid")
    order = np.argsort(ft.times)
    by_time = {}
    result = None
    for rank, kk in enumerate(order[:3] if k is None else [k]):
        xs, T, dT, Nt, dNt = _trace_fields(ft, kk, sel, smoothing)
        K = trace_coefficient(sd, xs)
        scale = max(float(np.max(np.abs(K))), 1e-300)

        def cost(d):
            r1, r2 = _trace_residuals(K, T, dT, Nt, dNt, d)
            return float(np.sum(r1**2) + np.sum(np.abs(r2) ** 2))

        if scale > 1e-12:
            grid_d = np.linspace(-np.pi, np.pi, 73)
            d0 = grid_d[int(np.argmin([cost(d) for d in grid_d]))]
            opt = minimize_scalar(cost, bracket=(d0 - 0.1, d0, d0 + 0.1), tol=1e-12)
            d_u = float((opt.x + np.pi) % (2 * np.pi) - np.pi)
        else:
            d_u = float("nan")  # no coefficient, no phase to fit
        r1, r2 = _trace_residuals(K, T, dT, Nt, dNt, 0.0 if np.isnan(d_u) else d_u)
        defect = float(max(np.max(np.abs(r1)), np.max(np.abs(r2))))
        e1, e2 = _trace_residuals(K, T, dT, Nt, dNt, 0.0)
        at_exp = float(max(np.max(np.abs(e1)), np.max(np.abs(e2))))
        t = float(ft.times[kk])
        by_time[t] = {"defect": defect, "delta_uplus": d_u}
        if result is None:
            expected = alpha**2 * np.log(2.0)
            result = dict(
                t=t,
                defect=defect,
                defect_relative=defect / scale,
                delta=float(expected - d_u),
                delta_expected=float(expected),
                delta_uplus=d_u,
                defect_at_expected=at_exp,
            )
    return TraceDefect(x_range=tuple(x_range), smoothing=smoothing, by_time=by_time, **result)


# -- self-similar path limit and corner -----------------------------------------------------


@dataclass(frozen=True)
class PathLimit:
    times: np.ndarray
    y: np.ndarray
    samples: np.ndarray  # (nt, ny, 3, 3)
    rotation: ss.RotationFit
    probe_rotations: np.ndarray
    pairwise: float
    cauchy: np.ndarray

    def to_dict(self):
        return {
            "times": list(map(float, self.times)),
            "y": list(map(float, self.y)),
            "Theta": self.rotation.R.tolist(),
            "residual": self.rotation.residual,
            "pairwise_frobenius": self.pairwise,
            "cauchy": list(map(float, self.cauchy)),
        }


def frames_along_path(source, series, t, xs, phase=0.05):
    """Frames at arbitrary points xs at time t, marched from x0 = 0 with a fine step."""
    F0 = series.frame_at(t)
    xs = np.asarray(xs, dtype=float)
    xm = max(np.max(np.abs(xs)), 1e-12)
    h_f, _ = fine_step(t, xm, xm / 8, phase, source)
    out = np.empty((len(xs), 3, 3))
    for i, x in enumerate(xs):
        if x == 0:
            out[i] = F0
            continue
        n = max(1, int(np.ceil(abs(x) / h_f)))
        hx = x / n
        pts = hx * np.arange(n + 1)
        fr, _, _ = geo.march_frames(F0, source.conj_psi(t, pts), source.conj_psi(t, pts[:-1] + 0.5 * hx), hx, n)
        out[i] = fr[-1]
    return out


def selfsimilar_path_limit(ft, profile, y_probes=(-4.0, -2.0, -1.0, 1.0, 2.0, 4.0), n_times=4):
    """Frames at x = y sqrt(t) for the smallest times, and the rotation onto the profile frame."""
    order = np.argsort(ft.times)[:n_times]
    times = ft.times[order]
    y = np.asarray(y_probes, dtype=float)
    samples = np.stack([frames_along_path(ft.source, ft.series, t, y * np.sqrt(t)) for t in times])
    prof = ss.selfsimilar_frame(profile, 1.0, y)
    rot = ss.fit_rotation(prof.reshape(-1, 3), samples[0].reshape(-1, 3))
    per = np.stack([ss.fit_rotation(prof[i], samples[0][i]).R for i in range(len(y))])
    pair = 0.0
    for i in range(len(y)):
        for j in range(i + 1, len(y)):
            pair = max(pair, float(np.linalg.norm(per[i] - per[j])))
    cauchy = np.array([np.max(np.abs(samples[i + 1] - samples[i])) for i in range(len(times) - 1)])
    return PathLimit(times, y, samples, rot, per, pair, cauchy)


@dataclass(frozen=True)
class CornerReport:
    T_plus: np.ndarray
    T_minus: np.ndarray
    Ntilde_plus: np.ndarray
    Ntilde_minus: np.ndarray
    angle_plus_deg: float
    angle_minus_deg: float
    theta_measured: float
    theta_formula: float
    theta_rel_err: float
    B_plus_error: float
    B_minus_error: float

    @property
    def max_angle_deg(self):
        return max(self.angle_plus_deg, self.angle_minus_deg)

    def to_dict(self):
        return {
            "T_plus": self.T_plus.tolist(),
            "T_minus": self.T_minus.tolist(),
            "Ntilde_plus": {"re": self.Ntilde_plus.real.tolist(), "im": self.Ntilde_plus.imag.tolist()},
            "Ntilde_minus": {"re": self.Ntilde_minus.real.tolist(), "im": self.Ntilde_minus.imag.tolist()},
            "angle_plus_deg": self.angle_plus_deg,
            "angle_minus_deg": self.angle_minus_deg,
            "theta_measured": self.theta_measured,
            "theta_formula": self.theta_formula,
            "theta_rel_err": self.theta_rel_err,
            "B_plus_error": self.B_plus_error,
            "B_minus_error": self.B_minus_error,
        }


def richardson(times, values, exponents=(0.25, 0.5)):
    """Value at t = 0 of the fit v(t) = v0 + sum_k a_k t^{p_k} through the given points."""
    t = np.asarray(times, dtype=float)
    cols = [np.ones_like(t)] + [t**p for p in exponents[: len(t) - 1]]
    A = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(A, np.asarray(values), rcond=None)
    return coef[0]


def _extrapolation_rows(times, mode, n_times):
    order = np.argsort(times)
    if mode == "none":
        return order[:1]
    if mode == "richardson":
        # decade-spaced times keep the t^(1/4) fit well conditioned
        t_min = times[order[0]]
        targets = t_min * np.logspace(0, 1, n_times)
        rows = [int(np.argmin(np.abs(np.log(times / tt)))) for tt in targets]
        if len(set(rows)) < n_times:
            raise FitUnstableError("not enough distinct times for the extrapolation")
        return np.array(rows)
    raise ContractError(f"unknown extrapolation mode {mode!r}")


def trace_limits(ft, x_band=(0.2, 0.6), smoothing=0.05, extrapolation="none", n_times=3, exponents=(0.25, 0.5), degree=2):
    """One-sided limits at x = 0 of the smoothed T and modulated N.

    At each selected time the smoothed fields on the band are fitted by a
    polynomial in x and evaluated at 0; with ``extrapolation="richardson"``
    values from decade-spaced times are then extrapolated in t^(1/4), t^(1/2).
    """
    x = ft.grid.nodes
    rows = _extrapolation_rows(ft.times, extrapolation, n_times)
    P = np.polynomial.polynomial
    out = {}
    for side, sgn in (("plus", 1.0), ("minus", -1.0)):
        sel = (sgn * x >= x_band[0]) & (sgn * x <= x_band[1])
        Tv, Nv = [], []
        for k in rows:
            xs, T, _, Nt, _ = _trace_fields(ft, k, sel, smoothing)
            Tv.append(P.polyfit(xs, T, degree)[0])
            Nv.append(P.polyfit(xs, Nt.real, degree)[0] + 1j * P.polyfit(xs, Nt.imag, degree)[0])
        if len(rows) > 1:
            ts = ft.times[rows]
            T0 = richardson(ts, np.array(Tv), exponents)
            N0 = richardson(ts, np.array(Nv), exponents)
        else:
            T0, N0 = Tv[0], Nv[0]
        out[side] = (T0 / np.linalg.norm(T0), N0)
    return out


def corner_directions_check(ft, profile, rotation, **kw):
    lim = trace_limits(ft, **kw)
    R = rotation.R if hasattr(rotation, "R") else np.asarray(rotation)
    c = profile.corner
    Tp, Np = lim["plus"]
    Tm, Nm = lim["minus"]

    def ang(u, v):
        return float(np.degrees(np.arccos(np.clip(np.dot(u, v) / np.linalg.norm(v), -1, 1))))

    th = geo.measure_corner_angle(Tp, Tm)
    thf = float(ss.angle_from_alpha(ft.alpha))
    return CornerReport(
        Tp,
        Tm,
        Np,
        Nm,
        ang(Tp, R @ c.A_plus),
        ang(Tm, R @ c.A_minus),
        th,
        thf,
        abs(th - thf) / thf,
        float(np.max(np.abs(Np - R @ c.B_plus))),
        float(np.max(np.abs(Nm - R @ c.B_minus))),
    )


def snap_times(times, alpha, t_min=None, t_max=None):
    """Snap each time to the subsequence t_n = exp(-4 pi n / alpha^2) where e^{i alpha^2 log sqrt t_n} = 1."""
    if alpha <= 0:
        return np.asarray(times, dtype=float)
    period = 4 * np.pi / alpha**2
    n = np.maximum(np.round(-np.log(np.asarray(times, dtype=float)) / period), 1)
    snapped = np.exp(-period * n)
    uniq = np.unique(snapped)
    lo = min(times) if t_min is None else t_min
    hi = max(times) if t_max is None else t_max
    uniq = uniq[(uniq >= lo * (1 - 1e-12)) & (uniq <= hi * (1 + 1e-12))]
    if len(uniq) < 3:
        raise ContractError(
            f"only {len(uniq)} subsequence times exp(-4 pi n/alpha^2) lie in [{lo:g}, {hi:g}] for alpha = {alpha:g}"
        )
    return uniq[::-1]


# -- drivers ----------------------------------------------------------------------


def output_times(t0, t_min, per_decade=12):
    """Geometric ladder from t0 down to t_min, both included."""
    if not 0 < t_min < t0:
        raise DomainError("need 0 < t_min < t0")
    m = max(2, int(round(per_decade * np.log10(t0 / t_min))) + 1)
    return np.logspace(np.log10(t0), np.log10(t_min), m)


def initial_curve(filament, alpha, rotation, corner, grid, base_point=(0.0, 0.0, 0.0)):
    """chi_0 on ``grid``: parallel frame seeded with Theta(A), Theta(B) at 0+ and 0-.

    The filament function carries the constant phase e^{-i alpha^2 log 2}
    picked up between u+ and the limiting frame, so that its normal at 0+-
    lines up with Theta(B+-).
    """
    R = rotation.R if isinstance(rotation, ss.RotationFit) else np.asarray(rotation, dtype=float)
    g = sc.sample_g(filament, grid.nodes) * np.exp(-1j * alpha**2 * np.log(2.0))
    xm = grid.nodes[:-1] + 0.5 * grid.h
    gm = sc.sample_g(filament, xm) * np.exp(-1j * alpha**2 * np.log(2.0))

    def seed(A, B):
        # the fitted corner vectors are orthonormal only to the fit accuracy
        return mgs_rows(np.stack([R @ A, R @ B.real, R @ B.imag]))

    frames = geo.integrate_parallel_frame_x(
        geo.FilamentFunction(grid, g), seed(corner.A_plus, corner.B_plus), seed(corner.A_minus, corner.B_minus), g_mid=gm
    )
    # the tangent jumps at 0: integrate each side with its own one-sided value there
    i0 = grid.nearest_index(0.0)
    T_left = frames.T.copy()
    T_left[i0] = R @ corner.A_minus
    pts = geo.curve_from_tangent(frames.T, grid, base_point).points
    pts[:i0] = geo.curve_from_tangent(T_left, grid, base_point).points[:i0]
    return frames, geo.Curve(grid, pts, True)


def _fit_dict(fits):
    return {k: fits[k].to_dict() for k in sorted(fits)}


@dataclass
class RecoveryResult:
    alpha: float
    audit: sc.HypothesisReport
    times: np.ndarray
    sup_distance: np.ndarray
    curve_fit: PowerFit
    tangent_rates: list
    path: PathLimit
    corner: CornerReport
    trace: TraceDefect
    remainder: sc.RemainderDiagnostics
    pointwise: sc.RemainderDiagnostics
    curvature: dict
    frames: FrameTrajectory = field(repr=False)
    curves: CurveFamily = field(repr=False)
    chi0: geo.Curve = field(repr=False)
    timings: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "audit": self.audit.to_dict(),
            "curve_rate": self.curve_fit.to_dict(),
            "tangent_rates": [r.to_dict() for r in self.tangent_rates],
            "path_limit": self.path.to_dict(),
            "corner": self.corner.to_dict(),
            "trace": self.trace.to_dict(),
            "remainder": _fit_dict(self.remainder.fits),
            "pointwise": _fit_dict(self.pointwise.fits),
            "curvature_bound": self.curvature,
            "corner_point": self.curves.corner_point.tolist(),
        }


def _curvature_bound(u_traj, x_max, alpha):
    y = u_traj.grid.nodes
    worst, sup_u = 0.0, 0.0
    for k, s in enumerate(u_traj.times):
        m = np.abs(y) <= x_max * s
        u = u_traj.values[k][m]
        worst = max(worst, float(np.max(np.abs(alpha + u))))
        sup_u = max(sup_u, float(np.max(np.abs(u))))
    return {"max_sqrt_t_psi": worst, "bound": alpha + 2 * sup_u, "ok": worst <= alpha + 2 * sup_u + 1e-12}


def recover_initial_curve(
    fd,
    alpha,
    t0=0.5,
    t_min=1e-4,
    per_decade=12,
    x_max=3.0,
    h_out=1e-3,
    u_grid=None,
    probes=(0.5, 1.0, 2.0),
    eps=0.05,
    snap=False,
    profile=None,
    fit_t_min=None,
):
    """Full pipeline from Frenet data of chi_0 back to chi_0 through the NLS.

    u+ from the data, u seeded at s = 1/t_min on the modified free state and
    evolved to 1/t0, psi assembled pseudo-conformally, frames and curves
    rebuilt on [-x_max, x_max] and compared with chi_0. The default u-grid
    (2^17 nodes, spacing 0.8) keeps x/t inside the box down to t = 1e-4.
    """
    clock = {}
    tick = time.perf_counter()
    if not 0 <= alpha <= 0.5:
        raise DomainError("alpha must lie in [0, 0.5]")
    audit = sc.hypothesis_norms(fd)
    if not audit.ok:
        raise HypothesisAuditError({k: audit.entries[k].value for k in audit.suspect})
    times = output_times(t0, t_min, per_decade)
    if snap:
        times = snap_times(times, alpha)
    t_min = float(times.min())
    u_grid = geo.Grid1D.symmetric(2**17, 0.8) if u_grid is None else u_grid
    if x_max / t_min > min(-u_grid.x_min, u_grid.x_max):
        raise RangeError(f"x_max / t_min = {x_max / t_min:g} leaves the u-grid")
    sd = sc.build_uplus(fd, alpha, u_grid)
    traj, probe_series = nls.evolve_u_exponential(sc.seed_u(sd, 1 / t_min), alpha, 1 / t_min, 1 / t0, eps=eps, output_s=1 / times)
    clock["u_evolution"] = time.perf_counter() - tick

    tick = time.perf_counter()
    source = PseudoConformalSource(alpha, traj, probe_series)
    series = evolve_frame_time(source, 0.0, np.eye(3), t0, t_min, include=times)
    ft = build_frame_slices(source, series, times, x_max, h_out)
    clock["frames"] = time.perf_counter() - tick

    tick = time.perf_counter()
    profile = ss.integrate_profile(alpha, x_max=400.0, h=2.5e-4) if profile is None else profile
    path = selfsimilar_path_limit(ft, profile)
    corner = corner_directions_check(ft, profile, path.rotation)
    curves = reconstruct_curve(ft)
    frames0, chi0 = initial_curve(sc._as_filament(fd), alpha, path.rotation, profile.corner, ft.grid, curves.corner_point)
    sup = np.array([np.max(np.abs(curves.points[k] - chi0.points)) for k in range(len(ft.times))])
    curve_fit = fit_power_law(ft.times, sup)
    ref = {x: frames0.T[ft.grid.nearest_index(x)] for x in probes}
    rates = tangent_limit_rate(ft, probes, reference=ref)
    trace = trace_system_defect(ft, sd, alpha)
    fit_t_min = 8 * t_min if fit_t_min is None else fit_t_min
    remainder = sc.remainder_diagnostics(traj, sd, "modified", fit_range=(fit_t_min, t0))
    pointwise = sc.pointwise_bounds_check(traj, x_max, sd, "modified", fit_range=(fit_t_min, t0))
    curvature = _curvature_bound(traj, x_max, alpha)
    clock["diagnostics"] = time.perf_counter() - tick
    return RecoveryResult(
        float(alpha), audit, ft.times.copy(), sup, curve_fit, rates, path, corner, trace, remainder, pointwise,
        curvature, ft, curves, chi0, clock,
    )


@dataclass
class SelfSimilarRun:
    alpha: float
    times: np.ndarray
    sup_distance: np.ndarray
    curve_fit: PowerFit
    tangent_rates: list
    normal_rates: list
    raw_normal_rates: list
    path: PathLimit
    corner: CornerReport
    frame_error: float
    frames: FrameTrajectory = field(repr=False)
    curves: CurveFamily = field(repr=False)
    timings: dict = field(default_factory=dict, repr=False)

    @property
    def modulation_gap(self):
        return min(m.exponent for m in self.normal_rates) - max(r.exponent for r in self.raw_normal_rates)

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "curve_rate": self.curve_fit.to_dict(),
            "tangent_rates": [r.to_dict() for r in self.tangent_rates],
            "normal_rates": [r.to_dict() for r in self.normal_rates],
            "raw_normal_rates": [r.to_dict() for r in self.raw_normal_rates],
            "modulation_gap": self.modulation_gap,
            "path_limit": self.path.to_dict(),
            "corner": self.corner.to_dict(),
            "frame_error": self.frame_error,
        }


def selfsimilar_run(alpha, t0=0.5, t_min=1e-4, per_decade=12, x_max=3.0, h_out=1e-3, probes=(0.5, 1.0, 2.0), rotation=None, profile=None):
    """The pipeline driven by psi_alpha itself, where every limit is known.

    ``rotation`` R0 turns the whole solution, so the fitted Theta should return R0.
    """
    clock = {}
    tick = time.perf_counter()
    times = output_times(t0, t_min, per_decade)
    R0 = np.eye(3) if rotation is None else np.asarray(rotation, dtype=float)
    seed = geo._as_frame(R0.T)
    source = SelfSimilarSource(alpha)
    series = evolve_frame_time(source, 0.0, seed, t0, t_min, include=times)
    ft = build_frame_slices(source, series, times, x_max, h_out)
    clock["frames"] = time.perf_counter() - tick
    tick = time.perf_counter()
    profile = ss.integrate_profile(alpha, x_max=400.0, h=2.5e-4) if profile is None else profile
    # the profile frame at y = 0 is the identity, so every frame is the profile frame times R0^T
    R = R0.T
    frame_error = 0.0
    for k, t in enumerate(ft.times):
        expected = ss.selfsimilar_frame(profile, t, ft.grid.nodes) @ R
        frame_error = max(frame_error, float(np.max(np.abs(ft.frames[k] - expected))))
    curves = reconstruct_curve(ft)
    chi0 = ss.corner_trace(profile, ft.grid).points @ R
    sup = np.array([np.max(np.abs(curves.points[k] - curves.corner_point - chi0)) for k in range(len(ft.times))])
    curve_fit = fit_power_law(ft.times, sup)
    mn = modulated_normal(ft)
    path = selfsimilar_path_limit(ft, profile)
    corner = corner_directions_check(ft, profile, path.rotation)
    result = SelfSimilarRun(
        float(alpha), ft.times.copy(), sup, curve_fit,
        tangent_limit_rate(ft, probes), normal_limit_rate(mn, probes), normal_limit_rate(mn, probes, raw=True, frames=ft.frames),
        path, corner, frame_error, ft, curves,
    )
    clock["diagnostics"] = time.perf_counter() - tick
    result.timings.update(clock)
    return result


__all__ = [
    "RecoveryResult",
    "SelfSimilarRun",
    "initial_curve",
    "output_times",
    "recover_initial_curve",
    "selfsimilar_run",
    "CornerReport",
    "CurveFamily",
    "FrameTimeSeries",
    "FrameTrajectory",
    "ModulatedNormal",
    "PathLimit",
    "PowerFit",
    "PseudoConformalSource",
    "RateFit",
    "SelfSimilarSource",
    "TraceDefect",
    "ZeroSource",
    "build_frame_slices",
    "commutation_defect",
    "corner_directions_check",
    "evolve_frame_time",
    "frames_along_path",
    "frames_at_time",
    "modulated_normal",
    "normal_limit_rate",
    "reconstruct_curve",
    "richardson",
    "selfsimilar_path_limit",
    "snap_times",
    "tangent_limit_rate",
    "time_ladder",
    "trace_system_defect",
]
