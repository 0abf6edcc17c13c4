"""Spectral tools for i psi_t + psi_xx + (|psi|^2 - a(t)) psi / 2 = 0.

Fourier convention: F f(xi) = int e^{-i x xi} f(x) dx, discretized on the
periodic grid x_j = x_min + j h; the free propagator e^{it d_x^2} is the
multiplier e^{-i t xi^2}.

Two evolutions are provided for the pseudo-conformal variable u(s, y),

    i u_s + u_yy + (|u + alpha|^2 - alpha^2)(u + alpha) / (2 s) = 0,

a Strang splitting (``split_step_u``) and an exponential integrator for long
runs in s (``evolve_u_exponential``) that treats the linearized coupling
alpha^2 (u + conj u) / (2 s) exactly in the interaction picture.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import exp1

from .errors import ContractError, DomainError, ResolutionError
from .geometry import Grid1D

SQRT_I = np.exp(0.25j * np.pi)


@dataclass(frozen=True)
class WaveField:
    grid: Grid1D
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        n = self.grid.n
        if n & (n - 1):
            raise ContractError("WaveField grids need a power-of-two node count")
        if self.values.shape != (n,):
            raise ContractError("values must have one entry per node")


@dataclass(frozen=True)
class Spectrum:
    grid: Grid1D
    xi: np.ndarray
    coeffs: np.ndarray
    time: float = 0.0


@dataclass(frozen=True)
class GaugeSpec:
    kind: str = "zero"
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "critical"):
            raise ContractError(f"unknown gauge kind {self.kind!r}")
        if self.alpha < 0:
            raise ContractError("gauge alpha must be nonnegative")

    def a(self, t):
        if self.kind == "zero":
            return 0.0 * np.asarray(t, dtype=float)
        return self.alpha**2 / np.asarray(t, dtype=float)

    def to_dict(self):
        return {"kind": self.kind, "alpha": self.alpha}


@dataclass(frozen=True)
class Trajectory:
    """Slices of a field on a fixed grid; ``variable`` is 't' (psi) or 's' (u)."""

    grid: Grid1D
    times: np.ndarray
    values: np.ndarray
    variable: str = "t"
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    def slice(self, i):
        return WaveField(self.grid, self.values[i], float(self.times[i]))

    def index_of(self, time, rtol=1e-9):
        k = int(np.argmin(np.abs(self.times - time)))
        if abs(self.times[k] - time) > rtol * abs(time):
            raise KeyError(f"no slice at {time}")
        return k


def wavenumbers(grid):
    return 2 * np.pi * np.fft.fftfreq(grid.n, grid.h)


def _shift_phase(grid):
    # e^{-i xi_k x_min} in fft ordering
    return np.exp(-1j * wavenumbers(grid) * grid.x_min)


def forward_array(values, grid):
    return grid.h * np.fft.fft(values) * _shift_phase(grid)


def inverse_array(coeffs, grid):
    return np.fft.ifft(coeffs / _shift_phase(grid)) / grid.h


def fourier_forward(f):
    return Spectrum(f.grid, wavenumbers(f.grid), forward_array(f.values, f.grid), f.time)


def fourier_inverse(spec):
    return WaveField(spec.grid, inverse_array(spec.coeffs, spec.grid), spec.time)


def free_propagate(f, t):
    """e^{i t d_x^2} f, exact on grid modes."""
    xi = wavenumbers(f.grid)
    vals = np.fft.ifft(np.exp(-1j * t * xi * xi) * np.fft.fft(f.values))
    return WaveField(f.grid, vals, f.time + t)


def spectral_derivative(values, grid, order=1):
    xi = wavenumbers(grid)
    return np.fft.ifft((1j * xi) ** order * np.fft.fft(values))


def conserved_mass(f):
    values = f.values if isinstance(f, WaveField) else np.asarray(f)
    h = f.grid.h if isinstance(f, WaveField) else 1.0
    return float(h * np.sum(np.abs(values) ** 2))


def cosine_window(grid, taper=0.2):
    """1 on the inner part of the periodic box, cosine taper on the outer ``taper`` fraction."""
    x = grid.nodes
    half = 0.5 * grid.extent
    centre = grid.x_min + half
    r = np.abs(x - centre) / half
    start = 1.0 - taper
    w = np.ones_like(x)
    m = r > start
    w[m] = 0.5 * (1 + np.cos(np.pi * np.minimum((r[m] - start) / taper, 1.0)))
    return w


def interior_mask(grid, fraction=0.6):
    x = grid.nodes
    half = 0.5 * grid.extent
    centre = grid.x_min + half
    return np.abs(x - centre) <= fraction * half


def _step_plan(t0, t1, dt, outputs):
    """Break [t0, t1] into steps of size <= dt that land exactly on every output time."""
    sign = 1.0 if t1 >= t0 else -1.0
    marks = sorted({float(v) for v in outputs if sign * (v - t0) > 0 and sign * (t1 - v) >= 0} | {t1}, key=lambda v: sign * v)
    plan, start = [], t0
    for stop in marks:
        m = max(1, int(np.ceil(abs(stop - start) / dt - 1e-9)))
        edges = start + (stop - start) * np.arange(1, m + 1) / m
        edges[-1] = stop
        plan.append(edges)
        start = stop
    return np.concatenate(plan) if plan else np.array([]), marks


def split_step_psi(psi, gauge, t0, t1, dt, output_times=None):
    """Strang splitting for the gauged cubic NLS; returns slices at t0, the outputs and t1."""
    if gauge.kind == "critical" and t0 <= 0:
        raise DomainError("critical gauge needs t0 > 0")
    if gauge.kind == "critical" and min(t0, t1) <= 0:
        raise DomainError("critical gauge needs t > 0 throughout")
    grid = psi.grid
    xi2 = wavenumbers(grid) ** 2
    vals = np.array(psi.values, dtype=complex)
    peak = float(np.max(np.abs(vals) ** 2))
    dt_eff = min(abs(dt), 0.1 / peak) if peak > 0 else abs(dt)
    outputs = [] if output_times is None else list(output_times)
    edges, marks = _step_plan(t0, t1, dt_eff, outputs)
    keep = {round(v, 12) for v in marks}
    times, slices = [t0], [vals.copy()]
    t = t0
    for t_next in edges:
        d = t_next - t
        a1 = gauge.a(t + 0.25 * d)
        a2 = gauge.a(t + 0.75 * d)
        vals = vals * np.exp(0.25j * d * (np.abs(vals) ** 2 - a1))
        vals = np.fft.ifft(np.exp(-1j * d * xi2) * np.fft.fft(vals))
        vals = vals * np.exp(0.25j * d * (np.abs(vals) ** 2 - a2))
        t = t_next
        if round(t, 12) in keep:
            times.append(t)
            slices.append(vals.copy())
    return Trajectory(grid, np.array(times), np.array(slices), "t", {"gauge": gauge.to_dict(), "steps": len(edges)})


def split_step_u(u, alpha, s0, s1, ds, output_s=None):
    """Strang splitting in the pseudo-conformal variable; the nonlinear substep is a pure phase on u + alpha."""
    if min(s0, s1) < 1:
        raise DomainError("the u-evolution is defined here for s >= 1")
    grid = u.grid
    xi2 = wavenumbers(grid) ** 2
    vals = np.array(u.values, dtype=complex)
    peak = float(np.max(np.abs(vals + alpha) ** 2))
    if abs(ds) * peak / (2 * min(s0, s1)) > 0.1:
        raise ResolutionError("ds * max|u + alpha|^2 / (2 s) exceeds 0.1")
    outputs = [] if output_s is None else list(output_s)
    edges, marks = _step_plan(s0, s1, abs(ds), outputs)
    keep = {round(v, 12) for v in marks}
    a2 = alpha * alpha

    def phase(v, sa, sb):
        w = v + alpha
        return w * np.exp(0.5j * (np.abs(w) ** 2 - a2) * np.log(sb / sa)) - alpha

    times, slices = [s0], [vals.copy()]
    s = s0
    for s_next in edges:
        sm = 0.5 * (s + s_next)
        vals = phase(vals, s, sm)
        vals = np.fft.ifft(np.exp(-1j * (s_next - s) * xi2) * np.fft.fft(vals))
        vals = phase(vals, sm, s_next)
        s = s_next
        if round(s, 12) in keep:
            times.append(s)
            slices.append(vals.copy())
    return Trajectory(grid, np.array(times), np.array(slices), "s", {"alpha": alpha, "scheme": "strang"})


# -- exponential integrator for long s-ranges ---------------------------------

_E1_SERIES = np.array([(-1.0) ** k * np.prod(np.arange(1, k + 1, dtype=float)) for k in range(24)])


def exp1_complex(z):
    """E1(z); asymptotic series for |z| >= 48 (relative error ~1e-16), scipy below."""
    z = np.asarray(z, dtype=complex)
    out = np.empty_like(z)
    big = np.abs(z) >= 48
    zb = z[big]
    w = 1.0 / zb
    acc = np.zeros_like(zb)
    for c in _E1_SERIES[::-1]:
        acc = acc * w + c
    out[big] = np.exp(-zb) * w * acc
    out[~big] = exp1(z[~big])
    return out


@dataclass(frozen=True)
class ProbeSeries:
    """u(s, 0) and u_y(s, 0) at every integrator step."""

    s: np.ndarray
    u0: np.ndarray
    uy0: np.ndarray


def _coupling_step(fh, xi, alpha, s1, s2, neg):
    # exact first-order Magnus step of the linearized coupling in the interaction picture
    w = 2 * xi * xi
    L = np.log(s2 / s1)
    E = np.full(fh.shape, L, dtype=complex)
    nz = w > 0
    E[nz] = exp1_complex(-1j * w[nz] * s1) - exp1_complex(-1j * w[nz] * s2)
    b = np.conj(fh[neg])
    nu = 0.5 * alpha**2 * np.sqrt(np.maximum(L * L - np.abs(E) ** 2, 0.0))
    safe = np.where(nu > 0, nu, 1.0)
    sinc = np.where(nu > 0, np.sin(nu) / safe, 1.0)
    return np.cos(nu) * fh + sinc * 0.5j * alpha**2 * (L * fh + E * b)


def _remainder_rhs(u, s, alpha):
    a2 = np.abs(u) ** 2
    return 0.5j / s * (2 * alpha * u.real * u + a2 * u + alpha * a2)


def _remainder_step(u, s1, s2, alpha):
    d = s2 - s1
    sm = 0.5 * (s1 + s2)
    k1 = _remainder_rhs(u, s1, alpha)
    k2 = _remainder_rhs(u + 0.5 * d * k1, sm, alpha)
    k3 = _remainder_rhs(u + 0.5 * d * k2, sm, alpha)
    k4 = _remainder_rhs(u + d * k3, s2, alpha)
    return u + d / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def geometric_plan(s0, s1, eps, outputs=()):
    """Steps with |ds| <= eps * s landing exactly on each output value."""
    pts = [s0]
    targets = sorted({float(v) for v in outputs if min(s0, s1) < v < max(s0, s1)} | {float(s1)}, reverse=bool(s1 < s0))
    s = s0
    for stop in targets:
        m = max(1, int(np.ceil(abs(np.log(stop / s)) / np.log1p(eps) - 1e-9)))
        seg = s * (stop / s) ** (np.arange(1, m + 1) / m)
        seg[-1] = stop
        pts.extend(seg)
        s = stop
    return np.array(pts)


def evolve_u_exponential(u, alpha, s0, s1, eps=0.05, output_s=(), probe=True):
    """Evolve u from s0 to s1 (either direction) with geometric steps |ds| <= eps s.

    Strang composition of the exact linear flow of i u_s + u_yy + alpha^2 (u + conj u)/(2s) = 0
    (Magnus step in the interaction picture, exponential integrals for the
    oscillatory weights) with RK4 half-steps of the remaining nonlinear terms.
    Returns the trajectory at s0, the requested outputs and s1, plus probe
    series at y = 0 for every step.
    """
    if min(s0, s1) < 1:
        raise DomainError("the u-evolution is defined here for s >= 1")
    grid = u.grid
    xi = wavenumbers(grid)
    xi2 = xi * xi
    neg = (-np.arange(grid.n)) % grid.n
    shift = _shift_phase(grid)
    h, n = grid.h, grid.n
    i0 = grid.nearest_index(0.0)
    at_zero = abs(grid.nodes[i0]) < 1e-12 * grid.h
    phase0 = np.exp(1j * xi * grid.nodes[i0])

    def fwd(v):
        return h * np.fft.fft(v) * shift

    def inv(c):
        return np.fft.ifft(c / shift) / h

    plan = geometric_plan(s0, s1, eps, output_s)
    keep = {round(v, 9) for v in list(output_s) + [s1]}
    vals = np.array(u.values, dtype=complex)
    times, slices = [s0], [vals.copy()]
    probes_s, probes_u, probes_uy = [], [], []

    def record(s, v):
        if not (probe and at_zero):
            return
        c = fwd(v)
        probes_s.append(s)
        probes_u.append(v[i0])
        probes_uy.append(np.sum(1j * xi * c * phase0) / (n * h))

    record(s0, vals)
    for sa, sb in zip(plan[:-1], plan[1:]):
        sm = np.sqrt(sa * sb)
        vals = _remainder_step(vals, sa, sm, alpha)
        fh = np.exp(1j * sa * xi2) * fwd(vals)
        fh = _coupling_step(fh, xi, alpha, sa, sb, neg)
        vals = inv(np.exp(-1j * sb * xi2) * fh)
        vals = _remainder_step(vals, sm, sb, alpha)
        record(sb, vals)
        if round(sb, 9) in keep:
            times.append(sb)
            slices.append(vals.copy())
    traj = Trajectory(grid, np.array(times), np.array(slices), "s", {"alpha": alpha, "scheme": "exponential", "eps": eps})
    series = ProbeSeries(np.array(probes_s), np.array(probes_u), np.array(probes_uy))
    return traj, series


def nls_residual(traj, gauge, interior=0.6):
    """Max interior |i D_t psi + psi_xx + (|psi|^2 - a) psi / 2| with centered D_t."""
    if len(traj) < 3:
        raise ContractError("need at least three slices")
    t = np.asarray(traj.times, dtype=float)
    dts = np.diff(t)
    if np.max(np.abs(dts - dts[0])) > 1e-9 * abs(dts[0]):
        raise ContractError("slices must be uniformly spaced in time")
    dt = dts[0]
    mask = interior_mask(traj.grid, interior)
    worst = 0.0
    for k in range(1, len(t) - 1):
        p = traj.values[k]
        dpsi = (traj.values[k + 1] - traj.values[k - 1]) / (2 * dt)
        pxx = spectral_derivative(p, traj.grid, 2)
        res = 1j * dpsi + pxx + 0.5 * (np.abs(p) ** 2 - gauge.a(t[k])) * p
        worst = max(worst, float(np.max(np.abs(res[mask]))))
    return worst


# -- serialization -------------------------------------------------------------


def save_trajectory(traj, directory, binary=False):
    from .geometry import write_table

    os.makedirs(directory, exist_ok=True)
    files = []
    x = traj.grid.nodes
    for k, (tk, v) in enumerate(zip(traj.times, traj.values)):
        name = f"slice_{k:04d}.csv"
        write_table(os.path.join(directory, name), ["x", "re", "im"], [x, v.real, v.imag])
        files.append(name)
        if binary:
            inter = np.empty(2 * len(v), dtype="<f8")
            inter[0::2], inter[1::2] = v.real, v.imag
            inter.tofile(os.path.join(directory, f"slice_{k:04d}.bin"))
    manifest = {
        "grid": traj.grid.to_dict(),
        "times": [float(format(float(v), ".17g")) for v in traj.times],
        "variable": traj.variable,
        "gauge": traj.meta.get("gauge"),
        "files": files,
    }
    with open(os.path.join(directory, "manifest.json"), "w", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_trajectory(directory):
    with open(os.path.join(directory, "manifest.json")) as fh:
        m = json.load(fh)
    g = m["grid"]
    grid = Grid1D(g["x_min"], g["h"], g["n"])
    vals = []
    for name in m["files"]:
        d = np.loadtxt(os.path.join(directory, name), delimiter=",", skiprows=1, ndmin=2)
        vals.append(d[:, 1] + 1j * d[:, 2])
    return Trajectory(grid, np.array(m["times"]), np.array(vals), m["variable"], {"gauge": m["gauge"]})
