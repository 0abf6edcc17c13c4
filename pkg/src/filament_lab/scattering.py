"""Asymptotic state u+ built from filament data, hypothesis audits and remainder diagnostics.

u+ = F^{-1}[ sqrt(4 pi i) g(2 xi) e^{i alpha^2 log|xi|} ], and the perturbed NLS
solution is psi(t, x) = e^{i x^2/4t} t^{-1/2} (alpha + conj u(1/t, x/t)).

The linearized coupling alpha^2 (u + conj u)/(2 s) in the u-equation leaves a
logarithmic phase in the large-s behaviour,

    u(s) ~ e^{i (alpha^2/2) log s} e^{i s d^2} u+,

so the remainder is measured against this modified free state by default;
``phase="literal"`` measures against e^{i s d^2} u+ alone.
"""

from dataclasses import dataclass, field

import numpy as np

from . import nlsolver as nls
from ._numerics import PowerFit, derivative, fit_power_law, lagrange4
from .errors import DomainError, FitUnstableError, RangeError
from .geometry import FilamentFunction, FrenetData, Grid1D, filament_function


@dataclass(frozen=True)
class ScatteringDatum:
    grid: Grid1D
    u_plus: np.ndarray
    alpha: float
    provenance: object = None  # the FrenetData (or FilamentFunction) used
    filament: FilamentFunction = None

    @property
    def field(self):
        return nls.WaveField(self.grid, self.u_plus, 0.0)

    def spectrum(self):
        return nls.forward_array(self.u_plus, self.grid)

    def free_state(self, s, phase="modified"):
        """e^{i(alpha^2/2) log s} e^{i s d^2} u+ (or without the phase when ``literal``)."""
        xi = nls.wavenumbers(self.grid)
        c = np.exp(-1j * s * xi * xi) * self.spectrum()
        if phase == "modified":
            c = c * np.exp(0.5j * self.alpha**2 * np.log(s))
        return nls.inverse_array(c, self.grid)


@dataclass(frozen=True)
class NormEntry:
    value: float
    suspect: bool
    extent_ratio: float
    refinement_ratio: float

    def to_dict(self):
        return {
            "value": self.value,
            "suspect": self.suspect,
            "extent_ratio": self.extent_ratio,
            "refinement_ratio": self.refinement_ratio,
        }


@dataclass(frozen=True)
class HypothesisReport:
    entries: dict
    notes: tuple = ()

    @property
    def suspect(self):
        return sorted(k for k, e in self.entries.items() if e.suspect)

    @property
    def ok(self):
        return not self.suspect

    def to_dict(self):
        return {"entries": {k: self.entries[k].to_dict() for k in sorted(self.entries)}, "notes": list(self.notes)}


@dataclass(frozen=True)
class RemainderDiagnostics:
    times: np.ndarray
    r_L2: np.ndarray = None
    r_H1: np.ndarray = None
    r_H2: np.ndarray = None
    pointwise_u: np.ndarray = None
    pointwise_r: np.ndarray = None
    pointwise_du: np.ndarray = None
    cancel_bound: np.ndarray = None
    fits: dict = field(default_factory=dict)

    def to_dict(self):
        out = {"times": list(map(float, self.times)), "fits": {k: v.to_dict() for k, v in sorted(self.fits.items())}}
        for name in ("r_L2", "r_H1", "r_H2", "pointwise_u", "pointwise_r", "pointwise_du", "cancel_bound"):
            v = getattr(self, name)
            if v is not None:
                out[name] = list(map(float, v))
        return out


# -- hypothesis audit -----------------------------------------------------------

_NORM_NAMES = (
    "c_W31",
    "c_H2",
    "c_over_x_W21",
    "c_over_x_H2",
    "x2c_W31",
    "x2c_H2",
    "one_plus_x2_c_L2",
    "c_over_x2_L2",
    "tau_H2",
    "tau2_H1",
)


def _fill_zero(v, i0):
    # cubic value at the excluded node from its four neighbours
    if i0 is None or i0 < 2 or i0 > len(v) - 3:
        return v
    v = v.copy()
    v[i0] = (-v[i0 - 2] + 4 * v[i0 - 1] + 4 * v[i0 + 1] - v[i0 + 2]) / 6
    return v


def _integrate(f, h, exclude):
    f = np.abs(f)
    if exclude is None:
        return float(np.trapezoid(f, dx=h))
    return float(np.trapezoid(f[:exclude], dx=h) + np.trapezoid(f[exclude + 1 :], dx=h))


def _sobolev(f, h, k, p, exclude):
    parts = [f] + [derivative(f, h, j) for j in range(1, k + 1)]
    if p == 1:
        return sum(_integrate(q, h, exclude) for q in parts)
    return float(np.sqrt(sum(_integrate(np.abs(q) ** 2, h, exclude) for q in parts)))


def _norm_table(x, h, c, tau):
    i0 = int(np.argmin(np.abs(x)))
    zero = i0 if abs(x[i0]) < 1e-12 * h else None
    safe = np.where(np.abs(x) > 0, x, 1.0)
    c_x = _fill_zero(np.where(np.abs(x) > 0, c / safe, 0.0), zero)
    c_x2 = np.where(np.abs(x) > 0, c / safe**2, 0.0)
    x2c = x * x * c
    return {
        "c_W31": _sobolev(c, h, 3, 1, None),
        "c_H2": _sobolev(c, h, 2, 2, None),
        "c_over_x_W21": _sobolev(c_x, h, 2, 1, zero),
        "c_over_x_H2": _sobolev(c_x, h, 2, 2, zero),
        "x2c_W31": _sobolev(x2c, h, 3, 1, None),
        "x2c_H2": _sobolev(x2c, h, 2, 2, None),
        "one_plus_x2_c_L2": _sobolev((1 + x * x) * c, h, 0, 2, None),
        "c_over_x2_L2": _sobolev(c_x2, h, 0, 2, zero),
        "tau_H2": _sobolev(tau, h, 2, 2, None),
        "tau2_H1": _sobolev(tau * tau, h, 1, 2, None),
    }


def hypothesis_norms(fd):
    """Audit the curvature/torsion norms; flags entries unstable under extent or refinement changes.

    A value is flagged when the full grid gives more than twice the value of
    the half-extent grid, or more than twice that of the grid coarsened by 2.
    This is a heuristic proxy for non-finiteness, not a proof.
    """
    grid = fd.grid
    x, h = grid.nodes, grid.h
    c, tau = np.asarray(fd.c, float), np.asarray(fd.tau, float)
    notes = []
    i0 = int(np.argmin(np.abs(x)))
    if abs(x[i0]) < 1e-12 * h:
        notes.append("node at x = 0 excluded from the x^-1 and x^-2 weighted integrals")
    full = _norm_table(x, h, c, tau)
    inner = np.abs(x) <= 0.5 * max(abs(grid.x_min), abs(grid.x_max))
    half = _norm_table(x[inner], h, c[inner], tau[inner])
    keep = ((np.arange(grid.n) - i0) % 2) == 0
    coarse = _norm_table(x[keep], 2 * h, c[keep], tau[keep])
    entries = {}
    for name in _NORM_NAMES:
        v = full[name]

        def ratio(ref):
            if v == 0:
                return 1.0
            return float(v / ref) if ref > 0 else np.inf

        re, rr = ratio(half[name]), ratio(coarse[name])
        entries[name] = NormEntry(float(v), bool(re > 2 or rr > 2 or not np.isfinite(v)), re, rr)
    return HypothesisReport(entries, tuple(notes))


# -- u+ -------------------------------------------------------------------------


def _as_filament(data):
    if isinstance(data, FilamentFunction):
        return data
    if isinstance(data, FrenetData):
        return filament_function(data)
    raise TypeError("expected FrenetData or FilamentFunction")


def sample_g(filament, points):
    """Cubic interpolation of g at ``points``; zero outside the data window."""
    grid = filament.grid
    pts = np.asarray(points, dtype=float)
    out = np.zeros(pts.shape, dtype=complex)
    inside = (pts >= grid.x_min) & (pts <= grid.x_max)
    if grid.n >= 4:
        out[inside] = lagrange4(filament.g, grid.x_min, grid.h, pts[inside])
    else:
        out[inside] = np.interp(pts[inside], grid.nodes, filament.g)
    return out


# e^{is d^2} f(y) ~ e^{iy^2/4s} F f(y/2s) / sqrt(4 pi i s); this constant makes the
# t -> 0 trace of psi equal to g itself under the non-unitary transform pair
KERNEL_SCALE = np.sqrt(4 * np.pi)


def uplus_coefficients(filament, alpha, grid):
    xi = nls.wavenumbers(grid)
    coeff = np.zeros(grid.n, dtype=complex)
    nz = xi != 0
    coeff[nz] = KERNEL_SCALE * nls.SQRT_I * sample_g(filament, 2 * xi[nz]) * np.exp(1j * alpha**2 * np.log(np.abs(xi[nz])))
    # zero mode: cell average of the bounded log phase over |xi| < dxi/2
    b = alpha**2
    half = np.pi / grid.extent
    coeff[~nz] = KERNEL_SCALE * nls.SQRT_I * sample_g(filament, np.zeros(1)) * np.exp(1j * b * np.log(half)) / (1 + 1j * b)
    return coeff


def build_uplus(fd, alpha, grid=None):
    """u+ on ``grid`` (default: the data grid, which must then have a power-of-two size)."""
    filament = _as_filament(fd)
    grid = filament.grid if grid is None else grid
    vals = nls.inverse_array(uplus_coefficients(filament, alpha, grid), grid)
    nls.WaveField(grid, vals)  # validates the grid size
    return ScatteringDatum(grid, vals, float(alpha), fd, filament)


def weighted_sup_bounds(sd):
    x = sd.grid.nodes
    w = (1 + x * x) * np.abs(sd.u_plus)
    return float(np.max(w)), float(np.max(np.abs(x) * w))


def seed_u(sd, s, phase="modified"):
    return nls.WaveField(sd.grid, sd.free_state(s, phase), float(s))


# -- psi <-> u --------------------------------------------------------------------


def spectral_evaluate(values, grid, points, chunk=2048):
    """Trigonometric interpolant of periodic samples at arbitrary points."""
    c = nls.forward_array(values, grid)
    xi = nls.wavenumbers(grid)
    pts = np.asarray(points, dtype=float)
    out = np.empty(pts.shape, dtype=complex)
    flat_in, flat_out = pts.ravel(), out.ravel()
    for a in range(0, flat_in.size, chunk):
        p = flat_in[a : a + chunk]
        flat_out[a : a + chunk] = np.exp(1j * np.outer(p, xi)) @ c / grid.extent
    return flat_out.reshape(pts.shape)


def assemble_psi(alpha, u, t, grid=None):
    """psi(t, x) = e^{i x^2/4t} t^{-1/2} (alpha + conj u(1/t, x/t)).

    Without ``grid`` the psi-grid is the u-grid scaled by t (no interpolation);
    otherwise u is evaluated at x/t by trigonometric interpolation.
    """
    if t <= 0:
        raise DomainError("t must be positive")
    if grid is None:
        grid = Grid1D(u.grid.x_min * t, u.grid.h * t, u.grid.n)
        uy = u.values
    else:
        y = grid.nodes / t
        if not u.grid.contains(y):
            raise RangeError("x/t leaves the u-grid")
        uy = spectral_evaluate(u.values, u.grid, y)
    x = grid.nodes
    vals = np.exp(0.25j * x * x / t) / np.sqrt(t) * (alpha + np.conj(uy))
    return nls.WaveField(grid, vals, float(t))


def extract_u(psi, alpha, t):
    if t <= 0:
        raise DomainError("t must be positive")
    x = psi.grid.nodes
    w = psi.values * np.sqrt(t) * np.exp(-0.25j * x * x / t) - alpha
    grid = Grid1D(psi.grid.x_min / t, psi.grid.h / t, psi.grid.n)
    return nls.WaveField(grid, np.conj(w), 1.0 / t)


# -- remainder ----------------------------------------------------------------------


def _fit(times, values, name, fits):
    try:
        fits[name] = fit_power_law(times, values)
    except ValueError:
        pass


def remainder_diagnostics(u_traj, sd, phase="modified", scale=1.0, fit_range=None):
    """Norms of r(s) = u(s) - (free state of scale * u+) at every slice, fitted in t = 1/s.

    ``fit_range`` = (t_lo, t_hi) restricts the slices used in the fits.
    """
    s = np.asarray(u_traj.times, dtype=float)
    if s.max() / s.min() < 10 * (1 - 1e-9):
        raise FitUnstableError("the trajectory spans less than one decade in s")
    grid = u_traj.grid
    xi = nls.wavenumbers(grid)
    ref_sd = sd if scale == 1.0 else ScatteringDatum(sd.grid, scale * sd.u_plus, sd.alpha)
    l2, h1, h2 = [], [], []
    for k, sk in enumerate(s):
        r = u_traj.values[k] - ref_sd.free_state(sk, phase)
        rh = np.fft.fft(r)
        norm = grid.h / grid.n
        l2.append(np.sqrt(norm * np.sum(np.abs(rh) ** 2)))
        h1.append(np.sqrt(norm * np.sum(np.abs(xi * rh) ** 2)))
        h2.append(np.sqrt(norm * np.sum(np.abs(xi * xi * rh) ** 2)))
    t = 1.0 / s
    order = np.argsort(t)
    t = t[order]
    arrays = [np.asarray(a)[order] for a in (l2, h1, h2)]
    sel = np.ones_like(t, dtype=bool) if fit_range is None else (t >= fit_range[0]) & (t <= fit_range[1])
    fits = {}
    for name, arr in zip(("r_L2", "r_H1", "r_H2"), arrays):
        _fit(t[sel], arr[sel], name, fits)
    return RemainderDiagnostics(t, *arrays, fits=fits)


def pointwise_bounds_check(u_traj, x_window=1.0, sd=None, phase="modified", fit_range=None):
    """Sup over |x| <= x_window of |u(1/t, x/t)|, |r|, |d_x u(1/t, x/t)| and the cancellation
    |(i x/2t) u(1/t, x/t) - d_x[u(1/t, x/t)]|, tabulated against t = 1/s."""
    grid = u_traj.grid
    y = grid.nodes
    s = np.asarray(u_traj.times, dtype=float)
    pu, pr, pdu, pc = [], [], [], []
    for k, sk in enumerate(s):
        u = u_traj.values[k]
        m = np.abs(y) <= x_window * sk
        if not np.any(m):
            m = np.abs(y) == np.min(np.abs(y))
        uy = nls.spectral_derivative(u, grid, 1)
        pu.append(np.max(np.abs(u[m])))
        pdu.append(sk * np.max(np.abs(uy[m])))
        pc.append(np.max(np.abs(0.5j * y[m] * u[m] - sk * uy[m])))
        if sd is not None:
            pr.append(np.max(np.abs(u[m] - sd.free_state(sk, phase)[m])))
    t = 1.0 / s
    order = np.argsort(t)
    t = t[order]
    pu, pdu, pc = (np.asarray(a)[order] for a in (pu, pdu, pc))
    pr = np.asarray(pr)[order] if sd is not None else None
    sel = np.ones_like(t, dtype=bool) if fit_range is None else (t >= fit_range[0]) & (t <= fit_range[1])
    fits = {}
    _fit(t[sel], pu[sel], "pointwise_u", fits)
    _fit(t[sel], pdu[sel], "pointwise_du", fits)
    _fit(t[sel], pc[sel], "cancel_bound", fits)
    if pr is not None:
        _fit(t[sel], pr[sel], "pointwise_r", fits)
    return RemainderDiagnostics(t, pointwise_u=pu, pointwise_r=pr, pointwise_du=pdu, cancel_bound=pc, fits=fits)


__all__ = [
    "HypothesisReport",
    "NormEntry",
    "PowerFit",
    "RemainderDiagnostics",
    "ScatteringDatum",
    "assemble_psi",
    "build_uplus",
    "extract_u",
    "hypothesis_norms",
    "pointwise_bounds_check",
    "remainder_diagnostics",
    "seed_u",
    "spectral_evaluate",
    "uplus_coefficients",
    "weighted_sup_bounds",
]
