"""Configuration, experiment orchestration, sweeps and report emission.

This is the only module that writes files. Every run produces a
deterministic ``report.json`` plus CSV tables; wall-clock timings go to a
separate ``timings.json`` so that reruns of the same configuration are
byte-identical in every data file.
"""

import argparse
import hashlib
import itertools
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import nlsolver as nls
from . import reconstruction as rc
from . import scattering as sc
from . import selfsimilar as ss
from .errors import ConfigError, FilamentLabError, HypothesisAuditError

KINDS = ("profile", "angle-sweep", "nls-validate", "recover", "rates")
FAMILIES = ("zero", "gauss2", "bump", "badgauss")


# -- schema -------------------------------------------------------------------------


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _pow2(v):
    return v >= 8 and v & (v - 1) == 0


@dataclass(frozen=True)
class Param:
    kind: str  # float, int, str, bool, floats
    default: object
    check: object = None
    rule: str = ""


SCHEMA = {
    "experiment.kind": Param("str", None, lambda v: v in KINDS, f"one of {', '.join(KINDS)}"),
    "experiment.alpha": Param("float", 0.3, _nonneg, ">= 0"),
    "experiment.seed": Param("int", 0, _nonneg, ">= 0"),
    "data.curvature": Param("str", "gauss2", lambda v: v in FAMILIES, f"one of {', '.join(FAMILIES)}"),
    "data.beta": Param("float", 0.1, _nonneg, ">= 0"),
    "data.torsion": Param("float", 0.0),
    "data.gamma": Param("float", 0.0),
    "data.csv": Param("str", ""),
    "data.n": Param("int", 16384, lambda v: v >= 16, ">= 16"),
    "data.h": Param("float", 1e-3, _positive, "> 0"),
    "grid.n": Param("int", 131072, _pow2, "a power of two >= 8"),
    "grid.h": Param("float", 0.8, _positive, "> 0"),
    "grid.x_max": Param("float", 3.0, _positive, "> 0"),
    "grid.h_out": Param("float", 1e-3, _positive, "> 0"),
    "time.t0": Param("float", 0.5, lambda v: 0 < v <= 1, "in (0, 1]"),
    "time.t_min": Param("float", 1e-4, _positive, "> 0"),
    "time.per_decade": Param("int", 12, lambda v: v >= 2, ">= 2"),
    "time.snap": Param("bool", False),
    "time.eps": Param("float", 0.05, lambda v: 0 < v <= 0.2, "in (0, 0.2]"),
    "profile.x_max": Param("float", 200.0, lambda v: v >= 50, ">= 50"),
    "profile.h": Param("float", 5e-4, _positive, "> 0"),
    "profile.alphas": Param("floats", (0.2, 0.4, 0.6, 0.8), lambda v: all(a >= 0 for a in v), "all >= 0"),
    "rates.probes": Param("floats", (0.5, 1.0, 2.0), lambda v: len(v) > 0 and all(a > 0 for a in v), "nonempty, all > 0"),
    "rates.rotation": Param("floats", (0.0, 0.0, 0.0), lambda v: len(v) == 3, "three rotation-vector components"),
    "nls.n": Param("int", 4096, _pow2, "a power of two >= 8"),
    "nls.L": Param("float", 64.0, _positive, "> 0"),
    "nls.width": Param("float", 4.0, _positive, "> 0"),
    "nls.t_end": Param("float", 1.0, _positive, "> 0"),
    "nls.dt": Param("float", 0.01, _positive, "> 0"),
    "nls.steps": Param("int", 1000, lambda v: v >= 1, ">= 1"),
    "tolerance.angle_rel": Param("float", 5e-3, _positive),
    "tolerance.dot_identity": Param("float", 5e-3, _positive),
    "tolerance.curve_rate": Param("floats", (0.4, 0.6), lambda v: len(v) == 2 and v[0] < v[1], "two increasing values"),
    "tolerance.selfsimilar_rate": Param("floats", (0.45, 0.55), lambda v: len(v) == 2 and v[0] < v[1], "two increasing values"),
    "tolerance.tangent_rate": Param("float", 0.2),
    "tolerance.remainder_l2": Param("float", 0.4),
    "tolerance.remainder_grad": Param("float", 0.8),
    "tolerance.cancellation_gap": Param("float", 0.3),
    "tolerance.modulation_gap": Param("float", 0.15),
    "tolerance.trace_defect": Param("float", 5e-2, _positive),
    "tolerance.delta_rel": Param("float", 0.1, _positive),
    "tolerance.corner_perturbed_deg": Param("float", 2.0, _positive),
    "tolerance.corner_selfsimilar_deg": Param("float", 0.1, _positive),
    "tolerance.theta_rel": Param("float", 0.01, _positive),
    "tolerance.rotation": Param("float", 1e-2, _positive),
    "tolerance.roundtrip": Param("float", 1e-13, _positive),
    "tolerance.free_gaussian": Param("float", 1e-10, _positive),
    "tolerance.mass_drift": Param("float", 1e-12, _positive),
    "tolerance.order": Param("float", 1.9, _positive),
}


def _parse_value(p, raw, name, line):
    try:
        if p.kind == "float":
            v = float(raw)
            if not np.isfinite(v):
                raise ValueError
        elif p.kind == "int":
            v = int(raw)
        elif p.kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError
            v = low in ("true", "yes", "1")
        elif p.kind == "floats":
            v = tuple(float(s) for s in raw.replace("[", "").replace("]", "").split(",") if s.strip())
        else:
            v = raw
    except ValueError:
        raise ConfigError(f"{name}: cannot read {raw!r} as {p.kind}", line) from None
    if p.check is not None and not p.check(v):
        raise ConfigError(f"{name} = {raw!r} must be {p.rule}", line)
    return v


def _strip_comment(text):
    for mark in (" #", " ;", "\t#", "\t;"):
        i = text.find(mark)
        if i >= 0:
            text = text[:i]
    return text.strip()


@dataclass
class ExperimentConfig:
    values: dict
    sweep: dict = None  # dotted key -> tuple of raw values, or None when no sweep
    lines: dict = field(default_factory=dict)
    data_csv: bytes = b""

    def __getitem__(self, key):
        return self.values[key]

    @property
    def kind(self):
        return self.values["experiment.kind"]

    def with_values(self, **updates):
        v = dict(self.values)
        v.update(updates)
        return ExperimentConfig(v, None, dict(self.lines), self.data_csv)

    def echo(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(self.values.items())}

    def content_hash(self):
        """Git-style blob hash of the canonical config text and any data file."""
        text = "".join(f"{k} = {_canonical(v)}\n" for k, v in sorted(self.values.items())).encode() + self.data_csv
        return hashlib.sha1(b"blob %d\0" % len(text) + text).hexdigest()


def _canonical(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_canonical(x) for x in v)
    return str(v)


def parse_config(text, overrides=(), base_dir="."):
    """Parse key = value text with [dotted.sections]; unknown keys are rejected with their line."""
    values = {k: p.default for k, p in SCHEMA.items()}
    lines = {}
    sweep = None
    section = ""
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ConfigError(f"malformed section header {line!r}", lineno)
            section = line[1:-1].strip()
            if section == "sweep":
                sweep = {} if sweep is None else sweep
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {line!r}", lineno)
        key, raw = (s.strip() for s in line.split("=", 1))
        raw = _strip_comment(raw)
        if section == "sweep":
            if key not in SCHEMA:
                raise ConfigError(f"unknown sweep parameter {key!r}", lineno)
            # list-valued parameters separate grid points with ';', scalars also with ','
            sep = ";" if SCHEMA[key].kind == "floats" else None
            parts = raw.split(";") if sep else raw.replace(";", ",").split(",")
            sweep[key] = (tuple(s.strip() for s in parts if s.strip()), lineno)
            continue
        name = f"{section}.{key}" if section else key
        if name not in SCHEMA:
            raise ConfigError(f"unknown key {name!r}", lineno)
        values[name] = _parse_value(SCHEMA[name], raw, name, lineno)
        lines[name] = lineno
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        name, raw = (s.strip() for s in item.split("=", 1))
        if name not in SCHEMA:
            raise ConfigError(f"unknown override key {name!r}")
        values[name] = _parse_value(SCHEMA[name], raw, name, None)
    cfg = ExperimentConfig(values, None, lines)
    if sweep is not None:
        cfg.sweep = {}
        for key, (raws, lineno) in sweep.items():
            cfg.sweep[key] = tuple(_parse_value(SCHEMA[key], r, key, lineno) for r in raws)
    _cross_validate(cfg)
    if values["data.csv"]:
        path = values["data.csv"]
        path = path if os.path.isabs(path) else os.path.join(base_dir, path)
        try:
            with open(path, "rb") as fh:
                cfg.data_csv = fh.read()
        except OSError as exc:
            raise ConfigError(f"data.csv: {exc}", lines.get("data.csv")) from None
        cfg.values["data.csv"] = path
    return cfg


def _cross_validate(cfg):
    v, ln = cfg.values, cfg.lines
    if v["time.t_min"] >= v["time.t0"]:
        raise ConfigError("time.t_min must be below time.t0", ln.get("time.t_min"))
    if v["experiment.kind"] == "recover" and v["experiment.alpha"] > 0.5:
        raise ConfigError("recover needs experiment.alpha <= 0.5", ln.get("experiment.alpha"))


def load_config(path, overrides=()):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(str(exc)) from None
    return parse_config(text, overrides, os.path.dirname(os.path.abspath(path)))


# -- curvature data ------------------------------------------------------------------------


def curvature_family(name, x, beta):
    if name == "zero":
        return np.zeros_like(x)
    if name == "gauss2":
        return beta * x * x * np.exp(-x * x)
    if name == "bump":
        out = np.zeros_like(x)
        m = np.abs(x) < 1
        out[m] = beta * x[m] ** 2 * np.exp(1 - 1 / (1 - x[m] ** 2))
        return out
    if name == "badgauss":
        return beta * np.exp(-x * x)
    raise ConfigError(f"unknown curvature family {name!r}")


def frenet_from_config(cfg):
    if cfg["data.csv"]:
        header, d = geo.read_table(cfg["data.csv"])
        if header[:3] != ["x", "c", "tau"]:
            raise ConfigError("data.csv needs columns x,c,tau")
        x = d[:, 0]
        h = float(x[1] - x[0])
        if np.max(np.abs(np.diff(x) - h)) > 1e-9 * max(1.0, abs(h)):
            raise ConfigError("data.csv must be sampled on a uniform grid")
        return geo.FrenetData(geo.Grid1D(float(x[0]), h, len(x)), d[:, 1].copy(), d[:, 2].copy(), cfg["data.gamma"])
    grid = geo.Grid1D.symmetric(cfg["data.n"], cfg["data.h"])
    x = grid.nodes
    c = curvature_family(cfg["data.curvature"], x, cfg["data.beta"])
    return geo.FrenetData(grid, c, np.full(grid.n, cfg["data.torsion"]), cfg["data.gamma"])


# -- checks and reports ------------------------------------------------------------------


@dataclass
class Check:
    name: str
    measured: object
    target: str
    status: str  # pass, warn, fail

    def to_dict(self):
        return {"name": self.name, "measured": self.measured, "target": self.target, "status": self.status}


def _check(name, measured, ok, target):
    return Check(name, measured, target, "pass" if ok else "fail")


@dataclass
class RunReport:
    kind: str
    config: dict
    input_hash: str
    checks: list
    results: dict
    timings: dict = field(default_factory=dict)
    refused: bool = False

    @property
    def status(self):
        states = [c.status for c in self.checks]
        if self.refused or "fail" in states:
            return "fail"
        return "warn" if "warn" in states else "pass"

    @property
    def exit_code(self):
        return 1 if self.status == "fail" else 0

    def to_dict(self):
        return {
            "kind": self.kind,
            "status": self.status,
            "refused": self.refused,
            "input_hash": self.input_hash,
            "config": self.config,
            "checks": [c.to_dict() for c in self.checks],
            "results": self.results,
        }


def dumps(obj):
    return ss.dumps(obj)


# -- experiments ---------------------------------------------------------------------------


def _profile(cfg, out):
    alpha = cfg["experiment.alpha"]
    p = ss.integrate_profile(alpha, cfg["profile.x_max"], cfg["profile.h"])
    rec = ss.profile_record(p)
    tol = cfg["tolerance.angle_rel"]
    rel = abs(rec["theta_measured"] - rec["theta_formula"]) / rec["theta_formula"]
    c = p.corner
    checks = [
        _check("angle_law", rel, rel <= tol, f"relative error <= {tol:g}"),
        _check("dot_identity", abs(rec["dot_A"] - rec["dot_A_formula"]), abs(rec["dot_A"] - rec["dot_A_formula"]) <= cfg["tolerance.dot_identity"], f"|A+.A- - (2exp(-pi alpha^2) - 1)| <= {cfg['tolerance.dot_identity']:g}"),
        _check("unit_A", max(abs(np.linalg.norm(c.A_plus) - 1), abs(np.linalg.norm(c.A_minus) - 1)), max(abs(np.linalg.norm(c.A_plus) - 1), abs(np.linalg.norm(c.A_minus) - 1)) <= 1e-4, "||A+-| - 1| <= 1e-4"),
    ]
    if out:
        ss.write_profile_json(p, os.path.join(out, "profile.json"))
        grid = geo.Grid1D.span(20.0, 0.01)
        geo.write_curve_csv(ss.selfsimilar_curve(p, 1.0, grid), os.path.join(out, "curve_t1.csv"))
    return checks, {"profile": rec, "theta_rel_err": rel}


def _angle_sweep(cfg, out):
    tol = cfg["tolerance.angle_rel"]
    rows = []
    for a in cfg["profile.alphas"]:
        p = ss.integrate_profile(a, cfg["profile.x_max"], cfg["profile.h"])
        th_f = float(ss.angle_from_alpha(a))
        rows.append((a, th_f, p.corner.theta, abs(p.corner.theta - th_f) / th_f))
    if out:
        geo.write_table(os.path.join(out, "angles.csv"), ["alpha", "theta_formula", "theta_measured", "rel_err"], list(zip(*rows)) if rows else [[], [], [], []])
    worst = max((r[3] for r in rows), default=0.0)
    checks = [_check("angle_law", worst, worst <= tol, f"max relative error <= {tol:g}")]
    return checks, {"rows": [dict(zip(("alpha", "theta_formula", "theta_measured", "rel_err"), r)) for r in rows]}


def _soliton(x, t, eta=1.0):
    # i v_t + v_xx + (1/2)|v|^2 v = 0
    return 2 * eta / np.cosh(eta * x) * np.exp(1j * eta * eta * t)


def _nls_validate(cfg, out):
    n, L = cfg["nls.n"], cfg["nls.L"]
    grid = geo.Grid1D(-L, 2 * L / n, n)
    x = grid.nodes
    rng = np.random.default_rng(cfg["experiment.seed"])
    f = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    rt = float(np.max(np.abs(nls.inverse_array(nls.forward_array(f, grid), grid) - f)) / np.max(np.abs(f)))

    w, t_end = cfg["nls.width"], cfg["nls.t_end"]
    g = nls.free_propagate(nls.WaveField(grid, np.exp(-x * x / w)), t_end).values
    exact = np.sqrt(w / (w + 4j * t_end)) * np.exp(-x * x / (w + 4j * t_end))
    free_err = float(np.max(np.abs(g - exact)))

    steps, dt = cfg["nls.steps"], cfg["nls.dt"]
    zero = nls.GaugeSpec("zero")
    traj = nls.split_step_psi(nls.WaveField(grid, _soliton(x, 0.0)), zero, 0.0, steps * dt, dt)
    m0 = nls.conserved_mass(nls.WaveField(grid, traj.values[0]))
    m1 = nls.conserved_mass(nls.WaveField(grid, traj.values[-1]))
    drift = abs(m1 - m0) / m0 * 1000.0 / traj.meta["steps"]

    # below the stepper's cap 0.1 / max|psi|^2 = 0.025 for the unit soliton
    dts = [t_end / 50, t_end / 100, t_end / 200, t_end / 400]
    errs = []
    for d in dts:
        tr = nls.split_step_psi(nls.WaveField(grid, _soliton(x, 0.0)), zero, 0.0, t_end, d)
        errs.append(float(np.max(np.abs(tr.values[-1] - _soliton(x, t_end)))))
    orders = [float(np.log2(errs[i] / errs[i + 1])) for i in range(len(errs) - 1)]
    tol = cfg["tolerance.order"]
    checks = [
        _check("fourier_roundtrip", rt, rt <= cfg["tolerance.roundtrip"], f"<= {cfg['tolerance.roundtrip']:g}"),
        _check("free_gaussian", free_err, free_err <= cfg["tolerance.free_gaussian"], f"<= {cfg['tolerance.free_gaussian']:g}"),
        _check("mass_drift_per_1000_steps", drift, drift <= cfg["tolerance.mass_drift"], f"<= {cfg['tolerance.mass_drift']:g}"),
        _check("temporal_order", min(orders), min(orders) >= tol, f">= {tol:g}"),
    ]
    if out:
        geo.write_table(os.path.join(out, "temporal_order.csv"), ["dt", "error"], [dts, errs])
    return checks, {"roundtrip": rt, "free_gaussian": free_err, "mass_drift": drift, "dt": dts, "errors": errs, "orders": orders, "soliton_error": errs[-1]}


def _rate_rows(rates):
    t = rates[0].t
    return t, [r.values for r in rates], [r.quantity for r in rates]


def _recover(cfg, out):
    fd = frenet_from_config(cfg)
    alpha = cfg["experiment.alpha"]
    try:
        res = rc.recover_initial_curve(
            fd, alpha, t0=cfg["time.t0"], t_min=cfg["time.t_min"], per_decade=cfg["time.per_decade"],
            x_max=cfg["grid.x_max"], h_out=cfg["grid.h_out"], u_grid=geo.Grid1D.symmetric(cfg["grid.n"], cfg["grid.h"]),
            probes=cfg["rates.probes"], eps=cfg["time.eps"], snap=cfg["time.snap"],
        )
    except HypothesisAuditError as exc:
        return [Check("hypothesis_audit", exc.failing, "no suspect norm", "fail")], {"refusal": str(exc)}, True
    lo, hi = cfg["tolerance.curve_rate"]
    e = res.curve_fit.exponent
    checks = [_check("curve_rate", e, lo <= e <= hi, f"in [{lo:g}, {hi:g}]")]
    tmin_rate = min(r.exponent for r in res.tangent_rates)
    checks.append(_check("tangent_rate", tmin_rate, tmin_rate >= cfg["tolerance.tangent_rate"], f"every probe >= {cfg['tolerance.tangent_rate']:g}"))
    rem = res.remainder.fits
    if rem:
        l2 = rem["r_L2"].exponent
        grad = min(rem["r_H1"].exponent, rem["r_H2"].exponent)
        checks.append(_check("remainder_l2", l2, l2 >= cfg["tolerance.remainder_l2"], f">= {cfg['tolerance.remainder_l2']:g}"))
        checks.append(_check("remainder_grad", grad, grad >= cfg["tolerance.remainder_grad"], f">= {cfg['tolerance.remainder_grad']:g}"))
        pw = res.pointwise.fits
        gap = pw["cancel_bound"].exponent - pw["pointwise_du"].exponent
        checks.append(_check("cancellation", gap, gap >= cfg["tolerance.cancellation_gap"], f"exponent gap >= {cfg['tolerance.cancellation_gap']:g}"))
    else:
        checks.append(Check("remainder", 0.0, "r vanishes identically", "warn"))
    tr = res.trace
    checks.append(_check("trace_defect", tr.defect, tr.defect <= cfg["tolerance.trace_defect"], f"<= {cfg['tolerance.trace_defect']:g}"))
    if np.isfinite(tr.delta) and alpha > 0:
        rel = abs(tr.delta - tr.delta_expected) / tr.delta_expected
        checks.append(_check("trace_phase", rel, rel <= cfg["tolerance.delta_rel"], f"relative error of delta <= {cfg['tolerance.delta_rel']:g}"))
    else:
        checks.append(Check("trace_phase", None, "undetermined without a coefficient", "warn"))
    deg = res.corner.max_angle_deg
    checks.append(_check("corner_directions", deg, deg <= cfg["tolerance.corner_perturbed_deg"], f"<= {cfg['tolerance.corner_perturbed_deg']:g} deg"))
    checks.append(_check("corner_angle", res.corner.theta_rel_err, res.corner.theta_rel_err <= cfg["tolerance.theta_rel"], f"<= {cfg['tolerance.theta_rel']:g}"))
    rt = cfg["tolerance.rotation"]
    worst = max(res.path.rotation.residual, res.path.pairwise)
    checks.append(_check("rotation_fit", worst, worst <= rt, f"residual and pairwise distance <= {rt:g}"))
    checks.append(_check("curvature_bound", res.curvature["max_sqrt_t_psi"], res.curvature["ok"], "<= alpha + 2 sup|u|"))
    if out:
        geo.write_table(os.path.join(out, "curve_rate.csv"), ["t", "sup_distance"], [res.times, res.sup_distance])
        t, cols, names = _rate_rows(res.tangent_rates)
        geo.write_table(os.path.join(out, "tangent_rate.csv"), ["t", *names], [t, *cols])
        r = res.remainder
        if rem:
            geo.write_table(os.path.join(out, "remainder.csv"), ["t", "r_L2", "r_H1", "r_H2"], [r.times, r.r_L2, r.r_H1, r.r_H2])
            p = res.pointwise
            geo.write_table(os.path.join(out, "pointwise.csv"), ["t", "sup_u", "sup_r", "sup_dxu", "cancellation"], [p.times, p.pointwise_u, p.pointwise_r, p.pointwise_du, p.cancel_bound])
        geo.write_curve_csv(res.chi0, os.path.join(out, "chi0.csv"))
        geo.write_curve_csv(res.curves.curve(int(np.argmin(res.times))), os.path.join(out, "chi_tmin.csv"))
    return checks, res.to_dict(), False


def _rates(cfg, out):
    from scipy.spatial.transform import Rotation

    alpha = cfg["experiment.alpha"]
    R0 = Rotation.from_rotvec(cfg["rates.rotation"]).as_matrix()
    res = rc.selfsimilar_run(
        alpha, t0=cfg["time.t0"], t_min=cfg["time.t_min"], per_decade=cfg["time.per_decade"],
        x_max=cfg["grid.x_max"], h_out=cfg["grid.h_out"], probes=cfg["rates.probes"], rotation=R0,
    )
    lo, hi = cfg["tolerance.selfsimilar_rate"]
    e = res.curve_fit.exponent
    rot_err = float(np.max(np.abs(res.path.rotation.R - R0)))
    checks = [
        _check("curve_rate", e, lo <= e <= hi, f"in [{lo:g}, {hi:g}]"),
        _check("modulation_gap", res.modulation_gap, res.modulation_gap >= cfg["tolerance.modulation_gap"], f">= {cfg['tolerance.modulation_gap']:g}"),
        _check("corner_directions", res.corner.max_angle_deg, res.corner.max_angle_deg <= cfg["tolerance.corner_selfsimilar_deg"], f"<= {cfg['tolerance.corner_selfsimilar_deg']:g} deg"),
        _check("corner_angle", res.corner.theta_rel_err, res.corner.theta_rel_err <= cfg["tolerance.theta_rel"], f"<= {cfg['tolerance.theta_rel']:g}"),
        _check("rotation_recovered", rot_err, rot_err <= 1e-4, "max |Theta - R0| <= 1e-4"),
        _check("frame_defect", res.frame_error, res.frame_error <= 1e-8, "max frame error vs profile <= 1e-8"),
    ]
    if out:
        geo.write_table(os.path.join(out, "curve_rate.csv"), ["t", "sup_distance"], [res.times, res.sup_distance])
        t, cols, names = _rate_rows(res.normal_rates)
        _, raw, raw_names = _rate_rows(res.raw_normal_rates)
        geo.write_table(os.path.join(out, "normal_rate.csv"), ["t", *names, *raw_names], [t, *cols, *raw])
        t, cols, names = _rate_rows(res.tangent_rates)
        geo.write_table(os.path.join(out, "tangent_rate.csv"), ["t", *names], [t, *cols])
    d = res.to_dict()
    d["rotation_applied"] = R0.tolist()
    return checks, d, False


_RUNNERS = {
    "profile": lambda c, o: (*_profile(c, o), False),
    "angle-sweep": lambda c, o: (*_angle_sweep(c, o), False),
    "nls-validate": lambda c, o: (*_nls_validate(c, o), False),
    "recover": _recover,
    "rates": _rates,
}


# -- run / sweep ----------------------------------------------------------------------


class LockError(FilamentLabError):
    pass


class _DirLock:
    def __init__(self, directory):
        self.path = os.path.join(directory, ".filament-lab.lock")

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockError(f"{self.path} exists: another run is writing to this directory") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        os.unlink(self.path)


def _write_text(path, text):
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def set_threads(n):
    """Worker count from the argument, else FILAMENT_LAB_THREADS, else 1.

    The kernels are serial; workers parallelize the sub-runs of a sweep.
    """
    if n is None:
        env = os.environ.get("FILAMENT_LAB_THREADS", "")
        try:
            n = int(env) if env else 1
        except ValueError:
            raise ConfigError(f"FILAMENT_LAB_THREADS={env!r} is not an integer") from None
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    return n


def _execute(cfg, out):
    if cfg.kind is None:
        raise ConfigError("experiment.kind is not set")
    tick = time.perf_counter()
    checks, results, refused = _RUNNERS[cfg.kind](cfg, out)
    report = RunReport(cfg.kind, cfg.echo(), cfg.content_hash(), checks, results, refused=refused)
    report.timings["total"] = time.perf_counter() - tick
    if out:
        _write_text(os.path.join(out, "report.json"), dumps(report.to_dict()))
        _write_text(os.path.join(out, "timings.json"), json.dumps(report.timings, indent=2, sort_keys=True) + "\n")
    return report


def run(cfg, out=None):
    """Run one experiment; with ``out`` the artifacts are written there under a lock."""
    if out is None:
        return _execute(cfg, None)
    os.makedirs(out, exist_ok=True)
    with _DirLock(out):
        return _execute(cfg, out)


def _sweep_points(grid):
    keys = sorted(grid)
    return keys, [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))] if keys else []


def _sub_run(args):
    cfg, out = args
    try:
        rep = _execute(cfg, out)
        return rep.status, {c.name: c.measured for c in rep.checks}, ""
    except FilamentLabError as exc:
        if out:
            _write_text(os.path.join(out, "error.txt"), f"{type(exc).__name__}: {exc}\n")
        return "error", {}, str(exc)


@dataclass
class SweepResult:
    header: list
    rows: list
    statuses: list

    @property
    def exit_code(self):
        if "error" in self.statuses:
            return 3
        return 1 if "fail" in self.statuses else 0


def _cell(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, tuple):
        return " ".join(_cell(x) for x in v)
    if v is None:
        return ""
    return str(v).replace(",", ";")


def sweep(base, grid, out=None, threads=1):
    """Run the cartesian product of ``grid`` over ``base``; rows keep the grid order."""
    keys, points = _sweep_points(grid)
    cfgs = []
    for i, pt in enumerate(points):
        cfg = base.with_values(**pt)
        _cross_validate(cfg)
        sub = os.path.join(out, f"run_{i:03d}") if out else None
        if sub:
            os.makedirs(sub, exist_ok=True)
        cfgs.append((cfg, sub))
    if threads > 1 and len(cfgs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_sub_run, cfgs))
    else:
        outcomes = [_sub_run(c) for c in cfgs]
    names = sorted({n for _, m, _ in outcomes for n in m})
    header = ["run", *keys, "status", *names]
    rows = []
    for i, (pt, (status, measured, err)) in enumerate(zip(points, outcomes)):
        rows.append([str(i), *(_cell(pt[k]) for k in keys), status, *(_cell(measured.get(n)) for n in names)])
    result = SweepResult(header, rows, [o[0] for o in outcomes])
    if out:
        _write_text(os.path.join(out, "sweep.csv"), "".join(",".join(r) + "\n" for r in [header, *rows]))
    return result


def run_config(cfg, out=None, threads=1):
    """Single run, or a sweep when the configuration has a [sweep] section."""
    if cfg.sweep is None:
        return run(cfg, out)
    if out is None:
        return sweep(cfg, cfg.sweep, None, threads)
    os.makedirs(out, exist_ok=True)
    with _DirLock(out):
        return sweep(cfg, cfg.sweep, out, threads)


# -- CLI ---------------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="filament-lab", description="Binormal-flow corner experiments.")
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--config", required=True, help="key = value configuration file")
    ap.add_argument("--out", default=None, help="output directory (default: next to the config)")
    ap.add_argument("--threads", type=int, default=None, help="worker threads (default: FILAMENT_LAB_THREADS or 1)")
    ap.add_argument("--override", action="append", default=[], metavar="KEY=VALUE", help="dotted key override, repeatable")
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        cfg = load_config(args.config, args.override)
        if cfg.kind is None:
            cfg.values["experiment.kind"] = args.kind
        elif cfg.kind != args.kind:
            raise ConfigError(f"config declares kind {cfg.kind!r} but {args.kind!r} was requested", cfg.lines.get("experiment.kind"))
        threads = set_threads(args.threads)
        out = args.out or os.path.join(os.path.dirname(os.path.abspath(args.config)), "out", args.kind)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        result = run_config(cfg, out, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # anything past validation is a runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    if isinstance(result, SweepResult):
        print(f"sweep: {len(result.rows)} runs, statuses {result.statuses} -> {out}")
    else:
        for c in result.checks:
            print(f"{c.status.upper():4s} {c.name}: {_cell(c.measured) if not isinstance(c.measured, dict) else c.measured} ({c.target})")
        print(f"{result.status} -> {out}")
    return result.exit_code


__all__ = [
    "Check",
    "ExperimentConfig",
    "RunReport",
    "SweepResult",
    "curvature_family",
    "frenet_from_config",
    "load_config",
    "main",
    "parse_config",
    "run",
    "run_config",
    "sweep",
]
