import json
import warnings

import numpy as np
import pytest
from conftest import random_rotation
from hypothesis import given
from hypothesis import strategies as st

from filament_lab import geometry as geo
from filament_lab import selfsimilar as ss
from filament_lab.errors import ContractError, DomainError, FitUnstableError, RangeError, ResolutionError

# -- angle law (closed form)


def test_angle_examples():
    assert ss.angle_from_alpha(0.0) == pytest.approx(np.pi)
    assert ss.angle_from_alpha(0.5) == pytest.approx(2 * np.arcsin(np.exp(-np.pi / 8)))
    assert abs(ss.angle_from_alpha(0.5) - 1.48) < 5e-3
    assert abs(ss.alpha_from_angle(ss.angle_from_alpha(0.3)) - 0.3) < 1e-14
    for bad in (0.0, -1.0, 3.2):
        with pytest.raises(DomainError):
            ss.alpha_from_angle(bad)


@given(st.floats(0.01, 2.0))
def test_angle_inverse_pair(alpha):
    assert abs(ss.alpha_from_angle(ss.angle_from_alpha(alpha)) - alpha) < 1e-12


# -- profile


def test_profile_frame_and_corner(profile05):
    p = profile05
    assert geo.frame_orthonormality_defect(p.profile_frame) <= 1e-10
    c = p.corner
    assert abs(np.linalg.norm(c.A_plus) - 1) < 1e-8 and abs(np.linalg.norm(c.A_minus) - 1) < 1e-8
    for A, B in ((c.A_plus, c.B_plus), (c.A_minus, c.B_minus)):
        assert abs(A @ B.real) < 1e-6 and abs(A @ B.imag) < 1e-6
        assert abs(np.linalg.norm(B.real) - 1) < 1e-6 and abs(np.linalg.norm(B.imag) - 1) < 1e-6
    assert abs(c.A_plus @ c.A_minus - (2 * np.exp(-np.pi * 0.25) - 1)) < 5e-3
    assert abs(c.A_plus @ c.A_minus - (-0.08812)) < 5e-3
    assert 0 < c.theta < np.pi


def test_profile_parity(profile05):
    # x -> -x with N -> conj N maps the ODE to itself: A- = diag(1, -1, -1) A+
    c = profile05.corner
    np.testing.assert_allclose(c.A_minus, np.diag([1.0, -1.0, -1.0]) @ c.A_plus, atol=1e-6)


def test_profile_small_alpha():
    p = ss.integrate_profile(0.05, 100.0, 1e-3)
    assert np.max(np.abs(p.profile_frame.T - [1, 0, 0])) < 0.2
    q = ss.integrate_profile(0.01, 100.0, 1e-3)
    # pi - theta ~ 2 sqrt(pi) alpha for small alpha
    assert abs(q.corner.theta - ss.angle_from_alpha(0.01)) < 1e-5
    assert abs((np.pi - q.corner.theta) / (2 * np.sqrt(np.pi) * 0.01) - 1) < 1e-3


def test_profile_richardson_self_consistency():
    a = ss.integrate_profile(0.5, 60.0, 2e-3)
    b = ss.integrate_profile(0.5, 60.0, 1e-3)
    diff = np.max(np.abs(a.profile_frame.T - b.profile_frame.T[::2]))
    # RK4 with exact midpoint samples: error ~ C h^4 with C ~ x_max^5 / 4
    assert diff < 1e-4
    c = ss.integrate_profile(0.5, 60.0, 5e-4)
    ratio = diff / np.max(np.abs(b.profile_frame.T - c.profile_frame.T[::2]))
    assert ratio > 12


def test_profile_errors():
    with pytest.raises(ResolutionError):
        ss.integrate_profile(0.5, 200.0, 3e-3)
    with pytest.raises(ContractError):
        ss.integrate_profile(0.5, 40.0, 1e-3)
    with pytest.raises(DomainError):
        ss.integrate_profile(-0.1)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        ss.integrate_profile(1.2, 60.0, 1e-3)
    assert any("alpha > 1" in str(m.message) for m in w)


def test_tail_window_too_short(profile05):
    with pytest.raises(FitUnstableError):
        ss.extract_asymptotics(profile05, (50.0, 52.0))


def test_angle_law_ladder_monotone():
    alphas = (0.2, 0.4, 0.6, 0.8)
    measured = [ss.integrate_profile(a).corner.theta for a in alphas]
    formula = [float(ss.angle_from_alpha(a)) for a in alphas]
    assert all(abs(m - f) / f <= 5e-3 for m, f in zip(measured, formula))
    assert np.all(np.diff(measured) < 0) and np.all(np.diff(formula) < 0)


# -- self-similar frames and curves


def test_selfsimilar_frame_scaling(profile05):
    p = profile05
    g = p.profile_frame.grid
    x0 = g.nodes[g.nearest_index(0.0) + 1234]
    np.testing.assert_allclose(ss.selfsimilar_frame(p, 1.0, x0), p.profile_frame.frames[g.nearest_index(x0)], atol=1e-15)
    np.testing.assert_allclose(ss.selfsimilar_frame(p, 4.0, 2 * x0), ss.selfsimilar_frame(p, 1.0, x0), atol=1e-15)
    # off-node points agree to round-off of the interpolation weights
    x = np.linspace(-3, 3, 41)
    for t in (0.01, 0.25, 2.0):
        assert np.max(np.abs(ss.selfsimilar_frame(p, t, x * np.sqrt(t)) - ss.selfsimilar_frame(p, 1.0, x))) < 1e-13
    with pytest.raises(RangeError):
        ss.selfsimilar_frame(p, 1e-6, 1.0)
    with pytest.raises(DomainError):
        ss.selfsimilar_frame(p, 0.0, 1.0)


def test_curvature_law(profile05):
    # |T_x| of the self-similar frame is alpha / sqrt(t)
    p = profile05
    t = 0.3
    g = geo.Grid1D.span(2.0, 1e-3)
    T = ss.selfsimilar_frame(p, t, g.nodes)[:, 0, :]
    Tx = np.gradient(T, g.h, axis=0)[5:-5]
    np.testing.assert_allclose(np.linalg.norm(Tx, axis=1), 0.5 / np.sqrt(t), rtol=1e-5)
    np.testing.assert_allclose(np.abs(ss.psi_alpha(0.5, t, g.nodes)), 0.5 / np.sqrt(t), rtol=1e-15)


def test_selfsimilar_curve_rate_and_arclength(profile05):
    p = profile05
    g = geo.Grid1D.span(1.0, 1e-3)
    trace = ss.corner_trace(p, g).points
    times = np.logspace(-4, -1, 13)
    sup = [np.max(np.abs(ss.selfsimilar_curve(p, t, g).points - trace)) for t in times]
    slope = np.polyfit(np.log(times), np.log(sup), 1)[0]
    assert abs(slope - 0.5) <= 0.05
    c = ss.selfsimilar_curve(p, 0.01, g)
    # chords are short by (c h)^2 / 24 with curvature c = alpha / sqrt(t) = 5
    assert np.max(np.abs(c.tangent_modulus() - 1)) < 1.1 * 25e-6 / 24
    assert p.base_offset_mismatch < 1e-5


def test_selfsimilar_curve_small_alpha():
    p = ss.integrate_profile(0.01, 100.0, 1e-3)
    g = geo.Grid1D.span(1.0, 1e-2)
    c = ss.selfsimilar_curve(p, 0.1, g)
    line = g.nodes[:, None] * np.array([1.0, 0, 0])
    assert np.max(np.abs(c.points - line)) < 0.05


def test_psi_alpha():
    assert ss.psi_alpha(0.3, 1.0, 0.0) == 0.3
    with pytest.raises(DomainError):
        ss.psi_alpha(0.3, 0.0, 1.0)


# -- binormal flow and Schroedinger map residuals


def test_binormal_residual_line_and_circle():
    g = geo.Grid1D.span(1.0, 0.01)
    line = geo.Curve(g, np.stack([g.nodes, 0 * g.nodes, 0 * g.nodes], 1), True)
    assert ss.binormal_residual([line] * 3, [0.0, 0.1, 0.2]) == 0.0
    errs = []
    for h in (0.02, 0.01):
        g = geo.Grid1D.span(2.0, h)
        R = 2.0
        s = g.nodes
        times = [0.0, h, 2 * h]
        curves = [geo.Curve(g, np.stack([R * np.cos(s / R), R * np.sin(s / R), 0 * s + t / R], 1), True) for t in times]
        errs.append(ss.binormal_residual(curves, times))
    assert errs[1] < 1e-4 and errs[0] / errs[1] > 3.5
    with pytest.raises(ContractError):
        ss.binormal_residual(curves[:2], times[:2])


def test_binormal_residual_selfsimilar_order(profile05):
    p = profile05
    errs = []
    for h in (0.02, 0.01, 0.005):
        g = geo.Grid1D.span(3.0, h)
        times = [1.0, 1.0 + h, 1.0 + 2 * h]
        errs.append(ss.binormal_residual([ss.selfsimilar_curve(p, t, g) for t in times], times))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert errs[-1] < 1e-4 and np.all(orders >= 1.9)


def test_schroedinger_map_residual_order(profile05):
    p = profile05
    errs = []
    for h in (0.02, 0.01, 0.005):
        g = geo.Grid1D.span(3.0, h)
        times = [1.0, 1.0 + h, 1.0 + 2 * h]
        frames = [ss.selfsimilar_frame(p, t, g.nodes) for t in times]
        errs.append(ss.schroedinger_map_residual(frames, times, h))
    assert np.log2(errs[0] / errs[1]) >= 1.9 and np.log2(errs[1] / errs[2]) >= 1.9


# -- rotation fits and serialization


@given(st.integers(0, 2**31 - 1))
def test_fit_rotation_recovers(seed):
    rng = np.random.default_rng(seed)
    R = random_rotation(rng)
    S = rng.normal(size=(9, 3))
    fit = ss.fit_rotation(S, S @ R.T)
    assert np.max(np.abs(fit.R - R)) < 1e-10 and fit.residual < 1e-10
    assert np.max(np.abs(fit.R.T @ fit.R - np.eye(3))) <= 1e-12
    assert abs(np.linalg.det(fit.R) - 1) <= 1e-12


def test_fit_rotation_reflection_is_corrected():
    S = np.eye(3)
    fit = ss.fit_rotation(S, np.diag([1.0, 1.0, -1.0]))
    assert abs(np.linalg.det(fit.R) - 1) < 1e-12


def test_profile_json(profile05, tmp_path):
    ss.write_profile_json(profile05, tmp_path / "p.json")
    text = (tmp_path / "p.json").read_text()
    rec = json.loads(text)
    assert set(rec) >= {"alpha", "theta_measured", "theta_formula", "A_plus", "A_minus", "B_plus", "B_minus"}
    assert rec["A_plus"] == [float(v) for v in profile05.corner.A_plus]
    assert text == ss.dumps(ss.profile_record(profile05))
