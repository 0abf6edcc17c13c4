import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import exp1

from filament_lab import geometry as geo
from filament_lab import nlsolver as nls
from filament_lab.errors import ContractError, DomainError, ResolutionError

GRID = geo.Grid1D.symmetric(1024, 40 / 1024)


def soliton(x, t, eta=1.0):
    # exact solution of i psi_t + psi_xx + |psi|^2 psi / 2 = 0
    return 2 * eta / np.cosh(eta * x) * np.exp(1j * eta * eta * t)


def test_wavefield_contract():
    with pytest.raises(ContractError):
        nls.WaveField(geo.Grid1D.symmetric(100, 0.1), np.zeros(100, complex))
    with pytest.raises(ContractError):
        nls.WaveField(GRID, np.zeros(10, complex))
    with pytest.raises(ContractError):
        nls.GaugeSpec("weird")


@given(st.integers(0, 2**31 - 1))
def test_fourier_roundtrip_and_plancherel(seed):
    rng = np.random.default_rng(seed)
    f = rng.normal(size=GRID.n) + 1j * rng.normal(size=GRID.n)
    c = nls.forward_array(f, GRID)
    assert np.max(np.abs(nls.inverse_array(c, GRID) - f)) <= 1e-12 * np.max(np.abs(f))
    dxi = 2 * np.pi / GRID.extent
    assert abs(nls.conserved_mass(nls.WaveField(GRID, f)) - np.sum(np.abs(c) ** 2) * dxi / (2 * np.pi)) < 1e-10 * GRID.n


def test_forward_transform_of_gaussian():
    # F e^{-x^2} = sqrt(pi) e^{-xi^2 / 4} under the non-unitary convention
    x = GRID.nodes
    spec = nls.fourier_forward(nls.WaveField(GRID, np.exp(-x * x) + 0j))
    np.testing.assert_allclose(spec.coeffs, np.sqrt(np.pi) * np.exp(-spec.xi**2 / 4), atol=1e-13)
    np.testing.assert_allclose(nls.fourier_inverse(spec).values, np.exp(-x * x), atol=1e-14)


def test_free_propagation_gaussian():
    x = GRID.nodes
    w, t = 1.0, 0.5
    out = nls.free_propagate(nls.WaveField(GRID, np.exp(-x * x / w) + 0j), t)
    exact = np.sqrt(w / (w + 4j * t)) * np.exp(-x * x / (w + 4j * t))
    assert np.max(np.abs(out.values - exact)) <= 1e-10 and out.time == t


def test_spectral_derivative():
    x = GRID.nodes
    f = np.exp(-x * x)
    np.testing.assert_allclose(nls.spectral_derivative(f, GRID, 1), -2 * x * f, atol=1e-12)
    np.testing.assert_allclose(nls.spectral_derivative(f, GRID, 2), (4 * x * x - 2) * f, atol=1e-11)


def test_soliton_second_order_and_mass():
    x = GRID.nodes
    zero = nls.GaugeSpec("zero")
    errs = []
    for dt in (0.02, 0.01, 0.005):
        tr = nls.split_step_psi(nls.WaveField(GRID, soliton(x, 0) + 0j), zero, 0.0, 1.0, dt)
        errs.append(np.max(np.abs(tr.values[-1] - soliton(x, 1.0))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.9)
    tr = nls.split_step_psi(nls.WaveField(GRID, soliton(x, 0) + 0j), zero, 0.0, 10.0, 0.01)
    m0, m1 = (nls.conserved_mass(nls.WaveField(GRID, v)) for v in (tr.values[0], tr.values[-1]))
    assert abs(m1 - m0) / m0 * 1000 / tr.meta["steps"] <= 1e-10


def test_split_step_outputs_and_residual():
    x = GRID.nodes
    zero = nls.GaugeSpec("zero")
    outs = np.arange(1, 10) * 0.01
    tr = nls.split_step_psi(nls.WaveField(GRID, soliton(x, 0) + 0j), zero, 0.0, 0.1, 0.001, outs)
    np.testing.assert_allclose(tr.times, np.arange(11) * 0.01, atol=1e-13)
    assert tr.index_of(0.05) == 5
    with pytest.raises(KeyError):
        tr.index_of(0.055)
    assert nls.nls_residual(tr, zero) < 2e-3
    exact = nls.Trajectory(GRID, tr.times, np.array([soliton(x, t) for t in tr.times]))
    assert nls.nls_residual(exact, zero) < 2e-3


def test_critical_gauge_needs_positive_time():
    f = nls.WaveField(GRID, np.zeros(GRID.n, complex))
    with pytest.raises(DomainError):
        nls.split_step_psi(f, nls.GaugeSpec("critical", 0.3), 0.0, 1.0, 0.1)
    assert np.all(nls.GaugeSpec("critical", 0.5).a(np.array([0.5, 1.0])) == [0.5, 0.25])


def test_critical_gauge_phase_only_for_homogeneous_data():
    # spatially constant data: psi = c exp(i/2 int (|c|^2 - a)) exactly
    f = nls.WaveField(GRID, np.full(GRID.n, 0.3 + 0j))
    tr = nls.split_step_psi(f, nls.GaugeSpec("critical", 0.3), 1.0, 2.0, 0.01)
    exact = 0.3 * np.exp(0.5j * (0.09 * 1.0 - 0.09 * np.log(2.0)))
    assert np.max(np.abs(tr.values[-1] - exact)) < 1e-7


# -- u-equation


def test_zero_is_preserved():
    u = nls.WaveField(GRID, np.zeros(GRID.n, complex), 1.0)
    traj, probes = nls.evolve_u_exponential(u, 0.4, 1.0, 50.0, output_s=(10.0,))
    assert np.all(traj.values == 0) and list(traj.times) == [1.0, 10.0, 50.0]
    assert np.all(probes.u0 == 0) and probes.s[0] == 1.0 and probes.s[-1] == 50.0
    tr = nls.split_step_u(u, 0.4, 1.0, 2.0, 0.01)
    assert np.all(tr.values == 0)


def test_u_domain_and_resolution():
    u = nls.WaveField(GRID, np.zeros(GRID.n, complex), 1.0)
    with pytest.raises(DomainError):
        nls.evolve_u_exponential(u, 0.4, 0.5, 2.0)
    with pytest.raises(DomainError):
        nls.split_step_u(u, 0.4, 0.5, 2.0, 0.01)
    big = nls.WaveField(GRID, np.full(GRID.n, 10.0 + 0j), 1.0)
    with pytest.raises(ResolutionError):
        nls.split_step_u(big, 0.4, 1.0, 2.0, 0.1)


def _bump():
    y = GRID.nodes
    return nls.WaveField(GRID, 0.2 * np.exp(-y * y) * np.exp(0.5j * y), 1.0)


def test_integrators_agree():
    # Strang splitting and the exponential integrator converge to the same u
    alpha = 0.4
    ref, _ = nls.evolve_u_exponential(_bump(), alpha, 1.0, 4.0, eps=0.001)
    strang = nls.split_step_u(_bump(), alpha, 1.0, 4.0, 0.001)
    assert np.max(np.abs(ref.values[-1] - strang.values[-1])) < 1e-5


def test_exponential_integrator_order():
    alpha = 0.4
    finals = [nls.evolve_u_exponential(_bump(), alpha, 1.0, 4.0, eps=e, probe=False)[0].values[-1] for e in (0.04, 0.02, 0.01)]
    ratio = np.max(np.abs(finals[0] - finals[1])) / np.max(np.abs(finals[1] - finals[2]))
    assert np.log2(ratio) >= 1.9


def test_exponential_integrator_backward_roundtrip():
    alpha = 0.3
    fwd, _ = nls.evolve_u_exponential(_bump(), alpha, 1.0, 8.0, eps=0.005)
    back, _ = nls.evolve_u_exponential(fwd.slice(len(fwd) - 1), alpha, 8.0, 1.0, eps=0.005)
    assert np.max(np.abs(back.values[-1] - _bump().values)) < 1e-5


def test_geometric_plan():
    plan = nls.geometric_plan(1.0, 100.0, 0.05, outputs=(10.0, 37.0))
    assert plan[0] == 1.0 and plan[-1] == 100.0 and 10.0 in plan and 37.0 in plan
    assert np.max(plan[1:] / plan[:-1]) <= 1.05 + 1e-12
    back = nls.geometric_plan(100.0, 1.0, 0.05)
    assert np.all(np.diff(back) < 0) and back[-1] == 1.0


def test_exp1_complex_matches_scipy():
    # points on both sides of the switch between the series and scipy at |z| = 48
    z = np.array([50 - 3j, -60j, 120j, 30 + 47j, 5 - 2j, -47.999j, -48.001j])
    np.testing.assert_allclose(nls.exp1_complex(z), exp1(z), rtol=1e-13)


def test_trajectory_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    g = geo.Grid1D.symmetric(16, 0.5)
    traj = nls.Trajectory(g, np.array([0.1, 0.2]), rng.normal(size=(2, 16)) + 1j * rng.normal(size=(2, 16)), "t", {"gauge": {"kind": "zero", "alpha": 0.0}})
    nls.save_trajectory(traj, tmp_path / "tr", binary=True)
    back = nls.load_trajectory(tmp_path / "tr")
    np.testing.assert_array_equal(back.values, traj.values)
    np.testing.assert_array_equal(back.times, traj.times)
    raw = np.fromfile(tmp_path / "tr" / "slice_0001.bin", dtype="<f8")
    np.testing.assert_array_equal(raw[0::2] + 1j * raw[1::2], traj.values[1])


def test_windows():
    w = nls.cosine_window(GRID, 0.2)
    assert w[GRID.n // 2] == 1.0 and w[0] < 1e-3 and np.all((w >= 0) & (w <= 1))
    assert nls.interior_mask(GRID, 0.5).sum() == pytest.approx(GRID.n / 2, abs=2)


def test_nls_residual_plane_wave_and_negative_control():
    k, A = 2 * np.pi * 3 / GRID.extent, 0.5
    omega = k * k - A * A / 2
    zero = nls.GaugeSpec("zero")
    x = GRID.nodes
    res = []
    for dt in (0.02, 0.01):
        t = np.arange(3) * dt
        vals = np.array([A * np.exp(1j * (k * x - omega * s)) for s in t])
        res.append(nls.nls_residual(nls.Trajectory(GRID, t, vals), zero))
    assert res[1] < 1e-5 and np.log2(res[0] / res[1]) > 1.9
    rng = np.random.default_rng(5)
    junk = nls.Trajectory(GRID, np.arange(3) * 0.01, rng.normal(size=(3, GRID.n)) + 0j)
    assert nls.nls_residual(junk, zero) > 1e-1
    with pytest.raises(ContractError):
        nls.nls_residual(nls.Trajectory(GRID, np.array([0.0, 0.1, 0.3]), np.zeros((3, GRID.n))), zero)
