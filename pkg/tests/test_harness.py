import json
import os

import numpy as np
import pytest

from filament_lab import harness as hz
from filament_lab.errors import ConfigError

CONFIGS = os.path.join(os.path.dirname(__file__), "..", "configs")


def _write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# -- configuration


def test_defaults_and_sections():
    cfg = hz.parse_config("[experiment]\nkind = profile\nalpha = 0.25\n\n[profile]\nx_max = 60  # short\n")
    assert cfg.kind == "profile" and cfg["experiment.alpha"] == 0.25 and cfg["profile.x_max"] == 60.0
    assert cfg["time.t_min"] == 1e-4 and cfg.sweep is None
    assert cfg.lines["experiment.alpha"] == 3


def test_unknown_key_names_key_and_line():
    with pytest.raises(ConfigError) as info:
        hz.parse_config("[experiment]\nkind = profile\nalpa = 0.3\n")
    assert info.value.line == 3 and "alpa" in str(info.value) and "line 3" in str(info.value)


@pytest.mark.parametrize(
    "text, line",
    [
        ("[experiment]\nalpha = -1\n", 2),
        ("[experiment]\nalpha = abc\n", 2),
        ("[grid]\nn = 1000\n", 2),
        ("[experiment\n", 1),
        ("just words\n", 1),
        ("[time]\nt0 = 0.5\nt_min = 0.7\n", 3),
        ("[experiment]\nkind = recover\nalpha = 0.7\n", 3),
        ("[sweep]\nexperiment.alpa = 1, 2\n", 2),
    ],
)
def test_invalid_values(text, line):
    with pytest.raises(ConfigError) as info:
        hz.parse_config(text)
    assert info.value.line == line


def test_overrides():
    cfg = hz.parse_config("[experiment]\nkind = profile\n", ["experiment.alpha=0.45", "profile.alphas = 0.1, 0.2"])
    assert cfg["experiment.alpha"] == 0.45 and cfg["profile.alphas"] == (0.1, 0.2)
    with pytest.raises(ConfigError):
        hz.parse_config("", ["nope=1"])
    with pytest.raises(ConfigError):
        hz.parse_config("", ["experiment.alpha"])


def test_sweep_section():
    cfg = hz.parse_config("[experiment]\nkind = rates\n[sweep]\nexperiment.alpha = 0.2, 0.4\nrates.probes = 0.5, 1; 2\n")
    assert cfg.sweep == {"experiment.alpha": (0.2, 0.4), "rates.probes": ((0.5, 1.0), (2.0,))}


def test_content_hash_is_stable_and_sensitive():
    a = hz.parse_config("[experiment]\nkind = profile\nalpha = 0.5\n")
    b = hz.parse_config("# comment\n[experiment]\nalpha = 0.50\nkind = profile\n")
    c = hz.parse_config("[experiment]\nkind = profile\nalpha = 0.51\n")
    assert a.content_hash() == b.content_hash() != c.content_hash()
    assert len(a.content_hash()) == 40


def test_every_shipped_config_parses():
    names = sorted(f for f in os.listdir(CONFIGS) if f.endswith(".ini"))
    assert len(names) >= 9
    for n in names:
        cfg = hz.load_config(os.path.join(CONFIGS, n))
        assert cfg.kind in hz.KINDS


def test_csv_data(tmp_path):
    x = np.linspace(-2, 2, 401)
    rows = "".join(f"{float(v)!r},{float(0.1 * v * v * np.exp(-v * v))!r},0.0\n" for v in x)
    (tmp_path / "d.csv").write_text("x,c,tau\n" + rows)
    cfg = hz.load_config(_write(tmp_path, "[data]\ncsv = d.csv\n"))
    fd = hz.frenet_from_config(cfg)
    assert fd.grid.n == 401 and abs(fd.grid.h - 0.01) < 1e-12
    (tmp_path / "e.csv").write_text("x,c,tau\n0,0,0\n0.1,0,0\n0.3,0,0\n")
    with pytest.raises(ConfigError):
        hz.frenet_from_config(hz.load_config(_write(tmp_path, "[data]\ncsv = e.csv\n", "e.ini")))
    with pytest.raises(ConfigError):
        hz.load_config(_write(tmp_path, "[data]\ncsv = missing.csv\n", "m.ini"))


def test_curvature_families():
    x = np.linspace(-2, 2, 9)
    assert np.all(hz.curvature_family("zero", x, 1.0) == 0)
    assert hz.curvature_family("bump", x, 1.0)[0] == 0 and hz.curvature_family("bump", x, 1.0)[4] == 0
    np.testing.assert_allclose(hz.curvature_family("badgauss", x, 2.0), 2 * np.exp(-x * x))
    with pytest.raises(ConfigError):
        hz.curvature_family("nope", x, 1.0)


def test_threads(monkeypatch):
    monkeypatch.setenv("FILAMENT_LAB_THREADS", "3")
    assert hz.set_threads(None) == 3 and hz.set_threads(2) == 2
    monkeypatch.setenv("FILAMENT_LAB_THREADS", "x")
    with pytest.raises(ConfigError):
        hz.set_threads(None)
    with pytest.raises(ConfigError):
        hz.set_threads(0)


# -- runs


def test_profile_alpha_zero_is_trivial(tmp_path):
    cfg = hz.parse_config("[experiment]\nkind = profile\nalpha = 0\n[profile]\nx_max = 60\nh = 1e-3\n")
    rep = hz.run(cfg, str(tmp_path))
    assert rep.status == "pass" and rep.exit_code == 0
    prof = json.loads((tmp_path / "profile.json").read_text())
    assert prof["theta_measured"] == pytest.approx(np.pi) and prof["A_plus"] == [1.0, 0.0, 0.0]
    assert (tmp_path / "curve_t1.csv").exists() and (tmp_path / "timings.json").exists()
    assert "total" in json.loads((tmp_path / "timings.json").read_text())


def test_reports_list_each_check_once(tmp_path):
    cfg = hz.parse_config("[experiment]\nkind = nls-validate\n[nls]\nn = 1024\nsteps = 100\n")
    rep = hz.run(cfg, str(tmp_path))
    names = [c.name for c in rep.checks]
    assert len(names) == len(set(names)) == 4 and rep.status == "pass"
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["input_hash"] == cfg.content_hash() and "timings" not in data


def test_byte_identical_reruns(tmp_path):
    cfg = hz.parse_config("[experiment]\nkind = angle-sweep\n[profile]\nalphas = 0.3, 0.5\nx_max = 60\nh = 1e-3\n")
    for d in ("a", "b"):
        hz.run(cfg, str(tmp_path / d))
    for f in ("report.json", "angles.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    head = (tmp_path / "a" / "angles.csv").read_text().splitlines()[0]
    assert head == "alpha,theta_formula,theta_measured,rel_err"


def test_lock_rejects_concurrent_writer(tmp_path):
    (tmp_path / ".filament-lab.lock").write_text("123")
    cfg = hz.parse_config("[experiment]\nkind = profile\n[profile]\nx_max = 60\nh = 1e-3\n")
    with pytest.raises(hz.LockError):
        hz.run(cfg, str(tmp_path))


def test_badgauss_refusal(tmp_path):
    cfg = hz.load_config(os.path.join(CONFIGS, "recover_badgauss.ini"))
    rep = hz.run(cfg, str(tmp_path))
    assert rep.refused and rep.exit_code == 1
    assert rep.checks[0].name == "hypothesis_audit" and "c_over_x2_L2" in rep.checks[0].measured


# -- sweeps


def test_empty_sweep(tmp_path):
    cfg = hz.parse_config("[experiment]\nkind = profile\n[sweep]\n")
    res = hz.run_config(cfg, str(tmp_path))
    assert res.exit_code == 0 and (tmp_path / "sweep.csv").read_text() == "run,status\n"


def test_alpha_sweep_rows(tmp_path):
    cfg = hz.parse_config("[experiment]\nkind = profile\n[profile]\nx_max = 60\nh = 1e-3\n[sweep]\nexperiment.alpha = 0.2, 0.4, 0.6, 0.8\n")
    res = hz.run_config(cfg, str(tmp_path), threads=2)
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert len(lines) == 5 and lines[0].startswith("run,experiment.alpha,status")
    assert [ln.split(",")[1] for ln in lines[1:]] == ["0.2", "0.4", "0.6", "0.8"]
    assert res.statuses == ["pass"] * 4 and (tmp_path / "run_003" / "report.json").exists()


def test_resolution_sweep_orders(tmp_path):
    cfg = hz.load_config(os.path.join(CONFIGS, "sweep_nls_resolution.ini"), ["nls.steps=100"])
    res = hz.run_config(cfg, str(tmp_path))
    assert len(res.rows) == 2 and res.exit_code == 0
    col = res.header.index("temporal_order")
    assert all(float(r[col]) >= 1.9 for r in res.rows)


def test_sweep_records_errors_and_continues(tmp_path):
    # the second point is rejected by the profile integrator (h x_max > 0.5)
    cfg = hz.parse_config("[experiment]\nkind = profile\n[profile]\nx_max = 60\n[sweep]\nprofile.h = 1e-3, 1e-2\n")
    res = hz.run_config(cfg, str(tmp_path))
    assert res.statuses == ["pass", "error"] and res.exit_code == 3
    assert "ResolutionError" in (tmp_path / "run_001" / "error.txt").read_text()


# -- CLI


def test_cli_exit_codes(tmp_path, capsys):
    good = _write(tmp_path, "[experiment]\nkind = profile\nalpha = 0.5\n[profile]\nx_max = 60\nh = 1e-3\n")
    assert hz.main(["profile", "--config", good, "--out", str(tmp_path / "o1")]) == 0
    assert "PASS angle_law" in capsys.readouterr().out
    failing = _write(tmp_path, "[experiment]\nkind = profile\n[tolerance]\nangle_rel = 1e-12\n[profile]\nx_max = 60\nh = 1e-3\n", "f.ini")
    assert hz.main(["profile", "--config", failing, "--out", str(tmp_path / "o2")]) == 1
    bad = _write(tmp_path, "[experiment]\nalpa = 1\n", "b.ini")
    assert hz.main(["profile", "--config", bad]) == 2
    assert "line 2" in capsys.readouterr().err
    assert hz.main(["rates", "--config", good]) == 2
    assert hz.main(["nonsense", "--config", good]) == 2
    assert hz.main(["profile", "--config", good, "--override", "profile.h=0.01", "--out", str(tmp_path / "o3")]) == 3
    assert hz.main(["profile", "--config", good, "--threads", "0"]) == 2


def test_cli_default_output_dir(tmp_path):
    cfg = _write(tmp_path, "[profile]\nx_max = 60\nh = 1e-3\n")
    assert hz.main(["profile", "--config", cfg]) == 0
    assert (tmp_path / "out" / "profile" / "report.json").exists()
