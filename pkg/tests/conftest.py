import json
import os

import numpy as np
import pytest
from hypothesis import settings

from filament_lab import selfsimilar as ss

settings.register_profile("lab", max_examples=25, deadline=None)
settings.load_profile("lab")


@pytest.fixture(scope="session")
def profile05():
    return ss.integrate_profile(0.5, x_max=200.0, h=5e-4)


@pytest.fixture(scope="session")
def profile04():
    return ss.integrate_profile(0.4, x_max=400.0, h=2.5e-4)


def helix(s, a=1.0, b=1.0):
    w = np.sqrt(a * a + b * b)
    return np.stack([a * np.cos(s / w), a * np.sin(s / w), b * s / w], axis=1)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


# -- shipped-config runs shared by the acceptance module

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")
ACCEPTANCE_LINES = []


def run_shipped(tmp_path_factory, name, overrides=()):
    from filament_lab import harness

    out = tmp_path_factory.mktemp(name.replace(".ini", ""))
    cfg = harness.load_config(os.path.join(CONFIG_DIR, name), overrides)
    rep = harness.run(cfg, str(out))
    report = json.loads((out / "report.json").read_text())
    timings = json.loads((out / "timings.json").read_text())
    return rep, report, timings, out


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
