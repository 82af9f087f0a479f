import copy
import os

import numpy as np
import pytest

from adiabatic_ness.model import SwitchingFunction, build_model
from adiabatic_ness.runner import SMALL_GEOMETRY, SMALL_POTENTIAL

os.environ.setdefault("OMP_NUM_THREADS", "1")

ACCEPTANCE_LINES = []


def record(criterion, ok, detail):
    """Collect one acceptance verdict line for the terminal summary."""
    line = f"criterion {criterion:<3s} {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def small_config(v_plus=0.5, v_minus=0.0, **extra):
    cfg = {"geometry": dict(SMALL_GEOMETRY), "potential": copy.deepcopy(SMALL_POTENTIAL),
           "bias": {"v_minus": v_minus, "v_plus": v_plus},
           "fermi": {"kT": 0.1, "mu": 0.3}}
    cfg.update(extra)
    return cfg


@pytest.fixture(scope="session")
def small_hset():
    return build_model(small_config())


@pytest.fixture(scope="session")
def null_hset():
    return build_model(small_config(v_plus=0.0))


@pytest.fixture(scope="session")
def tiny_hset():
    """Coarse lattice (80 nodes) for fast propagation checks."""
    return build_model({"geometry": {"h": 0.5, "L": 20.25, "a": 5.0, "a_tilde": 2.5},
                        "potential": {"kind": "double_well", "amplitudes": [-1.5, -1.5],
                                      "centers": [-1.25, 1.25], "radius": 1.25},
                        "bias": {"v_minus": 0.0, "v_plus": 0.5}})


@pytest.fixture(scope="session")
def chi():
    return SwitchingFunction()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
