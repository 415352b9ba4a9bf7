import os

import hypothesis
import numpy as np
import pytest

from morphrom.distfield import build_index
from morphrom.mesh import Mesh2D, plate_polyline, synth_plate
from morphrom.morph import PLATE_CONFIG, run

np.seterr(all="warn", under="ignore")

hypothesis.settings.register_profile("default", max_examples=30, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=300, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# lines collected by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def square_mesh(n=4, lo=0.0, hi=1.0, tags="sides"):
    """Structured triangulation of the square [lo, hi]^2 with ``n`` cells per side.

    ``tags="sides"`` tags bottom/right/top/left, anything else a single "wall".
    """
    s = np.linspace(lo, hi, n + 1)
    X, Y = np.meshgrid(s, s)
    v = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    tris = []
    for i in range(n):
        for j in range(n):
            a, b, c, d = idx[i, j], idx[i, j + 1], idx[i + 1, j + 1], idx[i + 1, j]
            tris += [(a, b, c), (a, c, d)]
    edges, names = [], []
    for j in range(n):
        edges += [(idx[0, j], idx[0, j + 1]), (idx[j, n], idx[j + 1, n]),
                  (idx[n, j + 1], idx[n, j]), (idx[j + 1, 0], idx[j, 0])]
        names += ["bottom", "right", "top", "left"] if tags == "sides" else ["wall"] * 4
    return Mesh2D(v, tris, edges, names)


@pytest.fixture(scope="session")
def unit_square():
    return square_mesh(4)


@pytest.fixture(scope="session")
def plate_coarse():
    return synth_plate(0.5, 0.1)


@pytest.fixture(scope="session")
def plate_ref():
    return synth_plate(0.5, 0.05)


@pytest.fixture(scope="session")
def plate_target():
    return plate_polyline(0.2, 256)


@pytest.fixture(scope="session")
def plate_index(plate_target):
    return build_index(plate_target)


@pytest.fixture(scope="session")
def plate_vdf(plate_ref, plate_index):
    return run(plate_ref, plate_index, PLATE_CONFIG)
