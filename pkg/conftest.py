import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from domain import build_interval, snap_to_node
from models import ProblemSpec, SolverOptions, Variant

@pytest.fixture(scope="session")
def interval8():
    return build_interval(0.0, 1.0, 8)

@pytest.fixture(scope="session")
def interval32():
    return build_interval(0.0, 1.0, 32)

@pytest.fixture(scope="session")
def interval64():
    return build_interval(0.0, 1.0, 64)

@pytest.fixture
def p1_spec(interval32):
    """P1 on (0, 1) with s = t = theta = 0.5 and x0 at the node nearest 0.5"""
    return ProblemSpec(variant=Variant.P1, s=0.5, t=0.5, theta=0.5, p=4.0, x0=snap_to_node(interval32, [0.5]))

@pytest.fixture(scope="session")
def p1_sweep(interval64):
    """The 1D P1 sweep over p = 8 ... 128 (shared by the slow tests)"""
    from asymptotics import sweep

    template = ProblemSpec(variant=Variant.P1, s=0.5, t=0.5, theta=0.5, x0=snap_to_node(interval64, [0.5]))
    return sweep(template, interval64, [8, 16, 32, 64, 128], SolverOptions(tol=1e-8))

@pytest.fixture(scope="session")
def p2_sweep(interval64):
    """The 1D two-anchor sweep started from anchors near 0.35 and 0.65"""
    from asymptotics import sweep

    template = ProblemSpec(
        variant=Variant.P2MAX,
        s=0.5,
        t=0.5,
        theta=0.5,
        x1=snap_to_node(interval64, [0.35]),
        x2=snap_to_node(interval64, [0.65]),
    )
    return sweep(template, interval64, [8, 16, 32, 64, 128], SolverOptions(tol=1e-8))
