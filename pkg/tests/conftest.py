import numpy as np
import pytest

from tilens.fields import AxisField, ConstantField, ExprField
from tilens.material_model import MaterialModel

# acceptance lines collected by tests/test_acceptance.py and echoed at the end of the run
ACCEPTANCE = {}


def record_acceptance(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"[acceptance {number:2d}] {'PASS' if passed else 'FAIL'}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def homogeneous():
    return MaterialModel.constant(4.0, 3.0, 1.0, 1.2, 2.0)


@pytest.fixture
def perturbed_homogeneous():
    return MaterialModel.constant(4.2, 3.1, 1.0, 1.2, 2.3)


def mild_model(radius=1.0):
    """Mildly heterogeneous model with a tilted constant axis."""
    return MaterialModel(ExprField("4 + 0.1*x - 0.05*y*z"), ExprField("3 + 0.05*z + 0.02*x**2"), ConstantField(1.0),
                         ConstantField(1.2), ExprField("2 + 0.05*y"), AxisField(direction=(0.1, -0.2, 1.0)), radius,
                         "mild")


def layered_model():
    """Spherically layered model: axis along the radius, a11 decreasing outwards."""
    return MaterialModel(ExprField("4.5 - 0.5*sqrt(x**2 + y**2 + z**2)"), ConstantField(3.0), ConstantField(1.0),
                         ConstantField(1.2), ConstantField(2.0),
                         AxisField(layer=ExprField("sqrt(x**2 + y**2 + z**2)")), 4.0, "layer")


@pytest.fixture
def mild():
    return mild_model()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
