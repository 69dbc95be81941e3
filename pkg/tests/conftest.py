import numpy as np
import pytest

from cholupdate import DenseMat, TriFactor, UpdateMat, chol_factor


def random_spd_factor(rng, n, dtype=np.float64):
    """Factor of B^T B + I with B uniform on [0, 1)."""
    b = rng.random((n, n)).astype(dtype)
    a = b.T @ b
    a = np.triu(a) + np.triu(a, 1).T + np.eye(n, dtype=dtype)
    return chol_factor(DenseMat.from_array(a))


def random_update(rng, n, k, dtype=np.float64):
    return UpdateMat.from_array(rng.random((n, k)).astype(dtype))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=[np.float64, np.float32], ids=["f64", "f32"])
def dtype(request):
    return request.param


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
