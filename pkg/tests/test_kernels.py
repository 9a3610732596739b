"""Backend parity: the compiled kernels must match the pure-Python ones."""

import numpy as np
import pytest

from quadswarm import kernels
from quadswarm.kernels import pyref

try:
    from quadswarm.kernels import _core
except ImportError:
    _core = None

needs_compiled = pytest.mark.skipif(_core is None, reason="compiled kernels not built")


def test_backend_selected():
    assert kernels.BACKEND in ("compiled", "python")


@needs_compiled
def test_rot_parity():
    rng = np.random.default_rng(7)
    for _ in range(300):
        att = rng.uniform(-np.pi, np.pi, 3)
        assert np.array_equal(_core.rot_from_euler(att), pyref.rot_from_euler(att))


@needs_compiled
def test_rk4_parity():
    rng = np.random.default_rng(8)
    for _ in range(300):
        s = rng.normal(size=9)
        c = np.abs(rng.normal(size=4)) * 0.3
        d = np.abs(rng.normal(size=3)) * 1e-3
        a = _core.rk4_step(s, c, 0.027, 9.81, d, 0.01)
        b = pyref.rk4_step(s, c, 0.027, 9.81, d, 0.01)
        assert np.array_equal(a, b)


@needs_compiled
def test_ctrl_parity():
    rng = np.random.default_rng(9)
    for _ in range(300):
        s = rng.normal(size=9) * 0.5
        sp = rng.normal(size=12) * 0.5
        sp[0] = float(rng.integers(0, 2))
        ra = _core.hierarchical_ctrl(s, sp, 6.0, 4.5, 15.0, 0.027, 9.81, 0.59)
        rb = pyref.hierarchical_ctrl(s, sp, 6.0, 4.5, 15.0, 0.027, 9.81, 0.59)
        assert ra[0] == rb[0]
        assert np.array_equal(ra[1], rb[1])


@needs_compiled
def test_status_codes_match():
    assert _core.CTRL_OK == pyref.CTRL_OK
    assert _core.CTRL_DEGENERATE_THRUST == pyref.CTRL_DEGENERATE_THRUST
    assert _core.CTRL_SINGULAR_HEADING == pyref.CTRL_SINGULAR_HEADING
