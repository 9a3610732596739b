"""Numeric kernel backend selection.

Imports the compiled extension when available, otherwise falls back to the
pure-Python reference implementation. Set ``QUADSWARM_PURE_PYTHON=1`` to
force the fallback (useful for benchmarking and debugging).
"""

import os

from . import pyref

if os.environ.get("QUADSWARM_PURE_PYTHON") == "1":
    _impl = pyref
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = pyref

BACKEND = _impl.BACKEND_NAME

CTRL_OK = _impl.CTRL_OK
CTRL_DEGENERATE_THRUST = _impl.CTRL_DEGENERATE_THRUST
CTRL_SINGULAR_HEADING = _impl.CTRL_SINGULAR_HEADING

rot_from_euler = _impl.rot_from_euler
state_derivative = _impl.state_derivative
rk4_step = _impl.rk4_step
hierarchical_ctrl = _impl.hierarchical_ctrl
