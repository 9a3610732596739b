"""Deterministic multi-agent nano-quadrotor simulation and control engine.

Layers, bottom up: rigid-body dynamics (`dynamics`), hierarchical
flatness/geometric control (`control`), C2 trajectory planning
(`planning`), the simulated message fabric (`wire`, `netsim`),
bearing-based formation control (`formation`), pickup-and-delivery
routing (`tasking`), the scenario runner (`scenario`, `orchestrator`)
and the live operator gateway (`gateway`).

Hot numeric kernels live in `kernels` with a compiled backend and a
pure-Python fallback selected at import.
"""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
