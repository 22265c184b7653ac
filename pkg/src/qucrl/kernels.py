"""Backend selection for the stepping kernel.

The compiled extension is used when it imports; setting ``QUCRL_PURE_PYTHON=1``
forces the pure-Python implementation. Both consume the same uniforms in the
same order, so trajectories are identical across backends.
"""
import os

from . import _pykernels

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = ("compiled", "python")


def available_backends():
    return BACKENDS if _compiled is not None else ("python",)


def default_backend() -> str:
    if _compiled is None or os.environ.get("QUCRL_PURE_PYTHON", "") not in ("", "0"):
        return "python"
    return "compiled"


def get_run_segment(backend=None):
    backend = backend or default_backend()
    if backend == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernel is not built; reinstall the package")
        return _compiled.run_segment
    if backend == "python":
        return _pykernels.run_segment
    raise ValueError(f"unknown backend {backend!r}")
