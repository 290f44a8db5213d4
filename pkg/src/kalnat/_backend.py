"""Kernel selection: compiled extension if importable, numpy otherwise.

Set ``KALNAT_PURE_PYTHON=1`` to force the numpy fallback. Callers look up
``_backend.kernels`` at call time, so :func:`use_kernels` can switch the
implementation for benchmarks and cross-checks.
"""

import os
from contextlib import contextmanager

from . import _kernels_py

COMPILED = None
if not os.environ.get("KALNAT_PURE_PYTHON"):
    try:
        from . import _kernels as COMPILED
    except ImportError:
        COMPILED = None

HAVE_COMPILED = COMPILED is not None
kernels = COMPILED if HAVE_COMPILED else _kernels_py


def active():
    return "compiled" if kernels is COMPILED and HAVE_COMPILED else "python"


@contextmanager
def use_kernels(name):
    """Temporarily select ``"compiled"`` or ``"python"`` kernels."""
    global kernels
    if name == "compiled":
        if not HAVE_COMPILED:
            raise RuntimeError("compiled kernels are not available in this build")
        chosen = COMPILED
    elif name == "python":
        chosen = _kernels_py
    else:
        raise ValueError(f"unknown kernel set {name!r}")
    saved, kernels = kernels, chosen
    try:
        yield
    finally:
        kernels = saved
