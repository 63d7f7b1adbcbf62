"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise (or when
``TRACELAB_PURE_PYTHON=1``) the pure-Python twin takes over. Both produce
identical outputs for identical seeds.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("TRACELAB_PURE_PYTHON") == "1":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined,no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _kernels_py
        BACKEND = "python"

convergence_trial = _impl.convergence_trial
mix64 = _impl.mix64
uniforms = _impl.uniforms

__all__ = ["BACKEND", "convergence_trial", "mix64", "uniforms"]
