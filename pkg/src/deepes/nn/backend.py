"""Training-kernel backend selection: compiled extension or numpy fallback.

The compiled module ``deepes.nn._fastpath`` (Cython) implements the same
``run_epoch``/``eval_loss`` kernels as ``_numpy_backend``; it is built when
the package is installed and silently skipped when a compiler is missing.
Selection happens at import and may be overridden with the environment
variable ``DEEPES_BACKEND`` set to ``numpy`` or ``fastpath``.

Predictions, surrogate construction, and the public gradient always use the
numpy implementation so that evaluation of a stored model is independent of
how it was trained.  Training results are deterministic given (data, config,
seed, backend); the two backends may differ in the last floating-point bits
because BLAS and the fused C loops can associate sums differently.
"""

from __future__ import annotations

import os

from . import _numpy_backend

try:
    from . import _fastpath
except ImportError:
    _fastpath = None

_CHOICE = os.environ.get("DEEPES_BACKEND", "auto").lower()
if _CHOICE not in ("auto", "numpy", "fastpath"):
    raise ValueError(
        f"DEEPES_BACKEND must be 'auto', 'numpy' or 'fastpath', got {_CHOICE!r}"
    )
if _CHOICE == "fastpath" and _fastpath is None:
    raise ImportError(
        "DEEPES_BACKEND=fastpath but the compiled extension is not available"
    )

_ACTIVE = _numpy_backend if (_CHOICE == "numpy" or _fastpath is None) else _fastpath


def backend_name():
    """Name of the backend used for training loops."""
    return "numpy" if _ACTIVE is _numpy_backend else "fastpath"


def have_fastpath():
    return _fastpath is not None


def run_epoch(*args):
    return _ACTIVE.run_epoch(*args)


def eval_loss(*args):
    return _ACTIVE.eval_loss(*args)
