"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the pure-Python
module with the same interface.  Set ``CASBANDIT_PURE_PYTHON=1`` to force the
fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("CASBANDIT_PURE_PYTHON", "") not in ("", "0"):
    backend = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as backend  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        backend = _pykernels
        BACKEND = "python"

slope_positional = backend.slope_positional
compute_rewards = backend.compute_rewards
ucb_bernoulli = backend.ucb_bernoulli
thompson_bernoulli = backend.thompson_bernoulli
sgd_quadratic = backend.sgd_quadratic

__all__ = [
    "BACKEND",
    "backend",
    "compute_rewards",
    "sgd_quadratic",
    "slope_positional",
    "thompson_bernoulli",
    "ucb_bernoulli",
]
