"""Calibrated adversarial sampling over attack types.

Modules: ``bandit`` (UCB1 and Thompson sampling), ``scheduler`` (the CAS
reward and sampling rules), ``env`` (seeded quadratic risks and drift
quantities), ``baselines`` (SAT, E-AT, Order, AVG), ``analysis`` (trade-off
matrix, equilibrium, convergence, sequential failure), ``runner`` and
``cli``.  ``kernels.BACKEND`` reports whether the compiled core is in use.
"""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
