"""Planar random-walk range, intersection local times and their Brownian limits.

Modules: ``stepdist`` (step laws), ``walk`` (paths, range, I_k, Gamma_k),
``green`` (killed Green function, c_X), ``brownian`` (alpha_k, gamma_k),
``coupling`` (block couplings with Gaussian increments) and ``experiments``
(Monte Carlo runs with verdicts). ``kernels.BACKEND`` tells whether the
compiled loops are in use.
"""

from pathlib import Path

from .kernels import BACKEND
from .stepdist import StepLaw, load_step_law, make_step_law, ref_walk

__version__ = "0.1.0"

REF_WALK_FILE = Path(__file__).parent / "data" / "ref_walk.txt"

__all__ = ["BACKEND", "REF_WALK_FILE", "StepLaw", "load_step_law", "make_step_law", "ref_walk", "__version__"]
