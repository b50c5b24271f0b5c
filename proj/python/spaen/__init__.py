"""Adversarial embedding networks for zero-shot recognition."""

from ._spaen import *  # noqa: F401,F403
from ._spaen import __doc__  # noqa: F401
