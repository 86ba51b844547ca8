"""Entropy-penalized Monte-Carlo solver for stochastic control with constraints in law."""

from ._epmc import *  # noqa: F401,F403
from ._epmc import __doc__ as _core_doc

__all__ = [name for name in dir() if not name.startswith("_")]
