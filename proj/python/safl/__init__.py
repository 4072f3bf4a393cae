"""Python access to the loop closure detection core.

The compiled extension does the work; this package re-exports it.
"""

from ._safl import *  # noqa: F401,F403
from ._safl import __doc__  # noqa: F401

__all__ = [name for name in dir() if not name.startswith("_")]
