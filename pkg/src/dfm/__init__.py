"""Staged multiscale flow matching on Laplacian pyramids, in numpy.

Heavy submodules (model, train, sampler) are imported lazily by callers;
this top level stays light so the CLI can parse arguments and report
configuration errors before any JIT compilation happens.
"""

from .errors import ConfigError, DfmError, RuntimeAbort

__version__ = "0.1.0"

__all__ = ["ConfigError", "DfmError", "RuntimeAbort", "__version__"]
