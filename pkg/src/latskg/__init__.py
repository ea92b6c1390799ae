"""Lattice flatness, discrete Gaussians and nested-lattice secret key generation."""

__version__ = "0.1.0"

from .errors import ConfigError, LatticeError, NumericError  # noqa: E402
from .lattice import Lattice, build_lattice, integer_lattice  # noqa: E402

__all__ = ["ConfigError", "Lattice", "LatticeError", "NumericError", "__version__",
           "build_lattice", "integer_lattice"]
