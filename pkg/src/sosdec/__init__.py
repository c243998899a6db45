"""Explicit sum-of-squares decompositions of smooth non-negative functions.

The zero set of ``f`` must satisfy the normal Hessian condition: at every zero
the Hessian is positive definite on the normal space of the zero manifold.
Around each zero a parametrised Morse lemma gives ``f = sum_i f_i^2`` locally;
square-root partitions of unity glue these local families together with a
``sqrt(f)`` piece away from the zero set.
"""

from .calculus import Jet2, gauss_legendre, jet2
from .config import ConfigError, ProblemConfig, load_config
from .exprparse import ExprAst, parse
from .geometry import ZeroComponent, ZeroSetDescription, builtin_atlas
from .gluing import Domain, GlobalDecomposition, build_decomposition
from .morse import LocalDecomposition, factor_F, local_pieces
from .nhc import check_global_nhc, check_nhc_at
from .tolerances import DEFAULT, Tolerances

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DEFAULT", "Domain", "ExprAst", "GlobalDecomposition", "Jet2", "LocalDecomposition",
    "Tolerances", "ZeroComponent", "ZeroSetDescription", "build_decomposition",
    "builtin_atlas", "check_global_nhc", "check_nhc_at", "factor_F", "gauss_legendre",
    "jet2", "load_config", "local_pieces", "parse", "ProblemConfig",
]
