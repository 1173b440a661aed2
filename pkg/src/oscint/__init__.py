"""Oscillatory integrals with inhomogeneous phase functions.

Modules: ``expr`` (symbolic kernel), ``calculus`` (symbols, phases,
cutoffs), ``regularize`` (reducing operators), ``quadrature`` (pairings,
pointwise values, windowed transforms), ``microlocal`` (critical set,
stationary phase, wave-front probes), ``presets`` and ``cli``.
"""

__version__ = "0.1.0"

from .calculus import Box, Ladder, PhaseFn, ScanConfig, SymbolFn, validate_phase  # noqa: E402
from .errors import OscintError  # noqa: E402
from .expr import Dims, format_expr, parse  # noqa: E402

__all__ = ["Box", "Dims", "Ladder", "OscintError", "PhaseFn", "ScanConfig", "SymbolFn",
           "__version__", "format_expr", "parse", "validate_phase"]
