"""Binary magnetization patterns for lattices of Ioffe-Pritchard microtraps."""
__version__ = "0.1.0"

from .fieldcore import (LatticeGeometry, MagnetizationPattern, PeriodicField, PhysicalParams,
                        ValidationError, read_pattern, write_pattern)
from .analysis import RB87, AtomSpec, BiasConfig, TrapReport, analyze_site
from .designer import DesignResult, equalize_triangular, export, load_spec, run_design

__all__ = [
    "AtomSpec", "BiasConfig", "DesignResult", "LatticeGeometry", "MagnetizationPattern", "PeriodicField",
    "PhysicalParams", "RB87", "TrapReport", "ValidationError", "__version__", "analyze_site",
    "equalize_triangular", "export", "load_spec", "read_pattern", "run_design", "write_pattern",
]
