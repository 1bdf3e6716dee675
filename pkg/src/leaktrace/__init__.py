"""leaktrace: sound upper bounds, in bits, on what a program's memory
access trace reveals about its secret inputs, for a hierarchy of
microarchitectural observers (address, cache-bank, block, page
granularity, with and without stuttering), under dynamically allocated
memory with unknown base addresses."""

from .analyzer import AnalysisConfig, LeakReport, run, run_analysis
from .ir import parse, build_cfg
from .msym import MaskedSymbol, MSymSet, SymbolAllocator
from .observers import Observer, Projection, parse_observer, view_concrete
from .oracle import build_scenarios, check_bound, exact_view_count, run_concrete

__version__ = "0.1.0"

__all__ = [
    "AnalysisConfig", "LeakReport", "run", "run_analysis",
    "parse", "build_cfg",
    "MaskedSymbol", "MSymSet", "SymbolAllocator",
    "Observer", "Projection", "parse_observer", "view_concrete",
    "build_scenarios", "check_bound", "exact_view_count", "run_concrete",
    "__version__",
]
