"""Deterministic simulator for hypervisor-free domain isolation.

Mutually distrusting software domains share cores, memory, peripherals,
and one interrupt controller; a minimal secure monitor enforces isolation.
Scenarios script the domains, runs produce traces, and the checker
machine-verifies the isolation guarantees over those traces.
"""

from .checker import Violation, check_guarantees
from .platform import Platform, run_scenario
from .report import RunReport
from .scenario import Scenario, ScenarioError, emit_scenario, load_scenario, parse_scenario

__all__ = [
    "Platform",
    "RunReport",
    "Scenario",
    "ScenarioError",
    "Violation",
    "check_guarantees",
    "emit_scenario",
    "load_scenario",
    "parse_scenario",
    "run_scenario",
]

__version__ = "0.1.0"
