"""Generalized broken/gliding ray tracing with measure-transport checks."""

# cli is deliberately not imported here so `python3 -m glancer.cli` stays
# warning-free; `from glancer import cli` still works on demand.
from . import errors, flow, gcc, geometry, measures, scenarios, symbol
from .flow import GenBicharacteristic, IntegratorParams, trace_generalized
from .gcc import GccReport, ObservationRegion, gcc_check
from .measures import BoundaryMeasure, CurveMeasure, TestFunction, transport_residual
from .scenarios import Scenario, builtin, load_scenario
from .symbol import PhasePoint, Tag

__version__ = "0.1.0"

__all__ = [
    "BoundaryMeasure",
    "CurveMeasure",
    "GccReport",
    "GenBicharacteristic",
    "IntegratorParams",
    "ObservationRegion",
    "PhasePoint",
    "Scenario",
    "Tag",
    "TestFunction",
    "builtin",
    "errors",
    "flow",
    "gcc",
    "gcc_check",
    "geometry",
    "load_scenario",
    "measures",
    "scenarios",
    "symbol",
    "trace_generalized",
    "transport_residual",
    "__version__",
]
