"""
Exception hierarchy for the simulation lab.

Library code raises these; the runner and the CLI catch them per seed or per
attack instance so one bad unit of work does not abort a batch.
"""

from typing import Dict, Optional


class LabError(Exception):
    """Base class for every error raised by the lab"""


class InputError(LabError, ValueError):
    """Invalid numeric input (non-finite vectors, negative rounding input, degenerate constants)"""


class ParameterError(LabError, ValueError):
    """Out-of-range parameter; `condition` names the violated rule"""

    def __init__(self, message: str, condition: Optional[str] = None):
        super().__init__(message)
        self.condition = condition


class GraphConstructionError(LabError, ValueError):
    """Graph could not be built (disconnected, self-loop, bad weight)"""


class NumericalError(LabError):
    """A numerical routine failed to converge"""


class DatasetError(LabError, ValueError):
    """Dataset could not be parsed; `row` is the 1-based line number when known"""

    def __init__(self, message: str, row: Optional[int] = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class DivergenceError(LabError):
    """Algorithm state left the finite / bounded region at `step`"""

    def __init__(self, step: int, message: str = ""):
        super().__init__(f"divergence at step {step}" + (f": {message}" if message else ""))
        self.step = step


class CertificationError(LabError):
    """No (phi, sigma_c) grid pair satisfies the compressor bound"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, float]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SearchFailure(LabError):
    """Parameter search exhausted its budget; `binding` is the last violated condition"""

    def __init__(self, message: str, binding: Optional[str] = None):
        super().__init__(message)
        self.binding = binding


class ConfigError(LabError, ValueError):
    """Config key missing, unknown, mistyped or out of range"""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class AttackFailure(LabError):
    """Gradient-matching attack produced a non-finite iterate"""
