"""
Error types shared by every stage; app.py maps them to exit codes
"""
from typing import Any, Dict, Optional


class LocIntentError(Exception):
    """Base class for toolkit errors"""

    exit_code = 1


class DataError(LocIntentError):
    """Bad or missing input data"""

    exit_code = 3


class ModelError(LocIntentError):
    """Training or inference failure"""

    exit_code = 4


class SchemaError(ModelError):
    """Artifact schema or version mismatch"""


class TrainingError(ModelError):
    """Training aborted; diagnostics describe the state at failure"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConvergenceError(ModelError):
    """Solver hit its iteration limit before reaching tolerance"""

    def __init__(self, message: str, best_gap: float, iterations: int):
        super().__init__(f"{message} (best gap {best_gap:.3e} after {iterations} iterations)")
        self.best_gap = best_gap
        self.iterations = iterations
