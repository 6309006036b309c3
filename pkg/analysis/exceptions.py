"""
Error types raised by metric extraction and calibration
"""


class AnalysisError(Exception):
    """Base class for analysis failures"""


class MetricTableError(AnalysisError):
    """Malformed or mismatched metric tables"""


class CalibrationError(AnalysisError):
    """Calibration could not continue; ``trace`` holds the evaluations done so far"""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
