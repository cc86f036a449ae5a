"""Exception hierarchy.

The CLI maps the three top-level families onto exit codes 2, 3 and 4.
"""


class HamshapeError(Exception):
    """Base class for all package errors."""

    kind = "error"

    def to_dict(self):
        return {"error": self.kind, "type": type(self).__name__, "message": str(self)}


class ConfigError(HamshapeError, ValueError):
    kind = "config"


class NumericalError(HamshapeError):
    kind = "numerical"


class SolverError(NumericalError):
    pass


class OutsideMeshError(NumericalError):
    pass


class NoReturnError(NumericalError):
    pass


class GradientDegeneracyError(NumericalError):
    pass


class MissingHessianError(NumericalError):
    pass


class AdmissibilityError(HamshapeError):
    kind = "admissibility"

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report

    def to_dict(self):
        d = super().to_dict()
        if self.report is not None:
            r = self.report
            d["report"] = r.to_dict() if hasattr(r, "to_dict") else r
        return d


class NoZeroSetError(AdmissibilityError):
    pass


class EmptyDomainError(AdmissibilityError):
    pass
