"""Exception types shared across the package."""


class RcmAlignError(Exception):
    """Base class for all rcmalign domain errors."""


class ConfigError(RcmAlignError):
    """Bad or unknown configuration key/value, or a missing input path."""


class DataError(RcmAlignError):
    """Dataset violates a contract (not free-space, not a pivot set, bad CSV...)."""


class SingularJacobianError(RcmAlignError):
    """Incision Jacobian is not invertible: |D| must be at least 1 mm."""


class InsufficientExcitationError(RcmAlignError):
    """Too few samples survive the force/angle filters to support a solve."""


class CalibrationError(RcmAlignError):
    """Stiffness calibration failed (empty acceptance set or disjoint ranges).

    Carries a ``details`` dict with sweep/range diagnostics for reporting.
    """

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details or {}
