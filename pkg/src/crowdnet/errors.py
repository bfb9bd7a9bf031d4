"""Exception types raised across the toolkit."""


class CrowdnetError(Exception):
    """Base class for all toolkit errors."""


class MalformedRecord(CrowdnetError, ValueError):
    def __init__(self, row, reason):
        self.row = row
        self.reason = reason
        super().__init__(f"row {row}: {reason}")


class DuplicateId(CrowdnetError, ValueError):
    def __init__(self, post_id, row):
        self.post_id = post_id
        self.row = row
        super().__init__(f"duplicate post_id {post_id!r} at row {row}")


class LexiconError(CrowdnetError, ValueError):
    pass


class EmptyAfterCanonicalization(CrowdnetError, ValueError):
    pass


class EmptyRoster(CrowdnetError):
    pass


class IncompleteAssignment(CrowdnetError, KeyError):
    pass


class DegenerateGeometry(CrowdnetError, ValueError):
    pass


class MissingSet(CrowdnetError, KeyError):
    pass


class UnknownBeatId(CrowdnetError, KeyError):
    pass


class ZeroVariance(CrowdnetError, ValueError):
    pass


class SingularDesign(CrowdnetError, ValueError):
    pass


class SeparationDetected(CrowdnetError, ArithmeticError):
    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class NonConvergence(CrowdnetError, RuntimeError):
    pass


class Degeneracy(CrowdnetError, RuntimeError):
    def __init__(self, message, theta=None):
        self.theta = theta
        super().__init__(message)


class ConfigInvalid(CrowdnetError, ValueError):
    pass
