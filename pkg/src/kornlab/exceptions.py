"""Exception types raised across kornlab."""


class KornlabError(Exception):
    """Base class for all kornlab errors."""


class MarginViolation(KornlabError, ValueError):
    """A rotation maps some basis vector too close to plus or minus another."""


class BudgetExceeded(KornlabError, RuntimeError):
    """A covering could not reach its coverage target within the allowed scales."""


class OutOfDomain(KornlabError, ValueError):
    pass


class OutsideCube(KornlabError, ValueError):
    pass


class DegenerateFrame(KornlabError, ValueError):
    """Two gradient directions are (nearly) parallel."""


class NotOrthonormal(KornlabError, ValueError):
    pass


class QualityBudgetExceeded(KornlabError, RuntimeError):
    """The orthonormality defect of a map makes a requested tolerance unreachable."""


class NoConvergence(KornlabError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SingularAssembly(KornlabError, RuntimeError):
    pass


class InvalidRotationField(KornlabError, ValueError):
    pass


class InvalidSample(KornlabError, ValueError):
    pass


class IntegrityError(KornlabError, ValueError):
    """A serialized artifact failed its schema or checksum check."""


class MissingArtifact(KornlabError, FileNotFoundError):
    pass


class ConfigError(KornlabError, ValueError):
    def __init__(self, errors):
        if isinstance(errors, str):
            errors = {"config": errors}
        self.errors = dict(errors)
        msg = "; ".join(f"{k}: {v}" for k, v in self.errors.items())
        super().__init__(msg)
