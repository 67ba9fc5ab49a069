"""Exception hierarchy shared across the package."""


class TwoDPSMError(Exception):
    """Base class for all errors raised by this package."""


class InputError(TwoDPSMError):
    """Malformed input data (bad ids, ragged covariates, schema problems)."""


class DuplicateId(InputError):
    pass


class RaggedCovariates(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class EstimationError(TwoDPSMError):
    """A numerical fit could not be carried out."""


class OneClassPool(EstimationError):
    pass


class Separation(EstimationError):
    pass


class SingularDesign(EstimationError):
    pass


class SingularCovariance(EstimationError):
    pass


class DegenerateScores(EstimationError):
    pass


class DegenerateSamples(EstimationError):
    pass


class EmptyGroup(EstimationError):
    pass


class RankDeficientDesign(EstimationError):
    pass


class MatchingError(TwoDPSMError):
    """The matching protocol could not produce a usable sample."""


class GroupEmptied(MatchingError):
    def __init__(self, group: str, round_: int, step: str, cause: str = ""):
        self.group = group
        self.round = round_
        self.step = step
        self.cause = cause
        msg = f"group {group} emptied in round {round_}, step {step}"
        if cause:
            msg += f" ({cause})"
        super().__init__(msg)


class MaxRoundsExceeded(MatchingError):
    pass


class SchemeMismatch(MatchingError):
    pass


class PoolExhausted(TwoDPSMError):
    pass


class ConfigError(TwoDPSMError):
    pass
