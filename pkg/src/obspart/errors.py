"""Exception hierarchy shared by all obspart modules."""


class ObsPartError(Exception):
    """Base class for every error raised by this package."""


class NotPositiveDefinite(ObsPartError):
    pass


class DimensionMismatch(ObsPartError):
    pass


class DuplicateVariable(ObsPartError):
    pass


class UnknownVariable(ObsPartError):
    pass


class DepthTooLarge(ObsPartError):
    pass


class NotSiblings(ObsPartError):
    pass


class NotMembers(ObsPartError):
    pass


class InvalidCover(ObsPartError):
    pass


class MultipleNodes(ObsPartError):
    pass


class OverlappingSets(ObsPartError):
    pass


class MissingCovarianceEntries(ObsPartError):
    pass


class RankDeficientNew(ObsPartError):
    pass


class InconsistentAssociation(ObsPartError):
    pass


class InvalidDistribution(ObsPartError):
    pass


class NotConditionallyIndependent(ObsPartError):
    pass


class SelfCheckFailed(ObsPartError):
    """Two independent evaluation routes of the same quantity disagreed."""


class InfeasibleConfig(ObsPartError):
    pass


class GoalUnreachable(ObsPartError):
    pass


class ConfigError(ObsPartError):
    """Invalid scenario configuration; ``field`` and ``line`` locate the problem."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if field:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
