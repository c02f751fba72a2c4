"""Exception hierarchy. The CLI maps each family to an exit code."""


class MTMIAError(Exception):
    exit_code = 1


class ConfigError(MTMIAError):
    exit_code = 2


class DataError(MTMIAError):
    exit_code = 3


class SchemaError(DataError):
    pass


class IngestionError(DataError):
    pass


class EntangledEntitiesError(DataError):
    pass


class TheoremViolation(DataError):
    """A connected subgraph carries both member and holdout nodes."""


class NumericError(MTMIAError):
    exit_code = 4
