"""Exception hierarchy; the command line maps each class to an exit status."""


class StdfLabError(Exception):
    """Base class for every error the library raises on purpose."""

    exit_code = 1


class ConfigurationError(StdfLabError):
    """Malformed configuration, unknown tag, missing mandatory option."""

    exit_code = 2


class ParameterError(ConfigurationError, ValueError):
    """A model parameter outside its admissible range (e.g. logistic theta < 1)."""


class DataError(StdfLabError):
    """Input data the estimators cannot use: ties, non-finite entries, bad CSV."""

    exit_code = 3


class DomainError(StdfLabError, ValueError):
    """An argument outside the domain of the operation."""

    exit_code = 4


class PreconditionError(StdfLabError, ValueError):
    """A bound was evaluated outside the regime in which it is stated."""

    exit_code = 4
