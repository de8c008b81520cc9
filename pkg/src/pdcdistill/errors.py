"""Exception and warning types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration input: unknown key, bad value, unparsable file."""


class FitError(RuntimeError):
    """Base class for visibility-extraction failures."""


class IllConditionedError(FitError):
    """Scan points sample equivalent fringe phases; the normal equations are singular."""


class DegenerateDataError(FitError):
    """Data admit no positive mean level (e.g. all-zero counts)."""


class NoPeriodError(FitError):
    """No dominant fringe period is identifiable in the scan."""


class PoorConditioningWarning(UserWarning):
    """Legal configuration that will produce a poorly conditioned estimate."""


class BracketWarning(UserWarning):
    """A search bracket excluded the optimum; a boundary value was returned."""
