"""Exception hierarchy.

Every error carries a short machine-readable ``category`` string that the
command line reports on failure.
"""


class MarkovLSAError(Exception):
    category = "error"


class NonErgodic(MarkovLSAError):
    category = "non_ergodic"


class NotMixedWithinCap(MarkovLSAError):
    category = "not_mixed"


class SingularSystem(MarkovLSAError):
    category = "singular_system"


class Unstable(MarkovLSAError):
    """Raised when kappa >= 1, i.e. the fixed-point operator is not contractive."""

    category = "unstable"


class UnstableSystem(MarkovLSAError):
    """Raised for a VAR model whose companion matrix has spectral radius >= 1."""

    category = "unstable_system"


class DegenerateFeatures(MarkovLSAError):
    category = "degenerate_features"


class NumericalBlowup(MarkovLSAError):
    category = "numerical_blowup"


class InsufficientData(MarkovLSAError):
    category = "insufficient_data"


class ConfigError(MarkovLSAError):
    category = "config"
