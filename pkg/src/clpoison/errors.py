"""Exception types shared across the toolkit."""


class PoisonFormatError(ValueError):
    """Poison file has a bad magic, unsupported version, or is truncated."""


class PoisonIntegrityError(ValueError):
    """Stored deltas violate the epsilon bound recorded in the file."""


class PoisonMismatchError(ValueError):
    """Perturbation set does not belong to the dataset it is applied to."""


class NumericalDomainError(ValueError):
    """Operation hit an undefined numerical domain (zero norms, non-finite gradients)."""


class DegenerateInputError(ValueError):
    """Input too degenerate to process, e.g. a fully masked matrix."""


class TrainingDivergedError(RuntimeError):
    """Training or attack loss became non-finite."""

    def __init__(self, message: str, epoch: int | None = None, iteration: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.iteration = iteration


class ConfigError(ValueError):
    """Config validation failure; carries the full list of violations."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
