"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Array shapes are incompatible with the requested operation."""


class ConfigError(ValueError):
    """A hyperparameter or architecture setting is invalid."""


class ContractError(RuntimeError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""


class LoadError(IOError):
    """A dataset or checkpoint on disk is missing or malformed."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, phase, epoch, value):
        super().__init__(f"{phase}: loss became non-finite ({value}) at epoch {epoch}")
        self.phase = phase
        self.epoch = epoch
        self.value = value
