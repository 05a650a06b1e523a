"""Exception types shared across the package."""


class TorwalkError(Exception):
    """Base class for all package errors."""


class ConfigError(TorwalkError):
    """Invalid experiment configuration or input file."""


class BudgetExceeded(TorwalkError):
    """A numeric budget (atoms, grid cells, samples, states) would be exceeded."""


class AtomCapExceeded(BudgetExceeded):
    def __init__(self, at_step: int, atoms: int, cap: int):
        super().__init__(f"support grew to {atoms} atoms at step {at_step} (cap {cap})")
        self.at_step = at_step
        self.atoms = atoms
        self.cap = cap


class CapExceeded(BudgetExceeded):
    """Finite group closure grew beyond its cap."""


class NotInAlgebra(TorwalkError):
    """A matrix does not lie in the span of the algebra basis."""


class NotApplicable(TorwalkError):
    """Hypothesis of a check is not met; carries the measured estimate."""

    def __init__(self, message: str, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class ConvergenceError(TorwalkError):
    def __init__(self, message: str, last=None):
        super().__init__(message)
        self.last = last
