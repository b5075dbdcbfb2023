"""Exception hierarchy shared across the package."""


class WflabError(Exception):
    """Base class for all library errors."""

    code = "error"


class ExponentOverflow(WflabError):
    """An exponent fed to exp() exceeded the configured cap."""

    code = "exponent_overflow"

    def __init__(self, exponent, cap, atom=None, path=None):
        self.exponent = float(exponent)
        self.cap = float(cap)
        self.atom = atom
        self.path = path
        where = "" if atom is None else f" (atom {atom})"
        where += "" if path is None else f" (path {path})"
        super().__init__(f"exponent {self.exponent:.6g} exceeds cap {self.cap:g}{where}")


class HypothesisViolation(WflabError):
    """A model hypothesis check failed; carries the diagnostics report."""

    code = "hypothesis_violation"

    def __init__(self, violations, report=None):
        self.violations = list(violations)
        self.report = report
        super().__init__("; ".join(self.violations))


class NonSteep(WflabError):
    """The conjugate target lies outside the closure of the gradient range.

    Signals that the Legendre transform is +inf at this point.  The escape
    direction is the normalized iterate direction at divergence.
    """

    code = "non_steep"

    def __init__(self, alpha, escape_direction):
        self.alpha = alpha
        self.escape_direction = escape_direction
        super().__init__(f"conjugate diverges at alpha={alpha}, escape direction {escape_direction}")


class BudgetExceeded(WflabError):
    """An adaptive construction hit its configured resource cap."""

    code = "budget_exceeded"


class Infeasible(WflabError):
    """No feasible candidate was found (action minimization or target grid)."""

    code = "infeasible"


class EventCapExceeded(WflabError):
    """A simulated path exceeded its candidate-event cap."""

    code = "event_cap_exceeded"

    def __init__(self, path, cap):
        self.path = path
        self.cap = cap
        super().__init__(f"path {path} exceeded event cap {cap}")


class RateBoundExceeded(WflabError):
    """A sampled jump rate exceeded the dominating bound used for thinning."""

    code = "rate_bound_exceeded"

    def __init__(self, rate, bound, atom=None):
        self.rate = float(rate)
        self.bound = float(bound)
        self.atom = atom
        where = "" if atom is None else f" (atom {atom})"
        super().__init__(f"rate {self.rate:.6g} exceeds dominating bound {self.bound:.6g}{where}")


class InsufficientSamples(WflabError):
    """A Monte Carlo estimate is too noisy to be meaningful."""

    code = "insufficient_samples"


class ConfigError(WflabError):
    """Experiment configuration failed validation."""

    code = "config_error"
