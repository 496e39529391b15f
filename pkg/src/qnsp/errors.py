"""Exception hierarchy shared by all qnsp modules."""


class QNSPError(Exception):
    """Base class for every error raised by the package."""


class UnsupportedOrderError(QNSPError, ValueError):
    pass


class CompatibilityError(QNSPError, ValueError):
    """Raised when a Poisson right-hand side does not have zero mean."""

    def __init__(self, mass_defect, tol):
        self.mass_defect = float(mass_defect)
        self.tol = float(tol)
        super().__init__(
            f"compatibility violated: |mean defect| = {abs(self.mass_defect):.3e} "
            f"exceeds tolerance {self.tol:.3e}")


class FloorViolationError(QNSPError, ValueError):
    def __init__(self, min_value, floor, what="density"):
        self.min_value = float(min_value)
        self.floor = float(floor)
        super().__init__(f"{what} minimum {self.min_value:.3e} below floor {self.floor:.3e}")


class IndefiniteMassError(QNSPError, ArithmeticError):
    pass


class BlowUpError(QNSPError, ArithmeticError):
    """Non-finite values appeared; ``ledger`` maps term names to norms."""

    def __init__(self, message, ledger=None, term=None):
        self.ledger = dict(ledger or {})
        self.term = term
        super().__init__(message)


class PositivityGuardError(QNSPError, ArithmeticError):
    def __init__(self, min_rho, threshold, t=None):
        self.min_rho = float(min_rho)
        self.threshold = float(threshold)
        self.t = t
        super().__init__(
            f"positivity guard tripped at t={t}: min rho {min_rho:.3e} < {threshold:.3e}")


class ResolutionError(QNSPError, ValueError):
    pass


class WindowError(QNSPError, ValueError):
    pass


class ConfigError(QNSPError, ValueError):
    """Configuration problem; ``field`` names the offending key when known."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"[{field}] {message}" if field else message)
