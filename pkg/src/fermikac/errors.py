"""Exception types shared across the package."""


class FermikacError(Exception):
    """Base class for all package-specific errors."""


class AdmissibilityError(FermikacError):
    """A particle configuration violates the one-per-cell exclusion rule."""


class ConfigError(FermikacError):
    """Inconsistent or invalid configuration."""


class NumericalError(FermikacError):
    """A numerical routine failed (NaN/Inf, bracket without root, ...)."""


class SaturationError(FermikacError):
    """Initial-data sampler could not place particles (grid too crowded)."""
