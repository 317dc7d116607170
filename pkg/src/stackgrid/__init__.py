"""Stackelberg equilibria for real-time electricity pricing between one
utility and a fleet of flexible users."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConditionViolation,
    GridTooLarge,
    InfeasibleBounds,
    InputError,
    MaxIterExceeded,
    NonpositiveTildeW,
    StackgridError,
)
from .gamecore import (  # noqa: E402
    DemandProfile,
    EquilibriumReport,
    FlexUserSet,
    PricingRule,
    Scenario,
)
