"""Model constants and their validation.

Defaults correspond to a daily time step: one month of momentum memory
(``theta = 0.95``), a 2% annual risk-free rate and a 30/70 risky/risk-free
split for the rational investors.

Time-scale dependence (no automatic rescaling is done): with a step of
length ``tau`` the momentum memory is ``tau / (1 - theta)``, so keeping the
memory fixed requires ``1 - theta`` proportional to ``tau``; ``r_f``, ``r``
and ``sigma_r**2`` all scale linearly with ``tau``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

from .errors import ValidationError

ETA_DEFAULT = math.log(10.0) / 20.0
P_DEFAULT = 0.2
# Chosen so that the stationary std of the coupling is exactly 0.1 * p.
SIGMA_KAPPA_DEFAULT = 0.1 * P_DEFAULT * math.sqrt(2.0 * ETA_DEFAULT)


@dataclass(frozen=True)
class ModelParams:
    """Exogenous constants of the two-group market.

    All rates are per step.  ``nu`` is the initial wealth of the noise
    traders relative to the rational investors.
    """

    x: float = 0.3
    theta: float = 0.95
    n_noise: int = 4000
    p: float = P_DEFAULT
    r: float = 1.6e-4
    sigma_r: float = 9.5e-4
    r_f: float = 8e-5
    mu_kappa: float = 0.196
    sigma_kappa: float = SIGMA_KAPPA_DEFAULT
    eta: float = ETA_DEFAULT
    nu: float = 1.0
    t_max: int = 5000

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def check(key, ok, msg):
            if not ok:
                raise ValidationError(key, f"{msg} (got {getattr(self, key)!r})")

        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ValidationError(f.name, f"must be a number (got {v!r})")
            if not math.isfinite(v):
                raise ValidationError(f.name, f"must be finite (got {v!r})")
        for key in ("n_noise", "t_max"):
            if int(getattr(self, key)) != getattr(self, key):
                raise ValidationError(key, "must be an integer")

        check("x", 0.0 < self.x < 1.0, "must lie in (0, 1)")
        check("theta", 0.0 <= self.theta < 1.0, "must lie in [0, 1)")
        check("n_noise", self.n_noise >= 1, "must be >= 1")
        check("p", 0.0 < self.p < 1.0, "must lie in (0, 1)")
        check("mu_kappa", 0.0 < self.mu_kappa < 1.0, "must lie in (0, 1)")
        check("sigma_kappa", self.sigma_kappa >= 0.0, "must be >= 0")
        check("sigma_r", self.sigma_r >= 0.0, "must be >= 0")
        check("r_f", self.r_f > -1.0, "must exceed -1")
        check("eta", self.eta > 0.0, "must be > 0")
        check("nu", self.nu > 0.0, "must be > 0")
        check("t_max", self.t_max >= 1, "must be >= 1")

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def momentum_memory(self) -> float:
        """Momentum memory in steps, ``1 / (1 - theta)``."""
        return 1.0 / (1.0 - self.theta)


PARAM_FIELDS = tuple(f.name for f in dataclasses.fields(ModelParams))
