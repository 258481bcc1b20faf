"""Treatment-fraction and short-term-gain constraints."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .design import generalized_rdd, moments
from .dist import Distribution
from .errors import InfeasibleConstraintsError, ValidationError

# relative slack when comparing a gain target with its upper bound
GAIN_TOL = 1e-12


def xz_max(dist: Distribution, z_tilde: float) -> float:
    """Largest E_p(xz) over designs with E_p(z) = z_tilde (attained by the generalized RDD)."""
    if not (-1 <= z_tilde <= 1):
        raise ValidationError(f"treatment-fraction parameter must lie in [-1, 1], got {z_tilde}")
    if abs(z_tilde) == 1:
        return 0.0
    return max(moments(generalized_rdd(z_tilde, dist), dist).exz, 0.0)


@dataclass(frozen=True)
class Constraints:
    z_tilde: float
    xz: float
    delta: float
    xz_upper: float

    @property
    def at_upper(self) -> bool:
        return self.xz >= self.xz_upper * (1 - GAIN_TOL)

    def as_dict(self) -> dict:
        return {"z_tilde": self.z_tilde, "xz": self.xz, "delta": self.delta, "xz_max": self.xz_upper}


def constraints(
    dist: Distribution, z_tilde: float, *, delta: float | None = None, xz: float | None = None
) -> Constraints:
    """Validate (z_tilde, gain) against the feasible input space.

    Exactly one of ``delta`` (normalised gain in [0, 1]) and ``xz`` must be given.
    """
    if (delta is None) == (xz is None):
        raise ValidationError("give exactly one of delta and xz")
    if not (-1 < z_tilde < 1) or math.isnan(z_tilde):
        raise InfeasibleConstraintsError(
            f"treatment-fraction parameter {z_tilde} outside (-1, 1)",
            z_tilde=z_tilde,
            bounds={"z_tilde": [-1, 1]},
        )
    upper = xz_max(dist, z_tilde)
    if delta is not None:
        if not (0 <= delta <= 1):
            raise InfeasibleConstraintsError(
                f"normalised gain {delta} outside [0, 1]",
                z_tilde=z_tilde,
                delta=delta,
                bounds={"delta": [0, 1], "xz": [0.0, upper]},
            )
        return Constraints(z_tilde, delta * upper, delta, upper)
    if xz < 0 or xz > upper * (1 + GAIN_TOL) + 1e-300 or math.isnan(xz):
        raise InfeasibleConstraintsError(
            f"gain {xz} outside [0, xz_max = {upper}] for z_tilde = {z_tilde}",
            z_tilde=z_tilde,
            xz=xz,
            bounds={"xz": [0.0, upper]},
        )
    xz = min(xz, upper)
    return Constraints(z_tilde, xz, xz / upper if upper > 0 else 0.0, upper)
