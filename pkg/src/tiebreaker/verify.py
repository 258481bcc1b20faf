"""Monte Carlo check that a design delivers its predicted interaction variance.

Each replicate draws ``x ~ F``, assigns ``z = +1`` with probability
``p(x)``, simulates the two-line model and fits it by least squares.  The
scaled sample variance ``n * Var(beta3_hat)`` across replicates is compared
with ``noise_sd**2 * M11 / det(M)``.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import criteria
from .design import DesignFunction, moments
from .dist import Distribution
from .errors import SingularDesignError, ValidationError

# warn when more than this share of replicates had to be redrawn
REJECTION_WARN_RATE = 0.01
_MAX_REDRAWS = 1000


@dataclass(frozen=True)
class SimConfig:
    n: int = 10_000
    reps: int = 2_000
    seed: int = 2024
    beta: tuple = (0.0, 0.0, 0.0, 0.0)
    noise_sd: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 8:
            raise ValidationError(f"n must be an integer >= 8, got {self.n}")
        if int(self.reps) != self.reps or self.reps < 2:
            raise ValidationError(f"reps must be an integer >= 2, got {self.reps}")
        if not (0 <= int(self.seed) < 2**64):
            raise ValidationError("seed must be a non-negative 64-bit integer")
        if len(self.beta) != 4:
            raise ValidationError("beta must have four coefficients")
        if not (self.noise_sd >= 0):
            raise ValidationError("noise_sd must be non-negative")


def design_matrix(xs, zs) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    zs = np.asarray(zs, dtype=float)
    return np.column_stack([np.ones_like(xs), xs, zs, xs * zs])


def fit_two_line(xs, zs, ys) -> np.ndarray:
    """OLS for ``y = b0 + b1 x + b2 z + b3 x z`` via a Cholesky solve of the Gram matrix."""
    xs, zs, ys = (np.asarray(a, dtype=float) for a in (xs, zs, ys))
    if not (xs.shape == zs.shape == ys.shape) or xs.ndim != 1:
        raise ValidationError("xs, zs and ys must be one-dimensional and of equal length")
    X = design_matrix(xs, zs)
    gram = X.T @ X
    # relative pivot check: catches all-equal z and other collinear columns
    scale = np.sqrt(np.diag(gram))
    if np.any(scale == 0):
        raise SingularDesignError("design matrix has an all-zero column")
    corr = gram / np.outer(scale, scale)
    try:
        factor = linalg.cho_factor(corr, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise SingularDesignError("design matrix is rank deficient") from None
    if np.min(np.abs(np.diag(factor[0]))) ** 2 < 1e-12:
        raise SingularDesignError("design matrix is numerically rank deficient")
    return linalg.cho_solve(factor, (X.T @ ys) / scale, check_finite=False) / scale


def predicted_variance(dist: Distribution, p: DesignFunction, noise_sd: float = 1.0) -> float:
    """Asymptotic ``n * Var(beta3_hat)`` for design ``p``."""
    t = moments(p, dist)
    return noise_sd**2 * criteria.inverse_efficiency(t.ez, t.exz, t.ex2z, dist.second_moment)


def replicate_rng(seed: int, r: int, attempt: int = 0) -> np.random.Generator:
    """Independent stream for replicate ``r``; the result does not depend on scheduling."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(r, attempt)))


def _one_replicate(dist, p, cfg: SimConfig, r: int):
    beta = np.asarray(cfg.beta, dtype=float)
    for attempt in range(_MAX_REDRAWS):
        rng = replicate_rng(cfg.seed, r, attempt)
        xs = dist.sample(rng, cfg.n)
        zs = np.where(rng.random(cfg.n) < p.evaluate(xs), 1.0, -1.0)
        ys = design_matrix(xs, zs) @ beta + cfg.noise_sd * rng.standard_normal(cfg.n)
        try:
            return fit_two_line(xs, zs, ys)[3], attempt
        except SingularDesignError:
            continue
    raise SingularDesignError(f"replicate {r} stayed singular after {_MAX_REDRAWS} draws")


@dataclass
class SimResult:
    design: str
    n: int
    reps: int
    seed: int
    empirical: float
    predicted: float
    rejected_replicates: int
    estimates: np.ndarray = field(repr=False, default=None)
    warning: str | None = None

    @property
    def rel_error(self) -> float:
        if self.predicted == 0:
            return 0.0 if self.empirical == 0 else float("inf")
        return abs(self.empirical - self.predicted) / self.predicted

    def as_dict(self) -> dict:
        out = {
            "design": self.design,
            "n": self.n,
            "reps": self.reps,
            "seed": self.seed,
            "empirical": self.empirical,
            "predicted": self.predicted,
            "rel_error": self.rel_error,
            "rejected_replicates": self.rejected_replicates,
        }
        if self.warning:
            out["warning"] = self.warning
        return out

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)


def simulate_variance(
    dist: Distribution, p: DesignFunction, cfg: SimConfig = SimConfig(), workers: int = 1
) -> SimResult:
    predicted = predicted_variance(dist, p, cfg.noise_sd)
    run = lambda r: _one_replicate(dist, p, cfg, r)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(run, range(cfg.reps)))
    else:
        out = [run(r) for r in range(cfg.reps)]
    est = np.array([b for b, _ in out])
    rejected = int(sum(a for _, a in out))
    empirical = float(cfg.n * np.var(est, ddof=1))
    warning = None
    if rejected > REJECTION_WARN_RATE * cfg.reps:
        warning = f"{rejected} singular replicates redrawn (more than 1% of {cfg.reps})"
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
    return SimResult(
        design=p.label or "design",
        n=cfg.n,
        reps=cfg.reps,
        seed=cfg.seed,
        empirical=empirical,
        predicted=predicted,
        rejected_replicates=rejected,
        estimates=est,
        warning=warning,
    )
