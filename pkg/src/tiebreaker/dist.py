"""Running-variable distributions and their truncated moments.

Every distribution is mean-centred on construction.  The quantities the rest
of the package needs are

* ``cdf`` / ``cdf_left`` / ``atom``  -- Pr(x <= s), Pr(x < s), Pr(x = s)
* ``quantile``                       -- inf{s : F(s) >= q}
* ``truncated_moment(a, t)``         -- E(x**a * 1(x < t))  (or ``<=``)

for a in {0, 1, 2}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, special

from .errors import DataFormatError, DegenerateDistributionError, ValidationError

KINDS = ("uniform", "weibull", "gaussian", "empirical")

# cumulative masses are compared with this slack so that sums like
# 0.2 + 0.2 + 0.2 still count as reaching 0.6
_CUM_TOL = 1e-14


@dataclass(frozen=True, eq=False)
class Distribution:
    """A mean-zero law for the running variable.

    Use :func:`make_distribution` (or :func:`from_sample`) rather than the
    constructor.  ``centering_shift`` is the amount subtracted from the raw
    variable; add it back to map thresholds to the original scale.
    """

    kind: str
    params: dict
    second_moment: float
    support_lo: float
    support_hi: float
    centering_shift: float = 0.0
    symmetric: bool = False
    # all built-ins have E|x|^3 < inf; canonical-form solvers rely on it
    third_moment_finite: bool = True
    values: np.ndarray | None = field(default=None, repr=False)
    masses: np.ndarray | None = field(default=None, repr=False)
    _cum: np.ndarray | None = field(default=None, repr=False)
    _prefix: np.ndarray | None = field(default=None, repr=False)

    # -- basic queries -------------------------------------------------

    @property
    def is_discrete(self) -> bool:
        return self.kind == "empirical"

    @property
    def size(self) -> int:
        return 0 if self.values is None else len(self.values)

    def moment(self, a: int) -> float:
        if a == 0:
            return 1.0
        if a == 1:
            return 0.0
        if a == 2:
            return self.second_moment
        raise ValidationError(f"moment order must be 0, 1 or 2, got {a}")

    def cdf(self, s: float) -> float:
        """Pr(x <= s)."""
        return self.truncated_moment(0, s, include_t=True)

    def cdf_left(self, s: float) -> float:
        """Pr(x < s)."""
        return self.truncated_moment(0, s, include_t=False)

    def atom(self, s: float) -> float:
        """Pr(x = s); zero for the continuous built-ins."""
        if not self.is_discrete or not math.isfinite(s):
            return 0.0
        i = int(np.searchsorted(self.values, s))
        if i < len(self.values) and self.values[i] == s:
            return float(self.masses[i])
        return 0.0

    def pdf(self, x: float) -> float:
        if self.kind == "uniform":
            return 0.5 if -1.0 < x < 1.0 else 0.0
        if self.kind == "gaussian":
            sd = self.params["sd"]
            return math.exp(-0.5 * (x / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
        if self.kind == "weibull":
            k, lam = self.params["shape"], self.params["scale"]
            y = x + self.centering_shift
            if y <= 0:
                return 0.0
            r = y / lam
            return (k / lam) * r ** (k - 1) * math.exp(-(r**k))
        raise ValidationError("empirical distributions have no density")

    # -- quantile --------------------------------------------------------

    def quantile(self, q: float) -> float:
        if not (0.0 <= q <= 1.0) or math.isnan(q):
            raise ValidationError(f"quantile level must lie in [0, 1], got {q}")
        if q == 0.0:
            return self.support_lo
        if q == 1.0:
            return self.support_hi
        if self.kind == "uniform":
            return 2.0 * q - 1.0
        if self.kind == "gaussian":
            return self.params["sd"] * float(special.ndtri(q))
        if self.kind == "weibull":
            k, lam = self.params["shape"], self.params["scale"]
            return lam * (-math.log1p(-q)) ** (1.0 / k) - self.centering_shift
        i = int(np.searchsorted(self._cum, q - _CUM_TOL, side="left"))
        return float(self.values[min(i, len(self.values) - 1)])

    # -- truncated moments -------------------------------------------------

    def truncated_moment(self, a: int, t: float, include_t: bool = False) -> float:
        """E(x**a * 1(x < t)), or with ``x <= t`` when ``include_t``."""
        if a not in (0, 1, 2):
            raise ValidationError(f"moment order must be 0, 1 or 2, got {a}")
        if math.isnan(t):
            raise ValidationError("threshold is NaN")
        if t == math.inf:
            return self.moment(a)
        if t == -math.inf:
            return 0.0
        if self.kind == "uniform":
            s = min(max(t, -1.0), 1.0)
            return (s ** (a + 1) - (-1.0) ** (a + 1)) / (2.0 * (a + 1))
        if self.kind == "gaussian":
            return _gauss_tm(a, t, self.params["sd"])
        if self.kind == "weibull":
            return _weibull_tm(
                a, t, self.params["shape"], self.params["scale"], self.centering_shift
            )
        side = "right" if include_t else "left"
        i = int(np.searchsorted(self.values, t, side=side))
        return float(self._prefix[a, i])

    def upper_moment(self, a: int, t: float, include_t: bool = True) -> float:
        """E(x**a * 1(x >= t)) (``x > t`` when ``include_t`` is false)."""
        return self.moment(a) - self.truncated_moment(a, t, include_t=not include_t)

    # -- sampling -------------------------------------------------------------

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(-1.0, 1.0, n)
        if self.kind == "gaussian":
            return self.params["sd"] * rng.standard_normal(n)
        if self.kind == "weibull":
            return self.params["scale"] * rng.weibull(self.params["shape"], n) - self.centering_shift
        return rng.choice(self.values, size=n, p=self.masses)

    def describe(self) -> dict:
        out = {"kind": self.kind, **self.params}
        if self.is_discrete:
            out["support_size"] = self.size
        out["centering_shift"] = self.centering_shift
        out["second_moment"] = self.second_moment
        return out

    # -- prefix sums (discrete solvers) -----------------------------------

    @property
    def prefix(self) -> np.ndarray:
        """Array ``S`` with ``S[a, k] = sum_{i<k} m_i x_i**a`` (empirical only)."""
        if not self.is_discrete:
            raise ValidationError("prefix sums exist only for empirical distributions")
        return self._prefix


def _gauss_tm(a: int, t: float, sd: float) -> float:
    u = t / sd
    cdf = float(special.ndtr(u))
    phi = math.exp(-0.5 * u * u) / math.sqrt(2 * math.pi)
    if a == 0:
        return cdf
    if a == 1:
        return -sd * phi
    return sd * sd * (cdf - u * phi)


def _weibull_raw_tm(j: int, s: float, k: float, lam: float) -> float:
    """E(y**j * 1(y < s)) for y ~ Weibull(k, lam), via the lower incomplete gamma."""
    if s <= 0:
        return 0.0
    alpha = 1.0 + j / k
    w = (s / lam) ** k
    return lam**j * math.gamma(alpha) * float(special.gammainc(alpha, w))


def _weibull_tm(a: int, t: float, k: float, lam: float, mu: float) -> float:
    s = t + mu
    total = 0.0
    for j in range(a + 1):
        total += math.comb(a, j) * (-mu) ** (a - j) * _weibull_raw_tm(j, s, k, lam)
    return total


def weibull_moment_by_quadrature(dist: Distribution, a: int, t: float) -> float:
    """Independent check of the incomplete-gamma route (adaptive quadrature)."""
    lo = dist.support_lo
    if t <= lo:
        return 0.0
    k, lam = dist.params["shape"], dist.params["scale"]
    mu = dist.centering_shift
    # integrate in u = (y/lam)**k so the k < 1 singularity at y = 0 disappears
    def integrand(u):
        y = lam * u ** (1.0 / k)
        return (y - mu) ** a * math.exp(-u)

    upper = math.inf if t == math.inf else ((t + mu) / lam) ** k
    val, _ = integrate.quad(integrand, 0.0, upper, epsabs=1e-12, epsrel=1e-12, limit=200)
    return val


# -- construction ---------------------------------------------------------


def _check_positive(name, value):
    if not isinstance(value, (int, float)) or not math.isfinite(value) or value <= 0:
        raise ValidationError(f"{name} must be a finite positive number, got {value!r}")


def make_distribution(kind: str, **params) -> Distribution:
    """Build a centred distribution.

    ``kind`` is one of ``uniform``, ``weibull`` (``shape``, ``scale``),
    ``gaussian`` (``sd``) or ``empirical`` (``values``, optional ``masses``).
    """
    kind = kind.lower()
    if kind == "uniform":
        return Distribution("uniform", {}, 1.0 / 3.0, -1.0, 1.0, symmetric=True)
    if kind == "gaussian":
        sd = float(params.get("sd", 1.0))
        _check_positive("sd", sd)
        return Distribution("gaussian", {"sd": sd}, sd * sd, -math.inf, math.inf, symmetric=True)
    if kind == "weibull":
        k = float(params.get("shape", 0.5))
        lam = float(params.get("scale", 1.0))
        _check_positive("shape", k)
        _check_positive("scale", lam)
        mu = lam * math.gamma(1.0 + 1.0 / k)
        var = lam * lam * (math.gamma(1.0 + 2.0 / k) - math.gamma(1.0 + 1.0 / k) ** 2)
        return Distribution(
            "weibull", {"shape": k, "scale": lam}, var, -mu, math.inf, centering_shift=mu
        )
    if kind == "empirical":
        if "values" not in params:
            raise ValidationError("empirical distribution needs 'values'")
        return from_sample(params["values"], params.get("masses"))
    raise ValidationError(f"unknown distribution kind {kind!r}; expected one of {KINDS}")


def from_sample(values, masses=None) -> Distribution:
    """Empirical law of a sample (ties merged into atoms), centred at its mean."""
    x = np.asarray(values, dtype=float).ravel()
    if x.size < 2:
        raise ValidationError("empirical sample needs at least two values")
    if not np.all(np.isfinite(x)):
        raise ValidationError("empirical sample contains non-finite values")
    if masses is None:
        step = np.diff(x)
        if np.all(step >= 0):
            # already sorted: run-length encode in O(n)
            start = np.concatenate(([0], np.flatnonzero(step) + 1))
            uniq = x[start]
            counts = np.diff(np.append(start, x.size))
        else:
            uniq, counts = np.unique(x, return_counts=True)
        n = x.size
        m = counts / n
        cum = np.cumsum(counts) / n
        shift = math.fsum(counts * uniq) / n
    else:
        w = np.asarray(masses, dtype=float).ravel()
        if w.shape != x.shape:
            raise ValidationError("values and masses differ in length")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValidationError("masses must be finite and positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError(f"masses must sum to 1, got {w.sum()!r}")
        order = np.argsort(x, kind="stable")
        xs, ws = x[order], w[order]
        uniq, start = np.unique(xs, return_index=True)
        m = np.add.reduceat(ws, start)
        cum = np.cumsum(m)
        shift = float(np.dot(m, uniq))
    if uniq.size < 2:
        raise DegenerateDistributionError(
            "all sample values are equal: Var(x) = 0 violates the positive-variance assumption"
        )
    centred = uniq - shift
    # centring can in principle collide neighbouring doubles
    if np.any(np.diff(centred) <= 0):
        centred, inv = np.unique(centred, return_inverse=True)
        m = np.bincount(inv, weights=m)
        cum = np.cumsum(m)
    prefix = np.zeros((3, centred.size + 1))
    prefix[0, 1:] = cum
    prefix[1, 1:] = np.cumsum(m * centred)
    prefix[2, 1:] = np.cumsum(m * centred * centred)
    ex2 = float(prefix[2, -1])
    if ex2 <= 0:
        raise DegenerateDistributionError("sample variance is zero")
    symmetric = bool(
        np.allclose(centred, -centred[::-1], rtol=0, atol=1e-12)
        and np.allclose(m, m[::-1], rtol=0, atol=1e-12)
    )
    centred.setflags(write=False)
    m.setflags(write=False)
    return Distribution(
        "empirical",
        {},
        ex2,
        float(centred[0]),
        float(centred[-1]),
        centering_shift=shift,
        symmetric=symmetric,
        values=centred,
        masses=m,
        _cum=cum,
        _prefix=prefix,
    )


def load_sample(path) -> np.ndarray:
    """Read one number per line (plain text or single-column CSV).

    A non-numeric first line is taken as a header; any later non-numeric or
    non-finite row raises :class:`DataFormatError` naming the line.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise type(exc)(exc.errno, f"cannot read data file ({exc.strerror})", str(path)) from exc
    out = []
    first = True
    for lineno, raw in enumerate(text.splitlines(), start=1):
        cell = raw.strip()
        if not cell:
            continue
        header_allowed, first = first, False
        if "," in cell:
            cells = [c.strip() for c in cell.split(",")]
            if len(cells) != 1 and any(cells[1:]):
                raise DataFormatError(
                    f"line {lineno}: expected a single column", line=lineno, path=str(path)
                )
            cell = cells[0]
        cell = cell.strip('"').strip("'")
        try:
            value = float(cell)
        except ValueError:
            if header_allowed:
                continue
            raise DataFormatError(
                f"line {lineno}: non-numeric value {raw!r}", line=lineno, path=str(path)
            ) from None
        if not math.isfinite(value):
            raise DataFormatError(
                f"line {lineno}: non-finite value {raw!r}", line=lineno, path=str(path)
            )
        out.append(value)
    return np.asarray(out, dtype=float)


def parse_distribution(text: str) -> Distribution:
    """Parse CLI descriptors: ``uniform``, ``weibull[:shape,scale]``, ``gaussian[:sd]``."""
    name, _, args = text.partition(":")
    name = name.strip().lower()
    nums = []
    if args.strip():
        try:
            nums = [float(v) for v in args.split(",")]
        except ValueError:
            raise ValidationError(f"bad distribution parameters in {text!r}") from None
    if name == "uniform":
        if nums:
            raise ValidationError("uniform takes no parameters (it is U(-1, 1))")
        return make_distribution("uniform")
    if name == "weibull":
        if len(nums) not in (0, 2):
            raise ValidationError("weibull takes 'weibull:shape,scale'")
        shape, scale = nums if nums else (0.5, 1.0)
        return make_distribution("weibull", shape=shape, scale=scale)
    if name in ("gaussian", "normal"):
        if len(nums) > 1:
            raise ValidationError("gaussian takes 'gaussian:sd'")
        return make_distribution("gaussian", sd=nums[0] if nums else 1.0)
    raise ValidationError(f"unknown distribution {text!r}")
