"""Null distributions and p-values for the three statistics.

Regimes: ``AI`` (asymptotic independence, analytic), ``AD`` (dependence
corrected with permutation-estimated parameters, see :mod:`corrdiff.permutation`)
and ``NP`` (empirical permutation distribution).
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .stats import ExceedanceConfig, StatisticValue, StatKind


def norm_sf(z):
    return special.ndtr(-np.asarray(z, dtype=float))


def z_upper(alpha: float) -> float:
    """Upper-tail standard normal quantile, ``Pr(Z > z) = alpha``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return float(-special.ndtri(alpha))


def _mills(u):
    """phi(u) / (1 - Phi(u)), computed on the log scale."""
    u = np.asarray(u, dtype=float)
    return np.exp(-0.5 * u * u - 0.5 * math.log(2 * math.pi) - special.log_ndtr(-u))


def _check_kind(stat, kind):
    if stat.kind is not kind:
        raise ValueError(f"expected a {kind.name} statistic, got {stat.kind.name}")


# --- average of squares -----------------------------------------------------

@dataclass(frozen=True)
class SquaresNull:
    mu2: float
    mu4: float
    gamma2bar: float
    m: int

    @property
    def variance(self) -> float:
        return (self.mu4 - self.mu2 ** 2) / self.m + (1.0 - 1.0 / self.m) * self.gamma2bar

    @classmethod
    def asymptotic(cls, m: int) -> "SquaresNull":
        return cls(1.0, 3.0, 0.0, m)


def _squares_sd(null: SquaresNull) -> float:
    var = null.variance
    if not var > 0:
        raise ValueError(f"non-positive null variance {var} for the squares statistic")
    return math.sqrt(var)


def squares_pvalue(stat: StatisticValue, null: SquaresNull) -> float:
    _check_kind(stat, StatKind.SQUARES)
    return float(norm_sf((stat.value - null.mu2) / _squares_sd(null)))


def squares_quantile(null: SquaresNull, alpha: float) -> float:
    return null.mu2 + z_upper(alpha) * _squares_sd(null)


# --- maximum -----------------------------------------------------------------

def gumbel_scale(m: int) -> float:
    return 1.0 / math.sqrt(2.0 * math.log(2.0 * m))


@lru_cache(maxsize=4096)
def reference_location(m: int) -> float:
    """Gumbel location (scale fixed at ``gumbel_scale(m)``) of max |Z_t| for m iid N(0,1).

    Defined as the limit of the fixed-scale location MLE under independence,
    ``-scale * log E[exp(-T / scale)]``, evaluated by quadrature against the
    exact law ``(2 Phi(x) - 1)^m``. Serves as the theta = 1 reference.
    """
    if m < 1:
        raise ValueError("m must be positive")
    sig = gumbel_scale(m)
    a = 1.0 / sig
    b = a - (math.log(math.log(2.0 * m)) + math.log(4.0 * math.pi)) / (2.0 * a)

    def integrand(x):
        cdf_minus = math.exp((m - 1) * math.log(max(2.0 * special.ndtr(x) - 1.0, 1e-300)))
        dens = 2.0 * m * math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
        return math.exp(-(x - b) / sig) * cdf_minus * dens

    upper = b + 40.0 * sig + 5.0
    val, _ = integrate.quad(integrand, 0.0, upper, points=[max(b, 0.1)], limit=400)
    return b - sig * math.log(val)


@dataclass(frozen=True)
class GumbelNull:
    """Gumbel law for the maximum with an extremal-index correction.

    ``Pr(T <= x) = exp(-theta * exp(-(x - location) / scale))``.
    """

    location: float
    scale: float
    theta_m: float
    m: int

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"Gumbel scale must be positive, got {self.scale}")
        if not 0.0 < self.theta_m <= 1.0:
            raise ValueError(f"extremal index must lie in (0, 1], got {self.theta_m}")

    @property
    def effective_location(self) -> float:
        return self.location + self.scale * math.log(self.theta_m)

    @classmethod
    def asymptotic(cls, m: int, theta_m: float = 1.0) -> "GumbelNull":
        return cls(reference_location(m), gumbel_scale(m), theta_m, m)


def gumbel_pvalue(stat: StatisticValue, null: GumbelNull) -> float:
    _check_kind(stat, StatKind.MAX)
    z = (stat.value - null.location) / null.scale
    return float(-np.expm1(-null.theta_m * np.exp(-z)))


def gumbel_quantile(null: GumbelNull, alpha: float) -> float:
    """Rejection threshold t with ``Pr(T_M >= t | H0) = alpha``."""
    if not 0.0 < alpha < 0.5:
        raise ValueError(f"alpha must lie in (0, 1/2), got {alpha}")
    return null.effective_location - null.scale * math.log(-math.log1p(-alpha))


def max_threshold_expansion(m: int, alpha: float, theta_m: float = 1.0) -> float:
    """Leading-order expansion ``sqrt(2 log 2m) - [log theta + log(-log alpha)] / sqrt(2 log 2m)``.

    This is the boundary appearing in the power condition for the maximum
    test; ``alpha`` enters through ``log(-log alpha)`` as written there.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    a = math.sqrt(2.0 * math.log(2.0 * m))
    return a - (math.log(theta_m) + math.log(-math.log(alpha))) / a


# --- sum of exceedances --------------------------------------------------------

def exceedance_moments(u: float, w: int) -> tuple[float, float]:
    """Mean and variance of ``(|Z| - u w)^2`` given ``|Z| > u`` for standard normal Z."""
    if u < 0:
        raise ValueError("threshold must be non-negative")
    lam = float(_mills(u))
    if w == 0:
        mu = 1.0 + u * lam
        var = 3.0 + (u ** 3 + 3.0 * u) * lam - mu * mu
    elif w == 1:
        mu = u * u + 1.0 - u * lam
        var = 3.0 + u ** 4 + 6.0 * u * u - (5.0 * u + u ** 3) * lam - mu * mu
    else:
        raise ValueError(f"w must be 0 or 1, got {w}")
    return mu, var


def exceedance_prob(u: float) -> float:
    return float(2.0 * special.ndtr(-u))


@dataclass(frozen=True)
class ExceedanceNull:
    cfg: ExceedanceConfig
    eta0: float
    phibar: float
    mu_w: float
    sigma2_w: float
    mu_mw: float
    sigma2_mw: float
    m: int

    @property
    def sd(self) -> float:
        return math.sqrt(self.sigma2_mw)

    def with_variance(self, sigma2_mw: float) -> "ExceedanceNull":
        if not sigma2_mw > 0:
            raise ValueError(f"exceedance null variance must be positive, got {sigma2_mw}")
        return ExceedanceNull(self.cfg, self.eta0, self.phibar, self.mu_w, self.sigma2_w,
                              self.mu_mw, sigma2_mw, self.m)


def exceedance_null(m: int, cfg: ExceedanceConfig, eta0: float | None = None,
                    phibar: float | None = None, gamma_sum: float = 0.0) -> ExceedanceNull:
    """Normal approximation of the exceedance statistic under H0.

    ``eta0`` defaults to ``2(1 - Phi(u))`` and ``phibar`` to ``eta0**2``
    (independence), in which case the variance reduces to
    ``m eta0 {(1 - eta0) mu_w^2 + sigma_w^2}``.
    """
    if eta0 is None:
        eta0 = exceedance_prob(cfg.u)
    if phibar is None:
        phibar = eta0 * eta0
    mu_w, s2_w = exceedance_moments(cfg.u, cfg.w)
    mu = m * eta0 * mu_w
    if phibar == eta0 * eta0 and gamma_sum == 0.0:
        var = m * eta0 * ((1.0 - eta0) * mu_w ** 2 + s2_w)
    else:
        var = (m * (eta0 * s2_w + mu_w ** 2 * (eta0 - phibar))
               + m * m * mu_w ** 2 * (phibar - eta0 ** 2) + gamma_sum)
    if not var > 0:
        raise ValueError(f"exceedance null variance must be positive, got {var}")
    return ExceedanceNull(cfg, eta0, phibar, mu_w, s2_w, mu, var, m)


def exceedance_pvalue(stat: StatisticValue, null: ExceedanceNull) -> float:
    _check_kind(stat, StatKind.EXCEEDANCE)
    if stat.cfg is not None and stat.cfg != null.cfg:
        raise ValueError(f"statistic config {stat.cfg} does not match null config {null.cfg}")
    return float(norm_sf((stat.value - null.mu_mw) / null.sd))


def exceedance_quantile(null: ExceedanceNull, alpha: float) -> float:
    return null.mu_mw + z_upper(alpha) * null.sd


# --- empirical ---------------------------------------------------------------

def empirical_pvalue(stat: StatisticValue | float, replicates, kind: StatKind | None = None) -> float:
    """Add-one permutation p-value ``(1 + #{T_i >= t}) / (B + 1)``."""
    if isinstance(stat, StatisticValue):
        if kind is not None and StatKind(kind) is not stat.kind:
            raise ValueError(f"replicates are {StatKind(kind).name}, statistic is {stat.kind.name}")
        value = stat.value
    else:
        value = float(stat)
    reps = np.asarray(replicates, dtype=float).ravel()
    if reps.size < 1:
        raise ValueError("need at least one replicate")
    return float((1 + np.count_nonzero(reps >= value)) / (reps.size + 1))
