"""Power lower bounds for the three tests and exceedance-threshold selection."""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import interpolate, optimize, special, stats

from .nulls import exceedance_moments, exceedance_null, exceedance_prob, max_threshold_expansion, z_upper

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
ETA_FLOOR = 1e-300


class InvalidThresholdError(ValueError):
    pass


@dataclass(frozen=True)
class GammaPrior:
    """Gamma(a, b) prior (shape a, rate b) on the Fisher-scale differences."""

    a: float
    b: float
    alpha_mode: float | None = None

    def __post_init__(self):
        if not self.a > 1:
            raise ValueError(f"gamma prior needs shape a > 1 for an interior mode, got {self.a}")
        if not self.b > 0:
            raise ValueError(f"gamma prior needs rate b > 0, got {self.b}")

    @property
    def mode(self) -> float:
        return (self.a - 1.0) / self.b

    @classmethod
    def from_mode(cls, n: int, alpha: float = 0.05, variance: float | None = None) -> "GammaPrior":
        """Mode pinned at ``z_alpha / sqrt(n - 3)``; variance defaults to ``mode**2``.

        With ``a / b^2 = v`` and ``(a - 1) / b = mode`` the shape solves
        ``a^2 - (2 + mode^2 / v) a + 1 = 0`` (larger root).
        """
        mode = z_upper(alpha) / math.sqrt(n - 3.0)
        v = mode * mode if variance is None else variance
        c = 2.0 + mode * mode / v
        a = 0.5 * (c + math.sqrt(c * c - 4.0))
        return cls(a, (a - 1.0) / mode, alpha)

    def quadrature(self, npts: int = 512, lo_q: float = 1e-4, hi_q: float = 1 - 1e-4):
        """Gauss-Legendre nodes and normalised weights over the central prior mass."""
        dist = stats.gamma(self.a, scale=1.0 / self.b)
        lo, hi = dist.ppf([lo_q, hi_q])
        x, wts = np.polynomial.legendre.leggauss(npts)
        nodes = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        weights = 0.5 * (hi - lo) * wts * dist.pdf(nodes)
        return nodes, weights / weights.sum()


@dataclass(frozen=True)
class H1Moments:
    eta: np.ndarray | float
    mu: np.ndarray | float
    sigma2: np.ndarray | float
    underflow: np.ndarray | bool = False


def _partial_moments(d, u):
    """Normalised moments ``E[(|X| - u)^k | |X| > u]``, k = 0..4, for X ~ N(d, 1).

    Uses ``K_k(a) = E[(Y - a)^k ; Y > a] / Pr(Y > a)`` with the recursion
    ``K_k = (k - 1) K_{k-2} - a K_{k-1}`` for each tail.
    """
    d = np.asarray(d, dtype=float)
    u = np.asarray(u, dtype=float)
    out = []
    log_up = special.log_ndtr(d - u)
    log_lo = special.log_ndtr(-d - u)
    log_p = np.logaddexp(log_up, log_lo)
    tails = []
    for a, log_w in ((u - d, log_up), (u + d, log_lo)):
        mills = np.exp(-0.5 * a * a - LOG_SQRT_2PI - special.log_ndtr(-a))
        k = [np.ones_like(a), mills - a]
        for j in range(2, 5):
            k.append((j - 1) * k[j - 2] - a * k[j - 1])
        tails.append((np.exp(log_w - log_p), k))
    (w_up, k_up), (w_lo, k_lo) = tails
    for j in range(5):
        out.append(w_up * k_up[j] + w_lo * k_lo[j])
    return out, log_p


def h1_truncated_moments(d, u, w: int) -> H1Moments:
    """Exceedance probability and conditional mean/variance of ``(|X| - uw)^2`` for X ~ N(d, 1).

    ``d`` (non-centrality, ``delta * sqrt(n - 3)``) and ``u`` broadcast.
    """
    if np.any(np.asarray(u) < 0):
        raise ValueError("threshold must be non-negative")
    d = np.asarray(d, dtype=float)
    u = np.asarray(u, dtype=float)
    pm, log_p = _partial_moments(d, u)
    _, m1, m2, m3, m4 = pm
    underflow = log_p < math.log(ETA_FLOOR)
    eta = np.where(underflow, ETA_FLOOR, np.exp(log_p))
    phi_m = np.exp(-0.5 * (u - d) ** 2 - LOG_SQRT_2PI - log_p)
    phi_p = np.exp(-0.5 * (u + d) ** 2 - LOG_SQRT_2PI - log_p)
    big_a = u * (phi_m + phi_p)
    big_b = d * (phi_m - phi_p)
    mean_sq = 1.0 + d * d + big_a + big_b
    if w == 0:
        mu = mean_sq
        e_x4 = m4 + 4 * u * m3 + 6 * u * u * m2 + 4 * u ** 3 * m1 + u ** 4
        sigma2 = e_x4 - mu * mu
    elif w == 1:
        # P_up - P_lo over P, i.e. (Phi(d-u) - Phi(-d-u)) / P
        tilt = np.exp(special.log_ndtr(d - u) - log_p) - np.exp(special.log_ndtr(-d - u) - log_p)
        big_e = 2 * u * (phi_m + phi_p) + 2 * d * u * tilt
        mu = 1.0 + d * d + u * u + big_a + big_b - big_e
        sigma2 = m4 - m2 * m2
    else:
        raise ValueError(f"w must be 0 or 1, got {w}")
    sigma2 = np.maximum(sigma2, 0.0)
    if mu.ndim == 0:
        return H1Moments(float(eta), float(mu), float(sigma2), bool(underflow))
    return H1Moments(eta, mu, sigma2, underflow)


def _null_block(u, w):
    eta0 = exceedance_prob(u)
    mu_w, s2_w = exceedance_moments(u, w)
    return eta0, mu_w, s2_w, eta0 * ((1.0 - eta0) * mu_w ** 2 + s2_w)


def sigma_h1(deltas, u: float, w: int, m: int, n: int) -> float:
    """Variance of the exceedance statistic under an explicit alternative (weak dependence)."""
    deltas = np.asarray(deltas, dtype=float).ravel()
    s = deltas.size
    _, _, _, per_null = _null_block(u, w)
    total = (m - s) * per_null
    if s:
        h = h1_truncated_moments(deltas * math.sqrt(n - 3.0), u, w)
        eta, mu, s2 = map(np.atleast_1d, (h.eta, h.mu, h.sigma2))
        total += float(np.sum(eta * ((1.0 - eta) * mu * mu + s2)))
    return total


@dataclass(frozen=True)
class PowerBound:
    bound: float | None
    satisfied: bool
    argument: float


def _bound_from_argument(arg):
    if arg < 0:
        return PowerBound(None, False, arg)
    return PowerBound(float(min(1.0, max(0.0, -math.expm1(-0.5 * arg * arg)))), True, arg)


def power_bound_squares(deltas, n: int, m: int, gamma2bar: float = 0.0,
                        gamma2bar_h1: float = 0.0, alpha: float = 0.05,
                        extra_s_factor: bool = False) -> PowerBound:
    """Lower bound ``1 - exp(-A^2/2)`` for the average-of-squares test.

    The H1 variance term is ``4 (n - 3) delta0^2 / m``, the exact variance
    contribution of the non-null squares; it makes ``A`` coincide with the
    exceedance argument at ``u = 0, w = 0``. ``extra_s_factor=True`` multiplies
    that term by ``s`` (a smaller, more conservative bound).
    """
    deltas = np.asarray(deltas, dtype=float).ravel()
    deltas = deltas[deltas != 0]
    s = deltas.size
    delta0_sq = float(np.sum(deltas ** 2))
    z = z_upper(alpha)
    num = (n - 3) / m * delta0_sq - z * math.sqrt(2.0 / m * (1.0 + (m - 1) * gamma2bar / 2.0))
    h1_term = 4.0 * (s if extra_s_factor else 1) * (n - 3) / m * delta0_sq
    den = m ** -0.5 * math.sqrt(2.0 + h1_term + (m - 1) * gamma2bar_h1)
    return _bound_from_argument(num / den)


def power_bound_max(deltas, n: int, m: int, alpha: float = 0.05,
                    branch: str = "fixed") -> PowerBound:
    """Lower bound for the maximum test.

    ``branch="fixed"`` uses the largest difference; ``branch="growing"`` (number
    of signals tending to infinity) uses the smallest one.
    """
    deltas = np.abs(np.asarray(deltas, dtype=float).ravel())
    deltas = deltas[deltas != 0]
    if deltas.size == 0:
        return PowerBound(None, False, -math.inf)
    root = math.sqrt(n - 3.0)
    boundary = max_threshold_expansion(m, alpha) / root
    a_m = math.sqrt(2.0 * math.log(2.0 * m))
    if branch == "fixed":
        top = float(deltas.max())
        if not top > boundary:
            return PowerBound(None, False, top - boundary)
        gap = root * top - a_m
        return PowerBound(float(-math.expm1(-0.5 * gap * gap)), True, gap)
    if branch == "growing":
        low = float(deltas.min())
        if not low > boundary:
            return PowerBound(None, False, low - boundary)
        s = deltas.size
        gap = root * low - a_m
        inner = math.sqrt(2.0 * math.log(2.0 * s)) * gap
        value = -math.expm1(-math.exp(min(inner, 700.0)))
        return PowerBound(float(value), True, gap)
    raise ValueError(f"branch must be 'fixed' or 'growing', got {branch!r}")


def check_threshold(u: float, m: int):
    limit = math.sqrt(2.0 * math.log(2.0 * m))
    if not 0 <= u < limit:
        raise InvalidThresholdError(f"threshold u={u} must lie in [0, sqrt(2 log 2m)={limit:.4f})")


def exceedance_argument(deltas, u: float, w: int, n: int, m: int, alpha: float = 0.05) -> float:
    """Signal-to-noise ratio ``B`` whose Gaussian tail gives the exceedance power bound."""
    deltas = np.asarray(deltas, dtype=float).ravel()
    deltas = deltas[deltas != 0]
    s = deltas.size
    null = exceedance_null(m, _cfg(u, w))
    signal = 0.0
    if s:
        h = h1_truncated_moments(deltas * math.sqrt(n - 3.0), u, w)
        signal = float(np.sum(np.atleast_1d(h.eta) * np.atleast_1d(h.mu)))
    num = signal - s * null.eta0 * null.mu_w - z_upper(alpha) * null.sd
    return num / math.sqrt(sigma_h1(deltas, u, w, m, n))


def _cfg(u, w):
    from .stats import ExceedanceConfig
    return ExceedanceConfig(float(u), int(w))


def power_bound_exceed(deltas, u: float, w: int, n: int, m: int, alpha: float = 0.05) -> PowerBound:
    check_threshold(u, m)
    return _bound_from_argument(exceedance_argument(deltas, u, w, n, m, alpha))


# --- threshold selection --------------------------------------------------------

def exceedance_argument_grid(delta_nodes, s: int, u_grid, w: int, n: int, m: int,
                             alpha: float = 0.05) -> np.ndarray:
    """``B`` on a (u, delta) grid when all s non-null differences equal delta."""
    u = np.asarray(u_grid, dtype=float)[:, None]
    delta = np.asarray(delta_nodes, dtype=float)[None, :]
    h = h1_truncated_moments(delta * math.sqrt(n - 3.0), u, w)
    eta0 = 2.0 * special.ndtr(-u)
    mills = np.exp(-0.5 * u * u - LOG_SQRT_2PI - special.log_ndtr(-u))
    if w == 0:
        mu_w = 1.0 + u * mills
        s2_w = 3.0 + (u ** 3 + 3 * u) * mills - mu_w ** 2
    else:
        mu_w = u * u + 1.0 - u * mills
        s2_w = 3.0 + u ** 4 + 6 * u * u - (5 * u + u ** 3) * mills - mu_w ** 2
    per_null = eta0 * ((1.0 - eta0) * mu_w ** 2 + s2_w)
    sd_h0 = np.sqrt(m * per_null)
    num = s * h.eta * h.mu - s * eta0 * mu_w - z_upper(alpha) * sd_h0
    var_h1 = s * h.eta * ((1.0 - h.eta) * h.mu ** 2 + h.sigma2) + (m - s) * per_null
    return num / np.sqrt(var_h1)


def integrated_argument(n: int, m: int, rho_s: float, w: int, prior: GammaPrior,
                        alpha: float = 0.05, step: float = 0.01, npts: int = 512):
    """(u_grid, prior-averaged B) over ``[0, sqrt(2 log 2m))``."""
    s = int(round(m * rho_s))
    u_grid = np.arange(0.0, math.sqrt(2.0 * math.log(2.0 * m)), step)
    nodes, weights = prior.quadrature(npts)
    vals = exceedance_argument_grid(nodes, s, u_grid, w, n, m, alpha) @ weights
    return u_grid, vals


def select_threshold(n: int, m: int, rho_s_hat: float, w: int = 0, prior: GammaPrior | None = None,
                     alpha: float = 0.05, step: float = 0.01, cap: bool = True) -> float:
    """Threshold maximising the prior-averaged power argument, capped at ``z_alpha``.

    Ties resolve to the smallest threshold. With no expected signal
    (``round(m * rho_s_hat) == 0``) the cap is returned.
    """
    if not 0.0 <= rho_s_hat <= 1.0:
        raise ValueError(f"rho_s_hat must lie in [0, 1], got {rho_s_hat}")
    if prior is None:
        prior = GammaPrior.from_mode(n, alpha)
    z = z_upper(alpha)
    s = int(round(m * rho_s_hat))
    if s == 0:
        return z
    best = _argmax_threshold(n, m, s, w, prior, alpha, step)
    return min(best, z) if cap else best


@lru_cache(maxsize=4096)
def _argmax_threshold(n, m, s, w, prior, alpha, step):
    u_grid, vals = integrated_argument(n, m, s / m, w, prior, alpha, step)
    return float(u_grid[int(np.argmax(vals))])


# --- proportion of non-null pairs ------------------------------------------------

LAMBDA_GRID = np.round(np.arange(0.0, 0.951, 0.05), 2)


@lru_cache(maxsize=8)
def _smoother_lam(df: float = 3.0) -> float:
    """Penalty giving a cubic smoothing spline with ``df`` effective degrees of freedom on LAMBDA_GRID."""
    x = LAMBDA_GRID
    eye = np.eye(x.size)

    def trace(log_lam):
        lam = math.exp(log_lam)
        return sum(interpolate.make_smoothing_spline(x, eye[i], lam=lam)(x[i]) for i in range(x.size))

    return math.exp(optimize.brentq(lambda t: trace(t) - df, -20.0, 10.0, xtol=1e-10))


def storey_pi0(pvalues, lambdas=LAMBDA_GRID, df: float = 3.0) -> float:
    """Storey's pi0 with a cubic-spline smoother (df = 3) read off at the largest lambda."""
    p = np.asarray(pvalues, dtype=float).ravel()
    if p.size == 0:
        raise ValueError("need at least one p-value")
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    lambdas = np.asarray(lambdas, dtype=float)
    pi0 = np.array([np.count_nonzero(p > lam) / (p.size * (1.0 - lam)) for lam in lambdas])
    if lambdas.size < 4:
        return float(min(1.0, pi0[-1]))
    lam = _smoother_lam(df) if np.array_equal(lambdas, LAMBDA_GRID) else None
    spline = interpolate.make_smoothing_spline(lambdas, pi0, lam=lam)
    return float(min(max(spline(lambdas[-1]), 0.0), 1.0))


def estimate_rho_s(pvalues) -> float:
    return float(min(1.0, max(0.0, 1.0 - storey_pi0(pvalues))))


def pair_pvalues(d) -> np.ndarray:
    """Two-sided normal p-values ``2(1 - Phi(|d_t|))``."""
    d = np.asarray(getattr(d, "d", d), dtype=float)
    return 2.0 * special.ndtr(-np.abs(d))


# --- Monte-Carlo power ----------------------------------------------------------

def monte_carlo_power(deltas, n: int, m: int, kind: str, u: float = 0.0, w: int = 0,
                      alpha: float = 0.05, sims: int = 2000, seed: int = 0,
                      chunk: int = 200) -> tuple[float, float]:
    """(power, standard error) of an analytic-null test under the Gaussian d-model.

    The non-null entries are ``N(delta_t sqrt(n - 3), 1)``, the remaining
    ``m - s`` entries ``N(0, 1)``, all independent. Rejection uses the
    asymptotic-independence quantile of the chosen statistic.
    """
    from .nulls import (GumbelNull, SquaresNull, exceedance_quantile, gumbel_quantile,
                        squares_quantile)
    deltas = np.asarray(deltas, dtype=float).ravel()
    means = np.zeros(m)
    means[:deltas.size] = deltas * math.sqrt(n - 3.0)
    kind = kind.upper()
    if kind == "S":
        crit = squares_quantile(SquaresNull.asymptotic(m), alpha)
    elif kind == "M":
        crit = gumbel_quantile(GumbelNull.asymptotic(m), alpha)
    elif kind == "E":
        crit = exceedance_quantile(exceedance_null(m, _cfg(u, w)), alpha)
    else:
        raise ValueError(f"kind must be S, M or E, got {kind!r}")
    rng = np.random.default_rng(seed)
    hits = 0
    for start in range(0, sims, chunk):
        a = np.abs(rng.standard_normal((min(chunk, sims - start), m)) + means)
        if kind == "S":
            stat = np.mean(a * a, axis=1)
        elif kind == "M":
            stat = a.max(axis=1)
        else:
            shifted = np.where(a > u, a - u * w, 0.0)
            stat = np.sum(shifted * shifted, axis=1)
        hits += int(np.count_nonzero(stat >= crit))
    power = hits / sims
    return power, math.sqrt(max(power * (1.0 - power), 1.0 / sims) / sims)
