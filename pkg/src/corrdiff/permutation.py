"""Paired-swap permutation replicates and dependence-corrected null estimates.

Each replicate swaps every observation pair (x_k, y_k) between the two
conditions with probability 1/2 and recomputes the full standardized
difference vector. Replicate ``i`` draws its swap mask from a generator seeded
by ``(seed, i)``, so output does not depend on batching or worker count.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .core import PairedDataset, PairIndexSet, correlation_blocks, differences_from_blocks
from .nulls import (ExceedanceNull, GumbelNull, SquaresNull, exceedance_null, gumbel_scale,
                    reference_location)
from .stats import ExceedanceConfig, StatKind, row_sums

DEFAULT_B_AD = 200
DEFAULT_B_NP = 1000


class InsufficientReplicatesError(ValueError):
    pass


def swap_mask(seed: int, index: int, n: int) -> np.ndarray:
    key = np.array([int(seed) % 2 ** 64, int(index)], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    return rng.integers(0, 2, size=n).astype(bool)


def swap_masks(seed: int, b: int, n: int, start: int = 0) -> np.ndarray:
    return np.stack([swap_mask(seed, i, n) for i in range(start, start + b)]) if b else \
        np.zeros((0, n), dtype=bool)


def replicate_differences(data: PairedDataset, masks) -> np.ndarray:
    """Standardized differences for a stack of swap masks, shape (len(masks), m)."""
    masks = np.asarray(masks, dtype=bool)
    sel = masks[:, :, None]
    xb = np.where(sel, data.y[None], data.x[None])
    yb = np.where(sel, data.x[None], data.y[None])
    idx = PairIndexSet.for_dimension(data.p)
    r1, r2, r12 = correlation_blocks(xb, yb, data.gene_ids)
    d, _, _, _ = differences_from_blocks(r1, r2, r12, data.n, idx.rows, idx.cols, data.gene_ids)
    return d


def _chunk_size(p: int, n: int, budget: float = 3e7) -> int:
    per_rep = 12.0 * p * p + 4.0 * n * p
    return max(1, int(budget // per_rep))


def _map_chunks(data, b, seed, workers, chunk, fn):
    chunk = chunk or _chunk_size(data.p, data.n)
    starts = list(range(0, b, chunk))

    def run(start):
        masks = swap_masks(seed, min(chunk, b - start), data.n, start)
        return fn(masks, replicate_differences(data, masks))

    if workers and workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, starts))
    return [run(s) for s in starts]


@dataclass
class ReplicateMatrix:
    dtilde: np.ndarray
    seed: int | None
    swap_masks: np.ndarray | None = field(default=None, repr=False)

    @property
    def b(self) -> int:
        return self.dtilde.shape[0]

    @property
    def m(self) -> int:
        return self.dtilde.shape[1]


def paired_permute(data: PairedDataset, b: int, seed: int = 0, workers: int = 1,
                   masks: np.ndarray | None = None, chunk: int | None = None) -> ReplicateMatrix:
    if masks is not None:
        masks = np.atleast_2d(np.asarray(masks, dtype=bool))
        return ReplicateMatrix(replicate_differences(data, masks), seed, masks)
    if b < 1:
        raise ValueError(f"need b >= 1 replicates, got {b}")
    parts = _map_chunks(data, b, seed, workers, chunk, lambda mk, d: (mk, d))
    return ReplicateMatrix(np.concatenate([d for _, d in parts]), seed,
                           np.concatenate([mk for mk, _ in parts]))


@dataclass
class ReplicateStats:
    """Per-replicate summaries; enough for every estimator and empirical null.

    Lets large gene sets be processed without holding the B x m matrix.
    """

    sum_sq: np.ndarray
    sum_fourth: np.ndarray
    max_abs: np.ndarray
    exceed: dict
    m: int
    seed: int | None = None

    @property
    def b(self) -> int:
        return self.sum_sq.size

    @classmethod
    def from_differences(cls, dtilde, cfgs=(), seed=None) -> "ReplicateStats":
        dtilde = np.atleast_2d(np.asarray(dtilde, dtype=float))
        a = np.abs(dtilde)
        sq = a * a
        exceed = {}
        for cfg in cfgs:
            shifted = np.where(a > cfg.u, a - cfg.u * cfg.w, 0.0)
            exceed[cfg] = row_sums(shifted * shifted)
        return cls(row_sums(sq), row_sums(sq * sq), a.max(axis=1), exceed, dtilde.shape[1], seed)

    @classmethod
    def concat(cls, parts, seed=None) -> "ReplicateStats":
        keys = parts[0].exceed.keys()
        return cls(np.concatenate([q.sum_sq for q in parts]),
                   np.concatenate([q.sum_fourth for q in parts]),
                   np.concatenate([q.max_abs for q in parts]),
                   {k: np.concatenate([q.exceed[k] for q in parts]) for k in keys},
                   parts[0].m, seed)

    def head(self, b: int) -> "ReplicateStats":
        return ReplicateStats(self.sum_sq[:b], self.sum_fourth[:b], self.max_abs[:b],
                              {k: v[:b] for k, v in self.exceed.items()}, self.m, self.seed)


def permutation_stats(data: PairedDataset, b: int, seed: int = 0, cfgs=(), workers: int = 1,
                      chunk: int | None = None) -> ReplicateStats:
    """Streaming version of :func:`paired_permute` followed by row summaries."""
    if b < 1:
        raise ValueError(f"need b >= 1 replicates, got {b}")
    cfgs = tuple(cfgs)
    parts = _map_chunks(data, b, seed, workers, chunk,
                        lambda mk, d: ReplicateStats.from_differences(d, cfgs))
    return ReplicateStats.concat(parts, seed)


def _as_stats(rep, cfgs=()) -> ReplicateStats:
    if isinstance(rep, ReplicateStats):
        missing = [c for c in cfgs if c not in rep.exceed]
        if missing:
            raise KeyError(f"replicate summaries lack exceedance configs {missing}")
        return rep
    return ReplicateStats.from_differences(rep.dtilde, cfgs, rep.seed)


def replicate_statistics(rep, kind, cfg: ExceedanceConfig | None = None) -> np.ndarray:
    kind = StatKind(kind)
    stats = _as_stats(rep, (cfg,) if kind is StatKind.EXCEEDANCE else ())
    if kind is StatKind.SQUARES:
        return stats.sum_sq / stats.m
    if kind is StatKind.MAX:
        return stats.max_abs.copy()
    return stats.exceed[cfg].copy()


# --- estimators ----------------------------------------------------------------

def estimate_squares_params(rep) -> tuple[float, float, float]:
    """(mu2, mu4, gamma2bar) from permutation replicates.

    ``gamma2bar`` is obtained by solving ``var(T_S) = (mu4 - mu2^2)/m + (1 - 1/m) gamma2bar``
    for the across-replicate variance of the replicate average of squares.
    """
    stats = _as_stats(rep)
    if stats.b < 2:
        raise InsufficientReplicatesError(f"need at least 2 replicates, got {stats.b}")
    m = stats.m
    mu2 = float(np.mean(stats.sum_sq) / m)
    mu4 = float(np.mean(stats.sum_fourth) / m)
    var_ts = float(np.var(stats.sum_sq / m, ddof=1))
    gamma = (var_ts - (mu4 - mu2 * mu2) / m) / (1.0 - 1.0 / m) if m > 1 else 0.0
    return mu2, mu4, gamma


def fit_gumbel_location(maxima, scale: float) -> float:
    """Closed-form location MLE of a Gumbel sample with known scale."""
    x = np.asarray(maxima, dtype=float)
    return float(-scale * (special.logsumexp(-x / scale) - math.log(x.size)))


def fit_gumbel_null(rep, min_b: int = 20) -> tuple[float, float]:
    """Returns (location_hat, theta_hat) with scale fixed at ``1/sqrt(2 log 2m)``.

    ``theta_hat = exp((location_hat - reference_location(m)) / scale)``, clipped to (0, 1].
    """
    stats = _as_stats(rep)
    if stats.b < min_b:
        raise InsufficientReplicatesError(f"need at least {min_b} replicates, got {stats.b}")
    scale = gumbel_scale(stats.m)
    loc = fit_gumbel_location(stats.max_abs, scale)
    theta = math.exp(min(0.0, (loc - reference_location(stats.m)) / scale))
    return loc, max(theta, 1e-300)


def fit_exceedance_variance(rep, cfg: ExceedanceConfig, min_b: int = 20) -> float:
    stats = _as_stats(rep, (cfg,))
    if stats.b < min_b:
        raise InsufficientReplicatesError(f"need at least {min_b} replicates, got {stats.b}")
    mu = exceedance_null(stats.m, cfg).mu_mw
    sigma2 = float(np.mean((stats.exceed[cfg] - mu) ** 2))
    if not sigma2 > 0:
        raise ValueError("zero variance across permutation replicates of the exceedance statistic")
    return sigma2


@dataclass
class PermutationEstimates:
    mu2_hat: float
    mu4_hat: float
    gamma2bar_hat: float
    gumbel_location_hat: float
    theta_m_hat: float
    sigma2_mw_hat: dict
    replicate_stats: ReplicateStats = field(repr=False)

    def squares_null(self) -> SquaresNull:
        return SquaresNull(self.mu2_hat, self.mu4_hat, self.gamma2bar_hat,
                           self.replicate_stats.m)

    def gumbel_null(self) -> GumbelNull:
        m = self.replicate_stats.m
        scale = gumbel_scale(m)
        # location + scale*log(theta) reproduces the fitted location exactly
        loc = self.gumbel_location_hat - scale * math.log(self.theta_m_hat)
        return GumbelNull(loc, scale, self.theta_m_hat, m)

    def exceedance_null(self, cfg: ExceedanceConfig) -> ExceedanceNull:
        return exceedance_null(self.replicate_stats.m, cfg).with_variance(self.sigma2_mw_hat[cfg])


def estimate_null_parameters(rep, cfgs=()) -> PermutationEstimates:
    stats = _as_stats(rep, cfgs)
    mu2, mu4, gamma = estimate_squares_params(stats)
    loc, theta = fit_gumbel_null(stats)
    sig = {cfg: fit_exceedance_variance(stats, cfg) for cfg in cfgs}
    return PermutationEstimates(mu2, mu4, gamma, loc, theta, sig, stats)
