"""Simulation models for paired data and the size/power/uniformity harness.

Dense model: X ~ N(0, S1), Y ~ N(0, S2) drawn independently, where S is a
ridge-regularised rough correlation matrix; under H1 the between-block
entries of S2 are zeroed.

Sparse model: (X_k, Y_k) ~ N(0, J^-1) for a 2p x 2p joint precision J built
from power-law graphs, with a diagonal cross-condition coupling block.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import networkx as nx
import numpy as np
from scipy import linalg, stats

from .core import PairedDataset
from .inference import ALL_TESTS, Regime, TestSpec, run_tests
from .permutation import DEFAULT_B_AD, DEFAULT_B_NP

H0, H1 = "H0", "H1"
MAX_RETRIES = 10


def _check_hypothesis(h):
    if h not in (H0, H1):
        raise ValueError(f"hypothesis must be 'H0' or 'H1', got {h!r}")


def _rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(key)))


def replicate_seed(seed: int, replicate: int) -> int:
    """Integer seed for the permutation engine of one replicate."""
    return int(np.random.SeedSequence([int(seed), int(replicate)]).generate_state(1, np.uint64)[0])


def to_correlation(sigma):
    s = np.sqrt(np.diag(sigma))
    out = sigma / np.outer(s, s)
    np.fill_diagonal(out, 1.0)
    return out


def _check_spd(mat, label):
    eig = np.linalg.eigvalsh(mat)
    if not eig[0] > 0:
        raise np.linalg.LinAlgError(f"{label} is not positive definite (min eigenvalue {eig[0]:.3g})")


# --- identity model ---------------------------------------------------------------

@dataclass(frozen=True)
class IidModelConfig:
    """Independent standard normal noise in both conditions (Sigma = I)."""

    p: int = 40
    n: int = 100
    base_seed: int = 0
    hypothesis: str = H0

    def __post_init__(self):
        if self.hypothesis != H0:
            raise ValueError("the identity model only has a null configuration")

    name = "iid"


class IidModel:
    def __init__(self, cfg: IidModelConfig):
        self.cfg = cfg

    def sample(self, replicate: int = 0) -> PairedDataset:
        rng = _rng(self.cfg.base_seed, 1, replicate)
        return PairedDataset(rng.standard_normal((self.cfg.n, self.cfg.p)),
                             rng.standard_normal((self.cfg.n, self.cfg.p)))


# --- dense model --------------------------------------------------------------------

@dataclass(frozen=True)
class DenseModelConfig:
    p: int = 50
    n: int = 50
    lam: float = 0.5
    hypothesis: str = H0
    block_sizes: tuple = (40, 10)
    base_seed: int = 0
    n0: int = 60
    n_factors: int = 3
    noise_sd: float = 0.5

    name = "dense"

    def __post_init__(self):
        _check_hypothesis(self.hypothesis)
        if not self.lam > 0:
            raise ValueError(f"ridge level lambda must be positive, got {self.lam}")
        if self.hypothesis == H1 and sum(self.block_sizes) != self.p:
            raise ValueError(f"block sizes {self.block_sizes} must sum to p={self.p}")
        if self.n0 < 2:
            raise ValueError("need n0 >= 2 draws to form the rough correlation matrix")


def rough_correlation(p: int, n0: int = 60, n_factors: int = 3, seed: int = 0,
                      noise_sd: float = 0.5) -> np.ndarray:
    """Sample correlation of ``n0`` draws from a factor model with Uniform(-1, 1) loadings.

    ``noise_sd`` is the idiosyncratic noise level; 0.5 gives a mean absolute
    correlation near 0.25.
    """
    rng = _rng(seed, 0)
    loadings = rng.uniform(-1.0, 1.0, size=(p, n_factors))
    draws = (rng.standard_normal((n0, n_factors)) @ loadings.T
             + noise_sd * rng.standard_normal((n0, p)))
    return np.corrcoef(draws, rowvar=False)


@lru_cache(maxsize=32)
def dense_covariances(cfg: DenseModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Population (Sigma1, Sigma2) for the dense model."""
    rt = rough_correlation(cfg.p, cfg.n0, cfg.n_factors, cfg.base_seed, cfg.noise_sd)
    sigma = to_correlation(rt + cfg.lam * np.eye(cfg.p))
    sigma2 = sigma.copy()
    if cfg.hypothesis == H1:
        labels = np.repeat(np.arange(len(cfg.block_sizes)), cfg.block_sizes)
        sigma2[labels[:, None] != labels[None, :]] = 0.0
    for mat, label in ((sigma, "Sigma1"), (sigma2, "Sigma2")):
        _check_spd(mat, label)
    return sigma, sigma2


class DenseModel:
    def __init__(self, cfg: DenseModelConfig):
        self.cfg = cfg
        s1, s2 = dense_covariances(cfg)
        self.sigma1, self.sigma2 = s1, s2
        self._l1 = np.linalg.cholesky(s1)
        self._l2 = np.linalg.cholesky(s2)

    def sample(self, replicate: int = 0) -> PairedDataset:
        rng = _rng(self.cfg.base_seed, 1, replicate)
        n, p = self.cfg.n, self.cfg.p
        x = rng.standard_normal((n, p)) @ self._l1.T
        y = rng.standard_normal((n, p)) @ self._l2.T
        return PairedDataset(x, y)


def gen_dense(cfg: DenseModelConfig, replicate: int = 0) -> PairedDataset:
    return DenseModel(cfg).sample(replicate)


# --- sparse model -------------------------------------------------------------------

@dataclass(frozen=True)
class SparseModelConfig:
    """Joint-precision model.

    ``h1_block`` is the size of each of the two condition-specific blocks
    (D1 and D2) under H1; the shared block Omega0 then has ``p - 2 h1_block`` nodes.
    """

    p: int = 70
    n: int = 200
    hypothesis: str = H0
    cross_link_value: float = 0.6
    block_size: int = 10
    attach: int = 2
    h1_block: int = 10
    weight_range: tuple = (0.5, 0.9)
    seed: int = 0

    name = "sparse"

    def __post_init__(self):
        _check_hypothesis(self.hypothesis)
        if self.p < 2:
            raise ValueError("need p >= 2")
        if self.hypothesis == H1 and not 0 < 2 * self.h1_block < self.p:
            raise ValueError(f"h1_block={self.h1_block} leaves no room in p={self.p}")


def power_law_adjacency(size: int, block_size: int, attach: int, rng) -> np.ndarray:
    """Preferential-attachment graphs within blocks plus Bernoulli(2/size) cross-block edges."""
    adj = np.zeros((size, size), dtype=bool)
    labels = np.arange(size) // block_size
    for start in range(0, size, block_size):
        k = min(block_size, size - start)
        if k < 2:
            continue
        g = nx.barabasi_albert_graph(k, min(attach, k - 1), seed=int(rng.integers(2 ** 31)))
        for i, j in g.edges():
            adj[start + i, start + j] = adj[start + j, start + i] = True
    cross = labels[:, None] != labels[None, :]
    extra = np.tril(rng.random((size, size)) < 2.0 / size, -1) & np.tril(cross, -1)
    return adj | extra | extra.T


def graph_precision(size: int, cfg: SparseModelConfig, rng) -> np.ndarray:
    """Unit diagonal with +-Uniform(lo, hi) weights on graph edges (lower triangle mirrored)."""
    adj = np.tril(power_law_adjacency(size, cfg.block_size, cfg.attach, rng), -1)
    lo, hi = cfg.weight_range
    weights = rng.uniform(lo, hi, size=(size, size)) * np.where(rng.random((size, size)) < 0.5, 1, -1)
    low = np.where(adj, weights, 0.0)
    return low + low.T + np.eye(size)


def ridge_for_condition(mat, target: float, iters: int = 200) -> float:
    """Smallest ridge (by bisection) with ``cond(mat + lam I) < target``."""
    eig = np.linalg.eigvalsh(mat)
    lo_e, hi_e = float(eig[0]), float(eig[-1])

    def cond(lam):
        return (hi_e + lam) / (lo_e + lam)

    lo = max(0.0, -lo_e)
    if lo_e + lo > 0 and cond(lo) < target:
        return lo
    hi = max(1.0, 2.0 * lo + 1.0)
    while cond(hi) >= target:
        hi *= 2.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if lo_e + mid > 0 and cond(mid) < target:
            hi = mid
        else:
            lo = mid
    return hi


def _block_diag(*blocks):
    return linalg.block_diag(*[b for b in blocks if b.size])


def _build_sparse(cfg: SparseModelConfig, attempt: int):
    rng = _rng(cfg.seed, 0, attempt)
    p = cfg.p
    if cfg.hypothesis == H0:
        om1 = om2 = graph_precision(p, cfg, rng)
    else:
        k = cfg.h1_block
        om0 = graph_precision(p - 2 * k, cfg, rng)
        d1 = graph_precision(k, cfg, rng)
        d2 = graph_precision(k, cfg, rng)
        om1 = _block_diag(om0, d1, np.eye(k))
        om2 = _block_diag(om0, np.eye(k), d2)
    om12 = np.zeros((p, p))
    half = p // 2
    om12[np.arange(half), np.arange(half)] = cfg.cross_link_value
    joint = np.block([[om1, om12], [om12, om2]])
    # small margin keeps the strict inequality after rounding
    lam = ridge_for_condition(joint, 2.0 * p * (1.0 - 1e-9))
    joint = joint + lam * np.eye(2 * p)
    chol = np.linalg.cholesky(joint)
    if not np.all(np.isfinite(chol)):
        raise np.linalg.LinAlgError("non-finite Cholesky factor")
    return joint, chol, lam


@lru_cache(maxsize=32)
def sparse_precision(cfg: SparseModelConfig):
    """(joint precision, lower Cholesky factor, ridge); retries up to MAX_RETRIES sub-seeds."""
    last = None
    for attempt in range(MAX_RETRIES + 1):
        try:
            return _build_sparse(cfg, attempt)
        except (np.linalg.LinAlgError, nx.NetworkXError) as exc:
            last = exc
    raise RuntimeError(f"sparse model construction failed after {MAX_RETRIES} retries") from last


class SparseModel:
    def __init__(self, cfg: SparseModelConfig):
        self.cfg = cfg
        self.precision, self._chol, self.ridge = sparse_precision(cfg)

    def covariance(self) -> np.ndarray:
        return linalg.cho_solve((self._chol, True), np.eye(2 * self.cfg.p))

    def sample(self, replicate: int = 0) -> PairedDataset:
        rng = _rng(self.cfg.seed, 1, replicate)
        z = rng.standard_normal((2 * self.cfg.p, self.cfg.n))
        # J = L L^T, so L^-T z has covariance J^-1
        draws = linalg.solve_triangular(self._chol, z, lower=True, trans="T").T
        p = self.cfg.p
        return PairedDataset(draws[:, :p], draws[:, p:])


def gen_sparse(cfg: SparseModelConfig, replicate: int = 0) -> PairedDataset:
    return SparseModel(cfg).sample(replicate)


def make_model(cfg):
    if isinstance(cfg, DenseModelConfig):
        return DenseModel(cfg)
    if isinstance(cfg, SparseModelConfig):
        return SparseModel(cfg)
    if isinstance(cfg, IidModelConfig):
        return IidModel(cfg)
    raise TypeError(f"unknown model config {type(cfg).__name__}")


# --- harness -------------------------------------------------------------------------

@dataclass
class HarnessRow:
    test: str
    regime: str
    size: float | None
    power: float | None
    ks_p: float
    theta_hat: float | None


@dataclass
class HarnessReport:
    model: str
    hypothesis: str
    reps: int
    seed: int
    alpha: float
    rows: list
    pvalues: np.ndarray = field(repr=False)
    tests: tuple = field(repr=False, default=())
    config: dict = field(default_factory=dict)

    def row(self, label: str) -> HarnessRow:
        spec = TestSpec.parse(label)
        for r, t in zip(self.rows, self.tests):
            if t == spec:
                return r
        raise KeyError(label)

    def rate(self, label: str) -> float:
        r = self.row(label)
        return r.size if r.size is not None else r.power

    def to_tsv(self) -> str:
        cols = ["model", "test", "regime", "size", "power", "ks_p", "theta_hat", "reps", "seed"]
        lines = ["\t".join(cols)]
        fmt = (lambda v: "NA" if v is None else f"{v:.6g}")
        for r in self.rows:
            lines.append("\t".join([self.model, r.test, r.regime, fmt(r.size), fmt(r.power),
                                    fmt(r.ks_p), fmt(r.theta_hat), str(self.reps), str(self.seed)]))
        return "\n".join(lines) + "\n"


def run_harness(cfg, tests=ALL_TESTS, reps: int = 500, alpha: float = 0.05, seed: int = 0,
                b_ad: int = DEFAULT_B_AD, b_np: int = DEFAULT_B_NP, u="auto",
                workers: int = 1, min_reps: int = 100) -> HarnessReport:
    """Rejection rates, KS-uniformity p-values and mean extremal index over ``reps`` replicates."""
    if reps < min_reps:
        raise ValueError(f"need reps >= {min_reps}, got {reps}")
    tests = tuple(TestSpec.parse(t) if isinstance(t, str) else t for t in tests)
    model = make_model(cfg)

    def one(rep):
        data = model.sample(rep)
        return run_tests(data, tests, u=u, alpha=alpha, b_ad=b_ad, b_np=b_np,
                         seed=replicate_seed(seed, rep))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(reps)))
    else:
        results = [one(r) for r in range(reps)]
    pv = np.array([[res.results[t].pvalue for t in tests] for res in results])
    thetas = [res.theta_hat for res in results if res.theta_hat is not None]
    theta = float(np.mean(thetas)) if thetas else None
    rows = []
    for j, t in enumerate(tests):
        rate = float(np.mean(pv[:, j] <= alpha))
        ks = float(stats.kstest(pv[:, j], "uniform").pvalue)
        size, power = (rate, None) if cfg.hypothesis == H0 else (None, rate)
        th = theta if t.regime is Regime.AD else None
        rows.append(HarnessRow(t.label, t.regime.value, size, power, ks, th))
    return HarnessReport(cfg.name, cfg.hypothesis, reps, seed, alpha, rows, pv, tests,
                         _echo(cfg))


def _echo(cfg) -> dict:
    out = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}


def mean_theta(cfg, reps: int = 100, seed: int = 0, b_ad: int = DEFAULT_B_AD) -> float:
    """Mean permutation-estimated extremal index over ``reps`` replicates."""
    model = make_model(cfg)
    tests = (TestSpec.parse("M(AD)"),)
    vals = [run_tests(model.sample(r), tests, b_ad=b_ad, seed=replicate_seed(seed, r)).theta_hat
            for r in range(reps)]
    return float(np.mean(vals))
