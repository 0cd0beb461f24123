"""Run the three tests on one paired dataset under the AI, AD and NP null regimes."""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import PairedDataset, compute_differences
from .nulls import (GumbelNull, SquaresNull, empirical_pvalue, exceedance_null, exceedance_pvalue,
                    gumbel_pvalue, squares_pvalue)
from .permutation import (DEFAULT_B_AD, DEFAULT_B_NP, estimate_null_parameters, permutation_stats,
                          replicate_statistics)
from .power import GammaPrior, estimate_rho_s, pair_pvalues, select_threshold
from .stats import ExceedanceConfig, StatKind, compute_statistic


class Regime(str, Enum):
    AI = "AI"
    AD = "AD"
    NP = "NP"


@dataclass(frozen=True)
class TestSpec:
    """One statistic evaluated under one null regime (``w`` only matters for E)."""

    kind: StatKind
    regime: Regime
    w: int = 0

    __test__ = False

    @classmethod
    def parse(cls, label: str) -> "TestSpec":
        """Parse labels such as ``S(AD)``, ``M(NP)`` or ``E1(NP)``."""
        head, _, rest = label.strip().partition("(")
        regime = Regime(rest.rstrip(")").upper())
        kind = StatKind(head[0].upper())
        w = int(head[1:]) if len(head) > 1 else 0
        return cls(kind, regime, w)

    @property
    def label(self) -> str:
        w = str(self.w) if self.kind is StatKind.EXCEEDANCE else ""
        return f"{self.kind.value}{w}({self.regime.value})"


ALL_TESTS = tuple(TestSpec(k, r) for k in StatKind for r in Regime)


@dataclass
class TestResult:
    spec: TestSpec
    statistic: float
    pvalue: float
    u: float | None = None
    n_exceed: int | None = None

    __test__ = False


@dataclass
class DatasetResult:
    results: dict
    n: int
    p: int
    m: int
    theta_hat: float | None = None
    rho_s_hat: float | None = None
    thresholds: dict = field(default_factory=dict)

    def pvalue(self, spec) -> float:
        if isinstance(spec, str):
            spec = TestSpec.parse(spec)
        return self.results[spec].pvalue


def resolve_threshold(d, n: int, w: int, u="auto", alpha: float = 0.05,
                      prior: GammaPrior | None = None) -> tuple[float, float | None]:
    """Return (u, rho_s_hat); ``u="auto"`` selects it from the estimated signal fraction."""
    if u != "auto":
        return float(u), None
    rho = estimate_rho_s(pair_pvalues(d))
    return select_threshold(n, d.size, rho, w, prior, alpha), rho


def run_tests(data: PairedDataset, tests=ALL_TESTS, u="auto", alpha: float = 0.05,
              b_ad: int = DEFAULT_B_AD, b_np: int = DEFAULT_B_NP, seed: int = 0,
              workers: int = 1, prior: GammaPrior | None = None) -> DatasetResult:
    """Compute every requested test on one dataset.

    AD and NP share one stream of permutation replicates: AD uses the first
    ``b_ad`` of them and NP the first ``b_np``.
    """
    tests = tuple(TestSpec.parse(t) if isinstance(t, str) else t for t in tests)
    sd = compute_differences(data)
    d = sd.d
    m = d.size
    cfgs, rho = {}, None
    for w in sorted({t.w for t in tests if t.kind is StatKind.EXCEEDANCE}):
        uw, rho_w = resolve_threshold(d, data.n, w, u, alpha, prior)
        rho = rho_w if rho_w is not None else rho
        cfgs[w] = ExceedanceConfig(uw, w)
    regimes = {t.regime for t in tests}
    b = max([b_ad] * (Regime.AD in regimes) + [b_np] * (Regime.NP in regimes) + [0])
    reps = permutation_stats(data, b, seed, cfgs.values(), workers) if b else None
    est = estimate_null_parameters(reps.head(b_ad), cfgs.values()) if Regime.AD in regimes else None

    out = {}
    for t in tests:
        cfg = cfgs.get(t.w) if t.kind is StatKind.EXCEEDANCE else None
        stat = compute_statistic(d, t.kind, cfg)
        if t.regime is Regime.NP:
            pval = empirical_pvalue(stat, replicate_statistics(reps.head(b_np), t.kind, cfg))
        elif t.kind is StatKind.SQUARES:
            null = SquaresNull.asymptotic(m) if t.regime is Regime.AI else est.squares_null()
            pval = squares_pvalue(stat, null)
        elif t.kind is StatKind.MAX:
            null = GumbelNull.asymptotic(m) if t.regime is Regime.AI else est.gumbel_null()
            pval = gumbel_pvalue(stat, null)
        else:
            null = exceedance_null(m, cfg) if t.regime is Regime.AI else est.exceedance_null(cfg)
            pval = exceedance_pvalue(stat, null)
        out[t] = TestResult(t, stat.value, min(1.0, max(0.0, pval)),
                            cfg.u if cfg else None, stat.n_exceed)
    theta = est.theta_m_hat if est is not None else None
    return DatasetResult(out, data.n, data.p, m, theta, rho, {w: c.u for w, c in cfgs.items()})


def pvalue_matrix(results, tests) -> np.ndarray:
    """(replicates, tests) array of p-values."""
    return np.array([[r.results[t].pvalue for t in tests] for r in results])
