"""Gene-set batch testing: input parsing, per-set tests, FDR adjustment and reports."""

import json
import logging
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats

from .core import PairedDataset
from .inference import Regime, TestSpec, run_tests
from .permutation import DEFAULT_B_AD, DEFAULT_B_NP
from .stats import StatKind

log = logging.getLogger(__name__)

CONDITIONS = ("I", "II")
MIN_GENES = 5
RESULT_COLUMNS = ["id", "p_genes", "stat_s", "p_s", "stat_m", "p_m", "stat_e", "u_used", "p_e",
                  "q_s", "q_m", "q_e"]


class InputError(ValueError):
    """Invalid expression, pairing or gene-set input."""


# --- expression data ---------------------------------------------------------------

@dataclass
class ExpressionTable:
    """Paired expression: row k of ``x`` and ``y`` belong to ``patients[k]``."""

    genes: list
    x: np.ndarray
    y: np.ndarray
    patients: list

    def __post_init__(self):
        self._pos = {g: j for j, g in enumerate(self.genes)}

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def has(self, gene) -> bool:
        return gene in self._pos

    def subset(self, genes) -> PairedDataset:
        cols = [self._pos[g] for g in genes]
        return PairedDataset(self.x[:, cols], self.y[:, cols], list(genes))


def _read_tsv(path, **kw) -> pd.DataFrame:
    try:
        return pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False, **kw)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def read_pairs(path, conditions=CONDITIONS) -> pd.DataFrame:
    """Pairing table (patient x condition -> sample id), validated."""
    df = _read_tsv(path)
    need = {"sample_id", "patient_id", "condition"}
    if not need <= set(df.columns):
        raise InputError(f"pairing file needs columns {sorted(need)}, got {list(df.columns)}")
    bad = sorted(set(df["condition"]) - set(conditions))
    if bad:
        raise InputError(f"unknown condition label(s) {bad}; expected {list(conditions)}")
    if df["sample_id"].duplicated().any():
        dup = sorted(df.loc[df["sample_id"].duplicated(), "sample_id"])
        raise InputError(f"sample ids listed more than once: {dup}")
    counts = df.groupby(["patient_id", "condition"]).size().unstack(fill_value=0)
    counts = counts.reindex(columns=list(conditions), fill_value=0)
    broken = sorted(counts.index[(counts != 1).any(axis=1)])
    if broken:
        raise InputError(f"patients without exactly one sample per condition: {broken}")
    wide = df.pivot(index="patient_id", columns="condition", values="sample_id")
    return wide.loc[df["patient_id"].drop_duplicates(), list(conditions)]


def ingest(expr_path, pairs_path, conditions=CONDITIONS) -> ExpressionTable:
    """Read a genes x samples TSV and a pairing TSV; duplicate gene rows are averaged."""
    pairs = read_pairs(pairs_path, conditions)
    raw = _read_tsv(expr_path)
    if raw.shape[1] < 2:
        raise InputError(f"{expr_path}: need a gene id column followed by sample columns")
    gene_col = raw.columns[0]
    try:
        values = raw.drop(columns=gene_col).apply(pd.to_numeric, errors="raise")
    except ValueError as exc:
        raise InputError(f"{expr_path}: non-numeric expression value ({exc})") from exc
    values.index = raw[gene_col].to_numpy()
    expr = values.groupby(level=0, sort=False).mean()
    needed = pairs.to_numpy().ravel()
    missing = sorted(set(needed) - set(expr.columns))
    if missing:
        lost = sorted(pairs.index[pairs.isin(missing).any(axis=1)])
        raise InputError(f"samples {missing} absent from the expression table (patients {lost})")
    extra = sorted(set(expr.columns) - set(needed))
    if extra:
        log.warning("ignoring %d expression columns without a pairing entry", len(extra))
    x = expr[pairs[conditions[0]].to_numpy()].to_numpy(dtype=float).T
    y = expr[pairs[conditions[1]].to_numpy()].to_numpy(dtype=float).T
    return ExpressionTable([str(g) for g in expr.index], x, y, [str(p) for p in pairs.index])


# --- gene sets ---------------------------------------------------------------------

@dataclass
class GeneSetCollection:
    sets: dict
    source: str = ""

    def __len__(self):
        return len(self.sets)


def parse_gmt(path, source: str | None = None) -> GeneSetCollection:
    """Parse ``name<TAB>description<TAB>gene...`` lines; genes are de-duplicated in order."""
    sets = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            genes = [g.strip() for g in fields[2:] if g.strip()]
            if len(fields) < 3 or not fields[0].strip() or not genes:
                raise InputError(f"{path}:{lineno}: expected name, description and at least one gene")
            name = fields[0].strip()
            if name in sets:
                raise InputError(f"{path}:{lineno}: duplicate gene set name {name!r}")
            sets[name] = tuple(dict.fromkeys(genes))
    if not sets:
        warnings.warn(f"no gene sets found in {path}", stacklevel=2)
    return GeneSetCollection(sets, source if source is not None else Path(path).name)


# --- batch -------------------------------------------------------------------------

@dataclass(frozen=True)
class BatchConfig:
    tests: tuple = ("s", "m", "e")
    null: str = "ad"
    b: int | None = None
    alpha: float = 0.05
    w: int = 0
    u: str | float = "auto"
    fdr: str = "bh"
    threads: int = 1
    min_genes: int = MIN_GENES

    def __post_init__(self):
        bad = [t for t in self.tests if t not in ("s", "m", "e")]
        if bad or not self.tests:
            raise InputError(f"tests must be drawn from s,m,e; got {list(self.tests)}")
        if self.null not in ("ad", "np", "ai"):
            raise InputError(f"null must be ad, np or ai; got {self.null!r}")
        if self.b is not None and self.b < 1:
            raise InputError(f"B must be positive, got {self.b}")
        if self.w not in (0, 1):
            raise InputError(f"w must be 0 or 1, got {self.w}")
        if self.fdr not in ("bh", "by"):
            raise InputError(f"fdr must be bh or by, got {self.fdr!r}")
        if not 0 < self.alpha < 0.5:
            raise InputError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if self.u != "auto" and not float(self.u) >= 0:
            raise InputError(f"u must be 'auto' or a non-negative number, got {self.u!r}")

    def specs(self) -> dict:
        regime = Regime(self.null.upper())
        return {t: TestSpec(StatKind(t.upper()), regime, self.w if t == "e" else 0)
                for t in self.tests}

    def replicates(self) -> tuple[int, int]:
        b_ad = self.b if self.b is not None else DEFAULT_B_AD
        b_np = self.b if self.b is not None else DEFAULT_B_NP
        return b_ad, b_np


@dataclass
class PathwayResult:
    set_id: str
    p_genes: int
    stats: dict = field(default_factory=dict)
    pvalues: dict = field(default_factory=dict)
    qvalues: dict = field(default_factory=dict)
    u_used: float | None = None
    theta_hat: float | None = None
    status: str = "ok"
    message: str = ""
    runtime: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def set_seed(seed: int, index: int) -> int:
    """Permutation seed for gene set ``index``; replicates are keyed below it."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0])


def _run_one(table, set_id, genes, index, cfg: BatchConfig, seed: int) -> PathwayResult:
    used = [g for g in genes if table.has(g)]
    res = PathwayResult(set_id, len(used))
    if len(used) < cfg.min_genes:
        res.status = "skipped"
        res.message = f"only {len(used)} of {len(genes)} genes present (need {cfg.min_genes})"
        log.info("skipping %s: %s", set_id, res.message)
        return res
    start = time.perf_counter()
    specs = cfg.specs()
    b_ad, b_np = cfg.replicates()
    try:
        out = run_tests(table.subset(used), tuple(specs.values()), u=cfg.u, alpha=cfg.alpha,
                        b_ad=b_ad, b_np=b_np, seed=set_seed(seed, index))
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        res.status = "failed"
        res.message = f"{type(exc).__name__}: {exc}"
        log.warning("gene set %s failed: %s", set_id, res.message)
    else:
        for key, spec in specs.items():
            r = out.results[spec]
            res.stats[key] = r.statistic
            res.pvalues[key] = r.pvalue
            if key == "e":
                res.u_used = r.u
        res.theta_hat = out.theta_hat
    res.runtime = time.perf_counter() - start
    return res


def run_batch(table: ExpressionTable, collection: GeneSetCollection, cfg: BatchConfig = BatchConfig(),
              seed: int = 0) -> list:
    """Test every gene set; results come back in input order with FDR-adjusted p-values."""
    items = list(collection.sets.items())
    # largest first for load balance; each set's seed depends only on its input index
    order = sorted(range(len(items)), key=lambda i: (-len(items[i][1]), i))

    def work(i):
        name, genes = items[i]
        return i, _run_one(table, name, genes, i, cfg, seed)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            done = dict(pool.map(work, order))
    else:
        done = dict(work(i) for i in order)
    results = [done[i] for i in range(len(items))]
    for key in cfg.tests:
        idx = [k for k, r in enumerate(results) if r.ok]
        if idx:
            q = fdr_adjust([results[k].pvalues[key] for k in idx], cfg.fdr)
            for k, qv in zip(idx, q):
                results[k].qvalues[key] = float(qv)
    return results


def fdr_adjust(pvalues, method: str = "bh") -> np.ndarray:
    """Benjamini-Hochberg (``bh``) or Benjamini-Yekutieli (``by``) adjusted p-values."""
    p = np.asarray(pvalues, dtype=float).ravel()
    if p.size == 0:
        return p
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must be finite and lie in [0, 1]")
    return np.minimum(stats.false_discovery_control(p, method=method), 1.0)


# --- reports -------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "NA"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{v:.10g}"


def results_table(results) -> str:
    lines = ["\t".join(RESULT_COLUMNS)]
    for r in results:
        row = [r.set_id, r.p_genes, r.stats.get("s"), r.pvalues.get("s"), r.stats.get("m"),
               r.pvalues.get("m"), r.stats.get("e"), r.u_used, r.pvalues.get("e"),
               r.qvalues.get("s"), r.qvalues.get("m"), r.qvalues.get("e")]
        lines.append("\t".join([row[0]] + [_fmt(v) for v in row[1:]]))
    return "\n".join(lines) + "\n"


def summarize(results, p_cut: float = 0.01, q_cut: float = 0.05) -> dict:
    """Per-test significance counts, triple intersections and pairwise p-value correlations."""
    if not results:
        raise ValueError("no results to summarize")
    tested = [r for r in results if r.ok]
    keys = sorted({k for r in tested for k in r.pvalues}, key="sme".index)
    summary = {
        "n_sets": len(results),
        "n_tested": len(tested),
        "n_skipped": sum(r.status == "skipped" for r in results),
        "n_failed": sum(r.status == "failed" for r in results),
        "p_cut": p_cut,
        "q_cut": q_cut,
        "significant_raw": {k: sum(r.pvalues[k] < p_cut for r in tested) for k in keys},
        "significant_adjusted": {k: sum(r.qvalues.get(k, 1.0) < q_cut for r in tested) for k in keys},
    }
    if len(keys) == 3:
        summary["all_three_raw"] = sum(all(r.pvalues[k] < p_cut for k in keys) for r in tested)
        summary["all_three_adjusted"] = sum(all(r.qvalues.get(k, 1.0) < q_cut for k in keys)
                                            for r in tested)
    corr = {}
    for i, a in enumerate(keys):
        for b in keys[i + 1:]:
            pa = np.array([r.pvalues[a] for r in tested])
            pb = np.array([r.pvalues[b] for r in tested])
            ok = len(tested) > 2 and np.std(pa) > 0 and np.std(pb) > 0
            corr[f"{a}-{b}"] = float(np.corrcoef(pa, pb)[0, 1]) if ok else None
    summary["pvalue_correlation"] = corr
    summary["skipped"] = {r.set_id: r.message for r in results if r.status == "skipped"}
    summary["failed"] = {r.set_id: r.message for r in results if r.status == "failed"}
    return summary


def summary_table(summary: dict) -> str:
    lines = ["metric\tvalue"]
    for key in ("n_sets", "n_tested", "n_skipped", "n_failed", "all_three_raw", "all_three_adjusted"):
        if key in summary:
            lines.append(f"{key}\t{summary[key]}")
    for group in ("significant_raw", "significant_adjusted", "pvalue_correlation"):
        for k, v in summary[group].items():
            lines.append(f"{group}.{k}\t{_fmt(v)}")
    return "\n".join(lines) + "\n"


def write_outputs(results, out_dir, p_cut: float = 0.01, q_cut: float = 0.05) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(results, p_cut, q_cut)
    (out / "results.tsv").write_text(results_table(results))
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "summary.tsv").write_text(summary_table(summary))
    return summary
