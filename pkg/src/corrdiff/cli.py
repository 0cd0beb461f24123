"""Command-line entry point: ``corrdiff test | simulate | power``."""

import json
import logging
import sys

import click
import numpy as np

from .pipeline import BatchConfig, InputError, ingest, parse_gmt, run_batch, write_outputs
from .power import (InvalidThresholdError, power_bound_exceed, power_bound_max, power_bound_squares,
                    select_threshold)

VALIDATION_EXIT = 2


def _fail(msg):
    click.echo(f"error: {msg}", err=True)
    sys.exit(VALIDATION_EXIT)


def _parse_u(value):
    if value == "auto":
        return value
    try:
        u = float(value)
    except ValueError:
        raise click.BadParameter(f"expected 'auto' or a number, got {value!r}")
    if u < 0:
        raise click.BadParameter("threshold must be non-negative")
    return u


@click.group()
@click.option("-v", "--verbose", count=True, help="Increase log verbosity.")
def main(verbose):
    """Tests for equality of paired correlation matrices."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command("test")
@click.option("--expr", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Genes x samples TSV; first column holds gene ids.")
@click.option("--pairs", required=True, type=click.Path(exists=True, dir_okay=False),
              help="TSV with columns sample_id, patient_id, condition (I or II).")
@click.option("--gmt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--tests", default="s,m,e", show_default=True)
@click.option("--null", "null", type=click.Choice(["ad", "np", "ai"]), default="ad", show_default=True)
@click.option("--B", "b", type=int, default=None, help="Permutations (default 200 for ad, 1000 for np).")
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--w", type=click.Choice(["0", "1"]), default="0", show_default=True)
@click.option("--u", default="auto", show_default=True, help="Exceedance threshold or 'auto'.")
@click.option("--fdr", type=click.Choice(["bh", "by"]), default="bh", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out", required=True, type=click.Path(file_okay=False))
@click.option("--threads", type=int, default=1, show_default=True)
def test_cmd(expr, pairs, gmt, tests, null, b, alpha, w, u, fdr, seed, out, threads):
    """Test every gene set in GMT for a change in correlation between conditions."""
    try:
        cfg = BatchConfig(tuple(t.strip().lower() for t in tests.split(",") if t.strip()), null, b,
                          alpha, int(w), _parse_u(u), fdr, max(1, threads))
        table = ingest(expr, pairs)
        sets = parse_gmt(gmt)
    except (InputError, click.BadParameter) as exc:
        _fail(exc)
    if not len(sets):
        _fail(f"no gene sets in {gmt}")
    results = run_batch(table, sets, cfg, seed)
    summary = write_outputs(results, out)
    click.echo(f"tested {summary['n_tested']} of {summary['n_sets']} sets; results in {out}")


@main.command("simulate")
@click.option("--model", type=click.Choice(["dense", "sparse", "iid"]), required=True)
@click.option("--hypothesis", type=click.Choice(["H0", "H1"]), default="H0", show_default=True)
@click.option("--p", "p", type=int, default=None)
@click.option("--n", "n", type=int, default=None)
@click.option("--lam", type=float, default=0.5, show_default=True, help="Ridge level (dense model).")
@click.option("--reps", type=int, default=500, show_default=True)
@click.option("--tests", default="S(AI),S(AD),S(NP),M(AI),M(AD),M(NP),E(AI),E(AD),E(NP)",
              show_default=True)
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--B-ad", "b_ad", type=int, default=200, show_default=True)
@click.option("--B-np", "b_np", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="TSV report path.")
def simulate_cmd(model, hypothesis, p, n, lam, reps, tests, alpha, b_ad, b_np, seed, threads, out):
    """Empirical size, power and p-value uniformity on a simulation model."""
    from .simulate import DenseModelConfig, IidModelConfig, SparseModelConfig, run_harness
    kw = {k: v for k, v in (("p", p), ("n", n)) if v is not None}
    try:
        if model == "dense":
            if hypothesis == "H1" and p is not None and p != 50:
                kw["block_sizes"] = (p - p // 5, p // 5)
            cfg = DenseModelConfig(lam=lam, hypothesis=hypothesis, base_seed=seed, **kw)
        elif model == "sparse":
            cfg = SparseModelConfig(hypothesis=hypothesis, seed=seed, **kw)
        else:
            cfg = IidModelConfig(base_seed=seed, hypothesis=hypothesis, **kw)
        specs = [t.strip() for t in tests.split(",") if t.strip()]
        report = run_harness(cfg, specs, reps, alpha, seed, b_ad, b_np, workers=max(1, threads))
    except ValueError as exc:
        _fail(exc)
    text = report.to_tsv()
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


@main.command("power")
@click.option("--test", "kind", type=click.Choice(["s", "m", "e"]), default="e", show_default=True)
@click.option("--n", "n", type=int, required=True)
@click.option("--m", "m", type=int, required=True, help="Number of correlation pairs.")
@click.option("--delta", type=float, default=None, help="Common size of the non-zero differences.")
@click.option("--s", "s", type=int, default=None, help="Number of non-zero differences.")
@click.option("--u", default=None, help="Exceedance threshold (bound mode).")
@click.option("--w", type=click.Choice(["0", "1"]), default="0", show_default=True)
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--branch", type=click.Choice(["fixed", "growing"]), default="fixed", show_default=True)
@click.option("--rho", type=float, default=None, help="Signal fraction; prints the selected threshold.")
def power_cmd(kind, n, m, delta, s, u, w, alpha, branch, rho):
    """Power lower bounds, or threshold selection when --rho is given."""
    w = int(w)
    try:
        if rho is not None:
            click.echo(json.dumps({"n": n, "m": m, "rho_s": rho, "w": w,
                                   "u": select_threshold(n, m, rho, w, alpha=alpha)}))
            return
        if delta is None or s is None:
            raise ValueError("--delta and --s are required for a power bound")
        if not 0 < s <= m:
            raise ValueError(f"--s must lie in [1, m], got {s}")
        deltas = np.full(s, delta)
        if kind == "s":
            pb = power_bound_squares(deltas, n, m, alpha=alpha)
        elif kind == "m":
            pb = power_bound_max(deltas, n, m, alpha, branch)
        else:
            if u is None:
                raise ValueError("--u is required for the exceedance bound")
            pb = power_bound_exceed(deltas, float(u), w, n, m, alpha)
    except (ValueError, InvalidThresholdError) as exc:
        _fail(exc)
    click.echo(json.dumps({"test": kind, "bound": pb.bound, "condition_met": pb.satisfied,
                           "argument": pb.argument}))


if __name__ == "__main__":
    main()
