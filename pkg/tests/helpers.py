"""Synthetic input files for pipeline and command-line tests."""

from pathlib import Path

import numpy as np


def write_inputs(directory, x, y, sets, genes=None):
    """Write expr.tsv, pairs.tsv and sets.gmt for paired (n x p) matrices; return their paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    n, p = x.shape
    genes = genes or [f"G{j}" for j in range(p)]
    samples = [f"P{k}_I" for k in range(n)] + [f"P{k}_II" for k in range(n)]
    values = np.vstack([x, y]).T
    lines = ["gene\t" + "\t".join(samples)]
    lines += [g + "\t" + "\t".join(f"{v:.12g}" for v in row) for g, row in zip(genes, values)]
    (d / "expr.tsv").write_text("\n".join(lines) + "\n")
    pairs = ["sample_id\tpatient_id\tcondition"]
    pairs += [f"P{k}_I\tP{k}\tI" for k in range(n)] + [f"P{k}_II\tP{k}\tII" for k in range(n)]
    (d / "pairs.tsv").write_text("\n".join(pairs) + "\n")
    (d / "sets.gmt").write_text("".join(f"{name}\tdesc\t" + "\t".join(members) + "\n"
                                        for name, members in sets.items()))
    return d / "expr.tsv", d / "pairs.tsv", d / "sets.gmt"


def null_batch(rng, n_sets=50, set_size=8, n=40, rho=0.5):
    """Paired data with an identical correlation structure in both conditions."""
    p = n_sets * set_size
    shared = rng.standard_normal((n, p))
    x = rho * shared + np.sqrt(1 - rho ** 2) * rng.standard_normal((n, p))
    y = rho * shared + np.sqrt(1 - rho ** 2) * rng.standard_normal((n, p))
    sets = {f"S{k:02d}": [f"G{j}" for j in range(k * set_size, (k + 1) * set_size)]
            for k in range(n_sets)}
    return x, y, sets


def model_batch(configs):
    """Concatenate one simulated dataset per config into a table with one gene set per config."""
    from corrdiff.pipeline import ExpressionTable, GeneSetCollection
    from corrdiff.simulate import make_model
    xs, ys, sets, genes = [], [], {}, []
    for k, cfg in enumerate(configs):
        data = make_model(cfg).sample(0)
        names = [f"S{k:02d}_G{j}" for j in range(data.p)]
        xs.append(data.x)
        ys.append(data.y)
        sets[f"S{k:02d}"] = tuple(names)
        genes += names
    n = xs[0].shape[0]
    table = ExpressionTable(genes, np.hstack(xs), np.hstack(ys), [f"P{i}" for i in range(n)])
    return table, GeneSetCollection(sets, "synthetic")
