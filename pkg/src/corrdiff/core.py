"""Paired sample correlations, Fisher transforms and standardized differences."""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PSI_CLAMP = 1.0 - 1e-6


class FisherDomainError(ValueError):
    """Raised when a correlation lies outside the open interval (-1, 1)."""


class DegenerateDependenceError(ValueError):
    """Raised when the cross-correlation formula has a vanishing normalizer."""


@dataclass
class PairedDataset:
    """Two n x p matrices whose rows are paired observations (same subject)."""

    x: np.ndarray
    y: np.ndarray
    gene_ids: Sequence[str] | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.ndim != 2 or self.x.shape != self.y.shape:
            raise ValueError(
                f"x and y must be 2-d with identical shape, got {self.x.shape} and {self.y.shape}"
            )
        if self.x.shape[0] < 4:
            raise ValueError(f"need at least 4 paired observations, got n={self.x.shape[0]}")
        if self.gene_ids is None:
            self.gene_ids = [f"g{j}" for j in range(self.x.shape[1])]
        elif len(self.gene_ids) != self.x.shape[1]:
            raise ValueError("gene_ids length does not match the number of columns")
        self.gene_ids = list(self.gene_ids)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def swapped(self) -> "PairedDataset":
        return PairedDataset(self.y, self.x, self.gene_ids)


@dataclass(frozen=True)
class PairIndexSet:
    """Lexicographic (row-major) list of index pairs i < j."""

    p: int
    rows: np.ndarray = field(repr=False)
    cols: np.ndarray = field(repr=False)

    @classmethod
    def for_dimension(cls, p: int) -> "PairIndexSet":
        if p < 2:
            raise ValueError(f"need at least two variables, got p={p}")
        rows, cols = np.triu_indices(p, k=1)
        return cls(p, rows, cols)

    @property
    def m(self) -> int:
        return self.rows.size

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.rows.tolist(), self.cols.tolist()))


@dataclass
class CorrelationEstimates:
    r1: np.ndarray
    r2: np.ndarray
    r12: np.ndarray
    n: int


@dataclass
class StandardizedDifferences:
    d: np.ndarray
    psi12_diag: np.ndarray
    u1: np.ndarray
    u2: np.ndarray

    @property
    def m(self) -> int:
        return self.d.size


def fisher_transform(z):
    """Fisher z-transform ``arctanh(z)``; raises for ``|z| >= 1``."""
    arr = np.asarray(z, dtype=float)
    bad = ~(np.abs(arr) < 1.0)
    if np.any(bad):
        offending = arr[bad].ravel()[0] if arr.ndim else float(arr)
        raise FisherDomainError(f"Fisher transform needs |z| < 1, got {offending!r}")
    out = np.arctanh(arr)
    return float(out) if out.ndim == 0 else out


def _standardize(a, gene_ids=None):
    """Center and scale columns along axis -2 (observations)."""
    a = a - a.mean(axis=-2, keepdims=True)
    sd = np.sqrt(np.einsum("...ij,...ij->...j", a, a))
    if np.any(sd == 0):
        j = int(np.argwhere(sd == 0)[0][-1])
        name = gene_ids[j] if gene_ids is not None else j
        raise ValueError(f"zero-variance column for gene {name!r}")
    return a / sd[..., None, :]


UNIT_SNAP = 8 * np.finfo(float).eps


def _clip_unit(r):
    """Clip to [-1, 1]; values within a few ulps of +-1 (collinear columns) become exactly +-1."""
    np.clip(r, -1.0, 1.0, out=r)
    return np.where(np.abs(r) > 1.0 - UNIT_SNAP, np.sign(r), r)


def correlation_blocks(x, y, gene_ids=None):
    """Return (r1, r2, r12) for arrays shaped (..., n, p)."""
    zx = _standardize(x, gene_ids)
    zy = _standardize(y, gene_ids)
    zxt = np.swapaxes(zx, -1, -2)
    r1 = _clip_unit(zxt @ zx)
    r2 = _clip_unit(np.swapaxes(zy, -1, -2) @ zy)
    r12 = _clip_unit(zxt @ zy)
    idx = np.arange(x.shape[-1])
    r1[..., idx, idx] = 1.0
    r2[..., idx, idx] = 1.0
    return r1, r2, r12


def pearson_correlations(data: PairedDataset) -> CorrelationEstimates:
    r1, r2, r12 = correlation_blocks(data.x, data.y, data.gene_ids)
    return CorrelationEstimates(r1, r2, r12, data.n)


def _omega(r_ab, r_ac, r_cb):
    return r_ab - r_ac * r_cb


def psi_cross(r_full, s, t):
    """Asymptotic correlation between Fisher-transformed sample correlations.

    ``s = (h, i)`` and ``t = (j, l)`` index variables of the joint correlation
    matrix ``r_full``. The normalizer is ``(1 - r_hi^2)(1 - r_jl^2)``, which is
    the product of the asymptotic standard deviations of ``r_hi`` and ``r_jl``.
    """
    r = np.asarray(r_full, dtype=float)
    h, i = s
    j, l = t
    norm = (1.0 - r[h, i] ** 2) * (1.0 - r[j, l] ** 2)
    if norm < 1e-300:
        raise DegenerateDependenceError(
            f"correlation of magnitude one in pair {s} or {t}; psi is undefined"
        )
    num = (
        _omega(r[h, j], r[h, i], r[i, j]) * _omega(r[i, l], r[i, j], r[j, l])
        + _omega(r[h, j], r[h, l], r[l, j]) * _omega(r[i, l], r[i, h], r[h, l])
        + _omega(r[h, l], r[h, i], r[i, l]) * _omega(r[i, j], r[i, l], r[l, j])
        + _omega(r[h, l], r[h, j], r[j, l]) * _omega(r[i, j], r[i, h], r[h, j])
    )
    return 0.5 * num / norm


def psi12_diagonal(r1, r2, r12, rows, cols):
    """Plug-in ``psi(12)_tt`` for every pair t = (i, j), vectorised over pairs.

    Works on stacked inputs shaped (..., p, p); the pair axis is last.
    """
    a = r1[..., rows, cols]  # x_i, x_j
    b = r2[..., rows, cols]  # y_i, y_j
    c_ii = r12[..., rows, rows]  # x_i, y_i
    c_ij = r12[..., rows, cols]  # x_i, y_j
    c_ji = r12[..., cols, rows]  # x_j, y_i
    c_jj = r12[..., cols, cols]  # x_j, y_j
    num = (
        (c_ii - a * c_ji) * (c_jj - c_ji * b)
        + (c_ii - c_ij * b) * (c_jj - a * c_ij)
        + (c_ij - a * c_jj) * (c_ji - c_jj * b)
        + (c_ij - c_ii * b) * (c_ji - a * c_ii)
    )
    norm = (1.0 - a * a) * (1.0 - b * b)
    with np.errstate(divide="ignore", invalid="ignore"):
        return 0.5 * num / norm


def _check_unit_open(r, rows, cols, label, gene_ids=None):
    bad = ~(np.abs(r) < 1.0)
    if np.any(bad):
        k = int(np.argwhere(bad)[0][-1])
        i, j = int(rows[k]), int(cols[k])
        if gene_ids is not None:
            i, j = gene_ids[i], gene_ids[j]
        raise FisherDomainError(f"|{label}| = 1 for pair ({i}, {j}); Fisher transform undefined")


def differences_from_blocks(r1, r2, r12, n, rows, cols, gene_ids=None):
    """Vectorised standardized differences; inputs may carry leading batch axes."""
    a = r1[..., rows, cols]
    b = r2[..., rows, cols]
    _check_unit_open(a, rows, cols, "r1", gene_ids)
    _check_unit_open(b, rows, cols, "r2", gene_ids)
    scale = np.sqrt(n - 3.0)
    u1 = np.arctanh(a) * scale
    u2 = np.arctanh(b) * scale
    psi = np.minimum(psi12_diagonal(r1, r2, r12, rows, cols), PSI_CLAMP)
    delta = u2 - u1
    d = np.where(delta == 0.0, 0.0, delta / np.sqrt(2.0 * (1.0 - psi)))
    return d, psi, u1, u2


def standardized_differences(est: CorrelationEstimates, idx: PairIndexSet | None = None,
                             gene_ids=None) -> StandardizedDifferences:
    if est.n < 4:
        raise ValueError(f"need n >= 4 for the sqrt(n - 3) scaling, got n={est.n}")
    if idx is None:
        idx = PairIndexSet.for_dimension(est.r1.shape[0])
    d, psi, u1, u2 = differences_from_blocks(
        est.r1, est.r2, est.r12, est.n, idx.rows, idx.cols, gene_ids
    )
    return StandardizedDifferences(d, psi, u1, u2)


def compute_differences(data: PairedDataset) -> StandardizedDifferences:
    """Full pipeline from paired observations to the standardized difference vector."""
    est = pearson_correlations(data)
    return standardized_differences(est, PairIndexSet.for_dimension(data.p), data.gene_ids)
