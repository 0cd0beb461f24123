"""Average-of-squares, maximum and sum-of-exceedances statistics."""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class StatKind(str, Enum):
    SQUARES = "S"
    MAX = "M"
    EXCEEDANCE = "E"


@dataclass(frozen=True)
class ExceedanceConfig:
    u: float
    w: int = 0

    def __post_init__(self):
        if not math.isfinite(self.u) or self.u < 0:
            raise ValueError(f"threshold u must be finite and >= 0, got {self.u}")
        if self.w not in (0, 1):
            raise ValueError(f"w must be 0 or 1, got {self.w}")


@dataclass(frozen=True)
class StatisticValue:
    kind: StatKind
    value: float
    m: int
    n_exceed: int | None = None
    cfg: ExceedanceConfig | None = None


def row_sums(a):
    """Sum along the last axis in a fixed order (numpy pairwise summation).

    Each row is reduced independently, so a replicate's statistic does not
    depend on how replicates are batched.
    """
    return np.ascontiguousarray(a, dtype=float).sum(axis=-1)


def _as_vector(d):
    arr = np.asarray(getattr(d, "d", d), dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("statistic of an empty difference vector is undefined")
    return arr


def t_squares(d) -> StatisticValue:
    arr = _as_vector(d)
    return StatisticValue(StatKind.SQUARES, float(row_sums(arr * arr)) / arr.size, arr.size)


def t_max(d) -> StatisticValue:
    arr = _as_vector(d)
    return StatisticValue(StatKind.MAX, float(np.max(np.abs(arr))), arr.size)


def t_exceed(d, cfg: ExceedanceConfig) -> StatisticValue:
    arr = np.abs(_as_vector(d))
    over = arr > cfg.u
    shifted = np.where(over, arr - cfg.u * cfg.w, 0.0)
    value = float(row_sums(shifted * shifted))
    return StatisticValue(StatKind.EXCEEDANCE, value, arr.size, int(np.count_nonzero(over)), cfg)


def compute_statistic(d, kind: StatKind, cfg: ExceedanceConfig | None = None) -> StatisticValue:
    kind = StatKind(kind)
    if kind is StatKind.SQUARES:
        return t_squares(d)
    if kind is StatKind.MAX:
        return t_max(d)
    if cfg is None:
        raise ValueError("exceedance statistic needs an ExceedanceConfig")
    return t_exceed(d, cfg)


def rowwise_exceedance(dtilde, cfg: ExceedanceConfig):
    """Exceedance statistic for every row of a replicate matrix."""
    a = np.abs(np.asarray(dtilde, dtype=float))
    shifted = np.where(a > cfg.u, a - cfg.u * cfg.w, 0.0)
    return row_sums(shifted * shifted)
