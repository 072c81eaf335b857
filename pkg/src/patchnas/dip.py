"""Dip test of unimodality with bootstrap-calibrated p-values.

The statistic is the sup-norm distance from the empirical CDF to the
nearest unimodal CDF.  It is distribution-free, so p-values are calibrated
against uniform(0, 1) null samples of the same size: the p-value is the
fraction of ``n_boot`` null dips exceeding the observed dip.  Null tables
depend only on (n, n_boot, seed) and are memoized.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

try:
    from ._dipcore import dip_sorted as _dip_sorted

    COMPILED = True
except ImportError:  # pragma: no cover - depends on build environment
    from ._dip_py import dip_sorted as _dip_sorted

    COMPILED = False

__all__ = ["DipResult", "dip_statistic", "dip_pvalue", "null_dip_table", "COMPILED"]


@dataclass(frozen=True)
class DipResult:
    statistic: float
    p_value: float
    n: int


def dip_statistic(samples, assume_sorted: bool = False) -> float:
    """Dip statistic of a 1-d sample; requires at least 4 observations."""
    x = np.ascontiguousarray(samples, dtype=np.float64).ravel()
    if x.shape[0] < 4:
        raise ValueError(f"dip statistic needs n >= 4, got n={x.shape[0]}")
    if not assume_sorted:
        x = np.sort(x)
    return float(_dip_sorted(x))


@lru_cache(maxsize=64)
def _null_table_cached(n: int, n_boot: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    dips = np.empty(n_boot, dtype=np.float64)
    for b in range(n_boot):
        dips[b] = _dip_sorted(np.sort(rng.random(n)))
    dips.sort()
    dips.flags.writeable = False
    return dips

def null_dip_table(n: int, n_boot: int, seed: int) -> np.ndarray:
    """Sorted dips of ``n_boot`` uniform(0,1) samples of size ``n``."""
    return _null_table_cached(int(n), int(n_boot), int(seed))


def dip_pvalue(samples, n_boot: int = 1000, seed: int = 0) -> DipResult:
    """Dip statistic plus its bootstrap p-value under the uniform null."""
    if n_boot < 200:
        raise ValueError(f"n_boot must be >= 200, got {n_boot}")
    x = np.ascontiguousarray(samples, dtype=np.float64).ravel()
    if x.shape[0] < 4:
        raise ValueError(f"dip p-value needs n >= 4, got n={x.shape[0]}")
    d = dip_statistic(x)
    table = null_dip_table(x.shape[0], n_boot, seed)
    # fraction of null dips strictly exceeding the observed dip
    p = 1.0 - np.searchsorted(table, d, side="right") / n_boot
    return DipResult(statistic=d, p_value=float(p), n=int(x.shape[0]))
