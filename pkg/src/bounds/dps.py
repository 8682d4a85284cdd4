"""DPS-QKD with an inefficient photon-number-resolving detector.

Purely combinatorial: l-mode Fock spaces are never built here, only counted.
"""

import logging
import math
from enum import Enum
from functools import lru_cache
from typing import Iterable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import gammaln, xlog1py, xlogy

from ..config import config
from ..errors import BudgetUnreachableError, DimensionOverflowError, DomainError
from ..numerics import CertifiedValue, log_binomial, sum_certified_batch

logger = logging.getLogger(__name__)


class DiffMethod(str, Enum):
    PAPER = "paper"
    PAPER_FM = "paper-fm"
    EXACT_FM = "exact-fm"


class DpsParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    gamma: float = Field(gt=0.0, le=1.0)
    n0: int = Field(ge=0)
    block_size: int = Field(ge=1)
    m0: int = Field(ge=0)

    @model_validator(mode="after")
    def _cutoff_covers_observed(self) -> "DpsParams":
        if self.m0 < self.n0:
            raise ValueError(f"m0 ({self.m0}) must be >= n0 ({self.n0})")
        return self

    @classmethod
    def from_block_maxima(
        cls, counts: Iterable[int], gamma: float, block_size: int, m0: Optional[int] = None
    ) -> "DpsParams":
        """n0 is the largest photon count Bob announced over all blocks."""
        values = list(counts)
        if not values:
            raise DomainError("at least one block maximum is required")
        n0 = max(values)
        return cls(gamma=gamma, n0=n0, block_size=block_size, m0=n0 if m0 is None else m0)


def povm_weight(n: int, m: int, gamma: float) -> float:
    """C(m, n) gamma^n (1 - gamma)^(m - n): chance that m photons register as n clicks."""
    if not 0 <= n <= m:
        raise DomainError(f"povm_weight needs 0 <= n <= m, got n={n}, m={m}")
    if not 0 < gamma <= 1:
        raise DomainError(f"detector efficiency must lie in (0, 1], got {gamma}")
    return math.exp(log_binomial(m, n) + float(xlogy(n, gamma)) + float(xlog1py(m - n, -gamma)))


def _check_counts(m: int, l: int) -> None:
    if m < 0 or l < 1:
        raise DomainError(f"need m >= 0 and l >= 1, got m={m}, l={l}")


def _capped_comb(n: int, k: int) -> int:
    cap = config.dps.max_exact_count
    log_value = log_binomial(n, k)
    # gammaln is accurate well inside this margin, so math.comb is only called on values near the cap
    if log_value > math.log(cap) + 1.0:
        raise DimensionOverflowError(f"C({n}, {k}) exceeds the exact-count cap {cap}", log_value)
    value = math.comb(n, k)
    if value > cap:
        raise DimensionOverflowError(f"C({n}, {k}) exceeds the exact-count cap {cap}", log_value)
    return value


def log_subspace_dim(m: int, l: int) -> float:
    _check_counts(m, l)
    return log_binomial(m + l - 1, l - 1)


def subspace_dim_exact(m: int, l: int) -> int:
    """Number of m-photon Fock states over l modes, C(m + l - 1, l - 1)."""
    _check_counts(m, l)
    return _capped_comb(m + l - 1, l - 1)


def subspace_dim_paper_bound(m: int, l: int) -> float:
    """l (m + l - 1)! / m!, which overcounts the exact dimension by exactly l!."""
    _check_counts(m, l)
    log_value = math.log(l) + float(gammaln(m + l) - gammaln(m + 1))
    if log_value < math.log(config.dps.max_exact_count):
        return float(l * math.perm(m + l - 1, l - 1))
    return float(np.exp(log_value))


def filter_dimension(m0: int, l: int) -> int:
    """All Fock states with at most m0 photons in total: C(m0 + l, l)."""
    _check_counts(m0, l)
    return _capped_comb(m0 + l, l)


def alice_dimension(l: int) -> int:
    if l < 1:
        raise DomainError(f"block size must be >= 1, got {l}")
    return 2**l


def _log_count_factor(method: DiffMethod, n: np.ndarray, m: int, l: int) -> np.ndarray:
    if method is DiffMethod.PAPER:
        return math.log(l) - gammaln(n + 1) + xlogy(l + n - 1, m + l - 1)
    log_choose = gammaln(m + 1) - gammaln(n + 1) - gammaln(m - n + 1)
    if method is DiffMethod.PAPER_FM:
        return log_choose + math.log(l) + gammaln(m + l) - gammaln(m + 1)
    return log_choose + gammaln(m + l) - gammaln(l) - gammaln(m + 1)


def _ratio_bound(method: DiffMethod, n: np.ndarray, m: int, l: int, gamma: float) -> np.ndarray:
    if method is DiffMethod.PAPER:
        if m + l - 1 == 0:
            return np.full(n.shape, np.inf)
        return (1.0 - gamma) * np.exp((l + n - 1) * (math.log(m + l) - math.log(m + l - 1)))
    # both f_m-based variants share (m + l) / (m + 1 - n), decreasing in m
    return (1.0 - gamma) * (m + l) / (m + 1.0 - n)


@lru_cache(maxsize=4096)
def _diff(gamma: float, n0: int, l: int, m0: int, method: DiffMethod, sum_rel_tol: float) -> tuple[float, float]:
    n = np.arange(n0 + 1, dtype=float)
    log_gamma_n = xlogy(n, gamma)

    def term(m: int) -> np.ndarray:
        log_t = log_gamma_n + xlog1py(m - n, -gamma) + _log_count_factor(method, n, m, l)
        return np.exp(log_t)

    values, tails = sum_certified_batch(
        term, m0, lambda m: _ratio_bound(method, n, m, l, gamma), rel_tol=sum_rel_tol
    )
    return math.fsum(values), math.fsum(tails)


def diff_bound(params: DpsParams, method: Optional[DiffMethod] = None) -> CertifiedValue:
    """Upper bound on the weight the cutoff m0 drops, summed over every count n <= n0.

    Each inner m-series starts at m0 and runs to infinity; gamma = 1 leaves only the
    m = n term, so the bound is exactly 0 once m0 > n0.
    """
    method = DiffMethod(method or config.dps.default_method)
    value, tail = _diff(
        float(params.gamma), params.n0, params.block_size, params.m0, method, config.numerics.sum_rel_tol
    )
    return CertifiedValue(value=value, tail_bound=tail)


def find_min_cutoff(
    gamma: float,
    n0: int,
    block_size: int,
    budget: float,
    method: Optional[DiffMethod] = None,
    cap: Optional[int] = None,
) -> int:
    """Smallest m0 >= n0 whose certified Diff bound fits the budget."""
    if not budget > 0:
        raise DomainError(f"budget must be > 0, got {budget}")
    cap = config.dps.max_cutoff if cap is None else cap
    if gamma == 1.0:
        return DpsParams(gamma=gamma, n0=n0, block_size=block_size, m0=n0 + 1).m0

    def fits(m0: int) -> bool:
        params = DpsParams(gamma=gamma, n0=n0, block_size=block_size, m0=m0)
        return diff_bound(params, method).upper <= budget

    if fits(n0):
        return n0

    lo, hi, step = n0, n0, 1
    while True:
        lo, hi = hi, min(n0 + step, cap)
        step *= 2
        if hi > lo and fits(hi):
            break
        if hi >= cap:
            raise BudgetUnreachableError(
                f"no cutoff m0 <= {cap} brings Diff (gamma={gamma}, n0={n0}, l={block_size}) under {budget:.3e}",
                budget,
                cap,
            )

    while hi - lo > 1:
        mid = (lo + hi) // 2
        if fits(mid):
            hi = mid
        else:
            lo = mid

    logger.debug("gamma=%g n0=%d l=%d budget=%.3e -> m0=%d", gamma, n0, block_size, budget, hi)
    return hi
