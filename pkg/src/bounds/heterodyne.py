"""Heterodyne CV-QKD: the disk POVM element in the Fock basis and its off-diagonal weight.

Index convention: a filter of dimension d keeps Fock levels 0..d-1 and the off-diagonal
weight sums i over [0, inf) and j over [d, inf). This dominates both index conventions
used for the bound, so a dimension chosen here is valid for either.
"""

import logging
import math
from enum import Enum
from functools import lru_cache
from typing import Iterable, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.special import gammaln, xlogy

from ..config import config
from ..errors import BudgetUnreachableError, DomainError
from ..numerics import (
    CertifiedValue,
    integrate_adaptive,
    log_factorial,
    regularized_lower_gamma,
    sum_certified,
    sum_certified_batch,
)

logger = logging.getLogger(__name__)


class OverlapMethod(str, Enum):
    PAPER = "paper-literal"
    POLAR = "paper-literal-polar"
    EXACT = "exact-diagonal"


class HeterodyneSide(BaseModel):
    model_config = ConfigDict(frozen=True)

    v_max: float = Field(ge=0.0)
    label: Literal["A", "B"] = "A"

    @field_validator("v_max")
    @classmethod
    def _finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("v_max must be finite")
        return v

    @classmethod
    def from_block_maxima(cls, maxima: Iterable[float], label: Literal["A", "B"] = "A") -> "HeterodyneSide":
        """Every block measures with the same heterodyne POVM, so the largest disk dominates them all."""
        values = list(maxima)
        if not values:
            raise DomainError("at least one block maximum is required")
        return cls(v_max=max(values), label=label)


class OverlapBound(BaseModel):
    model_config = ConfigDict(frozen=True)

    d: int = Field(ge=1)
    method: OverlapMethod
    v_max: float
    value: CertifiedValue

    @field_validator("value")
    @classmethod
    def _nonnegative(cls, v: CertifiedValue) -> CertifiedValue:
        if v.value < 0:
            raise ValueError("off-diagonal weight cannot be negative")
        return v


def fock_overlap_magnitude(n: int, r: float) -> float:
    """|<n|alpha>| for |alpha| = r."""
    if n < 0 or r < 0:
        raise DomainError(f"fock_overlap_magnitude needs n >= 0 and r >= 0, got n={n}, r={r}")
    return math.exp(float(xlogy(n, r)) - 0.5 * r * r - 0.5 * log_factorial(n))


def dtilde_matrix_element_exact(m: int, n: int, v_max: float) -> float:
    """<m|D|n> for D = (1/pi) * integral of |alpha><alpha| over |alpha|^2 <= v_max."""
    if m < 0 or n < 0 or v_max < 0:
        raise DomainError(f"matrix element needs m, n, v_max >= 0, got ({m}, {n}, {v_max})")
    if m != n:
        return 0.0
    return regularized_lower_gamma(n + 1, v_max)


def dtilde_matrix(v_max: float, size: int) -> np.ndarray:
    """Truncated size x size Fock matrix of the disk element (diagonal)."""
    if size < 1 or v_max < 0:
        raise DomainError(f"dtilde_matrix needs size >= 1 and v_max >= 0, got ({v_max}, {size})")
    return np.diag(regularized_lower_gamma(np.arange(1, size + 1, dtype=float), v_max))


def _scaled_power_sum(r: np.ndarray, start: int, sum_rel_tol: float) -> np.ndarray:
    """sum_{k >= start} r^k e^{-r^2/2} / sqrt(k!), one lane per radius."""
    r = np.asarray(r, dtype=float)
    half_r2 = 0.5 * r * r

    def term(k: int) -> np.ndarray:
        return np.exp(xlogy(k, r) - half_r2 - 0.5 * gammaln(k + 1))

    def ratio(k: int) -> np.ndarray:
        return r / np.sqrt(k + 1.0)

    values, _ = sum_certified_batch(term, start, ratio, rel_tol=sum_rel_tol)
    return values


@lru_cache(maxsize=8192)
def _paper_sum(v_max: float, d: int, polar: bool, quad_rel_tol: float, sum_rel_tol: float) -> tuple[float, float]:
    def integrand(r: np.ndarray) -> np.ndarray:
        # e^{-r^2} is split evenly between the two series so neither overflows
        head = _scaled_power_sum(r, 0, sum_rel_tol)
        tail = _scaled_power_sum(r, d, sum_rel_tol)
        values = 2.0 * head * tail
        return values * r if polar else values

    quad = integrate_adaptive(integrand, 0.0, math.sqrt(v_max), tol=0.0, rel_tol=quad_rel_tol)
    # each series is short by at most sum_rel_tol of itself
    truncation = 3.0 * sum_rel_tol * abs(quad.value)
    return quad.value, quad.tail_bound + truncation


def offdiag_sum_paper(side: HeterodyneSide, d: int, method: OverlapMethod = OverlapMethod.PAPER) -> OverlapBound:
    """The integral bound on sum_{i>=0, j>=d} |<i|D|j>| as printed (dr), or with the polar measure (r dr)."""
    method = OverlapMethod(method)
    if method is OverlapMethod.EXACT:
        raise DomainError("offdiag_sum_paper evaluates the integral bound only; use offdiag_sum_exact")
    if d < 1:
        raise DomainError(f"filter dimension must be >= 1, got {d}")
    if side.v_max == 0:
        return OverlapBound(d=d, method=method, v_max=0.0, value=CertifiedValue(value=0.0, tail_bound=0.0))

    value, tail = _paper_sum(
        float(side.v_max), int(d), method is OverlapMethod.POLAR,
        config.numerics.quad_rel_tol, config.numerics.sum_rel_tol,
    )
    return OverlapBound(d=d, method=method, v_max=side.v_max, value=CertifiedValue(value=value, tail_bound=tail))


@lru_cache(maxsize=8192)
def _exact_sum(v_max: float, d: int, sum_rel_tol: float) -> tuple[float, float]:
    result = sum_certified(
        lambda j: regularized_lower_gamma(j + 1, v_max),
        d,
        # P(s+1, V) <= V/(s+1) * P(s, V)
        lambda j: v_max / (j + 2.0),
        rel_tol=sum_rel_tol,
    )
    return result.value, result.tail_bound


def offdiag_sum_exact(side: HeterodyneSide, d: int) -> OverlapBound:
    """sum_{j>=d} P(j+1, v_max): the disk element is diagonal in the Fock basis."""
    if d < 1:
        raise DomainError(f"filter dimension must be >= 1, got {d}")
    value, tail = _exact_sum(float(side.v_max), int(d), config.numerics.sum_rel_tol)
    return OverlapBound(
        d=d, method=OverlapMethod.EXACT, v_max=side.v_max, value=CertifiedValue(value=value, tail_bound=tail)
    )


def offdiag_sum(side: HeterodyneSide, d: int, method: Optional[OverlapMethod] = None) -> OverlapBound:
    method = OverlapMethod(method or config.heterodyne.default_method)
    if method is OverlapMethod.EXACT:
        return offdiag_sum_exact(side, d)
    return offdiag_sum_paper(side, d, method)


def find_min_dimension(
    side: HeterodyneSide,
    budget: float,
    method: Optional[OverlapMethod] = None,
    cap: Optional[int] = None,
) -> int:
    """Smallest d whose certified off-diagonal weight (value + tail) fits the budget.

    Doubling brackets the answer, bisection pins it down; both rely on the weight being
    nonincreasing in d.
    """
    if not budget > 0:
        raise DomainError(f"budget must be > 0, got {budget}")
    cap = config.heterodyne.max_dimension if cap is None else cap

    def fits(d: int) -> bool:
        return offdiag_sum(side, d, method).value.upper <= budget

    if fits(1):
        return 1

    lo, hi = 1, 1
    while True:
        lo, hi = hi, min(2 * hi, cap)
        if fits(hi):
            break
        if hi >= cap:
            raise BudgetUnreachableError(
                f"no filter dimension <= {cap} brings side {side.label} (v_max={side.v_max}) under {budget:.3e}",
                budget,
                cap,
            )

    while hi - lo > 1:
        mid = (lo + hi) // 2
        if fits(mid):
            hi = mid
        else:
            lo = mid

    logger.debug("side %s v_max=%g budget=%.3e -> d=%d", side.label, side.v_max, budget, hi)
    return hi
