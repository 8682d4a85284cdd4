"""Scalar kernels shared by every calculator.

Factorials and binomials are handled in log space, positive series are summed with
compensated accumulation and a geometric tail certificate, and finite integrals use an
adaptive 7/15-point Gauss-Kronrod bisection whose embedded |K15 - G7| difference is
reported as the error bound.
"""

import heapq
import logging
import math
from typing import Callable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator
from scipy.special import gammainc, gammaln

from .config import config
from .errors import DomainError, NonConvergenceError, ToleranceNotMetError

logger = logging.getLogger(__name__)

# Kronrod abscissae (descending, last is the centre) and weights; Gauss weights sit on the odd entries
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

# Full 15-node layout: -x0..-x6, 0, x6..x0
_NODES = np.concatenate([-_XGK[:-1], [0.0], _XGK[:-1][::-1]])
_KRONROD_WEIGHTS = np.concatenate([_WGK[:-1], [_WGK[-1]], _WGK[:-1][::-1]])
_GAUSS_WEIGHTS = np.zeros(15)
for _i, _w in zip((1, 3, 5), _WG[:3]):
    _GAUSS_WEIGHTS[_i] = _w
    _GAUSS_WEIGHTS[14 - _i] = _w
_GAUSS_WEIGHTS[7] = _WG[3]


class CertifiedValue(BaseModel):
    """A value with an absolute bound on everything the computation left out."""

    model_config = ConfigDict(frozen=True)

    value: float
    tail_bound: float = 0.0

    @field_validator("value")
    @classmethod
    def _finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("certified value must be finite")
        return v

    @field_validator("tail_bound")
    @classmethod
    def _nonnegative(cls, v: float) -> float:
        if not math.isfinite(v) or v < 0:
            raise ValueError("tail_bound must be finite and >= 0")
        return v

    @property
    def upper(self) -> float:
        return self.value + self.tail_bound

    @property
    def lower(self) -> float:
        return self.value - self.tail_bound

    def contains(self, x: float, slack: float = 0.0) -> bool:
        return self.lower - slack <= x <= self.upper + slack

    def __add__(self, other: "CertifiedValue") -> "CertifiedValue":
        return CertifiedValue(value=self.value + other.value, tail_bound=self.tail_bound + other.tail_bound)


def log_factorial(n: int) -> float:
    if n < 0 or int(n) != n:
        raise DomainError(f"log_factorial needs a nonnegative integer, got {n}")
    return float(gammaln(n + 1))


def log_binomial(n: int, k: int) -> float:
    if k < 0 or k > n:
        raise DomainError(f"log_binomial needs 0 <= k <= n, got n={n}, k={k}")
    return float(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))


def regularized_lower_gamma(s, x):
    """P(s, x) = gamma(s, x) / Gamma(s); scalars in, float out, arrays in, array out."""
    s_arr = np.asarray(s, dtype=float)
    x_arr = np.asarray(x, dtype=float)
    if np.any(s_arr <= 0) or np.any(~np.isfinite(s_arr)):
        raise DomainError(f"regularized_lower_gamma needs s > 0, got {s}")
    if np.any(x_arr < 0) or np.any(np.isnan(x_arr)):
        raise DomainError(f"regularized_lower_gamma needs x >= 0, got {x}")
    # scipy switches between the power series and the continued fraction at x ~ s + 1
    result = gammainc(s_arr, x_arr)
    if result.ndim == 0:
        return float(result)
    return result


def _neumaier_add(total: np.ndarray, comp: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = total + x
    comp = comp + np.where(np.abs(total) >= np.abs(x), (total - s) + x, (x - s) + total)
    return s, comp


def sum_certified_batch(
    term: Callable[[int], np.ndarray],
    start: int,
    ratio_bound: Callable[[int], np.ndarray],
    rel_tol: Optional[float] = None,
    max_terms: Optional[int] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Sum many nonnegative series at once, one per lane of the arrays `term` returns.

    `ratio_bound(k)` must bound term(j+1)/term(j) for every j >= k. A lane stops at the
    first k where ratio_bound(k) < 1 and term(k) r / (1 - r) <= rel_tol * partial sum;
    that geometric bound is its tail_bound.
    """
    rel_tol = config.numerics.sum_rel_tol if rel_tol is None else rel_tol
    max_terms = config.numerics.max_terms if max_terms is None else max_terms

    k = start
    t = np.atleast_1d(np.asarray(term(k), dtype=float))
    total = np.zeros_like(t)
    comp = np.zeros_like(t)
    tail = np.zeros_like(t)
    active = np.ones(t.shape, dtype=bool)

    for _ in range(max_terms):
        if np.any(~np.isfinite(t[active])) or np.any(t[active] < 0):
            raise DomainError(f"series term at index {k} is negative or not finite")
        total, comp = _neumaier_add(total, comp, np.where(active, t, 0.0))

        r = np.broadcast_to(np.asarray(ratio_bound(k), dtype=float), t.shape)
        contracting = r < 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            bound = np.where(contracting, t * r / (1.0 - r), np.inf)
        done = active & contracting & (bound <= rel_tol * (total + comp))
        tail = np.where(done, bound, tail)
        active &= ~done
        if not active.any():
            return total + comp, tail

        k += 1
        t = np.broadcast_to(np.asarray(term(k), dtype=float), total.shape)

    partial = float(np.max(total + comp))
    raise NonConvergenceError(
        f"series did not certify within {max_terms} terms (stopped at index {k})", partial, k
    )


def sum_certified(
    term: Callable[[int], float],
    start: int,
    ratio_bound: Callable[[int], float],
    rel_tol: Optional[float] = None,
    max_terms: Optional[int] = None,
) -> CertifiedValue:
    values, tails = sum_certified_batch(term, start, ratio_bound, rel_tol=rel_tol, max_terms=max_terms)
    return CertifiedValue(value=float(values[0]), tail_bound=float(tails[0]))


def _gauss_kronrod(f: Callable[[np.ndarray], np.ndarray], left: float, right: float) -> tuple[float, float]:
    half = 0.5 * (right - left)
    center = 0.5 * (right + left)
    x = center + half * _NODES
    fx = np.broadcast_to(np.asarray(f(x), dtype=float), x.shape)
    if not np.all(np.isfinite(fx)):
        raise DomainError(f"integrand is not finite on [{left}, {right}]")
    kronrod = half * float(np.dot(_KRONROD_WEIGHTS, fx))
    gauss = half * float(np.dot(_GAUSS_WEIGHTS, fx))
    return kronrod, abs(kronrod - gauss)


def integrate_adaptive(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    tol: Optional[float] = None,
    rel_tol: float = 0.0,
    max_intervals: Optional[int] = None,
) -> CertifiedValue:
    """Integrate a vectorized `f` over [a, b] by bisecting the worst interval.

    Stops once the summed |K15 - G7| estimates are within max(tol, rel_tol * |value|).
    """
    tol = config.numerics.quad_tol if tol is None else tol
    max_intervals = config.numerics.quad_max_intervals if max_intervals is None else max_intervals
    if a > b:
        raise DomainError(f"integration bounds out of order: [{a}, {b}]")
    if tol <= 0 and rel_tol <= 0:
        raise DomainError("integrate_adaptive needs tol > 0 or rel_tol > 0")
    if a == b:
        return CertifiedValue(value=0.0, tail_bound=0.0)

    value, err = _gauss_kronrod(f, a, b)
    heap = [(-err, a, b, value, err)]
    total_value = value
    total_err = err

    while True:
        if total_err <= max(tol, rel_tol * abs(total_value)):
            # re-add exactly before accepting; the running totals drift
            total_value = math.fsum(item[3] for item in heap)
            total_err = math.fsum(item[4] for item in heap)
            if total_err <= max(tol, rel_tol * abs(total_value)):
                break
        if len(heap) >= max_intervals:
            best = math.fsum(item[3] for item in heap)
            raise ToleranceNotMetError(
                f"quadrature needed more than {max_intervals} intervals on [{a}, {b}]", best, total_err
            )
        _, left, right, old_value, old_err = heapq.heappop(heap)
        mid = 0.5 * (left + right)
        if not left < mid < right:
            best = math.fsum(item[3] for item in heap) + old_value
            raise ToleranceNotMetError(f"interval [{left}, {right}] cannot be bisected further", best, total_err)
        v1, e1 = _gauss_kronrod(f, left, mid)
        v2, e2 = _gauss_kronrod(f, mid, right)
        heapq.heappush(heap, (-e1, left, mid, v1, e1))
        heapq.heappush(heap, (-e2, mid, right, v2, e2))
        total_value += v1 + v2 - old_value
        total_err += e1 + e2 - old_err

    logger.debug("integrated [%g, %g] with %d intervals, err=%.3e", a, b, len(heap), total_err)
    return CertifiedValue(value=total_value, tail_bound=total_err)
