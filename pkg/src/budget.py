"""Security-label arithmetic and end-to-end filter dimension planning.

A plan splits the eps^3/N budget between the two sides, asks the calculators for the
smallest filter dimensions that fit, and reports what those dimensions buy: the bound on
|beta|, the resulting state distance and the purified dimension (d_A d_B)^2.
"""

import logging
import math
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.stats import linregress

from .bounds.dps import DiffMethod, DpsParams, alice_dimension, diff_bound, filter_dimension, find_min_cutoff
from .bounds.heterodyne import HeterodyneSide, OverlapMethod, find_min_dimension, offdiag_sum
from .config import config
from .errors import DomainError, VerificationError
from .numerics import CertifiedValue

logger = logging.getLogger(__name__)

# side budgets are shaved so that their floating-point sum cannot exceed eps^3/N
_ROUNDING_ROOM = 1e-12


class Protocol(str, Enum):
    HETERODYNE = "hetero"
    DPS = "dps"


class SecurityBudget(BaseModel):
    model_config = ConfigDict(frozen=True)

    delta: float = Field(ge=0.0)
    eps_smooth: float = Field(ge=0.0)
    eps_ir: float = Field(ge=0.0)
    eps_pe: float = Field(ge=0.0)
    leak_ir: float = Field(default=0.0, ge=0.0)

    @property
    def epsilon(self) -> float:
        return self.eps_smooth + self.eps_ir + self.eps_pe


class SecurityLabels(BaseModel):
    protocol1: float
    protocol2: float
    protocol2_from_protocol1: float
    parameter_estimation: float
    smoothing: float


def protocol1_security_label(budget: SecurityBudget) -> float:
    """5 delta + eps: the filter costs three extra deltas over the finite-dimensional protocol."""
    return 5 * budget.delta + budget.epsilon


def security_labels(budget: SecurityBudget) -> SecurityLabels:
    two_delta = 2 * budget.delta
    return SecurityLabels(
        protocol1=protocol1_security_label(budget),
        protocol2=two_delta + budget.epsilon,
        protocol2_from_protocol1=budget.epsilon + two_delta,
        parameter_estimation=budget.eps_pe + two_delta,
        smoothing=two_delta + budget.eps_smooth,
    )


class HeterodyneParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    v_max_a: float = Field(ge=0.0)
    v_max_b: float = Field(ge=0.0)
    method: Optional[OverlapMethod] = None


class DpsPlanParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    gamma: float = Field(gt=0.0, le=1.0)
    n0: int = Field(ge=0)
    block_size: int = Field(ge=1)
    method: Optional[DiffMethod] = None


PlanParams = Union[HeterodyneParams, DpsPlanParams]


class DimensionPlan(BaseModel):
    n_signals: int
    epsilon: float
    protocol: Protocol
    method: str
    split: float
    side_params: dict
    d_A: int
    d_B: int
    m0: Optional[int] = None
    achieved_sum: CertifiedValue
    per_side: dict[str, CertifiedValue]
    margin: float
    beta_bound: float
    state_distance_bound: float
    purified_dimension: int
    regime_ok: bool

    @property
    def target(self) -> float:
        return self.epsilon**3 / self.n_signals


def _check_plan_inputs(n_signals: int, epsilon: float, split: float) -> None:
    if n_signals < 1:
        raise DomainError(f"n_signals must be >= 1, got {n_signals}")
    if not 0 < epsilon < 1:
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    if not 0 < split < 1:
        raise DomainError(f"split must lie in (0, 1), got {split}")


def plan_dimensions(
    protocol: Protocol,
    params: PlanParams,
    n_signals: int,
    epsilon: float,
    split: Optional[float] = None,
) -> DimensionPlan:
    protocol = Protocol(protocol)
    split = config.heterodyne.split if split is None else split
    _check_plan_inputs(n_signals, epsilon, split)
    target = epsilon**3 / n_signals
    usable = target * (1 - _ROUNDING_ROOM)

    if protocol is Protocol.HETERODYNE:
        if not isinstance(params, HeterodyneParams):
            raise DomainError("a heterodyne plan needs HeterodyneParams")
        method = OverlapMethod(params.method or config.heterodyne.default_method)
        side_a = HeterodyneSide(v_max=params.v_max_a, label="A")
        side_b = HeterodyneSide(v_max=params.v_max_b, label="B")
        d_a = find_min_dimension(side_a, split * usable, method)
        d_b = find_min_dimension(side_b, (1 - split) * usable, method)
        per_side = {"A": offdiag_sum(side_a, d_a, method).value, "B": offdiag_sum(side_b, d_b, method).value}
        m0 = None
        method_name = method.value
    else:
        if not isinstance(params, DpsPlanParams):
            raise DomainError("a DPS plan needs DpsPlanParams")
        method = DiffMethod(params.method or config.dps.default_method)
        # Alice's 2^l-dimensional modulation is finite: her side needs no budget
        split = 0.0
        m0 = find_min_cutoff(params.gamma, params.n0, params.block_size, usable, method)
        d_a = alice_dimension(params.block_size)
        d_b = filter_dimension(m0, params.block_size)
        dps = DpsParams(gamma=params.gamma, n0=params.n0, block_size=params.block_size, m0=m0)
        per_side = {"A": CertifiedValue(value=0.0), "B": diff_bound(dps, method)}
        method_name = method.value

    achieved = per_side["A"] + per_side["B"]
    beta_bound = math.sqrt(n_signals * achieved.upper / epsilon)
    purified = (d_a * d_b) ** 2
    regime_ok = purified <= n_signals / config.budget.regime_factor
    if not regime_ok:
        logger.warning(
            "(d_A d_B)^2 = %d is not small against N = %d (factor %g)", purified, n_signals, config.budget.regime_factor
        )

    return DimensionPlan(
        n_signals=n_signals,
        epsilon=epsilon,
        protocol=protocol,
        method=method_name,
        split=split,
        side_params=params.model_dump(mode="json"),
        d_A=d_a,
        d_B=d_b,
        m0=m0,
        achieved_sum=achieved,
        per_side=per_side,
        margin=target - achieved.upper,
        beta_bound=beta_bound,
        state_distance_bound=2 * beta_bound,
        purified_dimension=purified,
        regime_ok=regime_ok,
    )


def verify_plan(plan: DimensionPlan) -> CertifiedValue:
    """Recompute the bound at the planned dimensions and hold it against eps^3/N."""
    if plan.protocol is Protocol.HETERODYNE:
        params = HeterodyneParams.model_validate(plan.side_params)
        method = OverlapMethod(plan.method)
        total = offdiag_sum(HeterodyneSide(v_max=params.v_max_a, label="A"), plan.d_A, method).value + offdiag_sum(
            HeterodyneSide(v_max=params.v_max_b, label="B"), plan.d_B, method
        ).value
    else:
        params = DpsPlanParams.model_validate(plan.side_params)
        dps = DpsParams(gamma=params.gamma, n0=params.n0, block_size=params.block_size, m0=plan.m0)
        total = diff_bound(dps, DiffMethod(plan.method))
        if plan.d_B != filter_dimension(plan.m0, params.block_size):
            raise VerificationError("planned d_B does not match the cutoff", plan.d_B, plan.m0)

    if total.upper > plan.target:
        raise VerificationError("planned dimensions exceed eps^3/N", total.upper, plan.target)
    return total


class ScalingRow(BaseModel):
    n_signals: int
    epsilon: float
    log_ratio: float
    d_A: int
    d_B: int
    m0: Optional[int] = None
    achieved_sum: CertifiedValue


class ScalingReport(BaseModel):
    protocol: Protocol
    rows: list[ScalingRow]
    fitted: str
    slope: Optional[float] = None
    intercept: Optional[float] = None
    r_squared: Optional[float] = None
    max_relative_residual: Optional[float] = None
    slope_defined: bool = False


def scaling_report(
    protocol: Protocol,
    params: PlanParams,
    epsilon_grid: Sequence[float],
    n_grid: Sequence[int],
    split: Optional[float] = None,
) -> ScalingReport:
    """Plans over an (eps, N) grid, eps outer and N inner, with a least-squares fit of d against ln(N/eps^3)."""
    protocol = Protocol(protocol)
    if not epsilon_grid or not n_grid:
        raise DomainError("scaling grids must be nonempty")

    rows = []
    for epsilon in epsilon_grid:
        for n in n_grid:
            plan = plan_dimensions(protocol, params, n, epsilon, split)
            rows.append(
                ScalingRow(
                    n_signals=n,
                    epsilon=epsilon,
                    log_ratio=math.log(n / epsilon**3),
                    d_A=plan.d_A,
                    d_B=plan.d_B,
                    m0=plan.m0,
                    achieved_sum=plan.achieved_sum,
                )
            )

    fitted = "d_A" if protocol is Protocol.HETERODYNE else "m0"
    x = np.array([r.log_ratio for r in rows])
    y = np.array([r.d_A if protocol is Protocol.HETERODYNE else r.m0 for r in rows], dtype=float)
    report = ScalingReport(protocol=protocol, rows=rows, fitted=fitted)
    if len(rows) < 2 or np.ptp(x) == 0:
        logger.info("scaling fit skipped: needs two distinct values of ln(N/eps^3)")
        return report

    fit = linregress(x, y)
    residuals = y - (fit.intercept + fit.slope * x)
    report.slope = float(fit.slope)
    report.intercept = float(fit.intercept)
    report.r_squared = float(fit.rvalue**2)
    report.max_relative_residual = float(np.max(np.abs(residuals) / np.maximum(y, 1.0)))
    report.slope_defined = True
    return report
