import itertools
import logging
import math

import pytest
from pydantic import ValidationError

from src.bounds.dps import DiffMethod, DpsParams, diff_bound
from src.bounds.heterodyne import HeterodyneSide, OverlapMethod, offdiag_sum
from src.budget import (
    DpsPlanParams,
    HeterodyneParams,
    Protocol,
    SecurityBudget,
    plan_dimensions,
    protocol1_security_label,
    scaling_report,
    security_labels,
    verify_plan,
)
from src.errors import DomainError, VerificationError


@pytest.mark.parametrize(
    "delta, eps_smooth, eps_ir, eps_pe",
    [
        (0.0, 1e-9, 2e-9, 3e-9),
        (1e-6, 1e-6, 1e-6, 1e-6),
        (1e-9, 1e-10, 1e-12, 1e-8),
        (3.7e-7, 0.0, 0.0, 0.0),
        (1e-3, 2e-4, 5e-5, 1e-5),
    ],
)
def test_labels_match_closed_form(delta, eps_smooth, eps_ir, eps_pe):
    budget = SecurityBudget(delta=delta, eps_smooth=eps_smooth, eps_ir=eps_ir, eps_pe=eps_pe)
    eps = eps_smooth + eps_ir + eps_pe
    labels = security_labels(budget)
    assert labels.protocol1 == 5 * delta + eps
    assert protocol1_security_label(budget) == 5 * delta + eps
    assert labels.protocol2 == 2 * delta + eps
    assert labels.protocol1 - labels.protocol2 == (5 * delta + eps) - (2 * delta + eps)
    assert labels.protocol1 - labels.protocol2 == pytest.approx(3 * delta, abs=1e-300)


def test_labels_collapse_without_delta():
    labels = security_labels(SecurityBudget(delta=0.0, eps_smooth=1e-9, eps_ir=2e-9, eps_pe=3e-9))
    assert labels.protocol2 == labels.protocol1
    assert labels.protocol2_from_protocol1 == pytest.approx(labels.protocol1)


def test_protocol1_companion_labels():
    labels = security_labels(SecurityBudget(delta=1e-6, eps_smooth=1e-6, eps_ir=1e-6, eps_pe=1e-6))
    assert labels.parameter_estimation == pytest.approx(3e-6)
    assert labels.smoothing == pytest.approx(3e-6)


def test_protocol1_label_is_monotone():
    base = dict(delta=1e-7, eps_smooth=2e-7, eps_ir=3e-7, eps_pe=4e-7)
    reference = protocol1_security_label(SecurityBudget(**base))
    for key in base:
        bumped = SecurityBudget(**{**base, key: base[key] * 2})
        assert protocol1_security_label(bumped) >= reference


def test_budget_rejects_negative_components():
    with pytest.raises(ValidationError):
        SecurityBudget(delta=-1e-9, eps_smooth=0.0, eps_ir=0.0, eps_pe=0.0)


def test_plan_with_empty_disks_needs_one_dimension():
    plan = plan_dimensions(Protocol.HETERODYNE, HeterodyneParams(v_max_a=0.0, v_max_b=0.0), 10**6, 1e-3)
    assert (plan.d_A, plan.d_B) == (1, 1)
    assert plan.achieved_sum.upper == 0.0
    assert plan.margin == pytest.approx(plan.target)
    assert plan.beta_bound == 0.0
    assert plan.purified_dimension == 1
    assert plan.regime_ok


def test_heterodyne_plan_passes_reverification():
    params = HeterodyneParams(v_max_a=4.0, v_max_b=4.0)
    plan = plan_dimensions(Protocol.HETERODYNE, params, 10**6, 1e-3)
    target = 1e-9 / 10**6
    assert plan.target == pytest.approx(target)
    assert plan.achieved_sum.upper <= target
    assert plan.d_A == plan.d_B
    assert verify_plan(plan).upper <= target

    # minimal: one dimension less on a side breaks its share
    side = HeterodyneSide(v_max=4.0)
    share = 0.5 * target
    assert offdiag_sum(side, plan.d_A - 1, OverlapMethod.PAPER).value.upper > share * (1 - 1e-9)

    assert plan.beta_bound == pytest.approx(math.sqrt(10**6 * plan.achieved_sum.upper / 1e-3))
    assert plan.beta_bound <= 1e-3
    assert plan.state_distance_bound == pytest.approx(2 * plan.beta_bound)
    assert plan.purified_dimension == (plan.d_A * plan.d_B) ** 2


@pytest.mark.parametrize("epsilon", [1e-2, 3e-3, 1e-3, 3e-4, 1e-4])
def test_heterodyne_plans_hold_across_block_sizes(epsilon):
    params = HeterodyneParams(v_max_a=4.0, v_max_b=4.0)
    for n_signals in (10**k for k in range(4, 14)):
        plan = plan_dimensions(Protocol.HETERODYNE, params, n_signals, epsilon)
        assert plan.margin >= 0
        assert verify_plan(plan).upper <= plan.target


def test_uneven_split_moves_dimension_between_sides():
    params = HeterodyneParams(v_max_a=4.0, v_max_b=4.0, method=OverlapMethod.EXACT)
    plan = plan_dimensions(Protocol.HETERODYNE, params, 10**4, 1e-2, split=0.01)
    assert plan.method == "exact-diagonal"
    assert plan.d_A >= plan.d_B
    verify_plan(plan)


def test_dps_plan_at_unit_efficiency():
    params = DpsPlanParams(gamma=1.0, n0=3, block_size=2)
    plan = plan_dimensions(Protocol.DPS, params, 10**6, 1e-3)
    assert plan.m0 == 4
    assert plan.d_A == 4
    assert plan.d_B == math.comb(6, 2)
    assert plan.margin == pytest.approx(plan.target)
    assert plan.per_side["A"].value == 0.0
    verify_plan(plan)


def test_dps_plan_methods_order_cutoffs():
    cutoffs = {}
    for method in DiffMethod:
        params = DpsPlanParams(gamma=0.5, n0=2, block_size=1, method=method)
        plan = plan_dimensions(Protocol.DPS, params, 10**4, 1e-2)
        verify_plan(plan)
        cutoffs[method] = plan.m0
    assert cutoffs[DiffMethod.EXACT_FM] <= cutoffs[DiffMethod.PAPER_FM] <= cutoffs[DiffMethod.PAPER]

    params = DpsParams(gamma=0.5, n0=2, block_size=1, m0=cutoffs[DiffMethod.PAPER])
    assert diff_bound(params, DiffMethod.PAPER).upper <= 1e-6 / 10**4


@pytest.mark.parametrize(
    "n_signals, epsilon, split",
    [(0, 1e-3, 0.5), (10, 0.0, 0.5), (10, 1.0, 0.5), (10, 1e-3, 0.0), (10, 1e-3, 1.0)],
)
def test_plan_rejects_bad_inputs(n_signals, epsilon, split):
    with pytest.raises(DomainError):
        plan_dimensions(Protocol.HETERODYNE, HeterodyneParams(v_max_a=1.0, v_max_b=1.0), n_signals, epsilon, split)


def test_plan_rejects_mismatched_params():
    with pytest.raises(DomainError):
        plan_dimensions(Protocol.DPS, HeterodyneParams(v_max_a=1.0, v_max_b=1.0), 100, 0.1)
    with pytest.raises(DomainError):
        plan_dimensions(Protocol.HETERODYNE, DpsPlanParams(gamma=0.5, n0=1, block_size=1), 100, 0.1)


def test_regime_flag_warns(caplog):
    with caplog.at_level(logging.WARNING, logger="src.budget"):
        plan = plan_dimensions(Protocol.HETERODYNE, HeterodyneParams(v_max_a=4.0, v_max_b=4.0), 10, 0.5)
    assert not plan.regime_ok
    assert any("not small" in r.getMessage() for r in caplog.records)


def test_verify_plan_catches_tampering():
    plan = plan_dimensions(Protocol.HETERODYNE, HeterodyneParams(v_max_a=4.0, v_max_b=4.0), 10**4, 1e-2)
    with pytest.raises(VerificationError) as info:
        verify_plan(plan.model_copy(update={"d_A": 1}))
    assert info.value.lhs > info.value.rhs

    dps = plan_dimensions(Protocol.DPS, DpsPlanParams(gamma=1.0, n0=3, block_size=2), 10**4, 1e-2)
    with pytest.raises(VerificationError):
        verify_plan(dps.model_copy(update={"d_B": dps.d_B + 1}))


def test_plan_round_trips_through_json():
    plan = plan_dimensions(Protocol.DPS, DpsPlanParams(gamma=0.5, n0=2, block_size=2), 10**4, 1e-2)
    restored = type(plan).model_validate_json(plan.model_dump_json())
    assert restored == plan
    verify_plan(restored)


def test_scaling_single_point_has_no_slope():
    report = scaling_report(Protocol.HETERODYNE, HeterodyneParams(v_max_a=4.0, v_max_b=4.0), [1e-3], [10**6])
    assert len(report.rows) == 1
    assert not report.slope_defined
    assert report.slope is None


def test_scaling_rows_follow_grid_order_and_grow_with_n():
    params = HeterodyneParams(v_max_a=4.0, v_max_b=4.0, method=OverlapMethod.EXACT)
    eps_grid, n_grid = [1e-2, 1e-3], [10**4, 2 * 10**4, 4 * 10**4, 8 * 10**4]
    report = scaling_report(Protocol.HETERODYNE, params, eps_grid, n_grid)
    assert [(r.epsilon, r.n_signals) for r in report.rows] == list(itertools.product(eps_grid, n_grid))
    for eps in eps_grid:
        dims = [r.d_A for r in report.rows if r.epsilon == eps]
        assert dims == sorted(dims)
    assert report.slope_defined
    assert report.slope > 0


def test_scaling_dps_fits_cutoff():
    report = scaling_report(Protocol.DPS, DpsPlanParams(gamma=0.5, n0=1, block_size=1), [1e-2, 1e-3], [10**3, 10**5])
    assert report.fitted == "m0"
    assert all(r.m0 is not None for r in report.rows)
    assert report.slope_defined


def test_scaling_rejects_empty_grid():
    with pytest.raises(DomainError):
        scaling_report(Protocol.HETERODYNE, HeterodyneParams(v_max_a=1.0, v_max_b=1.0), [], [10])


@pytest.mark.slow
def test_dimension_grows_linearly_in_log_ratio():
    params = HeterodyneParams(v_max_a=4.0, v_max_b=4.0)
    report = scaling_report(
        Protocol.HETERODYNE, params, [1e-2, 1e-3, 1e-4, 1e-5, 1e-6], [10**4, 10**6, 10**8, 10**10]
    )
    assert report.r_squared >= 0.9
