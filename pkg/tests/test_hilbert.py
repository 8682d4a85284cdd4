import numpy as np
import pytest

from src.config import override
from src.errors import (
    ComplementMembershipError,
    DegenerateComplementError,
    DegenerateDenominatorError,
    DimensionMismatchError,
    DomainError,
    IncompletePovmError,
    NotAProjectorError,
    NotPositiveSemidefiniteError,
    TensorBudgetError,
    ZeroProbabilityError,
)
from src.hilbert.channel import (
    MeasurementSetup,
    build_protocol_states,
    build_protocol_states_dilated,
    cq_trace_distance,
    dominating_povm,
    measure_channel,
    protocol_dims,
    reduce_to_outcomes,
)
from src.hilbert.instances import InstanceSpec, random_contraction, random_instance, random_povm, random_pure_state
from src.hilbert.operators import (
    DenseOperator,
    PureState,
    coordinate_projector,
    partial_trace,
    partial_trace_pure,
    pure_state_distance,
    trace_distance,
)
from src.hilbert.theorem import (
    acceptance_probability,
    appendix_decomposition,
    cauchy_schwarz_lemma_check,
    compute_beta,
    requirement_satisfied,
    theorem1_lhs,
    theorem1_rhs,
)
from src.hilbert.verify import verify_beta, verify_lemma, verify_theorem1


def _density(rng, dim):
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = g @ g.conj().T
    return rho / np.trace(rho)


def _basis_state(dims, index):
    amplitudes = np.zeros(int(np.prod(dims)), dtype=complex)
    amplitudes[index] = 1.0
    return PureState(dims=dims, amplitudes=amplitudes)


def test_measure_channel_projective_on_eigenstate():
    rng = np.random.default_rng(0)
    sigma = _density(rng, 2)
    rho = DenseOperator(dims=(2, 2), entries=np.kron(np.diag([1.0, 0.0]), sigma))
    setup = MeasurementSetup(povm=(np.diag([1.0, 0.0]), np.diag([0.0, 1.0])), accepted=(0,))
    out = measure_channel(rho, setup)
    assert out.dims == (2, 2)
    np.testing.assert_allclose(out.entries[:2, :2], sigma, atol=1e-12)
    np.testing.assert_allclose(out.entries[2:, 2:], 0.0, atol=1e-12)


def test_measure_channel_symmetric_povm():
    rho = DenseOperator(dims=(2, 2), entries=np.eye(4) / 4)
    setup = MeasurementSetup(povm=(np.eye(2) / 2, np.eye(2) / 2), accepted=(0, 1))
    out = measure_channel(rho, setup)
    for x in range(2):
        block = out.entries[2 * x : 2 * x + 2, 2 * x : 2 * x + 2]
        assert np.trace(block).real == pytest.approx(0.5)
        np.testing.assert_allclose(block / np.trace(block), np.eye(2) / 2, atol=1e-12)


def test_measure_channel_marginals_match_direct_traces():
    rng = np.random.default_rng(11)
    rho = DenseOperator(dims=(3, 2), entries=_density(rng, 6))
    povm = random_povm(rng, 3, 3)
    out = measure_channel(rho, MeasurementSetup(povm=povm, accepted=(0,)))
    rho_a = partial_trace(rho, keep=[0]).entries
    for x, m in enumerate(povm):
        block = out.entries[2 * x : 2 * x + 2, 2 * x : 2 * x + 2]
        assert np.trace(block).real == pytest.approx(np.trace(m @ rho_a).real, abs=1e-12)
    assert out.trace().real == pytest.approx(1.0, abs=1e-12)


def test_measure_channel_rejects_mismatched_inputs():
    rho = DenseOperator(dims=(2,), entries=np.eye(2) / 2)
    with pytest.raises(DimensionMismatchError):
        measure_channel(rho, MeasurementSetup(povm=(np.eye(3),), accepted=(0,)))
    with pytest.raises(NotPositiveSemidefiniteError):
        measure_channel(DenseOperator(dims=(2,), entries=np.diag([1.5, -0.5])), MeasurementSetup(povm=(np.eye(2),), accepted=(0,)))


def test_measurement_setup_validation():
    with pytest.raises(IncompletePovmError):
        MeasurementSetup(povm=(np.eye(2) / 2,), accepted=(0,))
    with pytest.raises(IncompletePovmError):
        MeasurementSetup(povm=(np.eye(2),), accepted=(3,))
    with pytest.raises(NotAProjectorError):
        MeasurementSetup(povm=(np.eye(2),), accepted=(0,), filter=np.eye(2) / 2)
    with pytest.raises(NotPositiveSemidefiniteError):
        MeasurementSetup(povm=(np.diag([2.0, 1.0]), np.diag([-1.0, 0.0])), accepted=(0,))


def test_dominating_povm():
    dtilde = np.diag([1.0, 0.6, 0.2])
    d_block = np.diag([0.5, 0.6, 0.0])
    setup = dominating_povm(d_block, dtilde)
    assert setup.accepted == (0, 1)
    np.testing.assert_allclose(setup.acceptance_operator, dtilde)
    with pytest.raises(NotPositiveSemidefiniteError):
        dominating_povm(np.diag([1.0, 0.7, 0.0]), dtilde)
    with pytest.raises(NotPositiveSemidefiniteError):
        dominating_povm(np.zeros((2, 2)), np.diag([1.2, 0.0]))


def test_trace_distance_examples():
    rng = np.random.default_rng(3)
    a = DenseOperator(dims=(2,), entries=_density(rng, 2))
    assert trace_distance(a, a) == pytest.approx(0.0, abs=1e-14)
    p0 = _basis_state((2,), 0).projector()
    p1 = _basis_state((2,), 1).projector()
    assert trace_distance(p0, p1) == pytest.approx(2.0)

    for _ in range(20):
        a = DenseOperator(dims=(2,), entries=_density(rng, 2))
        b = DenseOperator(dims=(2,), entries=_density(rng, 2))
        eigenvalues, vectors = np.linalg.eigh(a.entries - b.entries)
        positive = vectors[:, eigenvalues > 0]
        projector = positive @ positive.conj().T
        variational = 2 * np.trace(projector @ (a.entries - b.entries)).real
        assert trace_distance(a, b) == pytest.approx(variational, abs=1e-12)

    with pytest.raises(DimensionMismatchError):
        trace_distance(a, DenseOperator(dims=(3,), entries=np.eye(3) / 3))


def test_pure_state_distance_matches_projector_trace_distance():
    rng = np.random.default_rng(5)
    psi = random_pure_state(rng, (4,))
    assert pure_state_distance(psi, psi) == pytest.approx(0.0, abs=1e-7)
    assert pure_state_distance(_basis_state((3,), 0), _basis_state((3,), 2)) == pytest.approx(2.0)
    for _ in range(1000):
        p1 = random_pure_state(rng, (3,))
        p2 = random_pure_state(rng, (3,))
        assert pure_state_distance(p1, p2) == pytest.approx(trace_distance(p1.projector(), p2.projector()), abs=1e-10)


def test_partial_trace_never_increases_distance():
    rng = np.random.default_rng(8)
    for _ in range(50):
        a = DenseOperator(dims=(2, 3), entries=_density(rng, 6))
        b = DenseOperator(dims=(2, 3), entries=_density(rng, 6))
        for keep in ([0], [1]):
            assert trace_distance(partial_trace(a, keep), partial_trace(b, keep)) <= trace_distance(a, b) + 1e-10


def test_partial_trace_pure_matches_dense_partial_trace():
    rng = np.random.default_rng(9)
    psi = random_pure_state(rng, (2, 3, 2))
    for keep in ([0], [1, 2], [0, 2]):
        np.testing.assert_allclose(
            partial_trace_pure(psi, keep).entries, partial_trace(psi.projector(), keep).entries, atol=1e-12
        )


def test_protocol_state_with_trivial_povms_keeps_psi():
    rng = np.random.default_rng(12)
    dims = protocol_dims(2, 2, 1, env_dim=2)
    psi = random_pure_state(rng, dims)
    setup = MeasurementSetup(povm=(np.eye(2) / 2, np.eye(2) / 2), accepted=(0,))
    state = build_protocol_states(psi, setup, setup)
    assert state.acceptance == pytest.approx(0.25)
    np.testing.assert_allclose(state.branches.reshape(-1), psi.amplitudes, atol=1e-12)
    beta = compute_beta(psi, setup.acceptance_operator, setup.acceptance_operator, np.eye(2), np.eye(2))
    assert beta == 0.0


def test_protocols_agree_inside_the_filter_range():
    rng = np.random.default_rng(13)
    spec = InstanceSpec(dim_a=3, dim_b=3, n_systems=2, cutoff_a=2, cutoff_b=2, n_outcomes=2)
    inst = random_instance(21, spec)
    # restrict psi to levels below the cutoff on every system
    mask = np.zeros(spec.dims, dtype=bool)
    mask[:2, :2, :2, :2, :] = True
    amplitudes = np.where(mask, random_pure_state(rng, spec.dims).tensor, 0.0)
    psi = PureState.normalized(amplitudes, spec.dims)

    p1 = build_protocol_states(psi, inst.setup_a, inst.setup_b, filter_on=False)
    p2 = build_protocol_states(psi, inst.setup_a, inst.setup_b, filter_on=True)
    np.testing.assert_allclose(p1.branches, p2.branches, atol=1e-12)
    assert compute_beta(psi, inst.dtilde_a, inst.dtilde_b, inst.setup_a.filter_matrix, inst.setup_b.filter_matrix) == pytest.approx(0.0, abs=1e-12)


def test_state_distances_bounded_by_twice_beta():
    spec = InstanceSpec(dim_a=3, dim_b=3, n_systems=2, cutoff_a=2, cutoff_b=2, n_outcomes=2)
    for seed in range(20):
        inst = random_instance(seed, spec)
        p1 = build_protocol_states(inst.psi, inst.setup_a, inst.setup_b, filter_on=False)
        p2 = build_protocol_states(inst.psi, inst.setup_a, inst.setup_b, filter_on=True)
        beta = compute_beta(inst.psi, inst.dtilde_a, inst.dtilde_b, inst.setup_a.filter_matrix, inst.setup_b.filter_matrix)
        cq = cq_trace_distance(p1, p2)
        pure = pure_state_distance(p1.as_pure_state(), p2.as_pure_state())
        assert cq <= pure + 1e-10
        assert pure <= 2 * beta + 1e-9
        assert cq == pytest.approx(trace_distance(reduce_to_outcomes(p1), reduce_to_outcomes(p2)), abs=1e-10)


def test_reduced_state_has_unit_trace():
    inst = random_instance(4, InstanceSpec(dim_a=2, dim_b=3, n_systems=2, cutoff_a=1, cutoff_b=2, env_dim=2, n_outcomes=2))
    reduced = reduce_to_outcomes(build_protocol_states(inst.psi, inst.setup_a, inst.setup_b))
    assert reduced.trace().real == pytest.approx(1.0, abs=1e-12)
    assert reduced.dims == (len(inst.setup_a.accepted), len(inst.setup_b.accepted)) * 2 + (2,)


def test_explicit_dilation_matches_implicit_registers():
    for seed in range(5):
        inst = random_instance(seed, InstanceSpec(dim_a=2, dim_b=3, n_systems=1, cutoff_a=1, cutoff_b=2, env_dim=2))
        for filter_on in (False, True):
            implicit = reduce_to_outcomes(build_protocol_states(inst.psi, inst.setup_a, inst.setup_b, filter_on))
            dilated = build_protocol_states_dilated(inst.psi, inst.setup_a, inst.setup_b, filter_on)
            explicit = partial_trace_pure(dilated, keep=[0, 1, 6])
            np.testing.assert_allclose(explicit.entries, implicit.entries, atol=1e-12)


def test_zero_probability_when_nothing_is_accepted():
    dims = protocol_dims(2, 2, 1)
    psi = _basis_state(dims, 0)
    setup = MeasurementSetup(povm=(np.diag([0.0, 1.0]), np.diag([1.0, 0.0])), accepted=(0,))
    with pytest.raises(ZeroProbabilityError):
        build_protocol_states(psi, setup, setup)


def test_compute_beta_examples():
    dims = protocol_dims(3, 3, 1)
    filter_ = coordinate_projector(3, 2)
    inside = _basis_state(dims, 0)
    assert compute_beta(inside, np.eye(3), np.eye(3), filter_, filter_) == 0.0
    # |2>|2> sits in the complement of the filter
    outside = _basis_state(dims, 8)
    assert compute_beta(outside, np.eye(3), np.eye(3), filter_, filter_) == pytest.approx(1.0)
    with pytest.raises(DegenerateDenominatorError):
        compute_beta(outside, np.diag([1.0, 0.0, 0.0]), np.eye(3), filter_, filter_)


def test_compute_beta_density_and_pure_forms_agree():
    inst = random_instance(6, InstanceSpec(dim_a=2, dim_b=2, n_systems=2, cutoff_a=1, cutoff_b=1, env_dim=2))
    args = (inst.dtilde_a, inst.dtilde_b, inst.setup_a.filter_matrix, inst.setup_b.filter_matrix)
    assert compute_beta(inst.psi.projector(), *args) == pytest.approx(compute_beta(inst.psi, *args), abs=1e-12)


def test_acceptance_probability_and_requirement():
    inst = random_instance(2, InstanceSpec(dim_a=2, dim_b=2, n_systems=2, cutoff_a=1, cutoff_b=1))
    p = acceptance_probability(inst.psi, inst.dtilde_a, inst.dtilde_b)
    state = build_protocol_states(inst.psi, inst.setup_a, inst.setup_b)
    assert p == pytest.approx(state.acceptance, abs=1e-12)
    assert requirement_satisfied(inst.psi, inst.dtilde_a, inst.dtilde_b, p / 2)
    assert not requirement_satisfied(inst.psi, inst.dtilde_a, inst.dtilde_b, min(1.0, 2 * p + 1e-6))


def test_theorem1_sides_examples():
    dims = protocol_dims(3, 3, 2)
    spec = InstanceSpec(dim_a=3, dim_b=3, n_systems=2, cutoff_a=2, cutoff_b=2, complement=True)
    psi = random_instance(1, spec).psi
    projector = coordinate_projector(3, 2).real
    assert theorem1_lhs(psi, projector, projector, 2, 2) == pytest.approx(0.0, abs=1e-12)
    assert theorem1_lhs(psi, np.eye(3), np.eye(3), 2, 2) == pytest.approx(1.0, abs=1e-12)
    assert theorem1_rhs(projector, projector, 2, 2, 2) == 0.0
    assert theorem1_rhs(np.eye(4), np.eye(4), 2, 2, 3) == 3 * (2 + 2)

    with pytest.raises(ComplementMembershipError):
        theorem1_lhs(_basis_state(dims, 0), np.eye(3), np.eye(3), 2, 2)


def test_theorem1_rhs_matches_double_loop():
    rng = np.random.default_rng(14)
    da, db = random_contraction(rng, 4), random_contraction(rng, 3)
    naive_a = sum(abs(da[i, j]) for i in range(4) for j in range(2, 4))
    naive_b = sum(abs(db[i, j]) for i in range(3) for j in range(1, 3))
    assert theorem1_rhs(da, db, 2, 1, 5) == pytest.approx(5 * (naive_a + naive_b), rel=1e-13)


def test_appendix_decomposition_telescopes():
    spec = InstanceSpec(dim_a=3, dim_b=2, n_systems=2, cutoff_a=1, cutoff_b=1, env_dim=2, complement=True, dtilde="contraction")
    for seed in range(10):
        inst = random_instance(seed, spec)
        parts = appendix_decomposition(inst.psi, inst.dtilde_a, inst.dtilde_b, 1, 1)
        assert len(parts.terms) == 4
        parts.check()
        assert parts.lhs == pytest.approx(theorem1_lhs(inst.psi, inst.dtilde_a, inst.dtilde_b, 1, 1))
        assert sum(parts.term_bounds) == pytest.approx(theorem1_rhs(inst.dtilde_a, inst.dtilde_b, 1, 1, 2))


def test_cauchy_schwarz_lemma_examples():
    phi = _basis_state((3,), 1)
    assert cauchy_schwarz_lemma_check(phi.projector().entries, phi, phi) == pytest.approx((1.0, 1.0))
    rng = np.random.default_rng(15)
    psi, other = random_pure_state(rng, (3,)), random_pure_state(rng, (3,))
    assert cauchy_schwarz_lemma_check(np.zeros((3, 3)), psi, other) == (0.0, 0.0)
    with pytest.raises(DomainError):
        cauchy_schwarz_lemma_check(2 * np.eye(3), psi, other)


def test_random_instance_is_deterministic():
    spec = InstanceSpec(dim_a=3, dim_b=2, n_systems=2, cutoff_a=2, cutoff_b=1, complement=True)
    first, second = random_instance((7, 3), spec), random_instance((7, 3), spec)
    assert np.array_equal(first.psi.amplitudes, second.psi.amplitudes)
    assert all(np.array_equal(x, y) for x, y in zip(first.setup_a.povm, second.setup_a.povm))
    assert not np.array_equal(first.psi.amplitudes, random_instance((7, 4), spec).psi.amplitudes)


def test_random_instance_properties():
    spec = InstanceSpec(dim_a=3, dim_b=3, n_systems=2, cutoff_a=2, cutoff_b=1, complement=True, n_outcomes=4)
    for seed in range(10):
        inst = random_instance(seed, spec)
        for setup in (inst.setup_a, inst.setup_b):
            np.testing.assert_allclose(sum(setup.povm), np.eye(setup.dim), atol=1e-12)
        theorem1_lhs(inst.psi, inst.dtilde_a, inst.dtilde_b, 2, 1)


def test_random_instance_limits():
    with pytest.raises(TensorBudgetError):
        random_instance(0, InstanceSpec(dim_a=4, dim_b=4, n_systems=4, cutoff_a=1, cutoff_b=1))
    with override("hilbert", complement_retries=3):
        with pytest.raises(DegenerateComplementError):
            random_instance(0, InstanceSpec(dim_a=2, dim_b=2, n_systems=1, cutoff_a=2, cutoff_b=2, complement=True))


def test_verify_theorem1_small_run():
    summary = verify_theorem1(dim=3, cutoff=2, n_systems=2, trials=200, seed=7, appendix=True)
    assert summary.ok
    assert summary.passes == 200
    assert summary.worst_margin <= 0.0


def test_verify_runs_are_independent_of_worker_count():
    serial = verify_lemma(dim=3, trials=40, seed=3, workers=1)
    pooled = verify_lemma(dim=3, trials=40, seed=3, workers=2)
    assert serial == pooled


def test_verify_beta_small_run():
    summary = verify_beta((3, 3, 1), n_systems=2, trials=50, seed=1, cutoffs=(2, 2), outcomes=2)
    assert summary.ok
    assert summary.passes + summary.skipped == 50


def test_verify_rejects_empty_complement():
    with pytest.raises(DomainError):
        verify_theorem1(dim=2, cutoff=2, n_systems=1, trials=1, seed=0)


@pytest.mark.slow
def test_theorem1_holds_across_the_grid():
    for dim in (2, 3, 4):
        for cutoff in (1, 2, 3):
            if cutoff >= dim:
                continue
            for n in (1, 2, 3):
                summary = verify_theorem1(dim=dim, cutoff=cutoff, n_systems=n, trials=10_000 // 18 + 1, seed=dim * 100 + cutoff * 10 + n)
                assert summary.ok, summary.counterexamples[:1]


@pytest.mark.slow
def test_beta_and_lemma_suites():
    assert verify_beta((3, 3, 1), n_systems=2, trials=1000, seed=2024, outcomes=2).ok
    assert verify_lemma(dim=4, trials=10_000, seed=99).ok


def test_branch_tensor_counts_against_the_budget():
    psi = random_pure_state(np.random.default_rng(5), protocol_dims(2, 2, 1))
    povm = (np.eye(2) / 3, np.eye(2) / 3, np.eye(2) / 3)
    all_accepted = MeasurementSetup(povm=povm, accepted=(0, 1, 2))
    one_accepted = MeasurementSetup(povm=povm, accepted=(0,))
    with override("hilbert", max_total_dim=16):
        build_protocol_states(psi, one_accepted, one_accepted)
        with pytest.raises(TensorBudgetError):
            build_protocol_states(psi, all_accepted, all_accepted)


def test_verify_beta_rejects_oversized_branches_up_front():
    with pytest.raises(TensorBudgetError):
        verify_beta((3, 3, 1), n_systems=2, trials=1, seed=0)


def test_worker_processes_follow_simulator_overrides():
    with override("hilbert", min_complement_norm=10.0, complement_retries=2):
        summary = verify_theorem1(dim=3, cutoff=2, n_systems=1, trials=4, seed=1, workers=2)
    assert summary.skipped == 4
    assert summary.passes == 0
