"""Seeded randomized verification of the finite-dimensional inequalities.

Trial t of a run with seed s draws everything from the seed sequence (s, t), so a reported
counterexample can be replayed on its own. Trials fan out over a process pool when more
than one worker is requested; results are aggregated in trial order either way.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Optional

import numpy as np
from pydantic import BaseModel, Field

from ..config import config, override
from ..errors import (
    DegenerateComplementError,
    DegenerateDenominatorError,
    DomainError,
    VerificationError,
    ZeroProbabilityError,
)
from .channel import build_protocol_states, cq_trace_distance
from .instances import InstanceSpec, random_contraction, random_instance, random_pure_state
from .operators import check_tensor_budget
from .theorem import appendix_decomposition, cauchy_schwarz_lemma_check, compute_beta, theorem1_lhs, theorem1_rhs

logger = logging.getLogger(__name__)


class TrialOutcome(BaseModel):
    trial: int
    lhs: float = 0.0
    rhs: float = 0.0
    skipped: bool = False
    failure: Optional[str] = None

    @property
    def margin(self) -> float:
        return self.lhs - self.rhs


class Counterexample(BaseModel):
    seed: int
    trial: int
    lhs: float
    rhs: float
    reason: str


class VerificationSummary(BaseModel):
    check: str
    seed: int
    trials: int
    passes: int
    skipped: int
    worst_margin: Optional[float] = None
    worst_trial: Optional[int] = None
    counterexamples: list[Counterexample] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.counterexamples


def _theorem1_trial(job: tuple[int, int, dict[str, Any]]) -> TrialOutcome:
    seed, trial, params = job
    spec = InstanceSpec(
        dim_a=params["dim"],
        dim_b=params["dim"],
        n_systems=params["n_systems"],
        cutoff_a=params["cutoff"],
        cutoff_b=params["cutoff"],
        env_dim=params["env_dim"],
        complement=True,
        dtilde="contraction",
    )
    try:
        inst = random_instance((seed, trial), spec)
    except DegenerateComplementError:
        return TrialOutcome(trial=trial, skipped=True)

    d = params["cutoff"]
    lhs = theorem1_lhs(inst.psi, inst.dtilde_a, inst.dtilde_b, d, d)
    rhs = theorem1_rhs(inst.dtilde_a, inst.dtilde_b, d, d, params["n_systems"])
    if params["appendix"]:
        try:
            appendix_decomposition(inst.psi, inst.dtilde_a, inst.dtilde_b, d, d).check()
        except VerificationError as e:
            return TrialOutcome(trial=trial, lhs=e.lhs, rhs=e.rhs, failure=str(e))
    return TrialOutcome(trial=trial, lhs=lhs, rhs=rhs)


def _beta_trial(job: tuple[int, int, dict[str, Any]]) -> TrialOutcome:
    seed, trial, params = job
    dim_a, dim_b, env_dim = params["dims"]
    cutoff_a, cutoff_b = params["cutoffs"]
    spec = InstanceSpec(
        dim_a=dim_a,
        dim_b=dim_b,
        n_systems=params["n_systems"],
        cutoff_a=cutoff_a,
        cutoff_b=cutoff_b,
        env_dim=env_dim,
        n_outcomes=params["outcomes"],
    )
    inst = random_instance((seed, trial), spec)
    try:
        unfiltered = build_protocol_states(inst.psi, inst.setup_a, inst.setup_b, filter_on=False)
        filtered = build_protocol_states(inst.psi, inst.setup_a, inst.setup_b, filter_on=True)
        beta = compute_beta(
            inst.psi, inst.dtilde_a, inst.dtilde_b, inst.setup_a.filter_matrix, inst.setup_b.filter_matrix
        )
    except (ZeroProbabilityError, DegenerateDenominatorError):
        return TrialOutcome(trial=trial, skipped=True)
    return TrialOutcome(trial=trial, lhs=cq_trace_distance(unfiltered, filtered), rhs=2.0 * beta)


def _lemma_trial(job: tuple[int, int, dict[str, Any]]) -> TrialOutcome:
    seed, trial, params = job
    rng = np.random.default_rng([seed, trial])
    dim = params["dim"]
    m = random_contraction(rng, dim) * rng.uniform(0.0, 1.0)
    psi = random_pure_state(rng, (dim,))
    phi = random_pure_state(rng, (dim,))
    try:
        lhs, rhs = cauchy_schwarz_lemma_check(m, psi, phi)
    except VerificationError as e:
        return TrialOutcome(trial=trial, lhs=e.lhs, rhs=e.rhs, failure=str(e))
    return TrialOutcome(trial=trial, lhs=lhs, rhs=rhs)


def _call(job: tuple) -> TrialOutcome:
    worker, seed, trial, params, settings = job
    with override("hilbert", **settings):
        return worker((seed, trial, params))


def _run(
    check: str,
    worker: Callable[[tuple[int, int, dict[str, Any]]], TrialOutcome],
    seed: int,
    trials: int,
    workers: Optional[int],
    **params: Any,
) -> VerificationSummary:
    if trials < 1:
        raise DomainError(f"need at least one trial, got {trials}")
    if seed < 0:
        raise DomainError(f"seed must be nonnegative, got {seed}")
    workers = config.cli.workers if workers is None else workers
    # worker processes see the caller's effective simulator settings, overrides included
    settings = config.hilbert.model_dump()
    jobs = [(worker, seed, t, params, settings) for t in range(trials)]

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_call, jobs, chunksize=max(1, trials // (4 * workers))))
    else:
        outcomes = [_call(job) for job in jobs]

    slack = config.hilbert.verification_slack
    summary = VerificationSummary(check=check, seed=seed, trials=trials, passes=0, skipped=0)
    for outcome in outcomes:
        if outcome.skipped:
            summary.skipped += 1
            continue
        if summary.worst_margin is None or outcome.margin > summary.worst_margin:
            summary.worst_margin = outcome.margin
            summary.worst_trial = outcome.trial
        if outcome.failure is not None or outcome.margin > slack:
            summary.counterexamples.append(
                Counterexample(
                    seed=seed,
                    trial=outcome.trial,
                    lhs=outcome.lhs,
                    rhs=outcome.rhs,
                    reason=outcome.failure or f"{check}: lhs exceeds rhs by {outcome.margin:.3e}",
                )
            )
        else:
            summary.passes += 1

    if summary.counterexamples:
        logger.warning("%s: %d counterexample(s) for seed %d", check, len(summary.counterexamples), seed)
    else:
        logger.info("%s: %d/%d trials passed (seed %d)", check, summary.passes, trials, seed)
    return summary


def verify_theorem1(
    dim: int,
    cutoff: int,
    n_systems: int,
    trials: int,
    seed: int,
    env_dim: int = 1,
    appendix: bool = False,
    workers: Optional[int] = None,
) -> VerificationSummary:
    """<Psi|Dtilde^N|Psi> <= N (sum_A + sum_B) on random complement states and contractions."""
    if not 1 <= cutoff < dim:
        raise DomainError(f"cutoff must lie in [1, {dim - 1}] for a nonempty complement, got {cutoff}")
    return _run(
        "theorem1", _theorem1_trial, seed, trials, workers,
        dim=dim, cutoff=cutoff, n_systems=n_systems, env_dim=env_dim, appendix=appendix,
    )


def verify_beta(
    dims: tuple[int, int, int],
    n_systems: int,
    trials: int,
    seed: int,
    cutoffs: Optional[tuple[int, int]] = None,
    outcomes: int = 3,
    workers: Optional[int] = None,
) -> VerificationSummary:
    """L1 distance of the two protocols' X^N Y^N E states against 2|beta|."""
    dim_a, dim_b, env_dim = dims
    # every outcome may be accepted, so budget the largest branch tensor before any trial runs
    check_tensor_budget((outcomes * outcomes * dim_a * dim_b) ** n_systems * env_dim)
    cutoffs = cutoffs or (max(1, dim_a - 1), max(1, dim_b - 1))
    return _run(
        "beta", _beta_trial, seed, trials, workers,
        dims=tuple(dims), cutoffs=tuple(cutoffs), n_systems=n_systems, outcomes=outcomes,
    )


def verify_lemma(dim: int, trials: int, seed: int, workers: Optional[int] = None) -> VerificationSummary:
    return _run("lemma", _lemma_trial, seed, trials, workers, dim=dim)
