import logging
import math
from typing import Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..config import config
from ..errors import (
    ComplementMembershipError,
    DegenerateDenominatorError,
    DimensionMismatchError,
    DomainError,
    NotPositiveSemidefiniteError,
    VerificationError,
)
from .channel import protocol_layout
from .operators import DenseOperator, PureState, apply_local, apply_local_right, coordinate_projector

logger = logging.getLogger(__name__)

State = Union[PureState, DenseOperator]


def _local_ops(state: State, op_a: np.ndarray, op_b: np.ndarray) -> list[tuple[int, np.ndarray]]:
    a, b, n, _ = protocol_layout(state.dims)
    if op_a.shape != (a, a) or op_b.shape != (b, b):
        raise DimensionMismatchError(f"local operators {op_a.shape}, {op_b.shape} on systems ({a}, {b})")
    return [(2 * i + j, op) for i in range(n) for j, op in ((0, op_a), (1, op_b))]


def _apply_all(tensor: np.ndarray, ops: list[tuple[int, np.ndarray]]) -> np.ndarray:
    for axis, op in ops:
        tensor = apply_local(tensor, op, axis)
    return tensor


def _expectation(state: State, ops: list[tuple[int, np.ndarray]]) -> float:
    if isinstance(state, PureState):
        return float(np.vdot(state.tensor, _apply_all(state.tensor, ops)).real)
    applied = _apply_all(state.tensor, ops)
    return float(np.trace(applied.reshape(state.dim, state.dim)).real)


def acceptance_probability(state: State, dtilde_a: np.ndarray, dtilde_b: np.ndarray) -> float:
    """tr[(Dtilde_A Dtilde_B)^{(x)N} rho]."""
    return _expectation(state, _local_ops(state, np.asarray(dtilde_a), np.asarray(dtilde_b)))


def requirement_satisfied(state: State, dtilde_a: np.ndarray, dtilde_b: np.ndarray, epsilon: float) -> bool:
    """Only states accepted with probability at least epsilon need to be analysed."""
    return acceptance_probability(state, dtilde_a, dtilde_b) >= epsilon


def _complement_part(state: State, filter_a: np.ndarray, filter_b: np.ndarray) -> State:
    filters = _local_ops(state, filter_a, filter_b)
    if isinstance(state, PureState):
        barred = state.tensor - _apply_all(state.tensor, filters)
        return barred
    rho = state.tensor
    n = len(state.dims)
    left = _apply_all(rho, filters)
    right = rho
    both = left
    for axis, op in filters:
        right = apply_local_right(right, op, n + axis)
        both = apply_local_right(both, op, n + axis)
    return rho - left - right + both


def compute_beta(
    state: State, dtilde_a: np.ndarray, dtilde_b: np.ndarray, filter_a: np.ndarray, filter_b: np.ndarray
) -> float:
    """|beta| = sqrt(tr[Dtilde^N Pbar rho Pbar] / tr[Dtilde^N rho]), Pbar the complement of the N-fold filter."""
    dtilde = _local_ops(state, np.asarray(dtilde_a), np.asarray(dtilde_b))
    denominator = _expectation(state, dtilde)
    if denominator <= config.hilbert.zero_probability_tol:
        raise DegenerateDenominatorError(f"acceptance probability {denominator:.3e} is too small for beta")

    barred = _complement_part(state, np.asarray(filter_a), np.asarray(filter_b))
    if isinstance(state, PureState):
        numerator = float(np.vdot(barred, _apply_all(barred, dtilde)).real)
    else:
        numerator = float(np.trace(_apply_all(barred, dtilde).reshape(state.dim, state.dim)).real)
    return math.sqrt(max(numerator, 0.0) / denominator)


def offdiag_abs_sum(matrix: np.ndarray, cutoff: int) -> float:
    """sum over i >= 0, j >= cutoff of |<i|M|j>| on a finite basis."""
    return float(np.abs(np.asarray(matrix)[:, cutoff:]).sum())


def _require_complement(psi: PureState, d_a: int, d_b: int) -> None:
    a, b, _, _ = protocol_layout(psi.dims)
    filters = _local_ops(psi, coordinate_projector(a, d_a), coordinate_projector(b, d_b))
    leak = float(np.linalg.norm(_apply_all(psi.tensor, filters)))
    if leak > config.hilbert.complement_tol:
        raise ComplementMembershipError(f"state has weight {leak:.3e} inside the N-fold filter range")


def theorem1_lhs(psi: PureState, dtilde_a: np.ndarray, dtilde_b: np.ndarray, d_a: int, d_b: int) -> float:
    """<Psi|(Dtilde_A Dtilde_B)^{(x)N}|Psi> for Psi outside the range of the N-fold filter."""
    _require_complement(psi, d_a, d_b)
    return acceptance_probability(psi, dtilde_a, dtilde_b)


def theorem1_rhs(dtilde_a: np.ndarray, dtilde_b: np.ndarray, d_a: int, d_b: int, n_systems: int) -> float:
    return n_systems * (offdiag_abs_sum(dtilde_a, d_a) + offdiag_abs_sum(dtilde_b, d_b))


class AppendixDecomposition(BaseModel):
    """Telescoping split of <Psi|Dtilde^N|Psi>, one term per local projector (A_1..A_N, B_1..B_N)."""

    model_config = ConfigDict(frozen=True)

    lhs: float
    terms: list[complex]
    remainder: complex
    term_bounds: list[float]

    def check(self, slack: float | None = None) -> None:
        slack = config.hilbert.verification_slack if slack is None else slack
        total = sum(self.terms) + self.remainder
        if abs(total - self.lhs) > slack:
            raise VerificationError("telescoping terms do not add up to the expectation", abs(total), self.lhs)
        if abs(self.remainder) > slack:
            raise VerificationError("remainder term does not vanish on the complement", abs(self.remainder), 0.0)
        for term, bound in zip(self.terms, self.term_bounds):
            if abs(term) > bound + slack:
                raise VerificationError("telescoping term exceeds its single-side sum", abs(term), bound)


def appendix_decomposition(
    psi: PureState, dtilde_a: np.ndarray, dtilde_b: np.ndarray, d_a: int, d_b: int
) -> AppendixDecomposition:
    a, b, n, _ = protocol_layout(psi.dims)
    _require_complement(psi, d_a, d_b)
    dtilde_a, dtilde_b = np.asarray(dtilde_a), np.asarray(dtilde_b)
    target = _apply_all(psi.tensor, _local_ops(psi, dtilde_a, dtilde_b))

    order = [(2 * i, coordinate_projector(a, d_a), offdiag_abs_sum(dtilde_a, d_a)) for i in range(n)]
    order += [(2 * i + 1, coordinate_projector(b, d_b), offdiag_abs_sum(dtilde_b, d_b)) for i in range(n)]

    left = psi.tensor
    terms, bounds = [], []
    for axis, projector, bound in order:
        kept = apply_local(left, projector, axis)
        terms.append(complex(np.vdot(left - kept, target)))
        bounds.append(bound)
        left = kept

    return AppendixDecomposition(
        lhs=float(np.vdot(psi.tensor, target).real),
        terms=terms,
        remainder=complex(np.vdot(left, target)),
        term_bounds=bounds,
    )


def cauchy_schwarz_lemma_check(m: np.ndarray, psi: PureState, phi: PureState) -> tuple[float, float]:
    """|<psi|M|phi>| against sqrt(sum_i a_i^2 |<psi|v_i>|^2); both must sit below 1."""
    m = np.asarray(m, dtype=complex)
    if m.shape != (psi.dim, psi.dim) or psi.dim != phi.dim:
        raise DimensionMismatchError(f"operator {m.shape} with states of dimension {psi.dim}, {phi.dim}")
    tol = config.hilbert.povm_tol
    eigenvalues, vectors = np.linalg.eigh(0.5 * (m + m.conj().T))
    if eigenvalues.min() < -tol:
        raise NotPositiveSemidefiniteError(f"operator has eigenvalue {eigenvalues.min():.3e}")
    if eigenvalues.max() > 1.0 + tol:
        raise DomainError(f"operator has eigenvalue {eigenvalues.max():.6f} above 1")

    lhs = abs(np.vdot(psi.amplitudes, m @ phi.amplitudes))
    overlaps = np.abs(vectors.conj().T @ psi.amplitudes) ** 2
    rhs = math.sqrt(float(np.sum(np.clip(eigenvalues, 0.0, None) ** 2 * overlaps)))

    slack = config.hilbert.verification_slack
    if lhs > rhs + slack or rhs > 1.0 + slack:
        raise VerificationError("Cauchy-Schwarz chain violated", lhs, rhs)
    return float(lhs), rhs
