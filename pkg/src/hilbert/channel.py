"""Measurement channels and the post-measurement protocol states.

Protocol states live on the layout (A_1, B_1, ..., A_N, B_N, E). After measurement the
detector-environment registers Q_X, Q_Y are kept implicit: their states are orthogonal and
always traced out, so a protocol state is stored as one branch per accepted outcome string.
"""

import logging
import math
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy.linalg import block_diag

from ..config import config
from ..errors import (
    DimensionMismatchError,
    IncompletePovmError,
    NotAProjectorError,
    NotPositiveSemidefiniteError,
    ZeroProbabilityError,
)
from .operators import DenseOperator, PureState, apply_local, apply_local_right, check_tensor_budget, psd_sqrt

logger = logging.getLogger(__name__)


def protocol_layout(dims: Sequence[int]) -> tuple[int, int, int, int]:
    """(dim_a, dim_b, n_systems, env_dim) for a (A, B) * N + (E,) layout."""
    dims = tuple(dims)
    if len(dims) < 3 or len(dims) % 2 == 0:
        raise DimensionMismatchError(f"expected (A, B) * N + (E,) factors, got {dims}")
    a, b = dims[0], dims[1]
    n = (len(dims) - 1) // 2
    if dims[:-1] != (a, b) * n:
        raise DimensionMismatchError(f"systems must share dimensions, got {dims}")
    return a, b, n, dims[-1]


def protocol_dims(dim_a: int, dim_b: int, n_systems: int, env_dim: int = 1) -> tuple[int, ...]:
    return (dim_a, dim_b) * n_systems + (env_dim,)


class MeasurementSetup(BaseModel):
    """A complete POVM, the outcomes that count as accepted, and an optional projector filter."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    povm: tuple[np.ndarray, ...]
    accepted: tuple[int, ...]
    filter: Optional[np.ndarray] = None

    @field_validator("povm", mode="before")
    @classmethod
    def _matrices(cls, v):
        return tuple(np.asarray(m, dtype=complex) for m in v)

    @field_validator("accepted", mode="before")
    @classmethod
    def _sorted(cls, v):
        return tuple(sorted(set(int(x) for x in v)))

    @model_validator(mode="after")
    def _consistent(self) -> "MeasurementSetup":
        tol = config.hilbert.povm_tol
        if not self.povm:
            raise IncompletePovmError("a POVM needs at least one element")
        dim = self.povm[0].shape[0]
        for m in self.povm:
            if m.shape != (dim, dim):
                raise DimensionMismatchError(f"POVM element of shape {m.shape} in a {dim}-dimensional POVM")
            if np.max(np.abs(m - m.conj().T)) > tol:
                raise NotPositiveSemidefiniteError("POVM element is not Hermitian")
            if np.linalg.eigvalsh(m).min() < -tol:
                raise NotPositiveSemidefiniteError("POVM element has a negative eigenvalue")
        if np.max(np.abs(sum(self.povm) - np.eye(dim))) > tol:
            raise IncompletePovmError("POVM elements do not sum to the identity")
        if not self.accepted or any(not 0 <= x < len(self.povm) for x in self.accepted):
            raise IncompletePovmError(f"accepted outcomes {self.accepted} are not a nonempty subset of the POVM")
        if self.filter is not None:
            f = np.asarray(self.filter, dtype=complex)
            if f.shape != (dim, dim):
                raise DimensionMismatchError(f"filter of shape {f.shape} on a {dim}-dimensional system")
            if np.max(np.abs(f @ f - f)) > tol or np.max(np.abs(f - f.conj().T)) > tol:
                raise NotAProjectorError("filter is not an orthogonal projector")
        return self

    @property
    def dim(self) -> int:
        return self.povm[0].shape[0]

    @property
    def acceptance_operator(self) -> np.ndarray:
        """The dominating element: the sum of the accepted POVM elements."""
        return sum(self.povm[x] for x in self.accepted)

    @property
    def filter_matrix(self) -> np.ndarray:
        return np.eye(self.dim, dtype=complex) if self.filter is None else np.asarray(self.filter, dtype=complex)

    def kraus(self, outcomes: Optional[Sequence[int]] = None) -> np.ndarray:
        """sqrt(M_x) for each listed outcome, stacked into a (k * dim, dim) isometry block."""
        outcomes = self.accepted if outcomes is None else outcomes
        return np.vstack([psd_sqrt(self.povm[x]) for x in outcomes])


def dominating_povm(d_block: np.ndarray, dtilde: np.ndarray, filter: Optional[np.ndarray] = None) -> MeasurementSetup:
    """{D, Dtilde - D, I - Dtilde}; the first two outcomes are accepted."""
    d_block = np.asarray(d_block, dtype=complex)
    dtilde = np.asarray(dtilde, dtype=complex)
    if d_block.shape != dtilde.shape:
        raise DimensionMismatchError(f"D of shape {d_block.shape} against Dtilde of shape {dtilde.shape}")
    tol = config.hilbert.povm_tol
    if np.linalg.eigvalsh(0.5 * (dtilde - d_block + (dtilde - d_block).conj().T)).min() < -tol:
        raise NotPositiveSemidefiniteError("Dtilde - D is not positive semidefinite")
    identity = np.eye(dtilde.shape[0], dtype=complex)
    if np.linalg.eigvalsh(0.5 * (identity - dtilde + (identity - dtilde).conj().T)).min() < -tol:
        raise NotPositiveSemidefiniteError("Dtilde is not bounded by the identity")
    return MeasurementSetup(povm=(d_block, dtilde - d_block, identity - dtilde), accepted=(0, 1), filter=filter)


def measure_channel(rho: DenseOperator, setup: MeasurementSetup) -> DenseOperator:
    """sum_x |x><x| (x) tr_A(sqrt(M_x) rho sqrt(M_x)) with A the first factor of rho."""
    rho.require_density()
    if rho.dims[0] != setup.dim:
        raise DimensionMismatchError(f"POVM on dimension {setup.dim} applied to factor of dimension {rho.dims[0]}")
    n = len(rho.dims)
    rest = rho.dims[1:]
    r = math.prod(rest)
    blocks = []
    for m in setup.povm:
        root = psd_sqrt(m)
        t = apply_local_right(apply_local(rho.tensor, root, 0), root, n)
        blocks.append(np.trace(t, axis1=0, axis2=n).reshape(r, r))
    return DenseOperator(dims=(len(setup.povm),) + rest, entries=block_diag(*blocks))


class ProtocolState(BaseModel):
    """Normalized post-measurement state; branches[o, r, e] is the amplitude for outcome string o."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    branches: np.ndarray
    outcome_dims: tuple[int, ...]
    system_dims: tuple[int, ...]
    env_dim: int
    acceptance: float
    filtered: bool = False

    @model_validator(mode="after")
    def _shape(self) -> "ProtocolState":
        expected = (math.prod(self.outcome_dims), math.prod(self.system_dims), self.env_dim)
        if self.branches.shape != expected:
            raise DimensionMismatchError(f"branches of shape {self.branches.shape}, expected {expected}")
        return self

    def as_pure_state(self) -> PureState:
        return PureState(dims=self.branches.shape, amplitudes=self.branches)

    def env_blocks(self) -> np.ndarray:
        """rho_E(o) for every outcome string o, shape (O, e, e)."""
        return np.einsum("ore,orf->oef", self.branches, self.branches.conj())


def build_protocol_states(
    psi: PureState, setup_a: MeasurementSetup, setup_b: MeasurementSetup, filter_on: bool = False
) -> ProtocolState:
    """Apply the filters (when on), then the accepted Kraus branches of both parties to every system."""
    a, b, n, e = protocol_layout(psi.dims)
    if setup_a.dim != a or setup_b.dim != b:
        raise DimensionMismatchError(f"setups on ({setup_a.dim}, {setup_b.dim}) for systems of ({a}, {b})")
    k_a, k_b = len(setup_a.accepted), len(setup_b.accepted)
    # the branch tensor carries one outcome pair per system on top of psi
    check_tensor_budget((k_a * k_b) ** n * psi.dim)

    tensor = psi.tensor
    if filter_on:
        for i in range(n):
            tensor = apply_local(tensor, setup_a.filter_matrix, 2 * i)
            tensor = apply_local(tensor, setup_b.filter_matrix, 2 * i + 1)

    kraus_a, kraus_b = setup_a.kraus(), setup_b.kraus()
    for i in range(n):
        tensor = apply_local(tensor, kraus_a, 2 * i)
        tensor = apply_local(tensor, kraus_b, 2 * i + 1)

    # split each resized factor into (outcome, system)
    tensor = tensor.reshape((k_a, a, k_b, b) * n + (e,))
    outcome_axes = [4 * i + j for i in range(n) for j in (0, 2)]
    system_axes = [4 * i + j for i in range(n) for j in (1, 3)]
    branches = tensor.transpose(outcome_axes + system_axes + [4 * n]).reshape(
        (k_a * k_b) ** n, (a * b) ** n, e
    )

    acceptance = float(np.vdot(branches, branches).real)
    if acceptance <= config.hilbert.zero_probability_tol:
        raise ZeroProbabilityError(f"accepted outcomes occur with probability {acceptance:.3e}")
    logger.debug("protocol state: N=%d filter=%s acceptance=%.6g", n, filter_on, acceptance)
    return ProtocolState(
        branches=branches / math.sqrt(acceptance),
        outcome_dims=(k_a, k_b) * n,
        system_dims=(a, b) * n,
        env_dim=e,
        acceptance=acceptance,
        filtered=filter_on,
    )


def _dilation(setup: MeasurementSetup) -> np.ndarray:
    # sum over accepted x of |x>_X |x>_Q (x) sqrt(M_x)
    k, s = len(setup.accepted), setup.dim
    v = np.zeros((k, k, s, s), dtype=complex)
    for idx, x in enumerate(setup.accepted):
        v[idx, idx] = psd_sqrt(setup.povm[x])
    return v.reshape(k * k * s, s)


def build_protocol_states_dilated(
    psi: PureState, setup_a: MeasurementSetup, setup_b: MeasurementSetup, filter_on: bool = False
) -> PureState:
    """Single-system protocol state with explicit registers, dims (X, Y, Q_X, Q_Y, A, B, E)."""
    a, b, n, e = protocol_layout(psi.dims)
    if n != 1:
        raise DimensionMismatchError(f"the explicit dilation covers one system, got {n}")
    k_a, k_b = len(setup_a.accepted), len(setup_b.accepted)
    check_tensor_budget(k_a * k_a * k_b * k_b * psi.dim)

    tensor = psi.tensor
    if filter_on:
        tensor = apply_local(tensor, setup_a.filter_matrix, 0)
        tensor = apply_local(tensor, setup_b.filter_matrix, 1)
    tensor = apply_local(tensor, _dilation(setup_a), 0)
    tensor = apply_local(tensor, _dilation(setup_b), 1)
    tensor = tensor.reshape(k_a, k_a, a, k_b, k_b, b, e).transpose(0, 3, 1, 4, 2, 5, 6)
    return PureState.normalized(tensor, dims=tensor.shape)


def reduce_to_outcomes(state: ProtocolState) -> DenseOperator:
    """rho on X^N Y^N E: block diagonal over outcome strings."""
    return DenseOperator(dims=state.outcome_dims + (state.env_dim,), entries=block_diag(*state.env_blocks()))


def cq_trace_distance(p1: ProtocolState, p2: ProtocolState) -> float:
    """L1 distance of the reduced X^N Y^N E states, block by block."""
    if p1.outcome_dims != p2.outcome_dims or p1.env_dim != p2.env_dim:
        raise DimensionMismatchError("protocol states have different outcome or environment registers")
    diff = p1.env_blocks() - p2.env_blocks()
    diff = 0.5 * (diff + diff.conj().transpose(0, 2, 1))
    return float(np.abs(np.linalg.eigvalsh(diff)).sum())
