"""Dense operators and pure states on small tensor-product spaces.

Both carry `dims`, one entry per tensor factor; local maps are applied with tensordot so
that N-fold tensor powers of a single-system operator are never formed.
"""

import math
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from ..config import config
from ..errors import DimensionMismatchError, NotPositiveSemidefiniteError, TensorBudgetError, ZeroProbabilityError


def _as_dims(dims: Sequence[int]) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if not dims or any(d < 1 for d in dims):
        raise ValueError(f"every tensor factor needs dimension >= 1, got {dims}")
    return dims


def check_tensor_budget(total: int) -> None:
    if total > config.hilbert.max_total_dim:
        raise TensorBudgetError(
            f"tensor space of dimension {total} exceeds the budget {config.hilbert.max_total_dim}"
        )


class DenseOperator(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    dims: tuple[int, ...]
    entries: np.ndarray

    @field_validator("dims", mode="before")
    @classmethod
    def _dims(cls, v):
        return _as_dims(v)

    @field_validator("entries", mode="before")
    @classmethod
    def _complex(cls, v):
        return np.asarray(v, dtype=complex)

    @model_validator(mode="after")
    def _shape(self) -> "DenseOperator":
        if self.entries.shape != (self.dim, self.dim):
            raise DimensionMismatchError(f"entries of shape {self.entries.shape} do not match dims {self.dims}")
        return self

    @classmethod
    def from_matrix(cls, matrix, dims: Sequence[int] | None = None) -> "DenseOperator":
        matrix = np.asarray(matrix, dtype=complex)
        return cls(dims=dims or (matrix.shape[0],), entries=matrix)

    @property
    def dim(self) -> int:
        return math.prod(self.dims)

    @property
    def tensor(self) -> np.ndarray:
        return self.entries.reshape(self.dims + self.dims)

    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def is_hermitian(self, tol: float | None = None) -> bool:
        tol = config.hilbert.hermitian_tol if tol is None else tol
        return bool(np.max(np.abs(self.entries - self.entries.conj().T), initial=0.0) <= tol)

    def require_density(self, tol: float = 1e-10) -> "DenseOperator":
        if not self.is_hermitian():
            raise NotPositiveSemidefiniteError("density matrix is not Hermitian")
        eigenvalues = np.linalg.eigvalsh(self.entries)
        if eigenvalues.min() < -tol:
            raise NotPositiveSemidefiniteError(f"density matrix has eigenvalue {eigenvalues.min():.3e}")
        if abs(self.trace() - 1.0) > tol:
            raise NotPositiveSemidefiniteError(f"density matrix has trace {self.trace():.12f}")
        return self


class PureState(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    dims: tuple[int, ...]
    amplitudes: np.ndarray

    @field_validator("dims", mode="before")
    @classmethod
    def _dims(cls, v):
        return _as_dims(v)

    @field_validator("amplitudes", mode="before")
    @classmethod
    def _complex(cls, v):
        return np.asarray(v, dtype=complex).reshape(-1)

    @model_validator(mode="after")
    def _normalized(self) -> "PureState":
        if self.amplitudes.size != self.dim:
            raise DimensionMismatchError(f"{self.amplitudes.size} amplitudes do not match dims {self.dims}")
        norm = np.linalg.norm(self.amplitudes)
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"pure state has norm {norm:.15f}")
        return self

    @classmethod
    def normalized(cls, vector, dims: Sequence[int]) -> "PureState":
        vector = np.asarray(vector, dtype=complex).reshape(-1)
        norm = float(np.linalg.norm(vector))
        if norm**2 <= config.hilbert.zero_probability_tol:
            raise ZeroProbabilityError(f"cannot normalize a vector of squared norm {norm**2:.3e}")
        return cls(dims=dims, amplitudes=vector / norm)

    @property
    def dim(self) -> int:
        return math.prod(self.dims)

    @property
    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape(self.dims)

    def inner(self, other: "PureState") -> complex:
        if self.dims != other.dims:
            raise DimensionMismatchError(f"states live on {self.dims} and {other.dims}")
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def projector(self) -> DenseOperator:
        return DenseOperator(dims=self.dims, entries=np.outer(self.amplitudes, self.amplitudes.conj()))


def apply_local(tensor: np.ndarray, op: np.ndarray, axis: int) -> np.ndarray:
    """op acting on one tensor factor; op may be rectangular, which resizes that factor."""
    return np.moveaxis(np.tensordot(op, tensor, axes=([1], [axis])), 0, axis)


def apply_local_right(tensor: np.ndarray, op: np.ndarray, axis: int) -> np.ndarray:
    """tensor @ op on one column factor."""
    return np.moveaxis(np.tensordot(tensor, op, axes=([axis], [0])), -1, axis)


def coordinate_projector(dim: int, cutoff: int) -> np.ndarray:
    """Projector onto basis levels 0..cutoff-1."""
    if not 0 <= cutoff <= dim:
        raise ValueError(f"cutoff {cutoff} outside [0, {dim}]")
    return np.diag((np.arange(dim) < cutoff).astype(complex))


def psd_sqrt(matrix: np.ndarray, clamp_tol: float | None = None) -> np.ndarray:
    """Principal square root of a PSD matrix; eigenvalues in [-clamp_tol, 0) are clamped to 0."""
    clamp_tol = config.hilbert.clamp_tol if clamp_tol is None else clamp_tol
    hermitian = 0.5 * (matrix + matrix.conj().T)
    eigenvalues, vectors = np.linalg.eigh(hermitian)
    if eigenvalues.min() < -clamp_tol:
        raise NotPositiveSemidefiniteError(f"matrix has eigenvalue {eigenvalues.min():.3e}")
    root = np.sqrt(np.clip(eigenvalues, 0.0, None))
    return (vectors * root) @ vectors.conj().T


def trace_distance(a: DenseOperator, b: DenseOperator) -> float:
    """L1 distance: the sum of |eigenvalues| of a - b, no factor one half."""
    if a.dims != b.dims:
        raise DimensionMismatchError(f"operators live on {a.dims} and {b.dims}")
    diff = a.entries - b.entries
    return float(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T))).sum())


def pure_state_distance(p1: PureState, p2: PureState) -> float:
    overlap = abs(p1.inner(p2)) ** 2
    return 2.0 * math.sqrt(max(0.0, 1.0 - overlap))


def partial_trace(op: DenseOperator, keep: Sequence[int]) -> DenseOperator:
    keep = sorted(set(keep))
    n = len(op.dims)
    if any(not 0 <= k < n for k in keep):
        raise DimensionMismatchError(f"cannot keep factors {keep} of {op.dims}")
    rows = list(range(n))
    cols = [n + i if i in keep else i for i in range(n)]
    out = keep + [n + i for i in keep]
    reduced = np.einsum(op.tensor, rows + cols, out)
    dims = tuple(op.dims[i] for i in keep) or (1,)
    return DenseOperator(dims=dims, entries=reduced.reshape(math.prod(dims), -1))


def partial_trace_pure(state: PureState, keep: Sequence[int]) -> DenseOperator:
    keep = sorted(set(keep))
    n = len(state.dims)
    if any(not 0 <= k < n for k in keep):
        raise DimensionMismatchError(f"cannot keep factors {keep} of {state.dims}")
    rows = list(range(n))
    cols = [n + i if i in keep else i for i in range(n)]
    out = keep + [n + i for i in keep]
    reduced = np.einsum(state.tensor, rows, state.tensor.conj(), cols, out)
    dims = tuple(state.dims[i] for i in keep) or (1,)
    return DenseOperator(dims=dims, entries=reduced.reshape(math.prod(dims), -1))
