"""Seeded random test instances for the simulator.

Every generator takes a numpy Generator; `random_instance` derives its own from a seed
sequence such as (seed, trial) or (seed, trial, attempt), so any trial can be replayed alone.
"""

import logging
import math
from typing import Literal, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..config import config
from ..errors import DegenerateComplementError
from .channel import MeasurementSetup, protocol_dims
from .operators import PureState, apply_local, check_tensor_budget, coordinate_projector, psd_sqrt

logger = logging.getLogger(__name__)

SeedLike = Union[int, Sequence[int]]


def random_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Complex Gaussian vector; normalized it is Haar distributed."""
    return rng.standard_normal(dim) + 1j * rng.standard_normal(dim)


def random_pure_state(rng: np.random.Generator, dims: Sequence[int]) -> PureState:
    return PureState.normalized(random_vector(rng, math.prod(dims)), dims=tuple(dims))


def random_contraction(rng: np.random.Generator, dim: int) -> np.ndarray:
    """B^dagger B scaled so its largest eigenvalue is exactly 1."""
    g = random_vector(rng, dim * dim).reshape(dim, dim)
    m = g.conj().T @ g
    return m / np.linalg.eigvalsh(m).max()


def random_povm(rng: np.random.Generator, dim: int, n_outcomes: int) -> tuple[np.ndarray, ...]:
    """S^{-1/2} G_x S^{-1/2} with G_x random PSD and S their sum."""
    parts = []
    for _ in range(n_outcomes):
        g = random_vector(rng, dim * dim).reshape(dim, dim)
        parts.append(g @ g.conj().T)
    inv_root = np.linalg.inv(psd_sqrt(sum(parts)))
    povm = tuple(inv_root @ p @ inv_root for p in parts)
    return tuple(0.5 * (m + m.conj().T) for m in povm)


def random_accepted(rng: np.random.Generator, n_outcomes: int) -> tuple[int, ...]:
    size = int(rng.integers(1, n_outcomes + 1))
    return tuple(sorted(int(x) for x in rng.choice(n_outcomes, size=size, replace=False)))


class InstanceSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    dim_a: int = Field(ge=1)
    dim_b: int = Field(ge=1)
    n_systems: int = Field(ge=1)
    cutoff_a: int = Field(ge=0)
    cutoff_b: int = Field(ge=0)
    env_dim: int = Field(default=1, ge=1)
    n_outcomes: int = Field(default=3, ge=1)
    complement: bool = False
    dtilde: Literal["povm", "contraction"] = "povm"

    @model_validator(mode="after")
    def _cutoffs(self) -> "InstanceSpec":
        if self.cutoff_a > self.dim_a or self.cutoff_b > self.dim_b:
            raise ValueError("filter cutoffs cannot exceed the system dimensions")
        return self

    @property
    def dims(self) -> tuple[int, ...]:
        return protocol_dims(self.dim_a, self.dim_b, self.n_systems, self.env_dim)


class Instance(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    spec: InstanceSpec
    psi: PureState
    setup_a: MeasurementSetup
    setup_b: MeasurementSetup
    dtilde_a: np.ndarray
    dtilde_b: np.ndarray
    attempts: int = 1


def _setup(rng: np.random.Generator, dim: int, cutoff: int, spec: InstanceSpec) -> tuple[MeasurementSetup, np.ndarray]:
    setup = MeasurementSetup(
        povm=random_povm(rng, dim, spec.n_outcomes),
        accepted=random_accepted(rng, spec.n_outcomes),
        filter=coordinate_projector(dim, cutoff),
    )
    dtilde = setup.acceptance_operator if spec.dtilde == "povm" else random_contraction(rng, dim)
    return setup, dtilde


def _project_out_filter(psi: PureState, spec: InstanceSpec) -> np.ndarray:
    kept = psi.tensor
    for i in range(spec.n_systems):
        kept = apply_local(kept, coordinate_projector(spec.dim_a, spec.cutoff_a), 2 * i)
        kept = apply_local(kept, coordinate_projector(spec.dim_b, spec.cutoff_b), 2 * i + 1)
    return psi.tensor - kept


def random_instance(seed: SeedLike, spec: InstanceSpec) -> Instance:
    """Deterministic in `seed`; complement states are resampled from (seed..., attempt) when too thin."""
    check_tensor_budget(math.prod(spec.dims))
    base = [seed] if isinstance(seed, int) else list(seed)
    rng = np.random.default_rng(base)

    setup_a, dtilde_a = _setup(rng, spec.dim_a, spec.cutoff_a, spec)
    setup_b, dtilde_b = _setup(rng, spec.dim_b, spec.cutoff_b, spec)

    if not spec.complement:
        psi = random_pure_state(rng, spec.dims)
        return Instance(spec=spec, psi=psi, setup_a=setup_a, setup_b=setup_b, dtilde_a=dtilde_a, dtilde_b=dtilde_b)

    for attempt in range(config.hilbert.complement_retries):
        attempt_rng = rng if attempt == 0 else np.random.default_rng(base + [attempt])
        candidate = random_pure_state(attempt_rng, spec.dims)
        barred = _project_out_filter(candidate, spec)
        norm = float(np.linalg.norm(barred))
        if norm > config.hilbert.min_complement_norm:
            psi = PureState(dims=spec.dims, amplitudes=barred / norm)
            return Instance(
                spec=spec,
                psi=psi,
                setup_a=setup_a,
                setup_b=setup_b,
                dtilde_a=dtilde_a,
                dtilde_b=dtilde_b,
                attempts=attempt + 1,
            )
        logger.debug("complement component %.3e too thin for seed %s, attempt %d", norm, base, attempt)

    raise DegenerateComplementError(
        f"no usable complement state for seed {base} after {config.hilbert.complement_retries} attempts"
    )
