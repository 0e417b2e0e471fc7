"""
Walk Hamiltonians and single-shot transition probabilities.

H carries gamma * degree on the diagonal and -gamma on adjacent pairs. For a
percolated realization the degree is counted inside the realization, so every
H_r is itself a Laplacian and H_r is the sum of its per-edge terms E_k.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from qw_errors import InvalidArgumentError
from qw_graph import Graph, Realization
from qw_spectral import (
    SpectralDecomposition,
    decompose,
    stochastic_exp,
    unitary_exp,
)

logger = logging.getLogger(__name__)

NORM_TOL = 1e-10
HERMITIAN_TOL = 1e-10
POSITIVITY_TOL = 1e-8


@dataclass(frozen=True)
class WalkConfig:
    gamma: float = 1.0

    def __post_init__(self):
        if not (isinstance(self.gamma, (int, float)) and math.isfinite(self.gamma) and self.gamma > 0):
            raise InvalidArgumentError(f"gamma must be a positive finite rate, got {self.gamma}")


@dataclass(frozen=True, eq=False)
class QuantumState:
    amplitudes: np.ndarray

    def __post_init__(self):
        amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if amplitudes.ndim != 1 or amplitudes.size == 0:
            raise InvalidArgumentError(f"state must be a non-empty vector, got shape {amplitudes.shape}")
        norm = np.linalg.norm(amplitudes)
        if abs(norm - 1.0) > NORM_TOL:
            raise InvalidArgumentError(f"state is not normalized (norm {norm:.12f})")
        object.__setattr__(self, "amplitudes", amplitudes)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    @property
    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    @classmethod
    def basis(cls, dim: int, node: int) -> "QuantumState":
        if not 0 <= node < dim:
            raise InvalidArgumentError(f"node {node} out of range 0..{dim - 1}")
        psi = np.zeros(dim, dtype=complex)
        psi[node] = 1.0
        return cls(psi)

    def density_matrix(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    entries: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.entries, dtype=complex)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1] or rho.shape[0] == 0:
            raise InvalidArgumentError(f"density matrix must be square, got shape {rho.shape}")
        herm = np.abs(rho - rho.conj().T).max()
        if herm > HERMITIAN_TOL:
            raise InvalidArgumentError(f"density matrix is not Hermitian (defect {herm:.3e})")
        trace = np.trace(rho).real
        if abs(trace - 1.0) > NORM_TOL:
            raise InvalidArgumentError(f"density matrix trace is {trace:.12f}, expected 1")
        lowest = np.linalg.eigvalsh((rho + rho.conj().T) / 2).min()
        if lowest < -POSITIVITY_TOL:
            raise InvalidArgumentError(f"density matrix is not positive (smallest eigenvalue {lowest:.3e})")
        object.__setattr__(self, "entries", rho)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def diagonal(self) -> np.ndarray:
        return np.clip(self.entries.diagonal().real, 0.0, None)

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries).real)

    @classmethod
    def from_node(cls, dim: int, node: int) -> "DensityMatrix":
        return QuantumState.basis(dim, node).density_matrix()


def validate_distribution(p, dim: Optional[int] = None) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or (dim is not None and p.size != dim):
        raise InvalidArgumentError(f"distribution must be a vector of length {dim}, got shape {p.shape}")
    if np.any(p < 0) or abs(p.sum() - 1.0) > NORM_TOL:
        raise InvalidArgumentError("distribution entries must be non-negative and sum to 1")
    return p


def hamiltonian(g: Graph, mask: Realization, cfg: WalkConfig = WalkConfig()) -> np.ndarray:
    g.check_realization(mask)
    return hamiltonian_batch(g, mask.bits()[None, :], cfg)[0]


def hamiltonian_batch(g: Graph, bits: np.ndarray, cfg: WalkConfig = WalkConfig()) -> np.ndarray:
    """Hamiltonians for a (batch, edge_count) block of realization bits."""
    bits = np.asarray(bits, dtype=bool)
    if bits.ndim != 2 or bits.shape[1] != g.edge_count:
        raise InvalidArgumentError(f"expected bits of shape (batch, {g.edge_count}), got {bits.shape}")
    d = g.node_count
    h = np.zeros((bits.shape[0], d, d))
    if g.edge_count:
        u, v = g.endpoints
        present = bits.astype(float)
        h[:, u, v] = -cfg.gamma * present
        h[:, v, u] = -cfg.gamma * present
        idx = np.arange(d)
        h[:, idx, idx] = cfg.gamma * (present @ g.incidence)
    return h


def full_hamiltonian(g: Graph, cfg: WalkConfig = WalkConfig()) -> np.ndarray:
    return hamiltonian(g, g.full_realization(), cfg)


@lru_cache(maxsize=64)
def full_decomposition(g: Graph, cfg: WalkConfig = WalkConfig()) -> SpectralDecomposition:
    logger.debug(f"Decomposing unpercolated Hamiltonian of {g.name} (gamma={cfg.gamma})")
    return decompose(full_hamiltonian(g, cfg))


def transition_probability(g: Graph, cfg: WalkConfig, a: int, b: int, t: float) -> float:
    a = g.check_node(a, "start node")
    b = g.check_node(b, "target node")
    u = unitary_exp(full_decomposition(g, cfg), t)
    return float(abs(u[b, a]) ** 2)


def classical_transition(g: Graph, cfg: WalkConfig, a: int, b: int, t: float) -> float:
    a = g.check_node(a, "start node")
    b = g.check_node(b, "target node")
    return float(stochastic_exp(full_decomposition(g, cfg), t)[b, a])


def transition_probability_curve(g: Graph, cfg: WalkConfig, a: int, b: int, times: Sequence[float]) -> np.ndarray:
    """|<b|e^{-iHt}|a>|^2 over a whole time grid from one decomposition."""
    a = g.check_node(a, "start node")
    b = g.check_node(b, "target node")
    d = full_decomposition(g, cfg)
    weights = d.eigenvectors[b] * d.eigenvectors[a]
    times = np.asarray(times, dtype=float)
    amplitudes = np.exp(-1j * np.multiply.outer(times, d.eigenvalues)) @ weights
    return np.abs(amplitudes) ** 2


def classical_transition_curve(g: Graph, cfg: WalkConfig, a: int, b: int, times: Sequence[float]) -> np.ndarray:
    a = g.check_node(a, "start node")
    b = g.check_node(b, "target node")
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise InvalidArgumentError("classical evolution needs t >= 0")
    d = full_decomposition(g, cfg)
    weights = d.eigenvectors[b] * d.eigenvectors[a]
    return np.clip(np.exp(-np.multiply.outer(times, d.eigenvalues)) @ weights, 0.0, 1.0)
