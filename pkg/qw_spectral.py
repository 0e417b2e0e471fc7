"""
Dense real-symmetric eigendecomposition and the exponentials built on it.

Every propagator in the package goes through here: e^{-iHt} = Q e^{-i L t} Q^T
and e^{-Ht} = Q e^{-L t} Q^T. Batched variants take stacks of matrices so a
block of realizations costs one LAPACK call.
"""

import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from qw_errors import InvalidArgumentError, NumericalFailure

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12
LAPLACIAN_EIGENVALUE_FLOOR = -1e-9
NEGATIVE_ENTRY_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.shape[0])

    def reconstruct(self) -> np.ndarray:
        q = self.eigenvectors
        return (q * self.eigenvalues) @ q.T

    def shifted(self, c: float) -> "SpectralDecomposition":
        return SpectralDecomposition(self.eigenvalues + c, self.eigenvectors)


def check_symmetric(a) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2] or a.shape[-1] == 0:
        raise InvalidArgumentError(f"expected a non-empty square matrix, got shape {a.shape}")
    if np.iscomplexobj(a):
        if np.abs(a.imag).max() > SYMMETRY_TOL:
            raise InvalidArgumentError("generator must be real symmetric")
        a = a.real
    a = a.astype(float, copy=False)
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError("generator contains non-finite entries")
    asym = np.abs(a - np.swapaxes(a, -1, -2)).max()
    if asym > SYMMETRY_TOL:
        raise InvalidArgumentError(f"matrix is not symmetric (max |A - A^T| = {asym:.3e})")
    return a


def _eigh(a: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    try:
        return np.linalg.eigh(a)
    except np.linalg.LinAlgError as e:
        raise NumericalFailure(
            "symmetric eigensolver did not converge",
            {"shape": a.shape, "frobenius_norm": float(np.linalg.norm(a)), "reason": str(e)},
        ) from e


def decompose(a) -> SpectralDecomposition:
    a = check_symmetric(a)
    if a.ndim != 2:
        raise InvalidArgumentError(f"decompose expects a single matrix, got shape {a.shape}")
    eigenvalues, eigenvectors = _eigh(a)
    return SpectralDecomposition(eigenvalues, eigenvectors)


def decompose_batch(stack) -> Tuple[np.ndarray, np.ndarray]:
    """Eigendecompose a (batch, d, d) stack; returns ascending eigenvalues and column eigenvectors."""
    stack = check_symmetric(stack)
    return _eigh(stack)


def _check_time(t: float) -> float:
    if not isinstance(t, (int, float, np.floating, np.integer)) or not math.isfinite(t):
        raise InvalidArgumentError(f"time must be a finite real number, got {t}")
    return float(t)


def unitary_exp(decomp: SpectralDecomposition, t: float) -> np.ndarray:
    t = _check_time(t)
    q = decomp.eigenvectors
    phases = np.exp(-1j * decomp.eigenvalues * t)
    return (q * phases) @ q.T


def unitary_exp_batch(eigenvalues: np.ndarray, eigenvectors: np.ndarray, t: float) -> np.ndarray:
    t = _check_time(t)
    phases = np.exp(-1j * eigenvalues * t)
    return (eigenvectors * phases[:, None, :]) @ np.swapaxes(eigenvectors, -1, -2)


def _check_laplacian(eigenvalues: np.ndarray, t: float) -> float:
    t = _check_time(t)
    if t < 0:
        raise InvalidArgumentError(f"stochastic evolution needs t >= 0, got {t}")
    if eigenvalues.size and eigenvalues.min() < LAPLACIAN_EIGENVALUE_FLOOR:
        raise InvalidArgumentError(
            f"generator is not a graph Laplacian (smallest eigenvalue {eigenvalues.min():.3e})"
        )
    return t


def _clamp_probabilities(p: np.ndarray) -> np.ndarray:
    lowest = p.min() if p.size else 0.0
    if lowest < -NEGATIVE_ENTRY_TOL:
        raise NumericalFailure("heat kernel produced a negative entry", {"min_entry": float(lowest)})
    return np.clip(p, 0.0, None)


def stochastic_exp(decomp: SpectralDecomposition, t: float) -> np.ndarray:
    t = _check_laplacian(decomp.eigenvalues, t)
    q = decomp.eigenvectors
    return _clamp_probabilities((q * np.exp(-decomp.eigenvalues * t)) @ q.T)


def stochastic_exp_batch(eigenvalues: np.ndarray, eigenvectors: np.ndarray, t: float) -> np.ndarray:
    t = _check_laplacian(eigenvalues, t)
    decay = np.exp(-eigenvalues * t)
    return _clamp_probabilities((eigenvectors * decay[:, None, :]) @ np.swapaxes(eigenvectors, -1, -2))


def unitarity_defect(u: np.ndarray) -> float:
    return float(np.abs(u.conj().T @ u - np.eye(u.shape[0])).max())
