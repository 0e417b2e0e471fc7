"""
Evolution backends for walks on dynamically percolated graphs.

  * run_trajectory           one sampled product U_{r_S} ... U_{r_1} |psi0>
  * build_step_channel       exact one-step channel, sum_r p_r U_r (.) U_r^dagger,
    evolve_channel           as a column-stacked d^2 x d^2 matrix, applied S times
  * monte_carlo_channel      trajectory average with per-trajectory seeds
  * run_classical_trajectory and friends: the same three for the heat kernel e^{-H_r tau}

Per-step exponentials are exact (spectral), so any deviation from the rescaled
evolution comes from the non-commuting sampled Hamiltonians alone.
"""

import logging
import math
import threading
from collections import OrderedDict, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Iterable, List, NamedTuple, Optional, Tuple, Union

import numpy as np

from qw_errors import InvalidArgumentError, NumericalFailure
from qw_graph import (
    Graph,
    check_enumerable,
    make_rng,
    realization_batches,
    sample_realization_bits,
    validate_probability,
    validate_seed,
)
from qw_spectral import (
    decompose_batch,
    stochastic_exp_batch,
    unitary_exp_batch,
)
from qw_walk import (
    DensityMatrix,
    QuantumState,
    WalkConfig,
    hamiltonian_batch,
    validate_distribution,
)

logger = logging.getLogger(__name__)

DEFAULT_CACHE_CAPACITY = 1 << 16
DEFAULT_CACHE_BYTES = 512 * 1024 * 1024
STEP_CHUNK = 256
CHANNEL_BATCH = 2048
RENORMALIZE_EVERY = 10_000
RENORMALIZE_DRIFT = 1e-12
STEP_NORM_TOL = 1e-10
CHANNEL_TOL = 1e-10
MIXTURE_CUTOFF = 1e-14


class StepKind(str, Enum):
    QUANTUM = "quantum"
    CLASSICAL = "classical"


@dataclass(frozen=True)
class PercolationRun:
    lam: float
    tau: float
    steps: int
    seed: int = 0

    def __post_init__(self):
        validate_probability(self.lam)
        validate_seed(self.seed)
        if not (isinstance(self.tau, (int, float)) and math.isfinite(self.tau) and self.tau > 0):
            raise InvalidArgumentError(f"step size tau must be positive and finite, got {self.tau}")
        if not isinstance(self.steps, (int, np.integer)) or self.steps < 1:
            raise InvalidArgumentError(f"steps must be a positive integer, got {self.steps}")

    @property
    def total_time(self) -> float:
        # S is authoritative; T is derived
        return self.steps * self.tau

    @classmethod
    def from_total_time(cls, lam: float, total_time: float, steps: int, seed: int = 0) -> "PercolationRun":
        if steps < 1:
            raise InvalidArgumentError(f"steps must be a positive integer, got {steps}")
        return cls(lam=lam, tau=total_time / steps, steps=steps, seed=seed)


@dataclass(eq=False)
class TrajectoryRecord:
    times: np.ndarray
    states: np.ndarray
    realization_masks: Optional[List[int]] = None

    @property
    def probabilities(self) -> np.ndarray:
        """Site probabilities per recorded time, shape (n_records, node_count)."""
        if np.iscomplexobj(self.states):
            return np.abs(self.states) ** 2
        return self.states

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def quantum_states(self) -> List[QuantumState]:
        return [QuantumState(row) for row in self.states]


@dataclass(frozen=True, eq=False)
class ChannelMatrix:
    """Column-stacked superoperator: vec(Phi(rho)) = matrix @ vec(rho)."""

    matrix: np.ndarray
    dim: int
    lam: Optional[float] = None
    tau: Optional[float] = None

    def apply(self, rho: Union[DensityMatrix, np.ndarray]) -> np.ndarray:
        entries = rho.entries if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
        if entries.shape != (self.dim, self.dim):
            raise InvalidArgumentError(f"channel acts on {self.dim}x{self.dim} matrices, got {entries.shape}")
        return unvectorize(self.matrix @ vectorize(entries), self.dim)

    def trace_defect(self) -> float:
        trace_row = vectorize(np.eye(self.dim))
        return float(np.abs(trace_row @ self.matrix - trace_row).max())


class EnsembleSample(NamedTuple):
    mean: DensityMatrix
    stderr: float
    site_stderr: np.ndarray
    time: float


class DistributionSample(NamedTuple):
    mean: np.ndarray
    stderr: float
    site_stderr: np.ndarray
    time: float


def vectorize(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1, order="F")


def unvectorize(vec: np.ndarray, dim: int) -> np.ndarray:
    return np.asarray(vec).reshape(dim, dim, order="F")


def recorded_steps(steps: int, sample_stride: int) -> np.ndarray:
    """Step indices that get recorded: 0, stride, 2*stride, ... and always the last step."""
    if not isinstance(sample_stride, (int, np.integer)) or sample_stride < 1:
        raise InvalidArgumentError(f"sample_stride must be a positive integer, got {sample_stride}")
    marks = np.arange(0, steps + 1, sample_stride)
    if marks[-1] != steps:
        marks = np.append(marks, steps)
    return marks


class PropagatorCache:
    """Thread-safe LRU map from realization mask to its step propagator."""

    def __init__(self, capacity: int = DEFAULT_CACHE_CAPACITY, max_bytes: int = DEFAULT_CACHE_BYTES):
        if capacity < 1:
            raise InvalidArgumentError(f"cache capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.max_bytes = max_bytes
        self._limit: Optional[int] = None
        self._entries: "OrderedDict[tuple, np.ndarray]" = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        self.evictions = 0

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: tuple, uses: int = 1) -> Optional[np.ndarray]:
        """Look up key on behalf of uses steps; on a miss all but the first reuse the fresh entry."""
        with self._lock:
            value = self._entries.get(key)
            if value is None:
                self.misses += 1
                self.hits += uses - 1
                return None
            self._entries.move_to_end(key)
            self.hits += uses
            return value

    def put(self, key: tuple, value: np.ndarray) -> None:
        with self._lock:
            if self._limit is None:
                self._limit = max(1, min(self.capacity, self.max_bytes // max(value.nbytes, 1)))
            self._entries[key] = value
            self._entries.move_to_end(key)
            while len(self._entries) > self._limit:
                self._entries.popitem(last=False)
                self.evictions += 1

    def stats(self) -> dict:
        return {"entries": len(self._entries), "hits": self.hits, "misses": self.misses, "evictions": self.evictions}


def _ordered_reduce(func: Callable, items: Iterable, workers: int, consume: Callable) -> None:
    """Apply func to every item and feed results to consume in input order."""
    if workers <= 1:
        for item in items:
            consume(func(item))
        return
    with ThreadPoolExecutor(max_workers=workers) as executor:
        pending = deque()
        for item in items:
            pending.append(executor.submit(func, item))
            if len(pending) >= 2 * workers:
                consume(pending.popleft().result())
        while pending:
            consume(pending.popleft().result())


def _step_propagators(g: Graph, cfg: WalkConfig, bits: np.ndarray, tau: float, kind: StepKind,
                      cache: PropagatorCache, context: tuple) -> List[np.ndarray]:
    packed = np.packbits(bits, axis=1, bitorder="little")
    keys = [row.tobytes() for row in packed]
    rows_by_key: Dict[bytes, List[int]] = {}
    for i, key in enumerate(keys):
        rows_by_key.setdefault(key, []).append(i)

    found = {key: cache.get((context, key), len(rows)) for key, rows in rows_by_key.items()}
    missing = [key for key, op in found.items() if op is None]
    if missing:
        first_rows = [rows_by_key[key][0] for key in missing]
        eigenvalues, eigenvectors = decompose_batch(hamiltonian_batch(g, bits[first_rows], cfg))
        if kind is StepKind.QUANTUM:
            fresh = unitary_exp_batch(eigenvalues, eigenvectors, tau)
        else:
            fresh = stochastic_exp_batch(eigenvalues, eigenvectors, tau)
        for key, op in zip(missing, fresh):
            cache.put((context, key), op)
            found[key] = op
    return [found[key] for key in keys]


def _column_norms(state: np.ndarray, kind: StepKind) -> np.ndarray:
    if kind is StepKind.QUANTUM:
        return np.linalg.norm(state, axis=0)
    return state.sum(axis=0)


def _run_steps(g: Graph, cfg: WalkConfig, run: PercolationRun, initial: np.ndarray, kind: StepKind,
               sample_stride: int, rng: np.random.Generator, cache: PropagatorCache,
               record_masks: bool = False) -> Tuple[np.ndarray, np.ndarray, Optional[List[int]]]:
    """Step a (d, r) block of columns through S sampled realizations."""
    marks = recorded_steps(run.steps, sample_stride)
    record_at = set(int(m) for m in marks)
    context = (kind.value, float(run.tau), cfg.gamma, g)

    state = np.array(initial, dtype=complex if kind is StepKind.QUANTUM else float)
    records = [state.copy()]
    masks: Optional[List[int]] = [] if record_masks else None
    norms = _column_norms(state, kind)

    for chunk_start in range(0, run.steps, STEP_CHUNK):
        count = min(STEP_CHUNK, run.steps - chunk_start)
        bits = sample_realization_bits(g, run.lam, rng, count)
        ops = _step_propagators(g, cfg, bits, run.tau, kind, cache, context)
        if masks is not None:
            packed = np.packbits(bits, axis=1, bitorder="little")
            masks.extend(int.from_bytes(row.tobytes(), "little") for row in packed)

        for i, op in enumerate(ops):
            state = op @ state
            step = chunk_start + i + 1

            new_norms = _column_norms(state, kind)
            step_drift = np.abs(new_norms - norms).max()
            if step_drift > STEP_NORM_TOL:
                raise NumericalFailure(
                    "propagator failed to preserve normalization",
                    {"step": step, "drift": float(step_drift), "kind": kind.value},
                )
            norms = new_norms

            if step % RENORMALIZE_EVERY == 0:
                drift = float(np.abs(norms - 1.0).max())
                if drift > RENORMALIZE_DRIFT:
                    logger.info(f"Renormalizing {kind.value} state at step {step}, drift {drift:.3e}")
                    state = state / norms
                    norms = _column_norms(state, kind)

            if step in record_at:
                records.append(state.copy())

    times = marks * run.tau
    return times, np.array(records), masks


def _initial_amplitudes(g: Graph, psi0: Union[QuantumState, np.ndarray]) -> np.ndarray:
    if not isinstance(psi0, QuantumState):
        psi0 = QuantumState(np.asarray(psi0))
    if psi0.dim != g.node_count:
        raise InvalidArgumentError(f"initial state has dimension {psi0.dim}, graph has {g.node_count} nodes")
    return psi0.amplitudes


def run_trajectory(g: Graph, cfg: WalkConfig, run: PercolationRun, psi0: Union[QuantumState, np.ndarray],
                   sample_stride: int = 1, *, record_masks: bool = False,
                   cache: Optional[PropagatorCache] = None,
                   trajectory_index: Optional[int] = None) -> TrajectoryRecord:
    amplitudes = _initial_amplitudes(g, psi0)
    cache = cache if cache is not None else PropagatorCache()
    rng = make_rng(run.seed, trajectory_index)
    times, records, masks = _run_steps(
        g, cfg, run, amplitudes[:, None], StepKind.QUANTUM, sample_stride, rng, cache, record_masks
    )
    logger.debug(f"Quantum trajectory on {g.name} finished, cache {cache.stats()}")
    return TrajectoryRecord(times=times, states=records[:, :, 0], realization_masks=masks)


def run_classical_trajectory(g: Graph, cfg: WalkConfig, run: PercolationRun, p0,
                             sample_stride: int = 1, *, record_masks: bool = False,
                             cache: Optional[PropagatorCache] = None,
                             trajectory_index: Optional[int] = None) -> TrajectoryRecord:
    p0 = validate_distribution(p0, g.node_count)
    cache = cache if cache is not None else PropagatorCache()
    rng = make_rng(run.seed, trajectory_index)
    times, records, masks = _run_steps(
        g, cfg, run, p0[:, None], StepKind.CLASSICAL, sample_stride, rng, cache, record_masks
    )
    logger.debug(f"Classical trajectory on {g.name} finished, cache {cache.stats()}")
    return TrajectoryRecord(times=times, states=records[:, :, 0], realization_masks=masks)


class _RunningMoments:
    """Welford accumulation of the mean and the diagonal variance, in arrival order."""

    def __init__(self):
        self.count = 0
        self.mean: Optional[np.ndarray] = None
        self.diag_mean: Optional[np.ndarray] = None
        self.diag_m2: Optional[np.ndarray] = None

    def add(self, value: np.ndarray, diag: np.ndarray) -> None:
        self.count += 1
        if self.mean is None:
            self.mean = value.copy()
            self.diag_mean = diag.copy()
            self.diag_m2 = np.zeros_like(diag)
            return
        self.mean += (value - self.mean) / self.count
        delta = diag - self.diag_mean
        self.diag_mean += delta / self.count
        self.diag_m2 += delta * (diag - self.diag_mean)

    def site_stderr(self) -> np.ndarray:
        variance = self.diag_m2 / (self.count - 1)
        return np.sqrt(np.clip(variance, 0.0, None) / self.count)


def _check_ensemble_size(n_trajectories: int) -> None:
    if not isinstance(n_trajectories, (int, np.integer)) or n_trajectories < 2:
        raise InvalidArgumentError(f"n_trajectories must be at least 2, got {n_trajectories}")


def monte_carlo_channel(g: Graph, cfg: WalkConfig, run: PercolationRun, rho0: DensityMatrix,
                        n_trajectories: int, sample_stride: int = 1, *, workers: int = 1,
                        cache: Optional[PropagatorCache] = None) -> List[EnsembleSample]:
    """Average |psi_t><psi_t| over independent trajectories; trajectory k uses stream (seed, k)."""
    _check_ensemble_size(n_trajectories)
    if rho0.dim != g.node_count:
        raise InvalidArgumentError(f"initial density matrix has dimension {rho0.dim}, graph has {g.node_count} nodes")
    cache = cache if cache is not None else PropagatorCache()

    # a mixed rho0 is carried as its eigen-ensemble, all columns sharing one realization sequence
    weights, vectors = np.linalg.eigh(rho0.entries)
    keep = weights > MIXTURE_CUTOFF
    weights, columns = weights[keep], vectors[:, keep]

    def one_trajectory(index: int) -> np.ndarray:
        rng = make_rng(run.seed, index)
        _, records, _ = _run_steps(g, cfg, run, columns, StepKind.QUANTUM, sample_stride, rng, cache)
        return np.einsum("tir,r,tjr->tij", records, weights, records.conj())

    moments = _RunningMoments()
    _ordered_reduce(
        one_trajectory,
        range(n_trajectories),
        workers,
        lambda rho_t: moments.add(rho_t, np.einsum("tii->ti", rho_t).real),
    )
    logger.info(f"Monte Carlo channel on {g.name}: {n_trajectories} trajectories, cache {cache.stats()}")

    times = recorded_steps(run.steps, sample_stride) * run.tau
    site_stderr = moments.site_stderr()
    samples = []
    for k, t in enumerate(times):
        mean = moments.mean[k]
        samples.append(EnsembleSample(
            mean=DensityMatrix((mean + mean.conj().T) / 2),
            stderr=float(site_stderr[k].max()),
            site_stderr=site_stderr[k],
            time=float(t),
        ))
    return samples


def averaged_classical(g: Graph, cfg: WalkConfig, run: PercolationRun, p0, n_trajectories: int,
                       sample_stride: int = 1, *, workers: int = 1,
                       cache: Optional[PropagatorCache] = None) -> List[DistributionSample]:
    _check_ensemble_size(n_trajectories)
    p0 = validate_distribution(p0, g.node_count)
    cache = cache if cache is not None else PropagatorCache()

    def one_trajectory(index: int) -> np.ndarray:
        rng = make_rng(run.seed, index)
        _, records, _ = _run_steps(g, cfg, run, p0[:, None], StepKind.CLASSICAL, sample_stride, rng, cache)
        return records[:, :, 0]

    moments = _RunningMoments()
    _ordered_reduce(one_trajectory, range(n_trajectories), workers, lambda p_t: moments.add(p_t, p_t))

    times = recorded_steps(run.steps, sample_stride) * run.tau
    site_stderr = moments.site_stderr()
    return [
        DistributionSample(mean=moments.mean[k], stderr=float(site_stderr[k].max()),
                           site_stderr=site_stderr[k], time=float(t))
        for k, t in enumerate(times)
    ]


def _enumerated_sum(g: Graph, cfg: WalkConfig, lam: float, tau: float, kind: StepKind,
                    batch_size: int, workers: int, block_sum: Callable) -> Tuple[np.ndarray, int]:
    check_enumerable(g)
    total = {"value": None, "realizations": 0}

    def block(item):
        bits, probs = item
        live = probs > 0
        if not live.any():
            return None
        bits, probs = bits[live], probs[live]
        eigenvalues, eigenvectors = decompose_batch(hamiltonian_batch(g, bits, cfg))
        if kind is StepKind.QUANTUM:
            ops = unitary_exp_batch(eigenvalues, eigenvectors, tau)
        else:
            ops = stochastic_exp_batch(eigenvalues, eigenvectors, tau)
        return block_sum(ops, probs), len(probs)

    def consume(result):
        if result is None:
            return
        partial, count = result
        total["value"] = partial if total["value"] is None else total["value"] + partial
        total["realizations"] += count

    _ordered_reduce(block, realization_batches(g, lam, batch_size), workers, consume)
    return total["value"], total["realizations"]


def build_step_channel(g: Graph, cfg: WalkConfig, lam: float, tau: float, *,
                       batch_size: int = CHANNEL_BATCH, workers: int = 1) -> ChannelMatrix:
    """Phi = sum_r p_r conj(U_r) (x) U_r, each U_r = e^{-i H_r tau} computed once per mask."""
    validate_probability(lam)
    if not (math.isfinite(tau) and tau > 0):
        raise InvalidArgumentError(f"step size tau must be positive and finite, got {tau}")
    d = g.node_count

    def block_sum(unitaries: np.ndarray, probs: np.ndarray) -> np.ndarray:
        flat = unitaries.reshape(len(probs), d * d)
        # rows (p, q) of conj(U), columns (i, k) of U
        return (probs[:, None] * flat.conj()).T @ flat

    total, realizations = _enumerated_sum(g, cfg, lam, tau, StepKind.QUANTUM, batch_size, workers, block_sum)
    matrix = total.reshape(d, d, d, d).transpose(0, 2, 1, 3).reshape(d * d, d * d)
    channel = ChannelMatrix(matrix=matrix, dim=d, lam=lam, tau=tau)

    defect = channel.trace_defect()
    if defect > CHANNEL_TOL:
        raise NumericalFailure("step channel is not trace preserving", {"defect": defect, "lambda": lam, "tau": tau})
    logger.info(f"Built step channel for {g.name}: lambda={lam}, tau={tau}, {realizations} weighted realizations")
    return channel


def channel_power(phi: ChannelMatrix, steps: int) -> ChannelMatrix:
    if steps < 0:
        raise InvalidArgumentError(f"steps must be non-negative, got {steps}")
    return ChannelMatrix(np.linalg.matrix_power(phi.matrix, steps), phi.dim, phi.lam, phi.tau)


def evolve_channel(phi: ChannelMatrix, rho0: DensityMatrix, steps: int, sample_stride: int = 1) -> List[DensityMatrix]:
    """rho_s = Phi^s(rho0) at every recorded step, starting with rho0 itself."""
    if rho0.dim != phi.dim:
        raise InvalidArgumentError(f"channel acts on dimension {phi.dim}, density matrix has {rho0.dim}")
    if not isinstance(steps, (int, np.integer)) or steps < 0:
        raise InvalidArgumentError(f"steps must be a non-negative integer, got {steps}")
    if steps == 0:
        return [rho0]

    marks = set(int(m) for m in recorded_steps(steps, sample_stride))
    diag_index = np.arange(phi.dim) * (phi.dim + 1)
    vec = vectorize(rho0.entries).astype(complex)
    out = [rho0]
    for step in range(1, steps + 1):
        vec = phi.matrix @ vec
        trace = vec[diag_index].sum()
        if abs(trace - 1.0) > CHANNEL_TOL:
            raise NumericalFailure("channel evolution lost trace", {"step": step, "trace": complex(trace)})
        if step in marks:
            rho = unvectorize(vec, phi.dim)
            herm = np.abs(rho - rho.conj().T).max()
            if herm > CHANNEL_TOL:
                raise NumericalFailure("channel evolution lost Hermiticity", {"step": step, "defect": float(herm)})
            try:
                out.append(DensityMatrix((rho + rho.conj().T) / 2))
            except InvalidArgumentError as e:
                raise NumericalFailure(f"channel produced an invalid state: {e}", {"step": step}) from e
    return out


def build_classical_step_matrix(g: Graph, cfg: WalkConfig, lam: float, tau: float, *,
                                batch_size: int = CHANNEL_BATCH, workers: int = 1) -> np.ndarray:
    """Exact one-step ensemble of the classical walk: sum_r p_r e^{-H_r tau}."""
    validate_probability(lam)
    if not (math.isfinite(tau) and tau > 0):
        raise InvalidArgumentError(f"step size tau must be positive and finite, got {tau}")

    def block_sum(kernels: np.ndarray, probs: np.ndarray) -> np.ndarray:
        return np.tensordot(probs, kernels, axes=1)

    matrix, realizations = _enumerated_sum(g, cfg, lam, tau, StepKind.CLASSICAL, batch_size, workers, block_sum)
    defect = float(np.abs(matrix.sum(axis=0) - 1.0).max())
    if defect > CHANNEL_TOL:
        raise NumericalFailure("classical step matrix is not column stochastic", {"defect": defect})
    logger.info(f"Built classical step matrix for {g.name}: lambda={lam}, tau={tau}, {realizations} weighted realizations")
    return matrix


def evolve_classical_average(matrix: np.ndarray, p0, steps: int, sample_stride: int = 1) -> List[np.ndarray]:
    p = validate_distribution(p0, matrix.shape[0])
    if not isinstance(steps, (int, np.integer)) or steps < 0:
        raise InvalidArgumentError(f"steps must be a non-negative integer, got {steps}")
    if steps == 0:
        return [p]
    marks = set(int(m) for m in recorded_steps(steps, sample_stride))
    out = [p]
    for step in range(1, steps + 1):
        p = matrix @ p
        if step in marks:
            out.append(p.copy())
    return out
