"""
Experiment drivers.

Each driver takes an ExperimentSpec, runs one of the dynamics backends and
returns a Report (a table plus the metadata that reproduces it). Writing the
file is left to the caller so sweeps and tests can inspect results in memory.
"""

import logging
import math
import os
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import AliasChoices, BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.optimize import least_squares

from qw_dynamics import (
    PercolationRun,
    averaged_classical,
    build_classical_step_matrix,
    build_step_channel,
    evolve_channel,
    evolve_classical_average,
    monte_carlo_channel,
    recorded_steps,
    run_classical_trajectory,
    run_trajectory,
)
from qw_errors import InvalidArgumentError
from qw_graph import SEED_LIMIT, Graph, parse_graph_spec
from qw_oracles import (
    flat_limit,
    rescaled_classical_reference,
    rescaled_complete_classical,
    rescaled_complete_quantum,
    rescaled_reference,
    ring4_classical_return,
    ring4_quantum_return,
)
from qw_reports import Report
from qw_walk import DensityMatrix, QuantumState, WalkConfig

logger = logging.getLogger(__name__)

TIMING_RTOL = 1e-9
RELATIVE_ERROR_GUARD = 1e-6
FIT_MAX_EVALUATIONS = 200


class Backend(str, Enum):
    TRAJECTORY = "trajectory"
    CHANNEL = "channel"
    MONTE_CARLO = "monte_carlo"
    CLASSICAL = "classical"


class OracleKind(str, Enum):
    RESCALED = "rescaled"
    RESCALED_CLASSICAL = "rescaled-c"
    COMPLETE_QUANTUM = "complete-q"
    COMPLETE_CLASSICAL = "complete-c"
    RING4_QUANTUM = "ring4-q"
    RING4_CLASSICAL = "ring4-c"
    FLAT = "flat"


class Timing(NamedTuple):
    tau: float
    steps: int
    total_time: float


def resolve_timing(tau: Optional[float], steps: Optional[int], total_time: Optional[float]) -> Timing:
    """Any two of (tau, S, T) fix the third. S wins over T when they disagree by round-off."""
    given = sum(x is not None for x in (tau, steps, total_time))
    if given < 2:
        raise InvalidArgumentError("two of tau, steps and total time must be given")
    if tau is not None and steps is not None:
        derived = steps * tau
        if total_time is not None and abs(derived - total_time) > TIMING_RTOL * max(abs(total_time), abs(derived)):
            raise InvalidArgumentError(
                f"steps*tau = {derived!r} disagrees with total time {total_time!r}"
            )
        return Timing(float(tau), int(steps), derived)
    if steps is not None:
        tau = total_time / steps
        return Timing(tau, int(steps), steps * tau)
    steps = int(round(total_time / tau))
    if steps < 1:
        raise InvalidArgumentError(f"total time {total_time} is shorter than one step of {tau}")
    return Timing(float(tau), steps, steps * tau)


class ExperimentSpec(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True, extra="ignore")

    graph_spec: str = Field(validation_alias=AliasChoices("graph_spec", "graph"))
    lam: float = Field(0.5, ge=0.0, le=1.0, validation_alias=AliasChoices("lam", "lambda"))
    tau: Optional[float] = Field(None, gt=0.0)
    steps: Optional[int] = Field(None, ge=1)
    total_time: Optional[float] = Field(None, gt=0.0, validation_alias=AliasChoices("total_time", "time"))
    initial_node: int = Field(0, ge=0, validation_alias=AliasChoices("initial_node", "start"))
    backend: Backend = Backend.CHANNEL
    seed: int = Field(0, ge=0, lt=SEED_LIMIT)
    sample_stride: int = Field(1, ge=1, validation_alias=AliasChoices("sample_stride", "stride"))
    gamma: float = Field(1.0, gt=0.0)
    output_path: Optional[str] = Field(None, validation_alias=AliasChoices("output_path", "out"))
    trajectories: int = Field(1000, ge=2)
    trajectory_steps: Optional[int] = Field(None, ge=1)
    workers: int = Field(1, ge=1)
    average: bool = False
    which: OracleKind = OracleKind.RESCALED
    sweep: Optional[List[float]] = None
    steps_list: List[int] = Field(default_factory=list)
    epsilons: List[float] = Field(default_factory=list)

    @field_validator("sweep", "steps_list", "epsilons", mode="before")
    @classmethod
    def split_lists(cls, value: Any) -> Any:
        if isinstance(value, str):
            items = [item.strip() for item in value.split(",") if item.strip()]
            return items or None
        return value

    @field_validator("sweep")
    @classmethod
    def check_sweep(cls, value: Optional[List[float]]) -> Optional[List[float]]:
        if value is not None and any(not 0.0 <= lam <= 1.0 for lam in value):
            raise ValueError("every swept lambda must lie in [0, 1]")
        return value

    @field_validator("steps_list")
    @classmethod
    def check_steps_list(cls, value: List[int]) -> List[int]:
        if any(s < 1 for s in value):
            raise ValueError("every entry of steps_list must be a positive integer")
        return value

    @field_validator("epsilons")
    @classmethod
    def check_epsilons(cls, value: List[float]) -> List[float]:
        if any(not eps > 0 for eps in value):
            raise ValueError("every epsilon must be positive")
        return value

    @model_validator(mode="after")
    def check_timing(self) -> "ExperimentSpec":
        if sum(x is not None for x in (self.tau, self.steps, self.total_time)) >= 2:
            resolve_timing(self.tau, self.steps, self.total_time)
        return self

    def timing(self) -> Timing:
        return resolve_timing(self.tau, self.steps, self.total_time)

    def percolation_run(self) -> PercolationRun:
        timing = self.timing()
        return PercolationRun(lam=self.lam, tau=timing.tau, steps=timing.steps, seed=self.seed)

    def walk_config(self) -> WalkConfig:
        return WalkConfig(gamma=self.gamma)

    def metadata(self) -> Dict[str, Any]:
        meta = {
            "graph": self.graph_spec,
            "lambda": self.lam,
            "start": self.initial_node,
            "seed": self.seed,
            "stride": self.sample_stride,
            "gamma": self.gamma,
            "backend": self.backend.value,
        }
        try:
            timing = self.timing()
            meta.update(tau=timing.tau, steps=timing.steps, total_time=timing.total_time)
        except InvalidArgumentError:
            meta["total_time"] = self.total_time
        return meta


@dataclass
class EnvelopeFit:
    a: float
    b: float
    residual: float
    asymptote: float
    peak_count: int = 0
    converged: bool = True

    def evaluate(self, t) -> np.ndarray:
        return self.a * np.exp(-self.b * np.asarray(t, dtype=float)) + self.asymptote


@dataclass(frozen=True)
class ConvergencePoint:
    steps: int
    tau: float
    max_abs_error: float


def _graph_and_start(spec: ExperimentSpec) -> Tuple[Graph, int]:
    g = parse_graph_spec(spec.graph_spec)
    start = g.check_node(spec.initial_node, "start node")
    logger.info(f"Graph {g.name}: {g.node_count} nodes, {g.edge_count} edges")
    return g, start


def _max_abs(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def _return_probabilities(states: Sequence[DensityMatrix], node: int) -> np.ndarray:
    return np.array([rho.diagonal[node] for rho in states])


def exp_trajectory_lattice(spec: ExperimentSpec) -> Report:
    """Single quantum trajectory against the rescaled unpercolated walk."""
    g, start = _graph_and_start(spec)
    cfg = spec.walk_config()
    record = run_trajectory(g, cfg, spec.percolation_run(), QuantumState.basis(g.node_count, start), spec.sample_stride)
    sim = record.probabilities[:, start]
    oracle = rescaled_reference(g, cfg, spec.lam, start, start)(record.times)

    deviation = _max_abs(sim, oracle)
    logger.info(f"Trajectory on {g.name}, lambda={spec.lam}: max |sim - oracle| = {deviation:.3e}")
    data = pd.DataFrame({"t": record.times, "p_return_sim": sim, "p_return_oracle": oracle})
    return Report(title="trajectory", metadata={**spec.metadata(), "max_abs_error": deviation}, data=data)


def exp_channel_ring(spec: ExperimentSpec) -> Report:
    """Exact enumerated channel against the rescaled unpercolated walk."""
    g, start = _graph_and_start(spec)
    cfg = spec.walk_config()
    run = spec.percolation_run()
    phi = build_step_channel(g, cfg, spec.lam, run.tau, workers=spec.workers)
    states = evolve_channel(phi, DensityMatrix.from_node(g.node_count, start), run.steps, spec.sample_stride)

    times = recorded_steps(run.steps, spec.sample_stride) * run.tau
    sim = _return_probabilities(states, start)
    oracle = rescaled_reference(g, cfg, spec.lam, start, start)(times)
    traces = np.array([rho.trace for rho in states])

    deviation = _max_abs(sim, oracle)
    logger.info(f"Channel on {g.name}, lambda={spec.lam}: max |sim - oracle| = {deviation:.3e}")
    data = pd.DataFrame({"t": times, "p_return_sim": sim, "p_return_oracle": oracle, "trace": traces})
    metadata = {**spec.metadata(), "max_abs_error": deviation, "max_trace_defect": _max_abs(traces, 1.0)}
    return Report(title="channel", metadata=metadata, data=data)


def exp_monte_carlo(spec: ExperimentSpec) -> Report:
    g, start = _graph_and_start(spec)
    cfg = spec.walk_config()
    samples = monte_carlo_channel(
        g, cfg, spec.percolation_run(), DensityMatrix.from_node(g.node_count, start),
        spec.trajectories, spec.sample_stride, workers=spec.workers,
    )
    times = np.array([s.time for s in samples])
    oracle = rescaled_reference(g, cfg, spec.lam, start, start)(times)
    data = pd.DataFrame({
        "t": times,
        "p_return_mean": [s.mean.diagonal[start] for s in samples],
        "p_return_stderr": [s.site_stderr[start] for s in samples],
        "stderr_max": [s.stderr for s in samples],
        "p_return_oracle": oracle,
    })
    metadata = {**spec.metadata(), "trajectories": spec.trajectories}
    return Report(title="montecarlo", metadata=metadata, data=data)


def exp_classical(spec: ExperimentSpec) -> Report:
    """Classical walk, one trajectory or (average=True) the trajectory mean with standard errors."""
    g, start = _graph_and_start(spec)
    cfg = spec.walk_config()
    run = spec.percolation_run()
    p0 = np.zeros(g.node_count)
    p0[start] = 1.0

    if spec.average:
        samples = averaged_classical(g, cfg, run, p0, spec.trajectories, spec.sample_stride, workers=spec.workers)
        times = np.array([s.time for s in samples])
        columns = {
            "p_return_sim": [s.mean[start] for s in samples],
            "p_return_stderr": [s.site_stderr[start] for s in samples],
        }
    else:
        record = run_classical_trajectory(g, cfg, run, p0, spec.sample_stride)
        times = record.times
        columns = {"p_return_sim": record.probabilities[:, start]}

    oracle = rescaled_classical_reference(g, cfg, spec.lam, start, start)(times)
    data = pd.DataFrame({"t": times, **columns, "p_return_oracle": oracle})
    deviation = _max_abs(data["p_return_sim"], oracle)
    logger.info(f"Classical walk on {g.name}, lambda={spec.lam}: max |sim - oracle| = {deviation:.3e}")
    metadata = {**spec.metadata(), "max_abs_error": deviation, "average": spec.average}
    if spec.average:
        metadata["trajectories"] = spec.trajectories
    return Report(title="classical", metadata=metadata, data=data)


def _check_complete(g: Graph) -> int:
    n = g.node_count
    if n < 2 or g.edge_count != n * (n - 1) // 2:
        raise InvalidArgumentError(f"{g.name} is not a complete graph")
    return n


def exp_complete_graph(spec: ExperimentSpec) -> Report:
    """Quantum and classical trajectories on K_n against the rescaled closed forms."""
    g, start = _graph_and_start(spec)
    n = _check_complete(g)
    cfg = spec.walk_config()
    run = spec.percolation_run()

    quantum = run_trajectory(g, cfg, run, QuantumState.basis(n, start), spec.sample_stride)
    p0 = np.zeros(n)
    p0[start] = 1.0
    # independent stream so the classical walk does not reuse the quantum masks
    classical = run_classical_trajectory(g, cfg, run, p0, spec.sample_stride, trajectory_index=1)

    times = quantum.times
    data = pd.DataFrame({
        "t": times,
        "p_quantum_sim": quantum.probabilities[:, start],
        "p_quantum_oracle": rescaled_complete_quantum(n, spec.lam)(times),
        "p_classical_sim": classical.probabilities[:, start],
        "p_classical_oracle": rescaled_complete_classical(n, spec.lam)(times),
    })

    metadata = {
        **spec.metadata(),
        "quantum_max_abs_error": _max_abs(data["p_quantum_sim"], data["p_quantum_oracle"]),
        "classical_max_abs_error": _max_abs(data["p_classical_sim"], data["p_classical_oracle"]),
        "flat_limit": flat_limit(n),
    }
    if spec.lam > 0:
        revival = 2 * math.pi / (n * spec.lam)
        idx = int(np.argmin(np.abs(times - revival)))
        metadata.update(first_revival_time=float(times[idx]), first_revival_p=float(data["p_quantum_sim"].iloc[idx]))
    logger.info(
        f"Complete graph K_{n}: quantum error {metadata['quantum_max_abs_error']:.3e}, "
        f"classical error {metadata['classical_max_abs_error']:.3e}"
    )
    return Report(title="complete", metadata=metadata, data=data)


def exp_oracle(spec: ExperimentSpec) -> Report:
    g = parse_graph_spec(spec.graph_spec)
    timing = spec.timing()
    times = recorded_steps(timing.steps, spec.sample_stride) * timing.tau
    start = g.check_node(spec.initial_node, "start node")
    n = g.node_count
    cfg = spec.walk_config()

    curves: Dict[OracleKind, Callable[[np.ndarray], np.ndarray]] = {
        OracleKind.RESCALED: rescaled_reference(g, cfg, spec.lam, start, start),
        OracleKind.RESCALED_CLASSICAL: rescaled_classical_reference(g, cfg, spec.lam, start, start),
        OracleKind.COMPLETE_QUANTUM: rescaled_complete_quantum(n, spec.lam),
        OracleKind.COMPLETE_CLASSICAL: rescaled_complete_classical(n, spec.lam),
        OracleKind.RING4_QUANTUM: lambda t: ring4_quantum_return(spec.lam, t),
        OracleKind.RING4_CLASSICAL: lambda t: ring4_classical_return(spec.lam, t),
        OracleKind.FLAT: lambda t: np.full_like(t, flat_limit(n)),
    }
    data = pd.DataFrame({"t": times, "probability": curves[spec.which](times)})
    return Report(title=f"oracle:{spec.which.value}", metadata=spec.metadata(), data=data)


def envelope_maxima(times, values) -> Tuple[np.ndarray, np.ndarray]:
    """Samples strictly greater than both neighbours; the first sample needs only beat its right neighbour."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return times[:0], values[:0]
    peaks = np.zeros(values.size, dtype=bool)
    # the initial sample opens the envelope
    peaks[0] = values[0] > values[1]
    peaks[1:-1] = (values[1:-1] > values[:-2]) & (values[1:-1] > values[2:])
    idx = np.flatnonzero(peaks)
    return times[idx], values[idx]


def fit_envelope_peaks(peak_times, peak_values, asymptote: float) -> EnvelopeFit:
    """Least-squares fit of a*exp(-b t) + asymptote, started from a log-linear regression."""
    t = np.asarray(peak_times, dtype=float)
    v = np.asarray(peak_values, dtype=float)
    above = v - asymptote > 0
    if above.sum() < 2:
        logger.warning(f"Envelope fit needs two peaks above {asymptote}, found {int(above.sum())}")
        return EnvelopeFit(math.nan, math.nan, math.nan, asymptote, int(t.size), converged=False)

    slope, intercept = np.polyfit(t[above], np.log(v[above] - asymptote), 1)
    x0 = np.array([math.exp(intercept), max(-slope, 0.0)])

    def residuals(p: np.ndarray) -> np.ndarray:
        return p[0] * np.exp(-p[1] * t) + asymptote - v

    result = least_squares(
        residuals, x0, bounds=([-np.inf, 0.0], [np.inf, np.inf]), method="trf",
        max_nfev=FIT_MAX_EVALUATIONS, xtol=1e-14, ftol=1e-14, gtol=1e-14,
    )
    rms = float(np.sqrt(np.mean(result.fun**2)))
    fit = EnvelopeFit(
        a=float(result.x[0]), b=float(result.x[1]), residual=rms, asymptote=asymptote,
        peak_count=int(t.size), converged=bool(result.success),
    )
    if not fit.converged:
        logger.warning(f"Envelope fit did not converge: {result.message} (rms residual {rms:.3e})")
    return fit


def fit_exponential_envelope(times, values, asymptote: float) -> EnvelopeFit:
    peak_times, peak_values = envelope_maxima(times, values)
    return fit_envelope_peaks(peak_times, peak_values, asymptote)


def _longtime_oracles(g: Graph, cfg: WalkConfig, lam: float, start: int) -> Tuple[Callable, Callable]:
    """Closed forms on the 4-cycle at unit rate, rescaled spectral references otherwise."""
    is_four_cycle = g.node_count == 4 and g.edge_count == 4 and bool(np.all(g.degrees() == 2))
    if is_four_cycle and cfg.gamma == 1.0:
        return (lambda t: ring4_quantum_return(lam, t)), (lambda t: ring4_classical_return(lam, t))
    return rescaled_reference(g, cfg, lam, start, start), rescaled_classical_reference(g, cfg, lam, start, start)


def exp_longtime_finite_tau(spec: ExperimentSpec) -> Tuple[Report, EnvelopeFit]:
    """Finite-tau long run: channel, one trajectory, classical ensemble and the envelope of the channel curve."""
    g, start = _graph_and_start(spec)
    cfg = spec.walk_config()
    run = spec.percolation_run()
    n = g.node_count

    phi = build_step_channel(g, cfg, spec.lam, run.tau, workers=spec.workers)
    channel_states = evolve_channel(phi, DensityMatrix.from_node(n, start), run.steps)
    times = recorded_steps(run.steps, 1) * run.tau
    p_channel = _return_probabilities(channel_states, start)

    trajectory_steps = spec.trajectory_steps or run.steps
    trajectory_run = PercolationRun.from_total_time(spec.lam, run.total_time, trajectory_steps, spec.seed)
    record = run_trajectory(g, cfg, trajectory_run, QuantumState.basis(n, start))
    p_trajectory = np.interp(times, record.times, record.probabilities[:, start])

    p0 = np.zeros(n)
    p0[start] = 1.0
    classical_matrix = build_classical_step_matrix(g, cfg, spec.lam, run.tau, workers=spec.workers)
    p_classical_average = np.array([p[start] for p in evolve_classical_average(classical_matrix, p0, run.steps)])
    classical_record = run_classical_trajectory(g, cfg, run, p0, trajectory_index=1)

    quantum_oracle, classical_oracle = _longtime_oracles(g, cfg, spec.lam, start)
    data = pd.DataFrame({
        "t": times,
        "p_channel": p_channel,
        "p_trajectory": p_trajectory,
        "p_classical_average": p_classical_average,
        "p_classical_trajectory": classical_record.probabilities[:, start],
        "p_quantum_oracle": quantum_oracle(times),
        "p_classical_oracle": classical_oracle(times),
    })

    fit = fit_exponential_envelope(times, p_channel, flat_limit(n))
    notes = [] if fit.converged else ["envelope fit did not converge; parameters are the last iterate"]
    metadata = {
        **spec.metadata(),
        "trajectory_steps": trajectory_steps,
        "flat_limit": flat_limit(n),
        "final_p_channel": float(p_channel[-1]),
        "fit_a": fit.a,
        "fit_b": fit.b,
        "fit_residual": fit.residual,
        "fit_peaks": fit.peak_count,
        "fit_converged": fit.converged,
    }
    logger.info(f"Envelope fit on {g.name}: a={fit.a:.4f}, b={fit.b:.4f}, rms={fit.residual:.2e}")
    return Report(title="envelope", metadata=metadata, notes=notes, data=data), fit


def _channel_curve(g: Graph, cfg: WalkConfig, spec: ExperimentSpec, start: int, steps: int) -> Tuple[np.ndarray, np.ndarray, float]:
    tau = spec.total_time / steps
    phi = build_step_channel(g, cfg, spec.lam, tau, workers=spec.workers)
    states = evolve_channel(phi, DensityMatrix.from_node(g.node_count, start), steps)
    return recorded_steps(steps, 1) * tau, _return_probabilities(states, start), tau


def _require_scan(spec: ExperimentSpec, steps_list: Sequence[int]) -> List[int]:
    if spec.total_time is None:
        raise InvalidArgumentError("scans need a total time")
    if not steps_list:
        raise InvalidArgumentError("scans need at least one step count")
    return [int(s) for s in steps_list]


def convergence_slope(points: Sequence[ConvergencePoint]) -> float:
    """Slope of log(max_abs_error) against log(tau); nan when fewer than two usable points."""
    usable = [p for p in points if p.max_abs_error > 0 and math.isfinite(p.max_abs_error)]
    if len({p.tau for p in usable}) < 2:
        return math.nan
    tau = np.log([p.tau for p in usable])
    err = np.log([p.max_abs_error for p in usable])
    return float(np.polyfit(tau, err, 1)[0])


def exp_convergence(spec: ExperimentSpec, steps_list: Optional[Sequence[int]] = None) -> Tuple[Report, List[ConvergencePoint]]:
    steps_list = _require_scan(spec, steps_list if steps_list is not None else spec.steps_list)
    g, start = _graph_and_start(spec)
    cfg = spec.walk_config()
    oracle = rescaled_reference(g, cfg, spec.lam, start, start)

    points = []
    for steps in steps_list:
        times, sim, tau = _channel_curve(g, cfg, spec, start, steps)
        point = ConvergencePoint(steps=steps, tau=tau, max_abs_error=_max_abs(sim, oracle(times)))
        logger.info(f"S={steps}, tau={tau:.3e}: max abs error {point.max_abs_error:.3e}")
        points.append(point)

    slope = convergence_slope(points)
    data = pd.DataFrame({
        "S": [p.steps for p in points],
        "tau": [p.tau for p in points],
        "max_abs_error": [p.max_abs_error for p in points],
    })
    metadata = {**spec.metadata(), "steps_list": steps_list, "loglog_slope": slope, "sampling": "every step"}
    return Report(title="convergence", metadata=metadata, data=data), points


def epsilon_horizon(times: np.ndarray, sim: np.ndarray, oracle: np.ndarray, epsilon: float) -> Tuple[float, int]:
    """Last sampled time before the guarded relative error first reaches epsilon, and the guarded-point count."""
    guarded = oracle >= RELATIVE_ERROR_GUARD
    relative = np.zeros_like(sim)
    relative[guarded] = np.abs(sim[guarded] - oracle[guarded]) / oracle[guarded]
    crossing = np.flatnonzero(guarded & (relative >= epsilon))
    skipped = int((~guarded).sum())
    if crossing.size == 0:
        return float(times[-1]), skipped
    first = int(crossing[0])
    return (float(times[first - 1]) if first > 0 else 0.0), skipped


def exp_epsilon_horizon(spec: ExperimentSpec, epsilon_list: Optional[Sequence[float]] = None,
                        steps_list: Optional[Sequence[int]] = None) -> Report:
    steps_list = _require_scan(spec, steps_list if steps_list is not None else spec.steps_list)
    epsilons = sorted(epsilon_list if epsilon_list is not None else spec.epsilons)
    if not epsilons:
        raise InvalidArgumentError("the horizon scan needs at least one epsilon")
    g, start = _graph_and_start(spec)
    cfg = spec.walk_config()
    oracle = rescaled_reference(g, cfg, spec.lam, start, start)

    rows = []
    notes = []
    for steps in steps_list:
        times, sim, _ = _channel_curve(g, cfg, spec, start, steps)
        reference = oracle(times)
        for eps in epsilons:
            horizon, skipped = epsilon_horizon(times, sim, reference, eps)
            rows.append({"S": steps, "epsilon": eps, "horizon": horizon})
        if skipped:
            notes.append(f"S={steps}: {skipped} points with oracle < {RELATIVE_ERROR_GUARD:g} skipped")
            logger.warning(f"S={steps}: skipped {skipped} points below the relative-error guard")

    metadata = {
        **spec.metadata(),
        "steps_list": steps_list,
        "epsilons": epsilons,
        "relative_error_guard": RELATIVE_ERROR_GUARD,
        "sampling": "every step",
    }
    return Report(title="horizon", metadata=metadata, notes=notes, data=pd.DataFrame(rows, columns=["S", "epsilon", "horizon"]))


def sweep_values(spec: ExperimentSpec) -> List[float]:
    return list(spec.sweep) if spec.sweep else [spec.lam]


def sweep_output_path(path: str, lam: float) -> str:
    root, ext = os.path.splitext(path)
    return f"{root}_lambda{lam:g}{ext or '.csv'}"


def run_sweep(spec: ExperimentSpec, experiment: Callable[[ExperimentSpec], Report]) -> List[Tuple[float, Report]]:
    """Run one experiment per lambda; each point owns its spec and its report."""
    results = []
    for lam in sweep_values(spec):
        point = spec.model_copy(update={"lam": lam})
        results.append((lam, experiment(point)))
    return results


__all__ = [
    "Backend",
    "ConvergencePoint",
    "EnvelopeFit",
    "ExperimentSpec",
    "OracleKind",
    "Timing",
    "convergence_slope",
    "envelope_maxima",
    "epsilon_horizon",
    "exp_channel_ring",
    "exp_classical",
    "exp_complete_graph",
    "exp_convergence",
    "exp_epsilon_horizon",
    "exp_longtime_finite_tau",
    "exp_monte_carlo",
    "exp_oracle",
    "exp_trajectory_lattice",
    "fit_envelope_peaks",
    "fit_exponential_envelope",
    "resolve_timing",
    "run_sweep",
    "sweep_output_path",
    "sweep_values",
]
