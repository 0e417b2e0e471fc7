"""
Closed-form reference curves.

These are plain formulas with no matrix work behind them (except the two
rescaled references, which evaluate the unpercolated walk at time lam*t), so
they can be checked against the spectral stack instead of depending on it.
Times may be scalars or arrays; scalars come back as float.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from qw_errors import InvalidArgumentError
from qw_graph import Graph, validate_probability
from qw_walk import WalkConfig, classical_transition_curve, transition_probability_curve

logger = logging.getLogger(__name__)

TimeLike = Union[float, np.ndarray]


def _times(t, nonnegative: bool = False) -> np.ndarray:
    arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("time must be finite")
    if nonnegative and np.any(arr < 0):
        raise InvalidArgumentError("classical return probabilities need t >= 0")
    return arr


def _shape_like(t, values: np.ndarray) -> TimeLike:
    if np.ndim(t) == 0:
        return float(np.asarray(values).reshape(-1)[0])
    return values


def _check_node_count(n: int, minimum: int) -> int:
    if not isinstance(n, (int, np.integer)) or n < minimum:
        raise InvalidArgumentError(f"node count must be an integer >= {minimum}, got {n}")
    return int(n)


@dataclass(frozen=True)
class OracleCurve:
    label: str
    evaluate: Callable[[np.ndarray], np.ndarray]

    def __call__(self, t: TimeLike) -> TimeLike:
        values = self.evaluate(np.atleast_1d(_times(t)))
        return _shape_like(t, values)


def rescaled_reference(g: Graph, cfg: WalkConfig, lam: float, a: int, b: int) -> OracleCurve:
    """t -> |<b|e^{-iH lam t}|a>|^2 on the unpercolated graph."""
    lam = validate_probability(lam)
    a = g.check_node(a, "start node")
    b = g.check_node(b, "target node")
    return OracleCurve(
        label=f"rescaled_quantum[{g.name},lambda={lam},{a}->{b}]",
        evaluate=lambda t: transition_probability_curve(g, cfg, a, b, lam * t),
    )


def rescaled_classical_reference(g: Graph, cfg: WalkConfig, lam: float, a: int, b: int) -> OracleCurve:
    lam = validate_probability(lam)
    a = g.check_node(a, "start node")
    b = g.check_node(b, "target node")
    return OracleCurve(
        label=f"rescaled_classical[{g.name},lambda={lam},{a}->{b}]",
        evaluate=lambda t: classical_transition_curve(g, cfg, a, b, lam * t),
    )


def complete_graph_quantum_return(n: int, t: TimeLike) -> TimeLike:
    """Return probability on K_n: (n-1)^2/n^2 + 1/n^2 + 2(n-1)/n^2 cos(n t)."""
    n = _check_node_count(n, 2)
    arr = _times(t)
    values = ((n - 1) ** 2 + 1 + 2 * (n - 1) * np.cos(n * arr)) / n**2
    return _shape_like(t, values)


def complete_graph_classical_return(n: int, t: TimeLike) -> TimeLike:
    n = _check_node_count(n, 2)
    arr = _times(t, nonnegative=True)
    values = ((n - 1) * np.exp(-n * arr) + 1) / n
    return _shape_like(t, values)


def ring4_classical_return(lam: float, t: TimeLike) -> TimeLike:
    lam = validate_probability(lam)
    arr = _times(t, nonnegative=True)
    values = 0.25 + np.exp(-2 * lam * arr) / 2 + np.exp(-4 * lam * arr) / 4
    return _shape_like(t, values)


def ring4_quantum_return(lam: float, t: TimeLike) -> TimeLike:
    lam = validate_probability(lam)
    arr = _times(t)
    return _shape_like(t, np.cos(lam * arr) ** 4)


def flat_limit(n: int) -> float:
    n = _check_node_count(n, 1)
    return 1.0 / n


def rescaled_complete_quantum(n: int, lam: float) -> OracleCurve:
    lam = validate_probability(lam)
    return OracleCurve(f"complete_quantum[n={n},lambda={lam}]", lambda t: complete_graph_quantum_return(n, lam * t))


def rescaled_complete_classical(n: int, lam: float) -> OracleCurve:
    lam = validate_probability(lam)
    return OracleCurve(f"complete_classical[n={n},lambda={lam}]", lambda t: complete_graph_classical_return(n, lam * t))
