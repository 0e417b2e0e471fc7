"""
Percolation substrate: undirected graphs, the standard test geometries and
edge-subset realizations.

Nodes are 0-indexed everywhere. A walk labelled from 1 (state |1>) starts
from node 0 here; the centre of the 10x10 lattice (|45>) is node 44.
"""

import logging
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from qw_errors import CapacityError, InvalidArgumentError, OutputError

logger = logging.getLogger(__name__)

# 2^24 masks is the largest ensemble the exact backends will enumerate
MAX_ENUMERABLE_EDGES = 24
SEED_LIMIT = 2**64


@dataclass(frozen=True)
class Realization:
    """One sampled edge subset; bit k of mask is set when edge k is present."""

    mask: int
    edge_count: int

    def __post_init__(self):
        if self.edge_count < 0:
            raise InvalidArgumentError(f"edge_count must be non-negative, got {self.edge_count}")
        if self.mask < 0 or self.mask >> self.edge_count:
            raise InvalidArgumentError(
                f"mask {self.mask:#x} does not fit in {self.edge_count} edge bits"
            )

    @property
    def kept_count(self) -> int:
        return self.mask.bit_count()

    def __contains__(self, edge_index: int) -> bool:
        return bool((self.mask >> edge_index) & 1)

    def bits(self) -> np.ndarray:
        shifts = np.arange(self.edge_count, dtype=np.uint64)
        if self.edge_count <= 64:
            return ((np.uint64(self.mask) >> shifts) & np.uint64(1)).astype(bool)
        return np.array([(self.mask >> k) & 1 for k in range(self.edge_count)], dtype=bool)

    def union(self, other: "Realization") -> "Realization":
        if other.edge_count != self.edge_count:
            raise InvalidArgumentError("realizations belong to graphs of different size")
        return Realization(self.mask | other.mask, self.edge_count)

    @classmethod
    def from_bits(cls, bits: Sequence[bool]) -> "Realization":
        bits = np.asarray(bits, dtype=bool)
        packed = np.packbits(bits, bitorder="little").tobytes()
        return cls(int.from_bytes(packed, "little"), int(bits.size))

    @classmethod
    def full(cls, edge_count: int) -> "Realization":
        return cls((1 << edge_count) - 1, edge_count)

    @classmethod
    def empty(cls, edge_count: int) -> "Realization":
        return cls(0, edge_count)


@dataclass(frozen=True)
class PercolationParams:
    lam: float
    seed: int = 0

    def __post_init__(self):
        validate_probability(self.lam)
        validate_seed(self.seed)


def validate_probability(lam: float, name: str = "lambda") -> float:
    if not (isinstance(lam, (int, float, np.floating)) and 0.0 <= lam <= 1.0):
        raise InvalidArgumentError(f"{name} must be a probability in [0, 1], got {lam}")
    return float(lam)


def validate_seed(seed: int) -> int:
    if not (isinstance(seed, (int, np.integer)) and 0 <= seed < SEED_LIMIT):
        raise InvalidArgumentError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return int(seed)


@dataclass(frozen=True)
class Graph:
    """Immutable simple undirected graph. Edge order fixes realization bit positions."""

    node_count: int
    edges: Tuple[Tuple[int, int], ...]
    name: str = field(default="graph", compare=False)

    def __post_init__(self):
        if not isinstance(self.node_count, (int, np.integer)) or self.node_count < 1:
            raise InvalidArgumentError(f"node_count must be a positive integer, got {self.node_count}")
        normalized = tuple((int(u), int(v)) for u, v in self.edges)
        seen = set()
        for u, v in normalized:
            if not (0 <= u < self.node_count and 0 <= v < self.node_count):
                raise InvalidArgumentError(f"edge ({u}, {v}) references a node outside 0..{self.node_count - 1}")
            if u == v:
                raise InvalidArgumentError(f"self-loop at node {u} is not allowed")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise InvalidArgumentError(f"duplicate edge ({u}, {v})")
            seen.add(key)
        object.__setattr__(self, "edges", normalized)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @cached_property
    def endpoints(self) -> Tuple[np.ndarray, np.ndarray]:
        if not self.edges:
            return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
        pairs = np.asarray(self.edges, dtype=np.intp)
        return pairs[:, 0], pairs[:, 1]

    @cached_property
    def incidence(self) -> np.ndarray:
        """Unsigned edge-node incidence matrix, shape (edge_count, node_count)."""
        inc = np.zeros((self.edge_count, self.node_count))
        u, v = self.endpoints
        rows = np.arange(self.edge_count)
        inc[rows, u] = 1.0
        inc[rows, v] = 1.0
        return inc

    def degrees(self, realization: Optional[Realization] = None) -> np.ndarray:
        if realization is None:
            return self.incidence.sum(axis=0).astype(int)
        self.check_realization(realization)
        return (realization.bits().astype(float) @ self.incidence).astype(int)

    def check_realization(self, realization: Realization) -> None:
        if realization.edge_count != self.edge_count:
            raise InvalidArgumentError(
                f"realization has {realization.edge_count} edge bits, graph {self.name} has {self.edge_count} edges"
            )

    def check_node(self, node: int, label: str = "node") -> int:
        if not isinstance(node, (int, np.integer)) or not 0 <= node < self.node_count:
            raise InvalidArgumentError(f"{label} {node} out of range 0..{self.node_count - 1}")
        return int(node)

    def full_realization(self) -> Realization:
        return Realization.full(self.edge_count)

    def empty_realization(self) -> Realization:
        return Realization.empty(self.edge_count)

    @property
    def enumerable(self) -> bool:
        return self.edge_count <= MAX_ENUMERABLE_EDGES


def make_ring(n: int) -> Graph:
    if n < 2:
        raise InvalidArgumentError(f"ring needs at least 2 nodes, got {n}")
    if n == 2:
        # a 2-cycle would be a doubled edge
        return Graph(2, ((0, 1),), name="ring:2")
    return Graph(n, tuple((i, (i + 1) % n) for i in range(n)), name=f"ring:{n}")


def make_lattice2d(width: int, height: int, periodic: bool = False) -> Graph:
    if width < 1 or height < 1:
        raise InvalidArgumentError(f"lattice dimensions must be positive, got {width}x{height}")
    edges: List[Tuple[int, int]] = []
    for row in range(height):
        for col in range(width):
            node = row * width + col
            if col + 1 < width:
                edges.append((node, node + 1))
            elif periodic and width > 2:
                edges.append((node, row * width))
            if row + 1 < height:
                edges.append((node, node + width))
            elif periodic and height > 2:
                edges.append((node, col))
    suffix = ":periodic" if periodic else ""
    return Graph(width * height, tuple(edges), name=f"lattice2d:{width}x{height}{suffix}")


def make_complete(n: int) -> Graph:
    if n < 2:
        raise InvalidArgumentError(f"complete graph needs at least 2 nodes, got {n}")
    edges = tuple((u, v) for u in range(n) for v in range(u + 1, n))
    return Graph(n, edges, name=f"complete:{n}")


def load_edge_list(path: str) -> Graph:
    """Read the "nodes <N>" header plus one "u v" pair per line format."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as e:
        raise OutputError(path, str(e)) from e

    node_count = None
    edges = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if node_count is None:
            if len(parts) != 2 or parts[0] != "nodes":
                raise InvalidArgumentError(f"{path}:{lineno}: expected header 'nodes <N>', got {line!r}")
            node_count = _parse_int(parts[1], path, lineno)
            continue
        if len(parts) != 2:
            raise InvalidArgumentError(f"{path}:{lineno}: expected 'u v', got {line!r}")
        edges.append((_parse_int(parts[0], path, lineno), _parse_int(parts[1], path, lineno)))

    if node_count is None:
        raise InvalidArgumentError(f"{path}: missing 'nodes <N>' header")
    logger.info(f"Loaded edge list {path}: {node_count} nodes, {len(edges)} edges")
    return Graph(node_count, tuple(edges), name=f"file:{os.path.basename(path)}")


def _parse_int(token: str, path: str, lineno: int) -> int:
    try:
        return int(token, 10)
    except ValueError:
        raise InvalidArgumentError(f"{path}:{lineno}: {token!r} is not a decimal integer") from None


def save_edge_list(g: Graph, path: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"# {g.name}\n")
            f.write(f"nodes {g.node_count}\n")
            for u, v in g.edges:
                f.write(f"{u} {v}\n")
    except OSError as e:
        raise OutputError(path, str(e)) from e


def parse_graph_spec(spec: str) -> Graph:
    """Build a graph from "ring:N", "lattice2d:WxH[:periodic]", "complete:N" or "file:PATH"."""
    kind, sep, arg = spec.partition(":")
    if not sep or not arg:
        raise InvalidArgumentError(f"graph spec {spec!r} must look like kind:argument")
    kind = kind.strip().lower()
    try:
        if kind == "ring":
            return make_ring(int(arg))
        if kind == "complete":
            return make_complete(int(arg))
        if kind == "lattice2d":
            dims, _, variant = arg.partition(":")
            width, height = (int(x) for x in dims.lower().split("x"))
            if variant not in ("", "periodic", "open"):
                raise InvalidArgumentError(f"unknown lattice variant {variant!r}")
            return make_lattice2d(width, height, periodic=variant == "periodic")
    except ValueError as e:
        if isinstance(e, InvalidArgumentError):
            raise
        raise InvalidArgumentError(f"malformed graph spec {spec!r}: {e}") from None
    if kind == "file":
        return load_edge_list(arg)
    raise InvalidArgumentError(f"unknown graph kind {kind!r} in {spec!r}")


def make_rng(seed: int, stream: Optional[int] = None) -> np.random.Generator:
    """PCG64 generator; stream k is keyed by hashing (seed, k) through SeedSequence."""
    seed = validate_seed(seed)
    entropy = [seed] if stream is None else [seed, int(stream)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def sample_realization(g: Graph, params: PercolationParams, rng_state: np.random.Generator) -> Realization:
    return Realization.from_bits(rng_state.random(g.edge_count) < params.lam)


def sample_realization_bits(g: Graph, lam: float, rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw count independent realizations at once, shape (count, edge_count)."""
    return rng.random((count, g.edge_count)) < lam


def realization_probability(realization: Realization, lam: float) -> float:
    k = realization.kept_count
    return float(lam**k * (1.0 - lam) ** (realization.edge_count - k))


def check_enumerable(g: Graph) -> None:
    if not g.enumerable:
        raise CapacityError(g.edge_count, MAX_ENUMERABLE_EDGES)


def realization_batches(g: Graph, lam: float, batch_size: int = 4096) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield (bits, probabilities) blocks covering all 2^edge_count masks in mask order."""
    check_enumerable(g)
    validate_probability(lam)
    total = 1 << g.edge_count
    shifts = np.arange(g.edge_count, dtype=np.int64)
    for start in range(0, total, batch_size):
        masks = np.arange(start, min(start + batch_size, total), dtype=np.int64)
        bits = ((masks[:, None] >> shifts) & 1).astype(bool)
        kept = bits.sum(axis=1)
        probs = np.power(lam, kept) * np.power(1.0 - lam, g.edge_count - kept)
        yield bits, probs


def enumerate_realizations(g: Graph, lam: float) -> Iterator[Tuple[Realization, float]]:
    check_enumerable(g)
    validate_probability(lam)
    for mask in range(1 << g.edge_count):
        realization = Realization(mask, g.edge_count)
        yield realization, realization_probability(realization, lam)


def realization_count(g: Graph) -> int:
    return 1 << g.edge_count
