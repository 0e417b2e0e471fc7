import numpy as np
import pytest

from qw_errors import InvalidArgumentError
from qw_graph import Realization, make_complete, make_lattice2d, make_ring, make_rng
from qw_walk import (
    DensityMatrix,
    QuantumState,
    WalkConfig,
    classical_transition,
    classical_transition_curve,
    full_hamiltonian,
    hamiltonian,
    transition_probability,
    transition_probability_curve,
    validate_distribution,
)


def test_ring_hamiltonian():
    h = full_hamiltonian(make_ring(4))
    expected = np.array([
        [2, -1, 0, -1],
        [-1, 2, -1, 0],
        [0, -1, 2, -1],
        [-1, 0, -1, 2],
    ], dtype=float)
    np.testing.assert_array_equal(h, expected)


def test_percolated_hamiltonian_is_laplacian_of_kept_edges():
    g = make_ring(4)
    # only edge (0, 1)
    h = hamiltonian(g, Realization(0b0001, 4), WalkConfig(gamma=2.0))
    expected = np.zeros((4, 4))
    expected[0, 0] = expected[1, 1] = 2.0
    expected[0, 1] = expected[1, 0] = -2.0
    np.testing.assert_array_equal(h, expected)
    np.testing.assert_array_equal(hamiltonian(g, g.empty_realization()), np.zeros((4, 4)))


def test_hamiltonian_is_additive_over_disjoint_masks():
    g = make_ring(5)
    rng = make_rng(8)
    for _ in range(20):
        a, b = rng.integers(0, 32, size=2)
        first = Realization(int(a) & ~int(b) & 0b11111, 5)
        second = Realization(int(b), 5)
        joint = hamiltonian(g, first.union(second))
        np.testing.assert_array_equal(joint, hamiltonian(g, first) + hamiltonian(g, second))

    single_edges = [Realization(1 << k, 5) for k in range(5)]
    total = single_edges[0]
    for r in single_edges[1:]:
        total = total.union(r)
    assert total == g.full_realization()
    np.testing.assert_array_equal(sum(hamiltonian(g, r) for r in single_edges), full_hamiltonian(g))


def test_full_hamiltonian_properties():
    for g in [make_ring(7), make_lattice2d(3, 4), make_complete(5)]:
        h = full_hamiltonian(g)
        np.testing.assert_array_equal(h.sum(axis=1), np.zeros(g.node_count))
        np.testing.assert_array_equal(full_hamiltonian(g, WalkConfig(gamma=2.5)), 2.5 * h)

    n = 6
    np.testing.assert_array_equal(full_hamiltonian(make_complete(n)), n * np.eye(n) - np.ones((n, n)))


def test_ring4_return_probability():
    g = make_ring(4)
    cfg = WalkConfig()
    for t in np.linspace(0, 10, 41):
        assert transition_probability(g, cfg, 0, 0, t) == pytest.approx(np.cos(t) ** 4, abs=1e-12)


def test_single_edge_transition():

    g = make_ring(2)
    cfg = WalkConfig()
    for t in [0.0, 0.1, 1.0, 2.5]:
        assert transition_probability(g, cfg, 0, 0, t) == pytest.approx(np.cos(t) ** 2, abs=1e-12)
        assert transition_probability(g, cfg, 0, 1, t) == pytest.approx(np.sin(t) ** 2, abs=1e-12)
        assert classical_transition(g, cfg, 0, 0, t) == pytest.approx((1 + np.exp(-2 * t)) / 2, abs=1e-12)


def test_transition_probabilities_form_distribution():
    g = make_complete(6)
    cfg = WalkConfig()
    for t in [0.0, 0.3, 7.0]:
        q = sum(transition_probability(g, cfg, 0, b, t) for b in range(6))
        c = sum(classical_transition(g, cfg, 0, b, t) for b in range(6))
        assert q == pytest.approx(1.0, abs=1e-10)
        assert c == pytest.approx(1.0, abs=1e-10)


def test_curves_match_pointwise():
    g = make_ring(10)
    cfg = WalkConfig()
    times = make_rng(3).uniform(0, 20, 25)
    q = transition_probability_curve(g, cfg, 0, 3, times)
    c = classical_transition_curve(g, cfg, 0, 3, times)
    for k, t in enumerate(times):
        assert q[k] == pytest.approx(transition_probability(g, cfg, 0, 3, t), abs=1e-12)
        assert c[k] == pytest.approx(classical_transition(g, cfg, 0, 3, t), abs=1e-12)


def test_invalid_nodes_and_states():
    g = make_ring(4)
    cfg = WalkConfig()
    with pytest.raises(InvalidArgumentError):
        transition_probability(g, cfg, 4, 0, 1.0)
    with pytest.raises(InvalidArgumentError):
        classical_transition(g, cfg, 0, -1, 1.0)
    with pytest.raises(InvalidArgumentError):
        QuantumState(np.array([1.0, 1.0]))
    with pytest.raises(InvalidArgumentError):
        DensityMatrix(np.diag([0.5, 0.6]))
    with pytest.raises(InvalidArgumentError):
        DensityMatrix(np.array([[0.5, 0.5], [0.0, 0.5]]))
    with pytest.raises(InvalidArgumentError):
        DensityMatrix(np.diag([1.5, -0.5]))
    with pytest.raises(InvalidArgumentError):
        validate_distribution([0.5, 0.6])
    with pytest.raises(InvalidArgumentError):
        WalkConfig(gamma=0.0)


def test_state_helpers():
    psi = QuantumState.basis(3, 1)
    np.testing.assert_array_equal(psi.probabilities, [0.0, 1.0, 0.0])
    rho = psi.density_matrix()
    assert rho.trace == pytest.approx(1.0)
    np.testing.assert_array_equal(rho.diagonal, [0.0, 1.0, 0.0])
    mixed = DensityMatrix(np.eye(4) / 4)
    np.testing.assert_allclose(mixed.diagonal, np.full(4, 0.25))
