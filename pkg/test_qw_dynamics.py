import itertools
import logging
import math

import numpy as np
import pytest

from qw_dynamics import (
    ChannelMatrix,
    PercolationRun,
    PropagatorCache,
    averaged_classical,
    build_classical_step_matrix,
    build_step_channel,
    channel_power,
    evolve_channel,
    evolve_classical_average,
    monte_carlo_channel,
    recorded_steps,
    run_classical_trajectory,
    run_trajectory,
    unvectorize,
    vectorize,
)
from qw_errors import CapacityError, InvalidArgumentError
from qw_graph import Graph, Realization, enumerate_realizations, make_complete, make_ring
from qw_oracles import rescaled_reference
from qw_spectral import decompose, stochastic_exp, unitary_exp
from qw_walk import DensityMatrix, QuantumState, WalkConfig, full_decomposition, hamiltonian

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

CFG = WalkConfig()


def _brute_force_channel(g, lam, tau, rho0, steps):
    """Average of U_{r_S}...U_{r_1} rho0 (...)^dagger over every mask sequence."""
    ops = [
        (unitary_exp(decompose(hamiltonian(g, r, CFG)), tau), p)
        for r, p in enumerate_realizations(g, lam)
    ]
    total = np.zeros_like(rho0, dtype=complex)
    for sequence in itertools.product(ops, repeat=steps):
        u = np.eye(g.node_count, dtype=complex)
        weight = 1.0
        for op, p in sequence:
            u = op @ u
            weight *= p
        total += weight * (u @ rho0 @ u.conj().T)
    return total


def test_percolation_run_timing():
    run = PercolationRun.from_total_time(0.5, 10.0, 4000)
    assert run.tau == pytest.approx(0.0025)
    assert run.total_time == pytest.approx(10.0, rel=1e-12)
    with pytest.raises(InvalidArgumentError):
        PercolationRun(lam=0.5, tau=0.0, steps=10)
    with pytest.raises(InvalidArgumentError):
        PercolationRun(lam=0.5, tau=0.1, steps=0)
    with pytest.raises(InvalidArgumentError):
        PercolationRun(lam=-0.1, tau=0.1, steps=10)


def test_recorded_steps_always_include_last():
    np.testing.assert_array_equal(recorded_steps(10, 3), [0, 3, 6, 9, 10])
    np.testing.assert_array_equal(recorded_steps(9, 3), [0, 3, 6, 9])
    np.testing.assert_array_equal(recorded_steps(4, 1), [0, 1, 2, 3, 4])
    with pytest.raises(InvalidArgumentError):
        recorded_steps(4, 0)


def test_trajectory_full_graph_is_unitary_evolution():
    g = make_ring(15)
    run = PercolationRun(lam=1.0, tau=0.004, steps=500, seed=3)
    psi0 = QuantumState.basis(15, 0)
    record = run_trajectory(g, CFG, run, psi0, sample_stride=50)
    expected = unitary_exp(full_decomposition(g, CFG), run.total_time) @ psi0.amplitudes
    np.testing.assert_allclose(record.final, expected, atol=1e-8)
    assert record.times[-1] == pytest.approx(2.0)


def test_trajectory_null_graph_is_frozen():
    g = make_ring(6)
    psi0 = QuantumState.basis(6, 2)
    record = run_trajectory(g, CFG, PercolationRun(lam=0.0, tau=0.1, steps=300, seed=9), psi0)
    np.testing.assert_allclose(record.final, psi0.amplitudes, atol=1e-12)
    assert len(record.times) == 301


def test_single_edge_single_step():
    g = make_ring(2)
    tau = 0.3
    record = run_trajectory(g, CFG, PercolationRun(lam=1.0, tau=tau, steps=1), QuantumState.basis(2, 0))
    assert record.probabilities[-1, 0] == pytest.approx(math.cos(tau) ** 2, abs=1e-12)


def test_trajectory_is_deterministic_and_logs_masks():
    g = make_ring(8)
    run = PercolationRun(lam=0.5, tau=0.05, steps=600, seed=42)
    psi0 = QuantumState.basis(8, 0)
    a = run_trajectory(g, CFG, run, psi0, sample_stride=7, record_masks=True)
    b = run_trajectory(g, CFG, run, psi0, sample_stride=7, record_masks=True)
    np.testing.assert_array_equal(a.states, b.states)
    assert a.realization_masks == b.realization_masks
    assert len(a.realization_masks) == 600
    assert all(0 <= m < 2**8 for m in a.realization_masks)

    other = run_trajectory(g, CFG, PercolationRun(lam=0.5, tau=0.05, steps=600, seed=43), psi0)
    assert not np.array_equal(a.final, other.final)


def test_trajectory_norms_stay_normalized():
    g = make_ring(10)
    record = run_trajectory(g, CFG, PercolationRun(lam=0.5, tau=0.01, steps=2000, seed=1), QuantumState.basis(10, 0), 100)
    norms = np.linalg.norm(record.states, axis=1)
    assert np.abs(norms - 1).max() <= 1e-8
    states = record.quantum_states()
    assert states[0].dim == 10


def test_trajectory_replays_logged_masks():
    g = make_ring(5)
    run = PercolationRun(lam=0.4, tau=0.2, steps=30, seed=5)
    record = run_trajectory(g, CFG, run, QuantumState.basis(5, 0), record_masks=True)
    psi = QuantumState.basis(5, 0).amplitudes
    for mask in record.realization_masks:
        psi = unitary_exp(decompose(hamiltonian(g, Realization(mask, 5), CFG)), run.tau) @ psi
    np.testing.assert_allclose(record.final, psi, atol=1e-12)


def test_trajectory_rejects_bad_input():
    g = make_ring(4)
    run = PercolationRun(lam=0.5, tau=0.1, steps=5)
    with pytest.raises(InvalidArgumentError):
        run_trajectory(g, CFG, run, np.array([1.0, 1.0, 0.0, 0.0]))
    with pytest.raises(InvalidArgumentError):
        run_trajectory(g, CFG, run, QuantumState.basis(3, 0))
    with pytest.raises(InvalidArgumentError):
        run_trajectory(g, CFG, run, QuantumState.basis(4, 0), sample_stride=0)


def test_propagator_cache_is_lru():
    cache = PropagatorCache(capacity=2)
    a, b, c = (np.full((2, 2), k, dtype=complex) for k in range(3))
    cache.put(("ctx", b"a"), a)
    cache.put(("ctx", b"b"), b)
    assert cache.get(("ctx", b"a")) is a
    cache.put(("ctx", b"c"), c)
    # b was least recently used
    assert cache.get(("ctx", b"b")) is None
    assert cache.get(("ctx", b"c")) is c
    assert cache.stats() == {"entries": 2, "hits": 2, "misses": 1, "evictions": 1}


def test_propagator_cache_memory_bound():
    cache = PropagatorCache(capacity=1000, max_bytes=3 * 16 * 4)
    for k in range(5):
        cache.put(("ctx", bytes([k])), np.zeros((2, 2), dtype=complex))
    assert len(cache) == 3


def test_ring_trajectory_mostly_hits_cache():
    g = make_ring(4)
    cache = PropagatorCache()
    run_trajectory(g, CFG, PercolationRun(lam=0.5, tau=0.01, steps=2000, seed=2), QuantumState.basis(4, 0), 100, cache=cache)
    logger.info(f"Cache after ring trajectory: {cache.stats()}")
    assert len(cache) <= 16
    assert cache.hits > 1900


def test_shared_cache_keeps_graphs_apart():
    ring = make_ring(4)
    # same edge count, so masks coincide but propagators differ
    star = Graph(4, ((0, 1), (0, 2), (0, 3), (1, 2)), name="star")
    run = PercolationRun(lam=0.5, tau=0.1, steps=200, seed=4)
    psi0 = QuantumState.basis(4, 0)

    shared = PropagatorCache()
    run_trajectory(ring, CFG, run, psi0, 20, cache=shared)
    on_shared = run_trajectory(star, CFG, run, psi0, 20, cache=shared)
    on_fresh = run_trajectory(star, CFG, run, psi0, 20)
    np.testing.assert_array_equal(on_shared.states, on_fresh.states)

    # structurally equal graphs reuse each other's entries
    entries = len(shared)
    run_trajectory(Graph(4, ring.edges, name="other-ring"), CFG, run, psi0, 20, cache=shared)
    assert len(shared) == entries


def test_single_edge_channel_by_hand():
    g = make_ring(2)
    tau = 0.4
    phi = build_step_channel(g, CFG, 0.3, tau)
    rho0 = DensityMatrix.from_node(2, 0)
    rho1 = evolve_channel(phi, rho0, 1)[-1]
    assert rho1.diagonal[0] == pytest.approx(0.7 + 0.3 * math.cos(tau) ** 2, abs=1e-12)

    u = unitary_exp(full_decomposition(g, CFG), tau)
    expected = 0.7 * rho0.entries + 0.3 * u @ rho0.entries @ u.conj().T
    np.testing.assert_allclose(phi.apply(rho0), expected, atol=1e-14)


def test_channel_limits():
    g = make_ring(4)
    tau = 0.25
    identity = build_step_channel(g, CFG, 0.0, tau)
    np.testing.assert_allclose(identity.matrix, np.eye(16), atol=1e-14)

    u = unitary_exp(full_decomposition(g, CFG), tau)
    conjugation = build_step_channel(g, CFG, 1.0, tau)
    np.testing.assert_allclose(conjugation.matrix, np.kron(u.conj(), u), atol=1e-12)


def test_channel_is_trace_and_hermiticity_preserving():
    g = make_ring(5)
    phi = build_step_channel(g, CFG, 0.6, 0.2)
    assert phi.trace_defect() <= 1e-10

    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    h = x + x.conj().T
    h = h / np.trace(h).real
    out = phi.apply(h)
    assert abs(np.trace(out) - 1.0) <= 1e-10
    assert np.abs(out - out.conj().T).max() <= 1e-10


@pytest.mark.parametrize("g,lam,steps", [
    (make_ring(2), 0.5, 3),
    (make_ring(2), 0.2, 4),
    (Graph(3, ((0, 1), (1, 2)), name="path:3"), 0.3, 3),
])
def test_channel_matches_brute_force(g, lam, steps):
    tau = 0.7
    rho0 = DensityMatrix.from_node(g.node_count, 0)
    phi = build_step_channel(g, CFG, lam, tau)
    states = evolve_channel(phi, rho0, steps)
    expected = _brute_force_channel(g, lam, tau, rho0.entries, steps)
    assert np.abs(states[-1].entries - expected).max() <= 1e-12


def test_evolve_channel_contract():
    g = make_ring(4)
    phi = build_step_channel(g, CFG, 0.5, 0.1)
    rho0 = DensityMatrix.from_node(4, 0)
    assert evolve_channel(phi, rho0, 0) == [rho0]

    states = evolve_channel(phi, rho0, 10, sample_stride=4)
    assert len(states) == 4
    for rho in states:
        assert abs(rho.trace - 1.0) <= 1e-10
        assert np.linalg.eigvalsh(rho.entries).min() >= -1e-8

    np.testing.assert_allclose(
        channel_power(phi, 10).apply(rho0), states[-1].entries, atol=1e-12
    )
    with pytest.raises(InvalidArgumentError):
        evolve_channel(phi, DensityMatrix.from_node(3, 0), 2)


def test_vectorization_is_column_stacking():
    rho = np.arange(9).reshape(3, 3)
    np.testing.assert_array_equal(vectorize(rho), [0, 3, 6, 1, 4, 7, 2, 5, 8])
    np.testing.assert_array_equal(unvectorize(vectorize(rho), 3), rho)


def test_channel_refuses_large_graphs():
    with pytest.raises(CapacityError):
        build_step_channel(make_complete(15), CFG, 0.5, 0.01)


def test_parallel_channel_build_matches_serial():
    g = make_ring(10)
    serial = build_step_channel(g, CFG, 0.4, 0.05, batch_size=64)
    parallel = build_step_channel(g, CFG, 0.4, 0.05, batch_size=64, workers=4)
    np.testing.assert_allclose(parallel.matrix, serial.matrix, atol=1e-12)


def test_rescaling_error_decreases_with_steps():
    g = make_ring(5)
    oracle = rescaled_reference(g, CFG, 0.5, 0, 0)
    rho0 = DensityMatrix.from_node(5, 0)
    deviations = {}
    for steps in [250, 1000, 4000]:
        tau = 10.0 / steps
        states = evolve_channel(build_step_channel(g, CFG, 0.5, tau), rho0, steps)
        times = recorded_steps(steps, 1) * tau
        sim = np.array([rho.diagonal[0] for rho in states])
        deviations[steps] = np.abs(sim - oracle(times)).max()
    logger.info(f"Channel deviation from rescaled walk: {deviations}")
    assert deviations[250] > deviations[1000] > deviations[4000]


def test_monte_carlo_limits():
    g = make_ring(4)
    rho0 = DensityMatrix.from_node(4, 0)
    run = PercolationRun(lam=1.0, tau=0.1, steps=20, seed=4)
    samples = monte_carlo_channel(g, CFG, run, rho0, 5, sample_stride=5)
    u = unitary_exp(full_decomposition(g, CFG), run.total_time)
    np.testing.assert_allclose(samples[-1].mean.entries, u @ rho0.entries @ u.conj().T, atol=1e-8)
    assert max(s.stderr for s in samples) <= 1e-15

    frozen = monte_carlo_channel(g, CFG, PercolationRun(lam=0.0, tau=0.1, steps=20, seed=4), rho0, 5)
    np.testing.assert_allclose(frozen[-1].mean.entries, rho0.entries, atol=1e-12)
    assert frozen[-1].stderr == 0.0
    assert frozen[-1].time == pytest.approx(2.0)


def test_monte_carlo_matches_exact_channel():
    g = make_ring(2)
    run = PercolationRun(lam=0.5, tau=0.8, steps=3, seed=21)
    rho0 = DensityMatrix.from_node(2, 0)
    exact = evolve_channel(build_step_channel(g, CFG, run.lam, run.tau), rho0, run.steps)
    samples = monte_carlo_channel(g, CFG, run, rho0, 20000)
    for rho, sample in zip(exact, samples):
        gap = np.abs(sample.mean.diagonal - rho.diagonal)
        assert np.all(gap <= 4 * sample.site_stderr + 1e-12)
    logger.info(f"Final Monte Carlo standard error: {samples[-1].stderr:.2e}")


def test_monte_carlo_mixed_state_and_workers():
    g = make_ring(4)
    run = PercolationRun(lam=0.5, tau=0.1, steps=40, seed=8)
    mixed = DensityMatrix(np.diag([0.5, 0.5, 0.0, 0.0]))
    serial = monte_carlo_channel(g, CFG, run, mixed, 12, sample_stride=10)
    parallel = monte_carlo_channel(g, CFG, run, mixed, 12, sample_stride=10, workers=3)
    for a, b in zip(serial, parallel):
        np.testing.assert_allclose(a.mean.entries, b.mean.entries, atol=1e-14)
        np.testing.assert_allclose(a.site_stderr, b.site_stderr, atol=1e-14)
    assert serial[-1].mean.trace == pytest.approx(1.0, abs=1e-10)

    maximally_mixed = DensityMatrix(np.eye(4) / 4)
    samples = monte_carlo_channel(g, CFG, run, maximally_mixed, 3)
    np.testing.assert_allclose(samples[-1].mean.entries, np.eye(4) / 4, atol=1e-12)

    with pytest.raises(InvalidArgumentError):
        monte_carlo_channel(g, CFG, run, mixed, 1)


def test_classical_trajectory_limits():
    g = make_ring(6)
    p0 = np.zeros(6)
    p0[0] = 1.0
    frozen = run_classical_trajectory(g, CFG, PercolationRun(lam=0.0, tau=0.1, steps=50), p0)
    np.testing.assert_allclose(frozen.final, p0, atol=1e-12)

    run = PercolationRun(lam=1.0, tau=0.1, steps=50)
    full = run_classical_trajectory(g, CFG, run, p0, sample_stride=10)
    expected = stochastic_exp(full_decomposition(g, CFG), run.total_time) @ p0
    np.testing.assert_allclose(full.final, expected, atol=1e-8)
    np.testing.assert_allclose(full.states.sum(axis=1), 1.0, atol=1e-10)

    with pytest.raises(InvalidArgumentError):
        run_classical_trajectory(g, CFG, run, np.full(6, 0.5))


def test_classical_exact_average_matches_monte_carlo():
    g = make_ring(4)
    run = PercolationRun(lam=0.5, tau=0.2, steps=10, seed=6)
    p0 = np.array([1.0, 0.0, 0.0, 0.0])
    matrix = build_classical_step_matrix(g, CFG, run.lam, run.tau)
    np.testing.assert_allclose(matrix.sum(axis=0), np.ones(4), atol=1e-10)
    exact = evolve_classical_average(matrix, p0, run.steps)
    samples = averaged_classical(g, CFG, run, p0, 4000)
    assert len(exact) == len(samples) == 11
    for p, sample in zip(exact, samples):
        assert np.all(np.abs(sample.mean - p) <= 5 * sample.site_stderr + 1e-12)


def test_channel_matrix_rejects_wrong_shape():
    phi = ChannelMatrix(np.eye(4, dtype=complex), 2)
    with pytest.raises(InvalidArgumentError):
        phi.apply(np.eye(3))
