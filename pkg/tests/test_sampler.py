import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import all_states, dense_energy
from qmot import kernels
from qmot.errors import ParameterError, SizeError, SolverError
from qmot.model import ProblemSpec, assignment_score, best_feasible, decode
from qmot.qubo import ConstraintSystem, Qubo, apply_penalties, build_constraints, build_cost, to_spin
from qmot.sampler import (
    AnnealSchedule,
    SampleSet,
    anneal,
    anneal_ising,
    brute_force,
    energy_histogram,
    exact_minimum,
    make_solver,
    read_samples_csv,
    reads_needed,
    solution_probability,
    write_histogram_csv,
    write_samples_csv,
)


def random_qubo(rng, n):
    return Qubo(np.triu(rng.normal(0, 1, (n, n))), rng.normal(0, 1, n), 0.0)


def test_brute_force_single_linear():
    ss = brute_force(Qubo(np.zeros((1, 1)), np.array([1.0])))
    assert ss.energies[0] == 0.0 and ss.states[0].tolist() == [0]


def test_brute_force_reports_all_ties():
    q = Qubo.from_terms(2, {(0, 1): 2.0}, linear=[-1.0, -1.0])
    ss = brute_force(q)
    assert sorted(map(tuple, ss.states.tolist())) == [(0, 1), (1, 0)]
    assert np.all(ss.energies == -1.0)


def test_brute_force_cap():
    with pytest.raises(SizeError):
        brute_force(Qubo.zeros(25))
    with pytest.raises(SizeError):
        brute_force(Qubo.zeros(5), cap=4)


def test_brute_force_matches_enumeration(kernel_path):
    rng = np.random.default_rng(7)
    for n in (1, 5, 11, 13):
        q = random_qubo(rng, n)
        ref = dense_energy(q.upper, q.linear, q.offset, all_states(n))
        ss = brute_force(q)
        assert ss.energies[0] == pytest.approx(ref.min(), abs=1e-9)
        assert q.energy(ss.states[0]) == pytest.approx(ref.min(), abs=1e-9)


def test_brute_force_window(kernel_path):
    rng = np.random.default_rng(11)
    q = random_qubo(rng, 10)
    ref = np.sort(q.energies(all_states(10)))
    ss = brute_force(q, window=0.5)
    assert len(ss) == int(np.sum(ref <= ref[0] + 0.5))


def test_brute_force_recovers_small_mot_instance():
    sims = {(0, 0, 1, 0): 0.8, (0, 0, 1, 1): -0.8, (0, 1, 1, 0): -0.8, (0, 1, 1, 1): 0.8}
    spec = ProblemSpec(2, 2, 2, 1, sims)
    q = apply_penalties(build_cost(spec), build_constraints(spec, 2.0))
    ss = brute_force(q)
    _, best = best_feasible(spec)
    assignment, report = decode(ss.states[0], spec)
    assert report == []
    assert assignment_score(assignment, spec) == pytest.approx(best)
    # track labels are interchangeable; detection 0 and 1 keep their objects apart
    lab = assignment.labels(spec)
    assert lab[0][0] == lab[1][0] != -1 and lab[0][1] == lab[1][1] != -1 and lab[0][0] != lab[0][1]


def test_exact_minimum_agrees_with_brute_force():
    rng = np.random.default_rng(5)
    for n in (3, 8, 14):
        q = random_qubo(rng, n)
        assert exact_minimum(q).energies[0] == pytest.approx(brute_force(q).energies[0], abs=1e-7)


def test_exact_minimum_with_constraints():
    # minimize over states with exactly one active variable
    q = Qubo.from_terms(3, {(0, 1): -5.0}, linear=[2.0, -1.0, 0.5])
    assert exact_minimum(q).states[0].tolist() == [1, 1, 0]
    ss = exact_minimum(q, ConstraintSystem(np.ones((1, 3)), [1.0], [0.0]))
    assert ss.states[0].tolist() == [0, 1, 0]


def test_zero_qubo_anneal_energy_zero(kernel_path):
    ss = anneal(Qubo.zeros(6), AnnealSchedule(sweeps=5, reads=32))
    assert np.all(ss.energies == 0.0) and ss.num_reads == 32


def test_anneal_energies_reevaluate(kernel_path):
    rng = np.random.default_rng(0)
    q = random_qubo(rng, 12)
    ss = anneal(q, AnnealSchedule(sweeps=50, reads=64, seed=3))
    ref = dense_energy(q.upper, q.linear, q.offset, ss.states)
    assert np.max(np.abs(ss.energies - ref)) <= 1e-9
    assert ss.num_reads == 64
    assert np.all(np.diff(ss.energies) >= 0)


def test_anneal_deterministic(kernel_path):
    rng = np.random.default_rng(1)
    q = random_qubo(rng, 10)
    a = anneal(q, AnnealSchedule(sweeps=30, reads=40, seed=9))
    b = anneal(q, AnnealSchedule(sweeps=30, reads=40, seed=9))
    assert np.array_equal(a.states, b.states) and np.array_equal(a.counts, b.counts)


def test_numba_and_numpy_paths_identical(monkeypatch):
    rng = np.random.default_rng(2)
    q = random_qubo(rng, 14)
    sched = AnnealSchedule(sweeps=40, reads=50, seed=4)
    monkeypatch.delenv("QMOT_DISABLE_NUMBA", raising=False)
    a = anneal(q, sched)
    monkeypatch.setenv("QMOT_DISABLE_NUMBA", "1")
    b = anneal(q, sched)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.counts, b.counts)


def test_reads_are_independent_of_batching(kernel_path):
    # per-read streams: a chunk starting at read k reproduces reads k.. of the full run
    rng = np.random.default_rng(3)
    q = random_qubo(rng, 9)
    W, h = q.couplings()
    temps = AnnealSchedule(sweeps=20).temperatures(W, h)
    full = kernels.anneal_binary(W, h, temps, kernels.read_seeds(5, 30))
    tail = kernels.anneal_binary(W, h, temps, kernels.read_seeds(5, 12, start=18))
    assert np.array_equal(full[18:], tail)


def test_best_of_prefix_is_monotone():
    # the first N reads are a prefix of the first M > N reads, so best-of-N >= best-of-M
    rng = np.random.default_rng(4)
    q = random_qubo(rng, 14)
    W, h = q.couplings()
    temps = AnnealSchedule(sweeps=5).temperatures(W, h)
    states = kernels.anneal_binary(W, h, temps, kernels.read_seeds(0, 256))
    e = q.energies(states)
    best = np.minimum.accumulate(e)
    assert np.all(np.diff(best) <= 0)


def test_best_of_n_statistically_improves():
    rng = np.random.default_rng(6)
    q = random_qubo(rng, 16)
    mean = {}
    for n in (1, 16):
        mean[n] = np.mean([anneal(q, AnnealSchedule(sweeps=3, reads=n, seed=s)).energies[0] for s in range(40)])
    assert mean[16] <= mean[1]


def test_spin_and_binary_annealers_agree(kernel_path):
    rng = np.random.default_rng(8)
    q = random_qubo(rng, 11)
    sched = AnnealSchedule(sweeps=2, reads=80, seed=2)
    b = anneal(q, sched)
    assert len(b) > 1
    ising = to_spin(q)
    s = anneal_ising(ising, sched)
    assert set(np.unique(s.states)) <= {-1, 1}
    zs = ((s.states + 1) // 2).astype(np.uint8)
    assert np.allclose(np.sort(q.energies(zs)), np.sort(s.energies), atol=1e-9)
    assert np.allclose(np.repeat(b.energies, b.counts), np.repeat(s.energies, s.counts), atol=1e-9)


def test_schedule_validation():
    with pytest.raises(ParameterError):
        AnnealSchedule(sweeps=0)
    with pytest.raises(ParameterError):
        AnnealSchedule(t_initial=0.01, t_final=0.05)
    with pytest.raises(ParameterError):
        AnnealSchedule(shape="linear")
    temps = AnnealSchedule(sweeps=10, t_initial=4.0, t_final=0.05).temperatures(np.zeros((1, 1)), np.zeros(1))
    assert temps[0] == 4.0 and temps[-1] == pytest.approx(0.05)
    assert np.all(np.diff(temps) < 0)


def test_make_solver():
    q = Qubo.from_terms(2, {(0, 1): 2.0}, linear=[-1.0, -1.0])
    for backend in ("anneal", "brute", "exact"):
        solver = make_solver(backend, AnnealSchedule(sweeps=20, reads=8)) if backend == "anneal" else make_solver(backend)
        assert solver(q).energies[0] == pytest.approx(-1.0)
    with pytest.raises(ParameterError):
        make_solver("quantum")


def _set(energies, counts):
    n = len(energies)
    states = ((np.arange(n)[:, None] >> np.arange(12)) & 1).astype(np.uint8)
    return SampleSet(states, np.asarray(energies, float), np.asarray(counts, np.int64))


def test_solution_probability_examples():
    assert solution_probability(_set([-1.0], [10]), -1.0) == 1.0
    assert solution_probability(_set([0.0], [10]), -1.0) == 0.0
    assert solution_probability(_set([-5.0, -4.0], [164, 4096 - 164]), -5.0) == 0.0400390625
    assert solution_probability(_set([-5.0, -4.0], [1, 1]), -5.0, mask=[False, True]) == 0.0
    with pytest.raises(ParameterError):
        solution_probability(_set([], []), 0.0)


def test_histogram_examples():
    assert energy_histogram(_set([-38.6], [1]), 1.0) == [(-39.0, 1)]
    assert energy_histogram(_set([-38.6], [1]).filter([False]), 1.0) == []
    with pytest.raises(ParameterError):
        energy_histogram(_set([0.0], [1]), 0.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-50, 50), st.integers(1, 100)), min_size=1, max_size=30),
       st.sampled_from([0.1, 0.5, 1.0, 2.5]))
def test_histogram_total_and_alignment(records, width):
    ss = _set([r[0] for r in records], [r[1] for r in records])
    hist = energy_histogram(ss, width)
    assert sum(c for _, c in hist) == ss.num_reads
    for lower, _ in hist:
        assert lower / width == pytest.approx(round(lower / width))


def test_from_reads_folds_duplicates():
    states = np.array([[1, 0], [0, 1], [1, 0], [0, 0]], dtype=np.uint8)
    ss = SampleSet.from_reads(states, [1.0, -1.0, 1.0, 0.0])
    assert ss.energies.tolist() == [-1.0, 0.0, 1.0] and ss.counts.tolist() == [1, 1, 2]
    with pytest.raises(SolverError):
        SampleSet.from_reads(np.zeros((0, 2)), []).first


def test_samples_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    q = random_qubo(rng, 8)
    ss = anneal(q, AnnealSchedule(sweeps=10, reads=50))
    write_samples_csv(ss, tmp_path / "s.csv")
    back = read_samples_csv(tmp_path / "s.csv")
    assert np.array_equal(back.states, ss.states) and np.array_equal(back.counts, ss.counts)
    assert np.allclose(back.energies, ss.energies, atol=1e-9)
    write_histogram_csv(energy_histogram(ss, 1.0), tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text().splitlines()[0] == "bin_lower,count"


def test_reads_needed():
    assert reads_needed(0.0) == float("inf") and reads_needed(1.0) == 1.0
    assert 1 - (1 - 0.04) ** reads_needed(0.04) == pytest.approx(0.99)
