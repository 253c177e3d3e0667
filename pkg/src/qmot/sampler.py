"""Sampling backends: simulated annealing, exhaustive enumeration, exact MILP.

All backends map a :class:`~qmot.qubo.Qubo` to a :class:`SampleSet` whose
energies are re-evaluated on the source QUBO.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import kernels
from .errors import ParameterError, SizeError, SolverError
from .qubo import ConstraintSystem, IsingProblem, Qubo

BRUTE_FORCE_CAP = 24


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Distinct states sorted by ascending energy, with read multiplicities."""

    states: np.ndarray
    energies: np.ndarray
    counts: np.ndarray
    info: dict = field(default_factory=dict)

    @classmethod
    def from_reads(cls, states, energies, info=None) -> "SampleSet":
        states = np.asarray(states)
        energies = np.asarray(energies, dtype=np.float64)
        if states.shape[0] == 0:
            return cls(states, energies, np.zeros(0, dtype=np.int64), dict(info or {}))
        uniq, first, inverse, counts = np.unique(
            states, axis=0, return_index=True, return_inverse=True, return_counts=True)
        e = energies[first]
        # ties broken by the state bits so the order never depends on read order
        order = np.lexsort(tuple(uniq[:, k] for k in range(uniq.shape[1] - 1, -1, -1)) + (e,))
        return cls(uniq[order], e[order], counts[order].astype(np.int64), dict(info or {}))

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def num_reads(self) -> int:
        return int(self.counts.sum())

    @property
    def first(self) -> tuple[np.ndarray, float]:
        if not len(self):
            raise SolverError("empty sample set")
        return self.states[0], float(self.energies[0])

    def records(self):
        for s, e, c in zip(self.states, self.energies, self.counts):
            yield s, float(e), int(c)

    def filter(self, mask) -> "SampleSet":
        mask = np.asarray(mask, dtype=bool)
        return replace(self, states=self.states[mask], energies=self.energies[mask], counts=self.counts[mask])


@dataclass(frozen=True)
class AnnealSchedule:
    """Geometric Metropolis schedule; ``t_initial=None`` picks the largest flip gain."""

    sweeps: int = 1000
    reads: int = 1024
    seed: int = 0
    t_initial: float | None = None
    t_final: float = 0.05
    shape: str = "geometric"

    def __post_init__(self):
        if self.sweeps < 1 or self.reads < 1:
            raise ParameterError("sweeps and reads must be at least 1")
        if self.t_final <= 0 or (self.t_initial is not None and self.t_initial <= self.t_final):
            raise ParameterError("temperatures must be positive with t_final < t_initial")
        if self.shape != "geometric":
            raise ParameterError(f"unsupported schedule shape {self.shape!r}")

    def temperatures(self, W: np.ndarray, h: np.ndarray) -> np.ndarray:
        t0 = self.t_initial
        if t0 is None:
            bound = float(np.max(np.abs(h) + np.abs(W).sum(axis=1), initial=0.0))
            t0 = max(bound, 2.0 * self.t_final)
        if self.sweeps == 1:
            return np.array([self.t_final])
        return t0 * (self.t_final / t0) ** (np.arange(self.sweeps) / (self.sweeps - 1))


def anneal(q: Qubo, schedule: AnnealSchedule = AnnealSchedule()) -> SampleSet:
    W, h = q.couplings()
    temps = schedule.temperatures(W, h)
    seeds = kernels.read_seeds(schedule.seed, schedule.reads)
    states = kernels.anneal_binary(W, h, temps, seeds)
    info = {"backend": "anneal", "reads": schedule.reads, "seed": schedule.seed,
            "sweeps": schedule.sweeps, "numba": kernels.numba_enabled()}
    return SampleSet.from_reads(states, q.energies(states), info)


def anneal_ising(ising: IsingProblem, schedule: AnnealSchedule = AnnealSchedule()) -> SampleSet:
    """Spin-space annealer; states are returned as spins in {-1, +1}."""
    from .qubo import to_binary

    J = ising.symmetric()
    h = np.asarray(ising.fields)
    # same schedule as the binary twin so both walks see identical acceptance odds
    temps = schedule.temperatures(*to_binary(ising).couplings())
    seeds = kernels.read_seeds(schedule.seed, schedule.reads)
    states = kernels.anneal_spin(J, h, temps, seeds)
    info = {"backend": "anneal-spin", "reads": schedule.reads, "seed": schedule.seed,
            "sweeps": schedule.sweeps, "vartype": "spin", "numba": kernels.numba_enabled()}
    return SampleSet.from_reads(states, ising.energies(states), info)


def brute_force(q: Qubo, window: float = 1e-9, cap: int = BRUTE_FORCE_CAP,
                max_states: int = 1 << 20) -> SampleSet:
    """Every state within ``window`` of the global minimum, minimum first."""
    if q.n > cap:
        raise SizeError(f"{q.n} variables exceed the brute-force cap of {cap}; use the annealer")
    if q.n == 0:
        return SampleSet.from_reads(np.zeros((1, 0), np.uint8), [q.offset], {"backend": "brute"})
    W, h = q.couplings()
    best, codes = kernels.enumerate_minima(W, h, q.offset, window, max_states)
    if codes is None:
        raise SizeError(f"more than {max_states} states lie within {window} of the minimum")
    states = ((codes[:, None] >> np.arange(q.n)) & 1).astype(np.uint8)
    e = q.energies(states)
    keep = e <= e.min() + window
    info = {"backend": "brute", "reads": int(keep.sum()), "window": window}
    return SampleSet.from_reads(states[keep], e[keep], info)


def exact_minimum(q: Qubo, constraints: ConstraintSystem | None = None,
                  time_limit: float | None = None) -> SampleSet:
    """Global minimizer through a linearized MILP (HiGHS).

    Each product ``z_i z_j`` becomes a continuous ``y_ij`` with only the
    McCormick inequalities its coefficient sign needs, which is exact for
    binary ``z``. Optional equality constraints restrict to ``G z = d``.
    """
    from scipy.optimize import Bounds, LinearConstraint, milp
    from scipy.sparse import coo_matrix

    n = q.n
    ii, jj = np.nonzero(np.triu(q.upper, 1))
    vals = q.upper[ii, jj]
    m = len(vals)
    cost = np.concatenate([q.linear + np.diag(q.upper), vals])
    rows, cols, data, lo, hi = [], [], [], [], []
    r = 0
    for k, (i, j, v) in enumerate(zip(ii, jj, vals)):
        y = n + k
        if v < 0:  # y <= z_i, y <= z_j
            for zi in (i, j):
                rows += [r, r]
                cols += [y, zi]
                data += [1.0, -1.0]
                lo.append(-np.inf)
                hi.append(0.0)
                r += 1
        else:  # y >= z_i + z_j - 1
            rows += [r, r, r]
            cols += [y, i, j]
            data += [1.0, -1.0, -1.0]
            lo.append(-1.0)
            hi.append(np.inf)
            r += 1
    cons = []
    if r:
        A = coo_matrix((data, (rows, cols)), shape=(r, n + m))
        cons.append(LinearConstraint(A, lo, hi))
    if constraints is not None:
        G = np.hstack([constraints.matrix, np.zeros((constraints.num_rows, m))])
        cons.append(LinearConstraint(G, constraints.targets, constraints.targets))
    integrality = np.concatenate([np.ones(n), np.zeros(m)])
    options = {"mip_rel_gap": 0.0}
    if time_limit is not None:
        options["time_limit"] = time_limit
    res = milp(cost, constraints=cons, integrality=integrality, bounds=Bounds(0, 1), options=options)
    if res.x is None:
        raise SolverError(f"MILP failed: {res.message}")
    z = np.rint(res.x[:n]).astype(np.uint8)[None, :]
    info = {"backend": "milp", "reads": 1, "status": int(res.status), "optimal": res.status == 0}
    return SampleSet.from_reads(z, q.energies(z), info)


def make_solver(backend: str, schedule: AnnealSchedule | None = None, **kwargs) -> Callable[[Qubo], SampleSet]:
    if backend == "anneal":
        sched = schedule or AnnealSchedule()
        return lambda q: anneal(q, sched)
    if backend == "brute":
        return lambda q: brute_force(q, **kwargs)
    if backend == "exact":
        return lambda q: exact_minimum(q, **kwargs)
    raise ParameterError(f"unknown backend {backend!r}")


def solution_probability(samples: SampleSet, reference_energy: float, tol: float = 1e-6,
                         mask=None) -> float:
    """Fraction of reads at or below ``reference_energy + tol``.

    ``mask`` optionally restricts which distinct states may count (e.g. only
    feasible ones).
    """
    total = samples.num_reads
    if total == 0:
        raise ParameterError("empty sample set")
    hit = samples.energies <= reference_energy + tol
    if mask is not None:
        hit &= np.asarray(mask, dtype=bool)
    return float(samples.counts[hit].sum()) / total


def energy_histogram(samples: SampleSet, bin_width: float) -> list[tuple[float, int]]:
    if not bin_width > 0:
        raise ParameterError("bin_width must be positive")
    if not len(samples):
        return []
    idx = np.floor(samples.energies / bin_width + 1e-9).astype(np.int64)
    bins = {}
    for k, c in zip(idx, samples.counts):
        bins[int(k)] = bins.get(int(k), 0) + int(c)
    return [(k * bin_width, bins[k]) for k in sorted(bins)]


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def write_samples_csv(samples: SampleSet, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "energy", "multiplicity"])
        for s, e, c in samples.records():
            bits = "".join("1" if v > 0 else "0" for v in s)
            w.writerow([bits, _fmt(e), c])


def read_samples_csv(path: str | Path) -> SampleSet:
    states, energies, counts = [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            states.append([int(ch) for ch in row["state"]])
            energies.append(float(row["energy"]))
            counts.append(int(row["multiplicity"]))
    st = np.array(states, dtype=np.uint8)
    return SampleSet(st, np.array(energies), np.array(counts, dtype=np.int64), {})


def write_histogram_csv(hist: list[tuple[float, int]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lower", "count"])
        for lower, count in hist:
            w.writerow([_fmt(lower), count])


def reads_needed(p: float, confidence: float = 0.99) -> float:
    """Reads required to see an optimal sample at least once with ``confidence``."""
    if p <= 0:
        return math.inf
    if p >= 1:
        return 1.0
    return math.log(1 - confidence) / math.log(1 - p)
