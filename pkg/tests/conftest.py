import itertools

import numpy as np
import pytest

from qmot.model import ProblemSpec

ACCEPTANCE_LINES = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: exit criteria of the package")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(params=["numba", "numpy"])
def kernel_path(request, monkeypatch):
    """Run a test once per kernel implementation."""
    if request.param == "numpy":
        monkeypatch.setenv("QMOT_DISABLE_NUMBA", "1")
    else:
        monkeypatch.delenv("QMOT_DISABLE_NUMBA", raising=False)
    return request.param


def all_states(n):
    """Every binary vector of length n, one per row (bit i of the row index is variable i)."""
    return ((np.arange(2 ** n)[:, None] >> np.arange(n)) & 1).astype(np.float64)


def dense_energy(upper, linear, offset, Z):
    """Energy straight from the definition, one state at a time."""
    out = []
    n = len(linear)
    for z in Z:
        e = offset
        for i in range(n):
            e += linear[i] * z[i]
            for j in range(i, n):
                e += upper[i][j] * z[i] * z[j]
        out.append(e)
    return np.array(out)


def random_spec(rng, frames=3, dets=2, tracks=2, gap=2, beta=-0.2):
    sims = {}
    for fi in range(frames):
        for fj in range(fi + 1, min(frames, fi + gap + 1)):
            for di in range(dets):
                for dj in range(dets):
                    sims[(fi, di, fj, dj)] = float(rng.uniform(-1, 1))
    return ProblemSpec(frames, dets, tracks, gap, sims, beta)


def random_feasible_labels(rng, spec):
    """Uniform-ish feasible labeling: each real detection gets a distinct real track or the dummy."""
    out = []
    for f in range(spec.num_frames):
        count = spec.detections_per_frame[f]
        pool = list(rng.permutation(spec.num_real_tracks)) + [-1] * count
        labels = []
        for _ in range(count):
            k = int(rng.integers(len(pool)))
            labels.append(int(pool.pop(k)))
        out.append(np.array(labels, dtype=np.int64))
    return out


def partial_injections(m):
    """Best value over all partial one-to-one matchings of a small matrix."""
    rows, cols = m.shape
    best = 0.0
    for k in range(min(rows, cols) + 1):
        for rs in itertools.combinations(range(rows), k):
            for cs in itertools.permutations(range(cols), k):
                best = max(best, float(sum(m[r, c] for r, c in zip(rs, cs))))
    return best
