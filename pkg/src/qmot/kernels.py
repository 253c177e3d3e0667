"""Hot loops: Metropolis annealing and exhaustive enumeration.

Every kernel exists twice: a numba version that loops over reads, and a numpy
version that vectorizes across reads. Both consume the same per-read
splitmix64 streams in the same order, so for a given seed they return the
same states (up to a last-ulp difference in ``exp``, which in practice never
flips a decision). Dispatch happens in the public wrappers at the bottom.
"""
import numpy as np

from ._accel import njit, numba_enabled, prange

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
SHIFT30 = np.uint64(30)
SHIFT27 = np.uint64(27)
SHIFT31 = np.uint64(31)
SHIFT11 = np.uint64(11)
SHIFT63 = np.uint64(63)
INV53 = 1.0 / 9007199254740992.0


def read_seeds(seed: int, reads: int, start: int = 0) -> np.ndarray:
    """Per-read generator states derived from ``(seed, read index)`` only."""
    base = np.random.SeedSequence(int(seed)).generate_state(1, np.uint64)[0]
    idx = np.arange(start, start + reads, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix_np(base + idx * GOLDEN)


def _mix_np(z):
    z = (z ^ (z >> SHIFT30)) * MIX1
    z = (z ^ (z >> SHIFT27)) * MIX2
    return z ^ (z >> SHIFT31)


@njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> SHIFT30)) * MIX1
    z = (z ^ (z >> SHIFT27)) * MIX2
    return z ^ (z >> SHIFT31)


# --------------------------------------------------------------------------
# numba kernels


@njit(cache=True, parallel=True)
def _anneal_binary_nb(W, h, temps, seeds):
    reads = seeds.shape[0]
    n = h.shape[0]
    sweeps = temps.shape[0]
    out = np.empty((reads, n), dtype=np.uint8)
    for r in prange(reads):
        state = seeds[r]
        z = np.empty(n, dtype=np.float64)
        for i in range(n):
            state += GOLDEN
            z[i] = float(_mix(state) >> SHIFT63)
        field = h.copy()
        for j in range(n):
            if z[j] != 0.0:
                for i in range(n):
                    field[i] += W[j, i] * z[j]
        for s in range(sweeps):
            temp = temps[s]
            for i in range(n):
                state += GOLDEN
                u = float(_mix(state) >> SHIFT11) * INV53
                de = (1.0 - 2.0 * z[i]) * field[i]
                if de <= 0.0 or u < np.exp(-de / temp):
                    d = 1.0 - 2.0 * z[i]
                    z[i] = 1.0 - z[i]
                    for k in range(n):
                        field[k] += d * W[i, k]
        for i in range(n):
            out[r, i] = np.uint8(z[i])
    return out


@njit(cache=True, parallel=True)
def _anneal_spin_nb(J, h, temps, seeds):
    reads = seeds.shape[0]
    n = h.shape[0]
    sweeps = temps.shape[0]
    out = np.empty((reads, n), dtype=np.int8)
    for r in prange(reads):
        state = seeds[r]
        s = np.empty(n, dtype=np.float64)
        for i in range(n):
            state += GOLDEN
            s[i] = 2.0 * float(_mix(state) >> SHIFT63) - 1.0
        field = h.copy()
        for j in range(n):
            for i in range(n):
                field[i] += J[j, i] * s[j]
        for t in range(sweeps):
            temp = temps[t]
            for i in range(n):
                state += GOLDEN
                u = float(_mix(state) >> SHIFT11) * INV53
                de = -2.0 * s[i] * field[i]
                if de <= 0.0 or u < np.exp(-de / temp):
                    d = -2.0 * s[i]
                    s[i] = -s[i]
                    for k in range(n):
                        field[k] += d * J[i, k]
        for i in range(n):
            out[r, i] = np.int8(s[i])
    return out


@njit(cache=True)
def _gray_walk_nb(W, h, offset, collect, threshold, max_hits):
    n = h.shape[0]
    total = np.int64(1) << n
    z = np.zeros(n, dtype=np.float64)
    field = h.copy()
    energy = offset
    best = energy
    hits = np.empty(max_hits if collect else 0, dtype=np.int64)
    nhits = 0
    if collect and energy <= threshold:
        hits[0] = 0
        nhits = 1
    for k in range(1, total):
        b = 0
        while not (k >> b) & 1:
            b += 1
        d = 1.0 - 2.0 * z[b]
        energy += d * field[b]
        z[b] = 1.0 - z[b]
        for i in range(n):
            field[i] += d * W[b, i]
        if energy < best:
            best = energy
        if collect and energy <= threshold:
            if nhits >= max_hits:
                return best, hits, -1
            hits[nhits] = k ^ (k >> 1)
            nhits += 1
    return best, hits[:nhits], nhits


# --------------------------------------------------------------------------
# numpy kernels (vectorized across reads)


class _Streams:
    def __init__(self, seeds):
        self.state = seeds.copy()

    def next(self):
        with np.errstate(over="ignore"):
            self.state += GOLDEN
            return _mix_np(self.state)

    def bit(self):
        return (self.next() >> SHIFT63).astype(np.float64)

    def uniform(self):
        return (self.next() >> SHIFT11).astype(np.float64) * INV53


def _anneal_binary_np(W, h, temps, seeds):
    reads, n = seeds.shape[0], h.shape[0]
    rng = _Streams(seeds)
    Z = np.empty((reads, n))
    for i in range(n):
        Z[:, i] = rng.bit()
    F = np.repeat(h[None, :], reads, axis=0)
    for j in range(n):
        on = Z[:, j] != 0.0
        F[on] += W[j][None, :] * Z[on, j][:, None]
    for temp in temps:
        for i in range(n):
            u = rng.uniform()
            d = 1.0 - 2.0 * Z[:, i]
            de = d * F[:, i]
            with np.errstate(over="ignore"):
                accept = (de <= 0.0) | (u < np.exp(np.minimum(-de / temp, 0.0)))
            idx = np.nonzero(accept)[0]
            if idx.size:
                Z[idx, i] = 1.0 - Z[idx, i]
                F[idx] += d[idx, None] * W[i][None, :]
    return Z.astype(np.uint8)


def _anneal_spin_np(J, h, temps, seeds):
    reads, n = seeds.shape[0], h.shape[0]
    rng = _Streams(seeds)
    S = np.empty((reads, n))
    for i in range(n):
        S[:, i] = 2.0 * rng.bit() - 1.0
    F = np.repeat(h[None, :], reads, axis=0)
    for j in range(n):
        F += J[j][None, :] * S[:, j][:, None]
    for temp in temps:
        for i in range(n):
            u = rng.uniform()
            d = -2.0 * S[:, i]
            de = d * F[:, i]
            with np.errstate(over="ignore"):
                accept = (de <= 0.0) | (u < np.exp(np.minimum(-de / temp, 0.0)))
            idx = np.nonzero(accept)[0]
            if idx.size:
                S[idx, i] = -S[idx, i]
                F[idx] += d[idx, None] * J[i][None, :]
    return S.astype(np.int8)


def _chunk_energies(codes, n, W, h, offset):
    Z = ((codes[:, None] >> np.arange(n)) & 1).astype(np.float64)
    return 0.5 * np.einsum("ri,ij,rj->r", Z, W, Z) + Z @ h + offset


def _enumerate_np(W, h, offset, window, max_hits, chunk=1 << 16):
    n = h.shape[0]
    total = 1 << n
    best = np.inf
    keep_codes, keep_e = [], []
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total), dtype=np.int64)
        e = _chunk_energies(codes, n, W, h, offset)
        best = min(best, float(e.min()))
        sel = e <= best + window
        keep_codes.append(codes[sel])
        keep_e.append(e[sel])
        # prune stale candidates as the running minimum drops
        if sum(c.size for c in keep_codes) > max_hits:
            c = np.concatenate(keep_codes)
            ee = np.concatenate(keep_e)
            m = ee <= best + window
            keep_codes, keep_e = [c[m]], [ee[m]]
            if keep_codes[0].size > max_hits:
                return best, None
    c = np.concatenate(keep_codes)
    ee = np.concatenate(keep_e)
    return best, c[ee <= best + window]


# --------------------------------------------------------------------------
# dispatch


def anneal_binary(W, h, temps, seeds):
    """Final binary states, one row per read."""
    args = (np.ascontiguousarray(W, dtype=np.float64), np.ascontiguousarray(h, dtype=np.float64),
            np.ascontiguousarray(temps, dtype=np.float64), np.ascontiguousarray(seeds, dtype=np.uint64))
    if numba_enabled():
        return _anneal_binary_nb(*args)
    return _anneal_binary_np(*args)


def anneal_spin(J, h, temps, seeds):
    """Final spin states in {-1, +1}, one row per read."""
    args = (np.ascontiguousarray(J, dtype=np.float64), np.ascontiguousarray(h, dtype=np.float64),
            np.ascontiguousarray(temps, dtype=np.float64), np.ascontiguousarray(seeds, dtype=np.uint64))
    if numba_enabled():
        return _anneal_spin_nb(*args)
    return _anneal_spin_np(*args)


def enumerate_minima(W, h, offset, window, max_hits=1 << 20):
    """Minimum energy and the integer codes of all states within ``window`` of it.

    Bit ``i`` of a code is variable ``i``. Energies from the incremental walk
    carry rounding drift, so callers re-evaluate the returned states.
    Returns ``(best, None)`` when more than ``max_hits`` states qualify.
    """
    W = np.ascontiguousarray(W, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    slack = 1e-7 * (1.0 + np.abs(h).sum() + np.abs(W).sum())
    if not numba_enabled():
        best, codes = _enumerate_np(W, h, float(offset), window + slack, max_hits)
        return best, (None if codes is None else np.sort(codes))
    best, _, _ = _gray_walk_nb(W, h, float(offset), False, 0.0, 1)
    _, codes, count = _gray_walk_nb(W, h, float(offset), True, best + window + slack, max_hits)
    if count < 0:
        return best, None
    return best, np.sort(codes)
