"""QUBO assembly: cost, equality penalties, diagonal regularization, spin form.

Quadratic coefficients live in a dense upper-triangular matrix ``U`` (diagonal
included) and every stored pair is counted once:

    energy(z) = sum_{i<=j} U[i, j] z_i z_j + b . z + offset
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DimensionError, FormatError, ParameterError
from .model import FORMAT_VERSION, ProblemSpec, check_version, dump_json, flatten, load_json, variable_labels


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Qubo:
    upper: np.ndarray
    linear: np.ndarray
    offset: float = 0.0
    labels: np.ndarray | None = None

    def __post_init__(self):
        U = np.asarray(self.upper, dtype=np.float64)
        n = U.shape[0]
        if U.shape != (n, n) or np.asarray(self.linear).shape != (n,):
            raise DimensionError("upper must be (n, n) and linear (n,)")
        # fold anything below the diagonal into the upper triangle
        U = np.triu(U) + np.tril(U, -1).T
        object.__setattr__(self, "upper", _frozen(U))
        object.__setattr__(self, "linear", _frozen(self.linear))
        object.__setattr__(self, "offset", float(self.offset))
        if self.labels is not None:
            lab = np.array(self.labels, dtype=np.int64)
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)

    @classmethod
    def zeros(cls, n: int, labels=None) -> "Qubo":
        return cls(np.zeros((n, n)), np.zeros(n), 0.0, labels)

    @classmethod
    def from_terms(cls, n: int, quadratic: Mapping[tuple[int, int], float] = (), linear=None,
                   offset: float = 0.0, labels=None) -> "Qubo":
        U = np.zeros((n, n))
        for (i, j), v in dict(quadratic).items():
            i, j = min(i, j), max(i, j)
            U[i, j] += v
        b = np.zeros(n) if linear is None else np.asarray(linear, dtype=np.float64)
        return cls(U, b, offset, labels)

    @property
    def n(self) -> int:
        return self.linear.shape[0]

    @property
    def quadratic(self) -> dict[tuple[int, int], float]:
        """Nonzero ``(i, j) -> value`` with ``i <= j``."""
        ii, jj = np.nonzero(self.upper)
        return {(int(i), int(j)): float(self.upper[i, j]) for i, j in zip(ii, jj)}

    def energy(self, z) -> float:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.n,):
            raise DimensionError(f"state of length {z.shape} for {self.n} variables")
        return float(z @ self.upper @ z + self.linear @ z + self.offset)

    def energies(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=np.float64)
        if Z.ndim != 2 or Z.shape[1] != self.n:
            raise DimensionError(f"states of shape {Z.shape} for {self.n} variables")
        return np.einsum("ri,ij,rj->r", Z, self.upper, Z) + Z @ self.linear + self.offset

    def couplings(self) -> tuple[np.ndarray, np.ndarray]:
        """Symmetric zero-diagonal couplings ``W`` and effective fields ``h``.

        ``energy(z) = 0.5 z.W.z + h.z + offset`` for binary ``z``; the single
        flip gain of variable ``i`` is ``(1 - 2 z_i) (h_i + W_i . z)``.
        """
        off = np.triu(self.upper, 1)
        return off + off.T, self.linear + np.diag(self.upper)

    def max_abs_coefficient(self) -> float:
        vals = [np.abs(self.upper).max(initial=0.0), np.abs(self.linear).max(initial=0.0)]
        return float(max(vals))

    def evolve(self, upper=None, linear=None, offset=None) -> "Qubo":
        return Qubo(
            self.upper if upper is None else upper,
            self.linear if linear is None else linear,
            self.offset if offset is None else offset,
            self.labels,
        )

    def __add__(self, other: "Qubo") -> "Qubo":
        if other.n != self.n:
            raise DimensionError("cannot add QUBOs of different size")
        return self.evolve(self.upper + other.upper, self.linear + other.linear, self.offset + other.offset)


@dataclass(frozen=True, eq=False)
class IsingProblem:
    """``energy(s) = sum_{i<j} J[i, j] s_i s_j + h . s + offset`` with ``s`` in {-1, +1}."""

    couplings: np.ndarray
    fields: np.ndarray
    offset: float = 0.0
    labels: np.ndarray | None = None

    def __post_init__(self):
        J = np.asarray(self.couplings, dtype=np.float64)
        J = np.triu(J, 1) + np.tril(J, -1).T
        object.__setattr__(self, "couplings", _frozen(J))
        object.__setattr__(self, "fields", _frozen(self.fields))
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def n(self) -> int:
        return self.fields.shape[0]

    def energy(self, s) -> float:
        s = np.asarray(s, dtype=np.float64)
        return float(s @ self.couplings @ s + self.fields @ s + self.offset)

    def energies(self, S) -> np.ndarray:
        S = np.asarray(S, dtype=np.float64)
        return np.einsum("ri,ij,rj->r", S, self.couplings, S) + S @ self.fields + self.offset

    def symmetric(self) -> np.ndarray:
        return self.couplings + self.couplings.T


def to_spin(q: Qubo) -> IsingProblem:
    """Substitute ``z = (s + 1) / 2``; energies agree state by state."""
    off = np.triu(q.upper, 1)
    diag = np.diag(q.upper)
    J = off / 4.0
    h = (q.linear + diag) / 2.0 + (off.sum(axis=1) + off.sum(axis=0)) / 4.0
    offset = q.offset + off.sum() / 4.0 + (q.linear + diag).sum() / 2.0
    return IsingProblem(J, h, offset, q.labels)


def to_binary(ising: IsingProblem) -> Qubo:
    """Inverse substitution ``s = 2z - 1``."""
    J = ising.couplings
    U = 4.0 * J
    b = 2.0 * ising.fields - 2.0 * (J.sum(axis=1) + J.sum(axis=0))
    offset = ising.offset + J.sum() - ising.fields.sum()
    return Qubo(U, b, offset, ising.labels)


def spins_to_binary(S) -> np.ndarray:
    return ((np.asarray(S) + 1) // 2).astype(np.uint8)


def binary_to_spins(Z) -> np.ndarray:
    return (2 * np.asarray(Z, dtype=np.int8) - 1).astype(np.int8)


# --------------------------------------------------------------------------
# MOT assembly


def build_cost(spec: ProblemSpec) -> Qubo:
    """Minimization form of the tracking objective: ``energy = -assignment_score``."""
    n = spec.num_variables
    U = np.zeros((n, n))
    b = np.zeros(n)
    for (fi, di, fj, dj), q in spec.similarities.items():
        if q == 0.0:
            continue
        for t in range(spec.T - 1):
            U[flatten(fi, di, t, spec), flatten(fj, dj, t, spec)] -= q
    dummy = spec.T - 1
    for f, count in enumerate(spec.detections_per_frame):
        for d in range(count):
            b[flatten(f, d, dummy, spec)] -= spec.beta
    return Qubo(U, b, 0.0, variable_labels(spec))


@dataclass(frozen=True, eq=False)
class ConstraintSystem:
    """Rows ``G_i z = d_i`` with penalty weights ``lambda_i``."""

    matrix: np.ndarray
    targets: np.ndarray
    multipliers: np.ndarray
    names: tuple[tuple[str, int, int], ...] = ()

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
        m = G.shape[0]
        for attr in ("targets", "multipliers"):
            v = np.asarray(getattr(self, attr), dtype=np.float64)
            if v.shape == ():
                v = np.full(m, float(v))
            if v.shape != (m,):
                raise DimensionError(f"{attr} must have one entry per constraint row")
            object.__setattr__(self, attr, _frozen(v))
        object.__setattr__(self, "matrix", _frozen(G))

    @property
    def num_rows(self) -> int:
        return self.matrix.shape[0]

    def violations(self, z) -> np.ndarray:
        Z = np.asarray(z, dtype=np.float64)
        return Z @ self.matrix.T - self.targets

    def with_multipliers(self, lam) -> "ConstraintSystem":
        return ConstraintSystem(self.matrix, self.targets, lam, self.names)


def build_constraints(spec: ProblemSpec, multiplier: float | Sequence[float] = 0.0) -> ConstraintSystem:
    """One row per (frame, real track) and per (frame, real detection)."""
    rows, names = [], []
    n = spec.num_variables
    for f in range(spec.num_frames):
        for t in range(spec.T - 1):
            g = np.zeros(n)
            for d in range(spec.D):
                g[flatten(f, d, t, spec)] = 1.0
            rows.append(g)
            names.append(("track", f, t))
        for d in range(spec.detections_per_frame[f]):
            g = np.zeros(n)
            for t in range(spec.T):
                g[flatten(f, d, t, spec)] = 1.0
            rows.append(g)
            names.append(("detection", f, d))
    G = np.array(rows).reshape(len(rows), n)
    return ConstraintSystem(G, np.ones(len(rows)), multiplier, tuple(names))


def penalty_qubo(c: ConstraintSystem) -> Qubo:
    """``sum_i lambda_i (G_i z - d_i)^2`` as a QUBO."""
    lam = c.multipliers
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ParameterError("penalty multipliers must be finite and non-negative")
    G, d = c.matrix, c.targets
    Gw = G * lam[:, None]
    full = G.T @ Gw  # sum_i lambda_i g_i g_i^T
    n = G.shape[1]
    U = np.triu(full, 1) * 2.0 + np.diag(np.diag(full))
    b = -2.0 * (Gw.T @ d)
    return Qubo(U, b, float(lam @ (d * d)), None) if n else Qubo.zeros(0)


def apply_penalties(q: Qubo, c: ConstraintSystem) -> Qubo:
    if c.matrix.shape[1] != q.n:
        raise DimensionError(f"constraints over {c.matrix.shape[1]} variables, QUBO has {q.n}")
    return q + penalty_qubo(c)


def regularize(q: Qubo, spec: ProblemSpec, e: float) -> Qubo:
    """Add ``e`` on the diagonal of every real-track variable.

    Every real track column sums to one in a feasible assignment, so feasible
    energies all shift by ``e * F * (T - 1)`` and the feasible minimizer stays put.
    """
    if not np.isfinite(e):
        raise ParameterError("regularization constant must be finite")
    if q.n != spec.num_variables:
        raise DimensionError("QUBO does not match the problem size")
    mask = np.zeros(spec.shape, dtype=bool)
    mask[:, :, : spec.T - 1] = True
    U = q.upper + np.diag(e * mask.reshape(-1).astype(np.float64))
    return q.evolve(upper=U)


def regularize_identity(q: Qubo, eps: float) -> Qubo:
    """Plain ``eps * I`` shift; unlike :func:`regularize` this moves the optimum."""
    return q.evolve(upper=q.upper + eps * np.eye(q.n))


# --------------------------------------------------------------------------
# files


def qubo_to_dict(q: Qubo | IsingProblem) -> dict:
    if isinstance(q, IsingProblem):
        kind, mat, lin = "ising", q.couplings, q.fields
    else:
        kind, mat, lin = "qubo", q.upper, q.linear
    ii, jj = np.nonzero(mat)
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "n": int(q.n),
        "offset": float(q.offset),
        "linear": [float(v) for v in lin],
        "quadratic": [{"i": int(i), "j": int(j), "value": float(mat[i, j])} for i, j in zip(ii, jj)],
    }
    if q.labels is not None:
        doc["variable_labels"] = [[int(x) for x in row] for row in q.labels]
    return doc


def qubo_from_dict(doc: Mapping) -> Qubo | IsingProblem:
    check_version(doc)
    kind = doc.get("kind", "qubo")
    if kind not in ("qubo", "ising"):
        raise FormatError(f"unknown QUBO kind {kind!r}")
    try:
        n = int(doc["n"])
        mat = np.zeros((n, n))
        for rec in doc["quadratic"]:
            i, j = int(rec["i"]), int(rec["j"])
            mat[min(i, j), max(i, j)] += float(rec["value"])
        lin = np.asarray(doc["linear"], dtype=np.float64)
        offset = float(doc["offset"])
    except KeyError as exc:
        raise FormatError(f"QUBO document missing field {exc}") from None
    labels = doc.get("variable_labels")
    if kind == "ising":
        return IsingProblem(mat, lin, offset, labels)
    return Qubo(mat, lin, offset, labels)


def save_qubo(q: Qubo | IsingProblem, path: str | Path) -> None:
    dump_json(qubo_to_dict(q), path)


def load_qubo(path: str | Path) -> Qubo | IsingProblem:
    return qubo_from_dict(load_json(path))
