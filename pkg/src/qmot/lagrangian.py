"""Per-constraint penalty multipliers estimated from sampled violations.

Each constraint gets ``lambda_i = lambda_base + lambda_prime_i + lambda_offset``.
Starting from ``lambda_prime = 0`` the penalized QUBO is solved, the energy
advantage of every positively violated constraint is estimated from the
samples near the best one, and ``lambda_prime_i`` is raised just past it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Mapping

import numpy as np

from .errors import DimensionError, ParameterError
from .model import FORMAT_VERSION, check_version
from .qubo import ConstraintSystem, Qubo, apply_penalties
from .sampler import SampleSet

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MultiplierState:
    lambda_base: float
    lambda_prime: np.ndarray
    lambda_offset: float = 0.0
    iteration: int = 0
    converged: bool = False

    @classmethod
    def initial(cls, num_constraints: int, lambda_base: float) -> "MultiplierState":
        return cls(float(lambda_base), np.zeros(num_constraints))

    def multipliers(self) -> np.ndarray:
        return self.lambda_base + np.asarray(self.lambda_prime) + self.lambda_offset

    def with_offset(self, lambda_offset: float) -> "MultiplierState":
        return replace(self, lambda_offset=float(lambda_offset))

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "multipliers",
            "lambda_base": self.lambda_base,
            "lambda_offset": self.lambda_offset,
            "lambda_prime": [float(v) for v in self.lambda_prime],
            "converged": bool(self.converged),
            "iteration": int(self.iteration),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "MultiplierState":
        check_version(doc, "multipliers")
        return cls(float(doc["lambda_base"]), np.asarray(doc["lambda_prime"], dtype=np.float64),
                   float(doc["lambda_offset"]), int(doc["iteration"]), bool(doc["converged"]))


@dataclass(frozen=True)
class LagrangeConfig:
    lambda_base: float = 0.5
    lambda_offset: float = 0.0
    epsilon: float = 0.05
    energy_window: float = 0.5
    max_iterations: int = 20


def violation(g, target: float, z) -> float:
    g = np.asarray(g, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if g.shape != z.shape:
        raise DimensionError("constraint row and state differ in length")
    return float(g @ z - target)


def active_contributions(q: Qubo, z) -> np.ndarray:
    """Energy each variable adds through its own linear term and its couplings to ``z``.

    For an active variable this is what switching it off would save, as long
    as no other variable changes. With the pair-once storage this equals
    ``2 (Q z)_k + b_k`` of the symmetric double-counted form.
    """
    W, h = q.couplings()
    z = np.asarray(z, dtype=np.float64)
    return h + W @ z


def violation_gain(q: Qubo, g, z, target: float = 1.0) -> float:
    """Estimated per-unit energy advantage of a positively violated constraint.

    Keeps the cheapest active member and charges the others' contributions,
    normalized by the squared violation. Negative means violating pays off.
    """
    v = violation(g, target, z)
    if v <= 0:
        raise ParameterError(f"gain is only defined for positive violations (got {v})")
    g = np.asarray(g, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    active = (g != 0) & (z != 0)
    c = (g * active_contributions(q, z))[active]
    return float((c.sum() - c.min()) / (v * v))


def update_multipliers(state: MultiplierState, q: Qubo, constraints: ConstraintSystem,
                       samples: SampleSet, energy_window: float = 0.5,
                       epsilon: float = 0.05) -> MultiplierState:
    """Raise ``lambda_prime`` for constraints violated by near-best samples.

    ``q`` is the unpenalized cost. Candidates from every sample within
    ``energy_window`` of the best are merged by per-constraint maximum.
    """
    if not len(samples):
        raise ParameterError("cannot update multipliers from an empty sample set")
    window = samples.energies <= samples.energies[0] + energy_window
    prime = np.array(state.lambda_prime, dtype=np.float64)
    any_violation = False
    G, d = constraints.matrix, constraints.targets
    for z in samples.states[window]:
        v = G @ z - d
        if np.any(np.abs(v) > 1e-9):
            any_violation = True
        for i in np.nonzero(v > 1e-9)[0]:
            cand = -violation_gain(q, G[i], z, d[i]) - state.lambda_base + epsilon
            if cand > prime[i]:
                prime[i] = cand
    return replace(state, lambda_prime=prime, converged=not any_violation)


def penalized(q: Qubo, constraints: ConstraintSystem, state: MultiplierState) -> Qubo:
    return apply_penalties(q, constraints.with_multipliers(state.multipliers()))


def optimize_multipliers(q: Qubo, constraints: ConstraintSystem,
                         solver: Callable[[Qubo], SampleSet],
                         config: LagrangeConfig = LagrangeConfig()) -> MultiplierState:
    """Solve/update until the best sample is feasible, then add the offset.

    Stops early without convergence when an update leaves every multiplier
    unchanged (e.g. only under-assignment remains), since re-solving the
    same QUBO cannot make progress.
    """
    state = MultiplierState.initial(constraints.num_rows, config.lambda_base)
    for it in range(config.max_iterations + 1):
        samples = solver(penalized(q, constraints, state))
        best = samples.states[0]
        if np.all(np.abs(constraints.violations(best)) <= 1e-9):
            state = replace(state, iteration=it, converged=True)
            break
        if it == config.max_iterations:
            state = replace(state, iteration=it, converged=False)
            break
        new = update_multipliers(state, q, constraints, samples, config.energy_window, config.epsilon)
        if np.array_equal(new.lambda_prime, state.lambda_prime):
            log.debug("multiplier update stalled at iteration %d", it)
            state = replace(state, iteration=it, converged=False)
            break
        state = replace(new, iteration=it + 1, converged=False)
    return state.with_offset(config.lambda_offset)


def fallback_multiplier(q: Qubo) -> float:
    """Uniform multiplier large enough to dominate any single-flip gain."""
    return 2.0 * max(q.max_abs_coefficient(), 1e-12)
