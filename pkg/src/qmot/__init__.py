"""Multi-object tracking as quadratic unconstrained binary optimization."""
from .errors import DimensionError, FormatError, ParameterError, QmotError, SizeError, SolverError
from .lagrangian import (
    LagrangeConfig,
    MultiplierState,
    optimize_multipliers,
    update_multipliers,
    violation,
    violation_gain,
)
from .model import Assignment, ProblemSpec, assignment_score, decode, flatten, unflatten
from .pipeline import Scenario, TrackConfig, TrackSet, evaluate, generate_scenario, lambda_sweep, segment, stitch, track
from .qubo import ConstraintSystem, IsingProblem, Qubo, apply_penalties, build_constraints, build_cost, regularize, to_spin
from .sampler import AnnealSchedule, SampleSet, anneal, brute_force, energy_histogram, exact_minimum, solution_probability

__version__ = "0.1.0"
