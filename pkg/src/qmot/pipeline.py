"""End-to-end tracking: synthetic scenarios, segmentation, solving, stitching, metrics."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ParameterError, SizeError, SolverError
from .lagrangian import LagrangeConfig, MultiplierState, fallback_multiplier, optimize_multipliers, penalized
from .model import (
    DEFAULT_BETA,
    FORMAT_VERSION,
    ProblemSpec,
    best_feasible,
    check_version,
    decode,
    labels_to_assignment,
    problem_from_dict,
    problem_to_dict,
)
from .qubo import ConstraintSystem, Qubo, apply_penalties, build_constraints, build_cost
from .sampler import AnnealSchedule, SampleSet, anneal, brute_force, exact_minimum, solution_probability

log = logging.getLogger(__name__)

MATCH_SCORE = 0.8
MISMATCH_SCORE = -0.8


# --------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True, eq=False)
class Scenario:
    """Synthetic instance: every object is detected once per frame, in shuffled order."""

    spec: ProblemSpec
    ground_truth: tuple[np.ndarray, ...]
    sigma: float
    seed: int
    num_objects: int

    def truth_assignment(self):
        """Feasible assignment placing object ``k`` on track ``k``."""
        return labels_to_assignment([np.where(g < self.spec.num_real_tracks, g, -1)
                                     for g in self.ground_truth], self.spec)


def generate_scenario(num_objects: int, num_frames: int, sigma: float, seed: int, shuffle: bool = True,
                      max_frame_gap: int = 3, num_real_tracks: int | None = None,
                      beta: float = DEFAULT_BETA) -> Scenario:
    if sigma < 0:
        raise ParameterError("noise level must be non-negative")
    if num_objects < 1 or num_frames < 1:
        raise ParameterError("need at least one object and one frame")
    rng = np.random.default_rng(seed)
    truth = []
    for _ in range(num_frames):
        order = rng.permutation(num_objects) if shuffle else np.arange(num_objects)
        truth.append(order.astype(np.int64))
    sims = {}
    for fi in range(num_frames):
        for fj in range(fi + 1, min(num_frames, fi + max_frame_gap + 1)):
            for di in range(num_objects):
                for dj in range(num_objects):
                    base = MATCH_SCORE if truth[fi][di] == truth[fj][dj] else MISMATCH_SCORE
                    sims[(fi, di, fj, dj)] = float(np.clip(base + sigma * rng.standard_normal(), -1.0, 1.0))
    spec = ProblemSpec(
        num_frames=num_frames,
        num_real_detections=num_objects,
        num_real_tracks=num_objects if num_real_tracks is None else num_real_tracks,
        max_frame_gap=max_frame_gap,
        similarities=sims,
        beta=beta,
    )
    return Scenario(spec, tuple(truth), float(sigma), int(seed), int(num_objects))


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "scenario",
        "sigma": sc.sigma,
        "seed": sc.seed,
        "num_objects": sc.num_objects,
        "ground_truth": [[int(x) for x in g] for g in sc.ground_truth],
        "problem": problem_to_dict(sc.spec),
    }


def scenario_from_dict(doc) -> Scenario:
    check_version(doc, "scenario")
    spec = problem_from_dict(doc["problem"])
    truth = tuple(np.asarray(g, dtype=np.int64) for g in doc["ground_truth"])
    return Scenario(spec, truth, float(doc["sigma"]), int(doc["seed"]), int(doc["num_objects"]))


# --------------------------------------------------------------------------
# segmentation


@dataclass(frozen=True, eq=False)
class Segment:
    start: int
    stop: int
    spec: ProblemSpec


def sub_problem(spec: ProblemSpec, start: int, stop: int) -> ProblemSpec:
    sims = {
        (fi - start, di, fj - start, dj): v
        for (fi, di, fj, dj), v in spec.similarities.items()
        if start <= fi and fj < stop
    }
    return spec.replace(num_frames=stop - start, similarities=sims,
                        detections_per_frame=spec.detections_per_frame[start:stop])


def segment(spec: ProblemSpec, segment_length: int, overlap: int | None = None) -> list[Segment]:
    """Overlapping windows; the last one is truncated so every overlap is exact."""
    overlap = spec.max_frame_gap if overlap is None else overlap
    if segment_length < 1 or not 0 <= overlap < segment_length:
        raise ParameterError("need 0 <= overlap < segment_length")
    F = spec.num_frames
    if segment_length >= F:
        return [Segment(0, F, spec)]
    out, start = [], 0
    while True:
        stop = min(start + segment_length, F)
        out.append(Segment(start, stop, sub_problem(spec, start, stop)))
        if stop == F:
            return out
        start += segment_length - overlap


# --------------------------------------------------------------------------
# stitching


def overlap_counts(prev_labels: Sequence[np.ndarray], next_labels: Sequence[np.ndarray]):
    """Shared-detection counts between tracks of two segments over common frames.

    Returns ``(m, prev_tracks, next_tracks)``; only tracks with a detection in
    the common frames are considered.
    """
    prev_ids = sorted({int(t) for lab in prev_labels for t in lab if t >= 0})
    next_ids = sorted({int(t) for lab in next_labels for t in lab if t >= 0})
    m = np.zeros((len(prev_ids), len(next_ids)))
    pi = {t: k for k, t in enumerate(prev_ids)}
    ni = {t: k for k, t in enumerate(next_ids)}
    for a, b in zip(prev_labels, next_labels):
        for ta, tb in zip(a, b):
            if ta >= 0 and tb >= 0:
                m[pi[int(ta)], ni[int(tb)]] += 1
    return m, prev_ids, next_ids


def match_tracks(m: np.ndarray, no_overlap: float = -0.5) -> list[tuple[int, int]]:
    """Partial matching maximizing the summed shared counts.

    Pairs without shared detections score ``no_overlap`` (< 0) and are never
    kept. Maximizing over a full assignment of the clipped matrix and dropping
    non-positive pairs gives the optimum over partial injections.
    """
    if no_overlap >= 0:
        raise ParameterError("no_overlap must be negative")
    if m.size == 0:
        return []
    score = np.where(m > 0, m, no_overlap)
    rows, cols = linear_sum_assignment(np.maximum(score, 0.0), maximize=True)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if score[r, c] > 0]


def stitch(prev_labels: Sequence[np.ndarray], next_labels: Sequence[np.ndarray], overlap: int,
           no_overlap: float = -0.5) -> dict[int, int]:
    """Map local tracks of the next segment onto local tracks of the previous one.

    ``prev_labels``/``next_labels`` hold per-frame track labels of whole
    segments; the last/first ``overlap`` frames are the shared ones.
    """
    if overlap <= 0:
        return {}
    a = list(prev_labels)[-overlap:]
    b = list(next_labels)[:overlap]
    m, prev_ids, next_ids = overlap_counts(a, b)
    return {next_ids[j]: prev_ids[i] for i, j in match_tracks(m, no_overlap)}


def split_long_gaps(labels: Sequence[np.ndarray], max_gap: int) -> list[np.ndarray]:
    """Give a fresh id to every piece of a track interrupted longer than ``max_gap``."""
    out = [np.array(l, dtype=np.int64) for l in labels]
    last_seen, current = {}, {}
    next_id = max((int(l.max()) for l in out if l.size), default=-1) + 1
    for f, lab in enumerate(out):
        for d, t in enumerate(lab):
            t = int(t)
            if t < 0:
                continue
            if t in last_seen and f - last_seen[t] > max_gap:
                current[t] = next_id
                next_id += 1
            last_seen[t] = f
            lab[d] = current.get(t, t)
    return _relabel(out)


def _relabel(labels: Sequence[np.ndarray]) -> list[np.ndarray]:
    mapping = {}
    out = []
    for lab in labels:
        new = np.full(len(lab), -1, dtype=np.int64)
        for d, t in enumerate(lab):
            if t >= 0:
                new[d] = mapping.setdefault(int(t), len(mapping))
        out.append(new)
    return out


# --------------------------------------------------------------------------
# per-segment solving


@dataclass(frozen=True)
class TrackConfig:
    segment_length: int = 5
    overlap: int | None = None
    backend: str = "anneal"  # anneal | brute | exact
    reads: int = 256
    sweeps: int = 1000
    lagrange_reads: int = 256
    seed: int = 0
    lagrange: LagrangeConfig = LagrangeConfig()
    no_overlap: float = -0.5


@dataclass(frozen=True, eq=False)
class SegmentResult:
    index: int
    start: int
    stop: int
    labels: tuple[np.ndarray, ...]
    energy: float
    solution_probability: float
    num_variables: int
    multipliers: MultiplierState | None
    used_fallback: bool = False
    repaired: bool = False


def _solver(backend: str, reads: int, sweeps: int, seed: int):
    if backend == "anneal":
        counter = iter(range(1 << 30))
        return lambda q: anneal(q, AnnealSchedule(sweeps=sweeps, reads=reads, seed=seed + next(counter)))
    if backend == "brute":
        return lambda q: brute_force(q)
    if backend == "exact":
        return lambda q: exact_minimum(q)
    raise ParameterError(f"unknown backend {backend!r}")


def feasible_mask(samples: SampleSet, constraints: ConstraintSystem) -> np.ndarray:
    if not len(samples):
        return np.zeros(0, dtype=bool)
    v = constraints.violations(samples.states)
    return np.all(np.abs(v) <= 1e-9, axis=1)


def repair(z: np.ndarray, q: Qubo, constraints: ConstraintSystem, max_steps: int = 1000) -> np.ndarray | None:
    """Greedy single flips that reduce total squared violation, energy as tie-break."""
    z = np.array(z, dtype=np.float64)
    for _ in range(max_steps):
        viol = constraints.violations(z)
        if np.all(np.abs(viol) <= 1e-9):
            return z.astype(np.uint8)
        flips = np.repeat(z[None, :], q.n, axis=0)
        idx = np.arange(q.n)
        flips[idx, idx] = 1 - flips[idx, idx]
        sq = (constraints.violations(flips) ** 2).sum(axis=1)
        cur = float((viol ** 2).sum())
        better = sq < cur - 1e-12
        if not better.any():
            return None
        cand = np.nonzero(better)[0]
        e = q.energies(flips[cand])
        order = np.lexsort((e, sq[cand]))
        z = flips[cand[order[0]]]
    return None


def solve_segment(spec: ProblemSpec, config: TrackConfig, seed: int = 0, index: int = 0,
                  start: int = 0) -> SegmentResult:
    cost = build_cost(spec)
    cons = build_constraints(spec)
    search = _solver(config.backend, config.lagrange_reads, config.sweeps, seed * 7919 + 17)
    state = optimize_multipliers(cost, cons, search, config.lagrange)
    used_fallback = not state.converged
    if used_fallback:
        lam = np.full(cons.num_rows, fallback_multiplier(cost))
        qp = apply_penalties(cost, cons.with_multipliers(lam))
        log.info("segment %d: multipliers did not converge, using uniform %.3g", index, lam[0])
    else:
        qp = penalized(cost, cons, state)
    samples = _solver(config.backend, config.reads, config.sweeps, seed * 7919 + 1)(qp)
    ok = feasible_mask(samples, cons)
    repaired = False
    if ok.any():
        k = int(np.argmax(ok))  # sorted by energy, so the first feasible is best
        z, energy = samples.states[k], float(samples.energies[k])
        prob = solution_probability(samples, energy, 1e-9, ok)
    else:
        z = repair(samples.states[0], qp, cons)
        if z is None:
            raise SolverError(f"segment {index} (frames {start}..{start + spec.num_frames - 1}) "
                              "produced no feasible sample")
        repaired = True
        energy, prob = qp.energy(z), 0.0
    assignment, _ = decode(z, spec)
    return SegmentResult(index, start, start + spec.num_frames, tuple(assignment.labels(spec)),
                         float(energy), float(prob), spec.num_variables,
                         None if used_fallback else state, used_fallback, repaired)


@dataclass(frozen=True, eq=False)
class TrackSet:
    labels: tuple[np.ndarray, ...]
    segments: tuple[SegmentResult, ...] = ()
    stitches: tuple[dict, ...] = ()

    def rows(self):
        for f, lab in enumerate(self.labels):
            for d, t in enumerate(lab):
                yield f, d, int(t)


def assemble(results: Sequence[SegmentResult], num_frames: int, overlap: int, max_gap: int,
             no_overlap: float = -0.5) -> TrackSet:
    """Fold segment results left to right into global track ids."""
    labels: list[np.ndarray | None] = [None] * num_frames
    stitches = []
    next_id = 0
    prev_map: dict[int, int] = {}
    for k, res in enumerate(results):
        local = {int(t) for lab in res.labels for t in lab if t >= 0}
        if k == 0:
            mapping = {}
        else:
            shared = results[k - 1].stop - res.start
            link = stitch(results[k - 1].labels, res.labels, shared, no_overlap)
            mapping = {t: prev_map[p] for t, p in link.items() if p in prev_map}
            stitches.append({"boundary": k, "matches": {int(a): int(b) for a, b in link.items()}})
        for t in sorted(local):
            if t not in mapping:
                mapping[t] = next_id
                next_id += 1
        # frames up to the middle of the next overlap belong to this segment
        if k + 1 < len(results):
            shared_next = res.stop - results[k + 1].start
            own_stop = results[k + 1].start + math.ceil(shared_next / 2)
        else:
            own_stop = res.stop
        for f in range(res.start, own_stop):
            if labels[f] is None:
                lab = res.labels[f - res.start]
                labels[f] = np.array([mapping[int(t)] if t >= 0 else -1 for t in lab], dtype=np.int64)
        prev_map = mapping
    labels = [l if l is not None else np.zeros(0, np.int64) for l in labels]
    return TrackSet(tuple(split_long_gaps(labels, max_gap)), tuple(results), tuple(stitches))


def track(spec: ProblemSpec, config: TrackConfig = TrackConfig()) -> TrackSet:
    overlap = spec.max_frame_gap if config.overlap is None else config.overlap
    parts = segment(spec, config.segment_length, overlap)
    results = [solve_segment(p.spec, config, seed=config.seed + k, index=k, start=p.start)
               for k, p in enumerate(parts)]
    return assemble(results, spec.num_frames, overlap, spec.max_frame_gap, config.no_overlap)


# --------------------------------------------------------------------------
# metrics


def same_partition(pred: Sequence[np.ndarray], truth: Sequence[np.ndarray]) -> bool:
    """True if predicted ids equal ground truth up to a relabeling, with no false positives."""
    fwd, back = {}, {}
    for p, g in zip(pred, truth):
        for a, b in zip(p, g):
            a, b = int(a), int(b)
            if a < 0 or fwd.setdefault(a, b) != b or back.setdefault(b, a) != a:
                return False
    return True


def id_switches(pred: Sequence[np.ndarray], truth: Sequence[np.ndarray]) -> int:
    """Changes of predicted id along each ground-truth track (false positives skipped)."""
    last, switches = {}, 0
    for p, g in zip(pred, truth):
        for a, b in zip(p, g):
            a, b = int(a), int(b)
            if a < 0:
                continue
            if b in last and last[b] != a:
                switches += 1
            last[b] = a
    return switches


def evaluate(tracks: TrackSet, scenario: Scenario) -> dict:
    pred, truth = tracks.labels, scenario.ground_truth
    if len(pred) != len(truth) or any(len(p) != len(g) for p, g in zip(pred, truth)):
        raise ParameterError("track set and scenario differ in shape")
    total = sum(len(g) for g in truth)
    pids = sorted({int(t) for p in pred for t in p if t >= 0})
    gids = sorted({int(t) for g in truth for t in g})
    overlap = np.zeros((len(pids), len(gids)))
    pi = {t: k for k, t in enumerate(pids)}
    gi = {t: k for k, t in enumerate(gids)}
    for p, g in zip(pred, truth):
        for a, b in zip(p, g):
            if a >= 0:
                overlap[pi[int(a)], gi[int(b)]] += 1
    matched = 0.0
    if overlap.size:
        r, c = linear_sum_assignment(overlap, maximize=True)
        matched = float(overlap[r, c].sum())
    if tracks.segments:
        exact = [same_partition(s.labels, truth[s.start:s.stop]) for s in tracks.segments]
        exact_rate = float(np.mean(exact))
    else:
        exact_rate = float(same_partition(pred, truth))
    return {
        "num_detections": int(total),
        "accuracy": matched / total if total else 1.0,
        "id_switches": id_switches(pred, truth),
        "false_positives": int(sum(int((p < 0).sum()) for p in pred)),
        "exact_solution_rate": exact_rate,
        "num_tracks": len(pids),
    }


# --------------------------------------------------------------------------
# multiplier sweeps


@dataclass
class SweepReport:
    mode: str
    sigma: float
    reads: int
    reference_energy: float
    reference_source: str
    rows: list[dict] = field(default_factory=list)
    samples: list[SampleSet] = field(default_factory=list)
    multipliers: MultiplierState | None = None

    def peak(self) -> tuple[float, float]:
        best = max(self.rows, key=lambda r: r["solution_probability"])
        return best["value"], best["solution_probability"]


def reference_energy(scenario_or_spec, max_combinations: float = 2e8) -> tuple[float, str]:
    """Energy of the best feasible assignment and how it was obtained."""
    spec = scenario_or_spec.spec if isinstance(scenario_or_spec, Scenario) else scenario_or_spec
    try:
        _, score = best_feasible(spec, max_combinations)
        return -score, "exhaustive"
    except SizeError:
        pass
    try:
        res = exact_minimum(build_cost(spec), build_constraints(spec), time_limit=120)
        if res.info.get("optimal"):
            return float(res.energies[0]), "milp"
    except SolverError:
        pass
    return math.nan, "observed"


def lambda_sweep(scenario: Scenario, values: Sequence[float], reads: int = 4096, mode: str = "fixed",
                 sweeps: int = 1000, seed: int = 0, lagrange: LagrangeConfig = LagrangeConfig(),
                 lagrange_reads: int = 1024, tol: float = 1e-6) -> SweepReport:
    """Solution probability of the feasible optimum across multiplier settings.

    ``mode='fixed'`` uses one uniform multiplier per value; ``mode='optimized'``
    estimates per-constraint multipliers once and treats values as offsets.
    """
    values = list(values)
    if not values:
        raise ParameterError("empty value list")
    if mode not in ("fixed", "optimized"):
        raise ParameterError(f"unknown sweep mode {mode!r}")
    spec = scenario.spec
    cost = build_cost(spec)
    cons = build_constraints(spec)
    ref, source = reference_energy(scenario)
    state = None
    if mode == "optimized":
        search = _solver("anneal", lagrange_reads, sweeps, seed + 104729)
        state = optimize_multipliers(cost, cons, search, replace(lagrange, lambda_offset=0.0))
    report = SweepReport(mode, scenario.sigma, reads, ref, source, multipliers=state)
    sample_sets = []
    for k, value in enumerate(values):
        if mode == "fixed":
            lam = np.full(cons.num_rows, float(value))
        else:
            lam = state.with_offset(float(value)).multipliers()
        qp = apply_penalties(cost, cons.with_multipliers(lam))
        ss = anneal(qp, AnnealSchedule(sweeps=sweeps, reads=reads, seed=seed + k))
        sample_sets.append(ss)
    if source == "observed":
        feas = [ss.energies[feasible_mask(ss, cons)] for ss in sample_sets]
        ref = min((float(e.min()) for e in feas if e.size), default=math.nan)
        report.reference_energy = ref
    for value, ss in zip(values, sample_sets):
        ok = feasible_mask(ss, cons)
        prob = solution_probability(ss, ref, tol, ok) if np.isfinite(ref) else 0.0
        report.rows.append({
            "value": float(value),
            "sigma": scenario.sigma,
            "reads": reads,
            "solution_probability": prob,
            "best_energy": float(ss.energies[0]),
            "reference_energy": ref,
            "reference_source": report.reference_source,
        })
    report.samples = sample_sets
    return report


SWEEP_COLUMNS = ["value", "sigma", "reads", "solution_probability", "best_energy",
                 "reference_energy", "reference_source"]


def write_sweep_csv(reports: Sequence[SweepReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        label = "lambda_off" if reports and reports[0].mode == "optimized" else "lambda"
        w.writerow([label] + SWEEP_COLUMNS[1:])
        for rep in reports:
            for r in rep.rows:
                w.writerow([_fmt(r["value"]), _fmt(r["sigma"]), r["reads"], _fmt(r["solution_probability"]),
                            _fmt(r["best_energy"]), _fmt(r["reference_energy"]), r["reference_source"]])


def write_tracks_csv(tracks: TrackSet, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "detection", "global_track_id"])
        for row in tracks.rows():
            w.writerow(row)


def read_tracks_csv(path: str | Path) -> list[np.ndarray]:
    frames: dict[int, dict[int, int]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            frames.setdefault(int(row["frame"]), {})[int(row["detection"])] = int(row["global_track_id"])
    F = max(frames, default=-1) + 1
    return [np.array([frames.get(f, {})[d] for d in sorted(frames.get(f, {}))], dtype=np.int64)
            for f in range(F)]


def write_segments_csv(tracks: TrackSet, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["segment", "start", "stop", "num_variables", "energy", "solution_probability",
                    "multiplier_iterations", "used_fallback", "repaired"])
        for s in tracks.segments:
            it = s.multipliers.iteration if s.multipliers is not None else ""
            w.writerow([s.index, s.start, s.stop, s.num_variables, _fmt(s.energy),
                        _fmt(s.solution_probability), it, int(s.used_fallback), int(s.repaired)])


def _fmt(x: float) -> str:
    return format(float(x), ".12g")
