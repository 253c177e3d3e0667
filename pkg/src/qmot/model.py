"""Tracking instance, variable indexing and decoding.

A frame's assignment matrix has detections as rows and tracks as columns; the
last row is the dummy detection and the last column the dummy track. Frames
are stacked row-major, so variable ``(f, d, t)`` sits at ``f*D*T + d*T + t``.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import DimensionError, FormatError, ParameterError, SizeError

FORMAT_VERSION = 1
DEFAULT_BETA = -0.2

SimilarityKey = tuple[int, int, int, int]


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """One tracking (sub)problem.

    ``num_real_detections`` is the per-frame maximum; frames with fewer real
    detections list their counts in ``detections_per_frame`` and the missing
    rows behave like extra dummy detections. ``beta`` is the score of labeling
    a real detection as a false positive (dummy track).
    """

    num_frames: int
    num_real_detections: int
    num_real_tracks: int
    max_frame_gap: int
    similarities: Mapping[SimilarityKey, float] = field(default_factory=dict)
    beta: float = DEFAULT_BETA
    detections_per_frame: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.num_frames < 1:
            raise ParameterError("need at least one frame")
        if self.num_real_detections < 1 or self.num_real_tracks < 1:
            raise ParameterError("need at least one real detection slot and one real track")
        if self.max_frame_gap < 0:
            raise ParameterError("max_frame_gap must be non-negative")
        counts = self.detections_per_frame
        if counts is None:
            counts = (self.num_real_detections,) * self.num_frames
        counts = tuple(int(c) for c in counts)
        if len(counts) != self.num_frames:
            raise DimensionError("detections_per_frame must list one count per frame")
        if any(c < 0 or c > self.num_real_detections for c in counts):
            raise DimensionError("per-frame detection counts must lie in [0, num_real_detections]")
        object.__setattr__(self, "detections_per_frame", counts)

        sims = {}
        for key, value in dict(self.similarities).items():
            fi, di, fj, dj = (int(k) for k in key)
            gap = fj - fi
            if not 0 < gap <= self.max_frame_gap:
                raise ParameterError(f"similarity {key} spans frame gap {gap} outside [1, {self.max_frame_gap}]")
            if not (0 <= fi < self.num_frames and 0 <= fj < self.num_frames):
                raise DimensionError(f"similarity {key} references a frame out of range")
            if not (0 <= di < counts[fi] and 0 <= dj < counts[fj]):
                raise DimensionError(f"similarity {key} references a non-real detection")
            value = float(value)
            if not -1.0 <= value <= 1.0:
                raise ParameterError(f"similarity {key}={value} outside [-1, 1]")
            sims[(fi, di, fj, dj)] = value
        object.__setattr__(self, "similarities", MappingProxyType(sims))

    @property
    def D(self) -> int:
        """Rows per frame, dummy detection included."""
        return self.num_real_detections + 1

    @property
    def T(self) -> int:
        """Columns per frame, dummy track included."""
        return self.num_real_tracks + 1

    @property
    def num_variables(self) -> int:
        return self.num_frames * self.D * self.T

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.num_frames, self.D, self.T)

    def is_real(self, frame: int, detection: int) -> bool:
        return detection < self.detections_per_frame[frame]

    def replace(self, **changes) -> "ProblemSpec":
        kwargs = dict(
            num_frames=self.num_frames,
            num_real_detections=self.num_real_detections,
            num_real_tracks=self.num_real_tracks,
            max_frame_gap=self.max_frame_gap,
            similarities=dict(self.similarities),
            beta=self.beta,
            detections_per_frame=self.detections_per_frame,
        )
        kwargs.update(changes)
        return ProblemSpec(**kwargs)


def flatten(frame: int, detection: int, track: int, spec: ProblemSpec) -> int:
    F, D, T = spec.shape
    if not (0 <= frame < F and 0 <= detection < D and 0 <= track < T):
        raise DimensionError(f"index ({frame}, {detection}, {track}) outside {spec.shape}")
    return (frame * D + detection) * T + track


def unflatten(flat: int, spec: ProblemSpec) -> tuple[int, int, int]:
    F, D, T = spec.shape
    if not 0 <= flat < F * D * T:
        raise DimensionError(f"flat index {flat} outside [0, {F * D * T})")
    frame, rest = divmod(int(flat), D * T)
    detection, track = divmod(rest, T)
    return frame, detection, track


def variable_labels(spec: ProblemSpec) -> np.ndarray:
    """``(n, 3)`` array of ``(frame, detection, track)`` per flat index."""
    F, D, T = spec.shape
    grid = np.indices((F, D, T)).reshape(3, -1).T
    return np.ascontiguousarray(grid)


@dataclass(frozen=True, eq=False)
class Assignment:
    """Stacked per-frame binary matrices, shape ``(F, D, T)``."""

    matrices: np.ndarray

    def flat(self) -> np.ndarray:
        return self.matrices.reshape(-1).astype(np.uint8)

    def labels(self, spec: ProblemSpec) -> list[np.ndarray]:
        """Track of each real detection per frame; -1 for the dummy track.

        Only meaningful for feasible assignments (one track per detection).
        """
        out = []
        for f in range(spec.num_frames):
            rows = self.matrices[f, : spec.detections_per_frame[f]]
            lab = np.argmax(rows, axis=1).astype(np.int64)
            lab[lab == spec.T - 1] = -1
            out.append(lab)
        return out


@dataclass(frozen=True)
class Violation:
    kind: str  # "track" (column) or "detection" (row)
    frame: int
    index: int
    amount: int


def decode(state: Sequence[int] | np.ndarray, spec: ProblemSpec) -> tuple[Assignment, list[Violation]]:
    z = np.asarray(state)
    if z.ndim != 1 or z.shape[0] != spec.num_variables:
        raise DimensionError(f"state length {z.shape} does not match {spec.num_variables} variables")
    X = z.reshape(spec.shape).astype(np.uint8)
    return Assignment(X), feasibility_report(X, spec)


def feasibility_report(X: np.ndarray, spec: ProblemSpec) -> list[Violation]:
    report = []
    col = X[:, :, : spec.T - 1].sum(axis=1, dtype=np.int64)
    row = X[:, :, :].sum(axis=2, dtype=np.int64)
    for f in range(spec.num_frames):
        for t in range(spec.T - 1):
            v = int(col[f, t]) - 1
            if v:
                report.append(Violation("track", f, t, v))
        for d in range(spec.detections_per_frame[f]):
            v = int(row[f, d]) - 1
            if v:
                report.append(Violation("detection", f, d, v))
    return report


def is_feasible(state, spec: ProblemSpec) -> bool:
    return not decode(state, spec)[1]


def assignment_score(a: Assignment | np.ndarray, spec: ProblemSpec) -> float:
    """Summed similarity of same-track pairs plus ``beta`` per false positive."""
    X = a.matrices if isinstance(a, Assignment) else np.asarray(a)
    if X.shape != spec.shape:
        raise DimensionError(f"assignment shape {X.shape} does not match {spec.shape}")
    X = X.astype(np.float64)
    real = X[:, :, : spec.T - 1]
    score = 0.0
    for (fi, di, fj, dj), q in spec.similarities.items():
        score += q * float(real[fi, di] @ real[fj, dj])
    for f, count in enumerate(spec.detections_per_frame):
        score += spec.beta * float(X[f, :count, spec.T - 1].sum())
    return score


def labels_to_assignment(labels: Sequence[Sequence[int]], spec: ProblemSpec) -> Assignment:
    """Feasible assignment from per-frame track labels (-1 = dummy track).

    Real tracks left without a real detection take the dummy detection.
    """
    if len(labels) != spec.num_frames:
        raise DimensionError("need one label vector per frame")
    X = np.zeros(spec.shape, dtype=np.uint8)
    for f, lab in enumerate(labels):
        lab = np.asarray(lab, dtype=np.int64)
        if lab.shape[0] != spec.detections_per_frame[f]:
            raise DimensionError(f"frame {f}: expected {spec.detections_per_frame[f]} labels")
        used = set()
        for d, t in enumerate(lab):
            if t < 0:
                X[f, d, spec.T - 1] = 1
                continue
            if t >= spec.T - 1 or t in used:
                raise ParameterError(f"frame {f}: track label {t} invalid or reused")
            used.add(int(t))
            X[f, d, t] = 1
        for t in range(spec.T - 1):
            if t not in used:
                X[f, spec.D - 1, t] = 1
    return Assignment(X)


# --------------------------------------------------------------------------
# exhaustive search over feasible assignments


def frame_configurations(count: int, num_real_tracks: int) -> np.ndarray:
    """All injective labelings of ``count`` detections onto real tracks or -1."""
    choices = range(-1, num_real_tracks)
    rows = [
        combo
        for combo in itertools.product(choices, repeat=count)
        if len({t for t in combo if t >= 0}) == sum(1 for t in combo if t >= 0)
    ]
    return np.array(rows, dtype=np.int64).reshape(len(rows), count)


def count_feasible(spec: ProblemSpec) -> int:
    """Number of canonical feasible assignments (free dummy entries fixed)."""
    total = 1
    for c in spec.detections_per_frame:
        total *= len(frame_configurations(c, spec.num_real_tracks))
    return total


def iter_feasible(spec: ProblemSpec) -> Iterator[list[np.ndarray]]:
    configs = [frame_configurations(c, spec.num_real_tracks) for c in spec.detections_per_frame]
    for combo in itertools.product(*[range(len(c)) for c in configs]):
        yield [configs[f][k] for f, k in enumerate(combo)]


def best_feasible(spec: ProblemSpec, max_combinations: float = 2e8) -> tuple[list[np.ndarray], float]:
    """Exhaustive maximum of ``assignment_score`` over feasible assignments.

    Enumerates per-frame labelings and combines precomputed frame-pair score
    tables; the last (up to four) frames are broadcast, the rest looped.
    Returns per-frame labels of one maximizer and its score.
    """
    F = spec.num_frames
    configs = [frame_configurations(c, spec.num_real_tracks) for c in spec.detections_per_frame]
    sizes = [len(c) for c in configs]
    if float(np.prod(sizes, dtype=np.float64)) > max_combinations:
        raise SizeError(f"{np.prod(sizes, dtype=np.float64):.3g} feasible assignments exceed the cap")

    unary = [spec.beta * (c == -1).sum(axis=1).astype(np.float64) for c in configs]
    sims = np.zeros((F, spec.num_real_detections, F, spec.num_real_detections))
    for (fi, di, fj, dj), q in spec.similarities.items():
        sims[fi, di, fj, dj] = q
    pair = {}
    for i in range(F):
        for j in range(i + 1, min(F, i + spec.max_frame_gap + 1)):
            li, lj = configs[i], configs[j]
            same = (li[:, None, :, None] == lj[None, :, None, :]) & (li[:, None, :, None] >= 0)
            block = sims[i, : li.shape[1], j, : lj.shape[1]]
            pair[(i, j)] = (same * block[None, None]).sum(axis=(2, 3))

    k = min(F, 4)
    outer, inner = list(range(F - k)), list(range(F - k, F))
    best_score, best_combo = -np.inf, None
    for head in itertools.product(*[range(sizes[f]) for f in outer]):
        base = sum(unary[f][c] for f, c in zip(outer, head))
        base += sum(pair[(a, b)][head[a], head[b]] for a in outer for b in outer if (a, b) in pair)
        total = np.zeros([sizes[f] for f in inner])
        for pos, f in enumerate(inner):
            shape = [1] * k
            shape[pos] = sizes[f]
            vec = unary[f].copy()
            for a in outer:
                if (a, f) in pair:
                    vec += pair[(a, f)][head[a]]
            total = total + vec.reshape(shape)
        for pa, a in enumerate(inner):
            for pb, b in enumerate(inner):
                if (a, b) in pair:
                    shape = [1] * k
                    shape[pa], shape[pb] = sizes[a], sizes[b]
                    total = total + pair[(a, b)].reshape(shape)
        idx = int(np.argmax(total))
        value = base + float(total.flat[idx])
        if value > best_score:
            best_score = value
            best_combo = tuple(head) + np.unravel_index(idx, total.shape)
    labels = [configs[f][int(c)] for f, c in enumerate(best_combo)]
    return labels, float(best_score)


# --------------------------------------------------------------------------
# problem files


def problem_to_dict(spec: ProblemSpec) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "problem",
        "frames": spec.num_frames,
        "detections_per_frame": list(spec.detections_per_frame),
        "max_detections": spec.num_real_detections,
        "tracks": spec.num_real_tracks,
        "max_frame_gap": spec.max_frame_gap,
        "beta": spec.beta,
        "similarities": [
            {"f_i": k[0], "d_i": k[1], "f_j": k[2], "d_j": k[3], "score": v}
            for k, v in sorted(spec.similarities.items())
        ],
    }


def check_version(doc: Mapping, kind: str | None = None) -> None:
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    if kind is not None and doc.get("kind", kind) != kind:
        raise FormatError(f"expected a {kind!r} document, got {doc.get('kind')!r}")


def problem_from_dict(doc: Mapping) -> ProblemSpec:
    check_version(doc, "problem")
    try:
        counts = tuple(int(c) for c in doc["detections_per_frame"])
        sims = {
            (int(r["f_i"]), int(r["d_i"]), int(r["f_j"]), int(r["d_j"])): float(r["score"])
            for r in doc.get("similarities", [])
        }
        return ProblemSpec(
            num_frames=int(doc["frames"]),
            num_real_detections=int(doc.get("max_detections", max(counts, default=0))),
            num_real_tracks=int(doc["tracks"]),
            max_frame_gap=int(doc["max_frame_gap"]),
            similarities=sims,
            beta=float(doc.get("beta", DEFAULT_BETA)),
            detections_per_frame=counts,
        )
    except KeyError as exc:
        raise FormatError(f"problem document missing field {exc}") from None


def dump_json(doc: Mapping, path: str | Path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_json(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None


def save_problem(spec: ProblemSpec, path: str | Path) -> None:
    dump_json(problem_to_dict(spec), path)


def load_problem(path: str | Path) -> ProblemSpec:
    return problem_from_dict(load_json(path))
