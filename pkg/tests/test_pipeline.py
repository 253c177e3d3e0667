import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import partial_injections
from qmot.errors import FormatError, ParameterError
from qmot.model import ProblemSpec, assignment_score, best_feasible, decode
from qmot.pipeline import (
    Scenario,
    SegmentResult,
    TrackConfig,
    TrackSet,
    assemble,
    evaluate,
    generate_scenario,
    id_switches,
    lambda_sweep,
    match_tracks,
    read_tracks_csv,
    reference_energy,
    repair,
    same_partition,
    scenario_from_dict,
    scenario_to_dict,
    segment,
    solve_segment,
    split_long_gaps,
    stitch,
    track,
    write_segments_csv,
    write_sweep_csv,
    write_tracks_csv,
)
from qmot.qubo import apply_penalties, build_constraints, build_cost
from qmot.sampler import exact_minimum


def test_noiseless_scenario_values():
    sc = generate_scenario(3, 5, 0.0, seed=4)
    for (fi, di, fj, dj), v in sc.spec.similarities.items():
        same = sc.ground_truth[fi][di] == sc.ground_truth[fj][dj]
        assert v == (0.8 if same else -0.8)
    assert len(sc.spec.similarities) == (4 + 3 + 2) * 9


def test_scenario_truncation_and_determinism():
    sc = generate_scenario(3, 5, 10.0, seed=1)
    vals = np.array(list(sc.spec.similarities.values()))
    assert vals.min() >= -1.0 and vals.max() <= 1.0
    again = generate_scenario(3, 5, 10.0, seed=1)
    assert dict(again.spec.similarities) == dict(sc.spec.similarities)
    assert all(np.array_equal(a, b) for a, b in zip(again.ground_truth, sc.ground_truth))
    other = generate_scenario(3, 5, 10.0, seed=2)
    assert dict(other.spec.similarities) != dict(sc.spec.similarities)


def test_scenario_shuffles_detection_order():
    sc = generate_scenario(4, 10, 0.0, seed=0)
    assert any(not np.array_equal(g, np.arange(4)) for g in sc.ground_truth)
    plain = generate_scenario(4, 10, 0.0, seed=0, shuffle=False)
    assert all(np.array_equal(g, np.arange(4)) for g in plain.ground_truth)


def test_scenario_rejects_negative_noise():
    with pytest.raises(ParameterError):
        generate_scenario(3, 5, -0.1, seed=0)


def test_scenario_json_round_trip():
    sc = generate_scenario(3, 4, 0.2, seed=5)
    back = scenario_from_dict(json.loads(json.dumps(scenario_to_dict(sc))))
    assert dict(back.spec.similarities) == dict(sc.spec.similarities)
    assert back.sigma == sc.sigma and back.seed == sc.seed
    doc = scenario_to_dict(sc)
    doc["format_version"] = 0
    with pytest.raises(FormatError):
        scenario_from_dict(doc)


def test_segment_cover_twenty_frames():
    spec = generate_scenario(3, 20, 0.0, seed=0).spec
    parts = segment(spec, 5, 3)
    assert [p.start for p in parts] == list(range(0, 17, 2))
    assert parts[-1].stop == 20
    covered = set()
    for a, b in zip(parts, parts[1:]):
        assert a.stop - b.start == 3
    for p in parts:
        covered.update(range(p.start, p.stop))
        assert p.spec.num_frames == p.stop - p.start
    assert covered == set(range(20))


def test_segment_single_and_default_overlap():
    spec = generate_scenario(2, 5, 0.0, seed=0, max_frame_gap=2).spec
    parts = segment(spec, 5)
    assert len(parts) == 1 and parts[0].spec is spec
    parts = segment(spec, 3)
    assert [(p.start, p.stop) for p in parts] == [(0, 3), (1, 4), (2, 5)]
    with pytest.raises(ParameterError):
        segment(spec, 3, 3)


def test_segment_truncates_last_window():
    spec = generate_scenario(2, 8, 0.0, seed=0).spec
    parts = segment(spec, 5, 3)
    assert [(p.start, p.stop) for p in parts] == [(0, 5), (2, 7), (4, 8)]


def test_segment_keeps_contained_similarities():
    spec = generate_scenario(3, 12, 0.3, seed=2).spec
    parts = segment(spec, 5, 3)
    for (fi, di, fj, dj), v in spec.similarities.items():
        for p in parts:
            if p.start <= fi and fj < p.stop:
                assert p.spec.similarities[(fi - p.start, di, fj - p.start, dj)] == v
    for p in parts:
        for fi, di, fj, dj in p.spec.similarities:
            assert (fi + p.start, di, fj + p.start, dj) in spec.similarities


def test_stitch_identity_and_disjoint():
    lab = [np.array([0, 1, -1]), np.array([1, 0, 2])]
    assert stitch(lab, lab, 2) == {0: 0, 1: 1, 2: 2}
    other = [np.array([-1, -1, 5]), np.array([-1, -1, -1])]
    assert stitch(lab, other, 2) == {}
    assert stitch(lab, lab, 0) == {}


def test_stitch_uses_only_shared_frames():
    prev = [np.array([0, 1]), np.array([0, 1]), np.array([1, 0])]
    nxt = [np.array([1, 0]), np.array([0, 1])]
    # last two frames of prev align with the two frames of next
    assert stitch(prev, nxt, 2) == {1: 0, 0: 1}


def test_match_tracks_rejects_nonnegative_default():
    with pytest.raises(ParameterError):
        match_tracks(np.ones((2, 2)), no_overlap=0.0)
    assert match_tracks(np.zeros((0, 3))) == []


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 10 ** 6))
def test_matcher_equals_exhaustive(rows, cols, seed):
    rng = np.random.default_rng(seed)
    m = rng.integers(0, 4, (rows, cols)).astype(float) * (rng.random((rows, cols)) < 0.6)
    pairs = match_tracks(m)
    assert len({r for r, _ in pairs}) == len(pairs) == len({c for _, c in pairs})
    assert sum(m[r, c] for r, c in pairs) == partial_injections(m)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.integers(-1, 3), min_size=0, max_size=4), min_size=1, max_size=15),
       st.integers(1, 4))
def test_split_never_leaves_long_gaps(raw, gap):
    labels = []
    for row in raw:
        seen, out = set(), []
        for t in row:  # a frame never repeats a track id
            out.append(t if t < 0 or t not in seen else -1)
            seen.add(t)
        labels.append(np.array(out, dtype=np.int64))
    split = split_long_gaps(labels, gap)
    frames = {}
    for f, lab in enumerate(split):
        for t in lab[lab >= 0]:
            frames.setdefault(int(t), []).append(f)
    for fs in frames.values():
        assert max(np.diff(fs), default=1) <= gap
    # splitting only refines the original tracks
    for a, b in zip(labels, split):
        assert np.array_equal(a < 0, b < 0)


def test_split_example():
    labels = [np.array([0]), np.array([-1]), np.array([-1]), np.array([0])]
    assert [l.tolist() for l in split_long_gaps(labels, 2)] == [[0], [-1], [-1], [1]]
    assert [l.tolist() for l in split_long_gaps(labels, 3)] == [[0], [-1], [-1], [0]]


def test_id_switch_convention():
    truth = [np.array([0, 1])] * 6
    perfect = [np.array([7, 3])] * 6
    swapped = [np.array([7, 3])] * 3 + [np.array([3, 7])] * 3
    assert id_switches(perfect, truth) == 0
    assert id_switches(swapped, truth) == 2
    assert same_partition(perfect, truth) and not same_partition(swapped, truth)


def _scenario_from_truth(truth):
    spec = ProblemSpec(len(truth), 2, 2, 1)
    return Scenario(spec, tuple(np.array(g) for g in truth), 0.0, 0, 2)


def test_evaluate_examples():
    truth = [np.array([0, 1]), np.array([1, 0]), np.array([0, 1])]
    sc = _scenario_from_truth(truth)
    perfect = evaluate(TrackSet(tuple(truth)), sc)
    assert perfect["accuracy"] == 1.0 and perfect["id_switches"] == 0 and perfect["exact_solution_rate"] == 1.0
    dummy = evaluate(TrackSet(tuple(np.full(2, -1) for _ in truth)), sc)
    assert dummy["accuracy"] == 0.0 and dummy["false_positives"] == 6
    swap = [np.array([0, 1]), np.array([1, 0]), np.array([1, 0])]
    m = evaluate(TrackSet(tuple(swap)), sc)
    assert m["id_switches"] == 2 and m["accuracy"] == pytest.approx(4 / 6)
    with pytest.raises(ParameterError):
        evaluate(TrackSet(tuple(truth[:2])), sc)


def test_assemble_swap_at_boundary_counts_two_switches():
    truth = [np.array([0, 1])] * 8
    first = SegmentResult(0, 0, 5, tuple([np.array([0, 1])] * 5), 0.0, 1.0, 0, None)
    # the second segment disagrees with the first inside the overlap from frame 4 on
    body = [np.array([0, 1])] * 2 + [np.array([1, 0])] * 3
    second = SegmentResult(1, 3, 8, tuple(body), 0.0, 1.0, 0, None)
    ts = assemble([first, second], 8, 2, 3)
    assert id_switches(ts.labels, truth) == 2


def test_repair_makes_state_feasible():
    sc = generate_scenario(2, 3, 0.0, seed=0)
    q, c = build_cost(sc.spec), build_constraints(sc.spec)
    z = repair(np.zeros(sc.spec.num_variables), q, c)
    assert z is not None and not decode(z, sc.spec)[1]


def test_single_frame_track():
    sc = generate_scenario(3, 1, 0.0, seed=0)
    ts = track(sc.spec, TrackConfig(backend="exact"))
    assert sorted(ts.labels[0].tolist()) == [0, 1, 2]


def test_noiseless_track_small():
    sc = generate_scenario(3, 8, 0.0, seed=6)
    ts = track(sc.spec, TrackConfig(reads=64, lagrange_reads=64, sweeps=300))
    m = evaluate(ts, sc)
    assert m["accuracy"] == 1.0 and m["id_switches"] == 0 and m["exact_solution_rate"] == 1.0


def test_segmented_equals_single_problem_when_solved_exactly():
    sc = generate_scenario(2, 6, 0.0, seed=3, max_frame_gap=2)
    cfg = TrackConfig(segment_length=3, overlap=2, backend="exact")
    seg = track(sc.spec, cfg)
    whole = track(sc.spec, TrackConfig(segment_length=6, backend="exact"))
    assert same_partition(seg.labels, whole.labels)
    assert same_partition(seg.labels, sc.ground_truth)


def test_aqc_scale_task_exact_path_recovers_truth():
    sc = generate_scenario(3, 4, 0.2, seed=0)
    res = solve_segment(sc.spec, TrackConfig(backend="exact"))
    assert same_partition(res.labels, sc.ground_truth)
    _, best = best_feasible(sc.spec)
    assert -res.energy == pytest.approx(best, abs=1e-6) or res.multipliers is None


def test_reference_energy_sources():
    sc = generate_scenario(3, 5, 0.6, seed=0, num_real_tracks=3)
    e, src = reference_energy(sc)
    assert src == "exhaustive"
    milp = exact_minimum(build_cost(sc.spec), build_constraints(sc.spec))
    assert milp.energies[0] == pytest.approx(e, abs=1e-6)
    e2, src2 = reference_energy(sc, max_combinations=10)
    assert src2 == "milp" and e2 == pytest.approx(e, abs=1e-6)


def test_sweep_zero_lambda_never_feasible():
    sc = generate_scenario(3, 4, 0.0, seed=1, num_real_tracks=3)
    rep = lambda_sweep(sc, [0.0], reads=256, sweeps=100)
    assert rep.rows[0]["solution_probability"] == 0.0
    # without penalties, over-assignment always lowers the energy below the feasible optimum
    assert rep.rows[0]["best_energy"] < rep.reference_energy


def test_sweep_rejects_bad_arguments():
    sc = generate_scenario(2, 2, 0.0, seed=0)
    with pytest.raises(ParameterError):
        lambda_sweep(sc, [], reads=8)
    with pytest.raises(ParameterError):
        lambda_sweep(sc, [1.0], reads=8, mode="adaptive")


@pytest.mark.slow
def test_fixed_sweep_rises_then_falls():
    sc = generate_scenario(3, 5, 0.6, seed=0, num_real_tracks=3)
    values = [0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0]
    rep = lambda_sweep(sc, values, reads=4096, sweeps=200, seed=0)
    probs = [r["solution_probability"] for r in rep.rows]
    k = int(np.argmax(probs))
    assert 0 < k < len(values) - 1
    assert probs[0] == 0.0 and probs[-1] < probs[k] / 2


def test_sweep_and_track_csv(tmp_path):
    sc = generate_scenario(3, 4, 0.2, seed=0, num_real_tracks=3)
    rep = lambda_sweep(sc, [1.0, 2.0], reads=64, sweeps=50)
    write_sweep_csv([rep], tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "lambda,sigma,reads,solution_probability,best_energy,reference_energy,reference_source"
    assert len(lines) == 3
    ts = track(sc.spec, TrackConfig(reads=32, lagrange_reads=32, sweeps=200))
    write_tracks_csv(ts, tmp_path / "t.csv")
    back = read_tracks_csv(tmp_path / "t.csv")
    assert all(np.array_equal(a, b) for a, b in zip(back, ts.labels))
    write_segments_csv(ts, tmp_path / "g.csv")
    assert (tmp_path / "g.csv").read_text().startswith("segment,start,stop")


def test_truth_assignment_scores_best_when_noiseless():
    sc = generate_scenario(3, 4, 0.0, seed=8)
    q = apply_penalties(build_cost(sc.spec), build_constraints(sc.spec, 1.0))
    truth = sc.truth_assignment()
    assert q.energy(truth.flat()) == pytest.approx(-assignment_score(truth, sc.spec))
