"""Command-line front end.

Exit codes: 0 success, 2 parameter error, 3 IO error, 4 solver failure.
"""
from __future__ import annotations

import os
import sys
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from . import _accel
from .errors import FormatError, ParameterError, QmotError, SolverError
from .lagrangian import LagrangeConfig, fallback_multiplier, optimize_multipliers, penalized
from .model import decode, dump_json, load_json, problem_from_dict
from .pipeline import (
    TrackConfig,
    TrackSet,
    _solver,
    evaluate,
    feasible_mask,
    generate_scenario,
    lambda_sweep,
    scenario_from_dict,
    scenario_to_dict,
    track,
    write_segments_csv,
    write_sweep_csv,
    write_tracks_csv,
)
from .plots import line_plot, scatter_plot
from .qubo import (
    IsingProblem,
    apply_penalties,
    build_constraints,
    build_cost,
    load_qubo,
    regularize,
    save_qubo,
    to_binary,
    to_spin,
)
from .sampler import (
    AnnealSchedule,
    anneal,
    brute_force,
    energy_histogram,
    exact_minimum,
    solution_probability,
    write_histogram_csv,
    write_samples_csv,
)

OUTPUT_ENV = "QMOT_OUTPUT_DIR"
EXIT_HELP = "Exit codes: 0 success, 2 parameter error, 3 IO error, 4 solver failure (no feasible sample)."


def _out_dir(path: str | None) -> Path:
    out = Path(path or os.environ.get(OUTPUT_ENV) or ".")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    return out


def _echo_config(out: Path, command: str, params: dict) -> None:
    clean = {k: (list(v) if isinstance(v, tuple) else v) for k, v in params.items()}
    dump_json({"command": command, **clean}, out / "config.json")


def _load_instance(path: str) -> tuple:
    doc = load_json(path)
    kind = doc.get("kind")
    if kind == "scenario":
        sc = scenario_from_dict(doc)
        return sc.spec, sc
    if kind in (None, "problem"):
        return problem_from_dict(doc), None
    raise FormatError(f"{path}: expected a scenario or problem file, got kind {kind!r}")


def lagrange_options(f):
    opts = [
        click.option("--lambda", "lam", type=float, default=None, help="Uniform penalty multiplier."),
        click.option("--optimize-lambda", is_flag=True, help="Estimate per-constraint multipliers."),
        click.option("--lambda-base", type=float, default=0.5, show_default=True),
        click.option("--lambda-offset", type=float, default=0.0, show_default=True),
        click.option("--epsilon", type=float, default=0.05, show_default=True),
        click.option("--energy-window", type=float, default=0.5, show_default=True),
        click.option("--max-iterations", type=int, default=20, show_default=True),
        click.option("--regularize", "reg", type=float, default=None, help="Diagonal regularization constant e."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def schedule_options(f):
    for opt in reversed([
        click.option("--reads", type=int, default=1024, show_default=True),
        click.option("--sweeps", type=int, default=1000, show_default=True),
        click.option("--seed", type=int, default=0, show_default=True),
    ]):
        f = opt(f)
    return f


def _penalized_qubo(spec, lam, optimize_lambda, lambda_base, lambda_offset, epsilon, energy_window,
                    max_iterations, reg, reads, sweeps, seed):
    cost = build_cost(spec)
    cons = build_constraints(spec)
    state = None
    if optimize_lambda:
        cfg = LagrangeConfig(lambda_base, lambda_offset, epsilon, energy_window, max_iterations)
        state = optimize_multipliers(cost, cons, _solver("anneal", reads, sweeps, seed), cfg)
        if state.converged:
            q = penalized(cost, cons, state)
        else:
            q = apply_penalties(cost, cons.with_multipliers(fallback_multiplier(cost)))
    else:
        if lam is None:
            raise ParameterError("give --lambda or --optimize-lambda")
        if lam < 0:
            raise ParameterError("--lambda must be non-negative")
        q = apply_penalties(cost, cons.with_multipliers(lam))
    if reg is not None:
        q = regularize(q, spec, reg)
    return q, cons, state


@click.group(epilog=EXIT_HELP)
@click.option("--threads", type=int, default=None, help="Cap on numba worker threads.")
def cli(threads):
    """QUBO multi-object tracking: build, solve, sweep and track."""
    _accel.set_threads(threads)


@cli.command(epilog=EXIT_HELP)
@click.option("--objects", type=int, default=3, show_default=True)
@click.option("--frames", type=int, default=5, show_default=True)
@click.option("--sigma", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--max-frame-gap", type=int, default=3, show_default=True)
@click.option("--tracks", type=int, default=None, help="Real tracks (default: number of objects).")
@click.option("--beta", type=float, default=-0.2, show_default=True)
@click.option("--shuffle/--no-shuffle", default=True, show_default=True)
@click.option("--out-dir", default=None, help=f"Output directory (default ${OUTPUT_ENV} or .).")
@click.option("--name", default="scenario.json", show_default=True)
def synth(objects, frames, sigma, seed, max_frame_gap, tracks, beta, shuffle, out_dir, name):
    """Generate a synthetic scenario file."""
    out = _out_dir(out_dir)
    sc = generate_scenario(objects, frames, sigma, seed, shuffle, max_frame_gap, tracks, beta)
    dump_json(scenario_to_dict(sc), out / name)
    _echo_config(out, "synth", dict(objects=objects, frames=frames, sigma=sigma, seed=seed,
                                    max_frame_gap=max_frame_gap, tracks=tracks, beta=beta,
                                    shuffle=shuffle, name=name))
    click.echo(f"scenario: objects={objects} frames={frames} sigma={sigma:g} seed={seed} "
               f"variables={sc.spec.num_variables} -> {out / name}")


@cli.command(epilog=EXIT_HELP)
@click.argument("input_path", type=click.Path())
@lagrange_options
@schedule_options
@click.option("--form", type=click.Choice(["binary", "spin"]), default="binary", show_default=True)
@click.option("--out-dir", default=None)
@click.option("--name", default="qubo.json", show_default=True)
def build(input_path, lam, optimize_lambda, lambda_base, lambda_offset, epsilon, energy_window,
          max_iterations, reg, reads, sweeps, seed, form, out_dir, name):
    """Assemble the penalized QUBO of a scenario or problem file."""
    out = _out_dir(out_dir)
    spec, _ = _load_instance(input_path)
    q, _, state = _penalized_qubo(spec, lam, optimize_lambda, lambda_base, lambda_offset, epsilon,
                                  energy_window, max_iterations, reg, reads, sweeps, seed)
    save_qubo(to_spin(q) if form == "spin" else q, out / name)
    if state is not None:
        dump_json(state.to_dict(), out / "multipliers.json")
    _echo_config(out, "build", dict(input=str(input_path), **{"lambda": lam}, optimize_lambda=optimize_lambda,
                                    lambda_base=lambda_base, lambda_offset=lambda_offset, epsilon=epsilon,
                                    energy_window=energy_window, max_iterations=max_iterations,
                                    regularize=reg, reads=reads, sweeps=sweeps, seed=seed, form=form, name=name))
    msg = f"qubo: n={q.n} terms={len(q.quadratic)} form={form} -> {out / name}"
    if state is not None:
        msg += f" (multipliers converged={state.converged} after {state.iteration} iterations)"
    click.echo(msg)


@cli.command(epilog=EXIT_HELP)
@click.argument("input_path", type=click.Path())
@click.option("--qubo", "qubo_path", type=click.Path(), default=None, help="Prebuilt QUBO to sample.")
@lagrange_options
@schedule_options
@click.option("--backend", type=click.Choice(["anneal", "brute", "exact"]), default="anneal", show_default=True)
@click.option("--bin-width", type=float, default=1.0, show_default=True)
@click.option("--out-dir", default=None)
def solve(input_path, qubo_path, lam, optimize_lambda, lambda_base, lambda_offset, epsilon, energy_window,
          max_iterations, reg, reads, sweeps, seed, backend, bin_width, out_dir):
    """Sample one QUBO and decode the best feasible state into tracks."""
    out = _out_dir(out_dir)
    spec, scenario = _load_instance(input_path)
    cons = build_constraints(spec)
    if qubo_path is not None:
        q = load_qubo(qubo_path)
        if isinstance(q, IsingProblem):
            q = to_binary(q)
        if q.n != spec.num_variables:
            raise ParameterError(f"QUBO has {q.n} variables, problem needs {spec.num_variables}")
    else:
        q, cons, _ = _penalized_qubo(spec, lam, optimize_lambda, lambda_base, lambda_offset, epsilon,
                                     energy_window, max_iterations, reg, reads, sweeps, seed)
    if backend == "anneal":
        samples = anneal(q, AnnealSchedule(sweeps=sweeps, reads=reads, seed=seed))
    elif backend == "brute":
        samples = brute_force(q)
    else:
        samples = exact_minimum(q)
    write_samples_csv(samples, out / "samples.csv")
    write_histogram_csv(energy_histogram(samples, bin_width), out / "histogram.csv")
    _echo_config(out, "solve", dict(input=str(input_path), qubo=qubo_path, **{"lambda": lam},
                                    optimize_lambda=optimize_lambda, lambda_base=lambda_base,
                                    lambda_offset=lambda_offset, epsilon=epsilon, energy_window=energy_window,
                                    max_iterations=max_iterations, regularize=reg, reads=reads, sweeps=sweeps,
                                    seed=seed, backend=backend, bin_width=bin_width))
    ok = feasible_mask(samples, cons)
    if not ok.any():
        raise SolverError("no feasible sample; raise --reads or the multipliers")
    k = int(np.argmax(ok))
    assignment, _ = decode(samples.states[k], spec)
    tracks = TrackSet(tuple(assignment.labels(spec)))
    write_tracks_csv(tracks, out / "tracks.csv")
    prob = solution_probability(samples, float(samples.energies[k]), 1e-9, ok)
    click.echo(f"best feasible energy {samples.energies[k]:.6g} in {prob:.2%} of {samples.num_reads} reads")
    if scenario is not None:
        metrics = evaluate(tracks, scenario)
        metrics.update(best_feasible_energy=float(samples.energies[k]), solution_probability=prob)
        dump_json(metrics, out / "metrics.json")
        click.echo(f"accuracy {metrics['accuracy']:.3f}, id switches {metrics['id_switches']}")


def _parse_values(spec: str) -> list[float]:
    spec = spec.strip()
    if not spec:
        raise ParameterError("empty value range")
    if ":" in spec:
        parts = [float(p) for p in spec.split(":")]
        if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
            raise ParameterError("range must be start:stop:step with step > 0 and stop >= start")
        start, stop, step = parts
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + k * step, 12) for k in range(count)]
    vals = [float(v) for v in spec.split(",") if v.strip()]
    if not vals:
        raise ParameterError("empty value list")
    return vals


@cli.command(epilog=EXIT_HELP)
@click.argument("input_path", type=click.Path(), required=False)
@click.option("--mode", type=click.Choice(["fixed", "optimized"]), default="fixed", show_default=True)
@click.option("--values", "values_spec", default="2:5:0.5", show_default=True,
              help="start:stop:step or comma list of lambda (fixed) or lambda_off (optimized).")
@click.option("--objects", type=int, default=3, show_default=True)
@click.option("--frames", type=int, default=5, show_default=True)
@click.option("--sigma", "sigmas", type=float, multiple=True, help="Noise level(s); repeat for several.")
@click.option("--scenarios", type=int, default=1, show_default=True, help="Scenarios per noise level.")
@click.option("--max-frame-gap", type=int, default=3, show_default=True)
@click.option("--lambda-base", type=float, default=0.5, show_default=True)
@click.option("--lagrange-reads", type=int, default=1024, show_default=True)
@click.option("--reads", type=int, default=4096, show_default=True)
@click.option("--sweeps", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--bin-width", type=float, default=1.0, show_default=True)
@click.option("--plot/--no-plot", default=True, show_default=True)
@click.option("--out-dir", default=None)
def sweep(input_path, mode, values_spec, objects, frames, sigmas, scenarios, max_frame_gap, lambda_base,
          lagrange_reads, reads, sweeps, seed, bin_width, plot, out_dir):
    """Solution probability over a multiplier range (fixed lambda or optimized lambda_off)."""
    values = _parse_values(values_spec)
    out = _out_dir(out_dir)
    if input_path:
        spec, sc = _load_instance(input_path)
        if sc is None:
            raise ParameterError("sweep needs a scenario file (ground truth defines the noise level)")
        cases = [sc]
    else:
        cases = [generate_scenario(objects, frames, s, seed + 1000 * k, max_frame_gap=max_frame_gap)
                 for s in (sigmas or (0.6,)) for k in range(scenarios)]
    reports = [lambda_sweep(sc, values, reads, mode, sweeps, seed, LagrangeConfig(lambda_base=lambda_base),
                            lagrange_reads) for sc in cases]
    write_sweep_csv(reports, out / "sweep.csv")
    with open(out / "energies.csv", "w") as fh:
        fh.write("value,sigma,scenario_seed,energy,multiplicity\n")
        for sc, rep in zip(cases, reports):
            for v, ss in zip(values, rep.samples):
                for _, e, c in ss.records():
                    fh.write(f"{v:.12g},{sc.sigma:.12g},{sc.seed},{e:.12g},{c}\n")
    _echo_config(out, "sweep", dict(input=input_path, mode=mode, values=values, objects=objects, frames=frames,
                                    sigmas=list(sigmas), scenarios=scenarios, max_frame_gap=max_frame_gap,
                                    lambda_base=lambda_base, lagrange_reads=lagrange_reads, reads=reads,
                                    sweeps=sweeps, seed=seed, bin_width=bin_width))
    label = "lambda_off" if mode == "optimized" else "lambda"
    if plot:
        series = {f"sigma={sc.sigma:g} seed={sc.seed}": (values, [r["solution_probability"] for r in rep.rows])
                  for sc, rep in zip(cases, reports)}
        line_plot(series, out / "sweep_probability.svg", label, "solution probability",
                  f"{mode} multipliers", ylim=(0.0, 1.0))
        rep = reports[0]
        xs, ys, ws = [], [], []
        for v, ss in zip(values, rep.samples):
            for lower, count in energy_histogram(ss, bin_width):
                xs.append(v)
                ys.append(lower)
                ws.append(count)
        scatter_plot(xs, ys, out / "sweep_energy.svg", ws, label, "energy", f"sigma={cases[0].sigma:g}")
    for sc, rep in zip(cases, reports):
        v, p = rep.peak()
        click.echo(f"sigma={sc.sigma:g} seed={sc.seed}: peak probability {p:.3f} at {label}={v:g} "
                   f"(reference {rep.reference_energy:.6g}, {rep.reference_source})")


@cli.command("track", epilog=EXIT_HELP)
@click.argument("input_path", type=click.Path())
@click.option("--segment-length", type=int, default=5, show_default=True)
@click.option("--overlap", type=int, default=None, help="Shared frames (default: max frame gap).")
@click.option("--backend", type=click.Choice(["anneal", "brute", "exact"]), default="anneal", show_default=True)
@click.option("--reads", type=int, default=256, show_default=True)
@click.option("--sweeps", type=int, default=1000, show_default=True)
@click.option("--lagrange-reads", type=int, default=256, show_default=True)
@click.option("--lambda-base", type=float, default=0.5, show_default=True)
@click.option("--lambda-offset", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", default=None)
def track_cmd(input_path, segment_length, overlap, backend, reads, sweeps, lagrange_reads, lambda_base,
              lambda_offset, seed, out_dir):
    """Segment, solve, stitch and split a whole sequence."""
    out = _out_dir(out_dir)
    spec, scenario = _load_instance(input_path)
    cfg = TrackConfig(segment_length, overlap, backend, reads, sweeps, lagrange_reads, seed,
                      LagrangeConfig(lambda_base=lambda_base, lambda_offset=lambda_offset))
    tracks = track(spec, cfg)
    write_tracks_csv(tracks, out / "tracks.csv")
    write_segments_csv(tracks, out / "segments.csv")
    params = asdict(cfg)
    params["lagrange"] = asdict(cfg.lagrange)
    _echo_config(out, "track", dict(input=str(input_path), **params))
    n_ids = len({int(t) for lab in tracks.labels for t in lab if t >= 0})
    click.echo(f"{len(tracks.segments)} segments, {n_ids} tracks")
    if scenario is not None:
        metrics = evaluate(tracks, scenario)
        dump_json(metrics, out / "metrics.json")
        click.echo(f"accuracy {metrics['accuracy']:.3f}, id switches {metrics['id_switches']}, "
                   f"exact segments {metrics['exact_solution_rate']:.2f}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="qmot", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 2
    except QmotError as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code
    except OSError as exc:
        name = f" {exc.filename}" if getattr(exc, "filename", None) else ""
        click.echo(f"io error:{name} {exc.strerror or exc}", err=True)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
