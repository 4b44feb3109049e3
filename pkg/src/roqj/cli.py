"""Configuration-driven command line: run engines, run oracles, compare, probe.

Exit codes: 0 ok, 1 usage, 2 validation, 3 acceptance-comparison failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import engines
from .analysis import trace_distance
from .config import (
    ConfigError,
    build_initial_state,
    build_model,
    build_observables,
    build_run_config,
    load_config,
)
from .csvio import SchemaError, read_series_csv, write_series_csv
from .oracle import integrate_master_equation, p_divisibility_probe

__all__ = ["main"]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="roqj", description="Quantum-jump unravelling of time-local master equations")
    sub = p.add_subparsers(dest="command")

    def add_common(sp):
        sp.add_argument("--config", required=True, help="key = value configuration file")
        sp.add_argument("--out-dir", default=".", help="directory for output files")

    runp = sub.add_parser("run", help="run a trajectory simulation and write CSV output")
    add_common(runp)
    runp.add_argument("--seed", type=int, help="override run.seed")
    runp.add_argument("--threads", type=int, help="worker count (results do not depend on it)")
    runp.add_argument("--engine", choices=engines.ENGINES, help="override run.engine")
    runp.add_argument("--dt", type=float, help="override run.dt")
    runp.add_argument("--n-traj", type=int, help="override run.n_traj")

    exactp = sub.add_parser("exact", help="integrate the master equation exactly on the run grid")
    add_common(exactp)
    exactp.add_argument("--dt-exact", type=float, help="integrator step (default run.dt / 10)")

    cmpp = sub.add_parser("compare", help="compare a simulation CSV against an exact CSV")
    cmpp.add_argument("sim", help="simulation CSV")
    cmpp.add_argument("exact", help="exact/reference CSV")
    cmpp.add_argument("--config", help="config with compare.* thresholds")

    probep = sub.add_parser("probe", help="sample the P-divisibility criterion on a time grid")
    add_common(probep)
    probep.add_argument("--seed", type=int, help="override probe.seed")
    return p


def _echo_for_run(cfg, overrides):
    model, model_echo = build_model(cfg)
    rc, run_echo = build_run_config(cfg, overrides)
    psi0, init_echo = build_initial_state(cfg, model.n)
    obs, obs_echo = build_observables(cfg, model.n)
    rc.observables = obs
    echo = {}
    for part in (model_echo, init_echo, obs_echo, run_echo):
        echo.update(part)
    return model, rc, psi0, echo


def _write_realizations(out_dir, result, echo):
    paths = []
    for r, states in enumerate(result.realizations):
        rhos = np.einsum("ti,tj->tij", states, states.conj())
        names = result.observable_names
        path = Path(out_dir) / f"realization_{r}.csv"
        meta = dict(echo)
        meta["realization.index"] = str(r)
        if names:
            means = np.column_stack([_obs_on_projectors(rhos, name) for name in names])
            write_series_csv(path, meta, result.times, rhos, names, means, np.zeros_like(means))
        else:
            write_series_csv(path, meta, result.times, rhos)
        paths.append(path)
    return paths


def _obs_on_projectors(rhos, name):
    # observable columns are linear in rho, so they can be read back off of it
    parts = name.split("_")
    if parts[0] == "pop":
        i = int(parts[1])
        return rhos[:, i, i].real
    kind, i, j = parts[0], int(parts[2]), int(parts[3])
    entry = rhos[:, i, j]
    return entry.real if kind == "re" else entry.imag


def _write_events(path, meta, records):
    lines = [f"# {k} = {v}" for k, v in sorted(meta.items())]
    lines.append("t,channel,kind,source_class,target_class,count")
    for rec_idx, rec in enumerate(records):
        for ev in rec.events:
            lines.append(
                f"{ev.time:.17g},{ev.channel},{ev.kind},"
                f"{'' if ev.source_class is None else ev.source_class},"
                f"{'' if ev.target_class is None else ev.target_class},{ev.count}"
            )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    overrides = {
        "seed": args.seed,
        "engine": args.engine,
        "dt": args.dt,
        "n_traj": args.n_traj,
        "threads": args.threads,
    }
    model, rc, psi0, echo = _echo_for_run(cfg, overrides)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    result = engines.run(model, psi0, rc, config_echo=echo)
    wall = time.perf_counter() - t0
    states_path = out_dir / cfg.get("output.states", "sim.csv")
    write_series_csv(
        states_path,
        echo,
        result.times,
        result.averaged_states,
        result.observable_names,
        result.observable_means,
        result.observable_stderr,
    )
    written = [states_path]
    written += _write_realizations(out_dir, result, echo)
    if cfg.get("output.events"):
        events_path = out_dir / cfg["output.events"]
        _write_events(events_path, echo, result.records)
        written.append(events_path)
    jumps = {kind: int(h.sum()) for kind, h in result.jump_histogram.items()}
    leak_pct = (
        100.0 * result.leaked_weight / result.total_jump_weight
        if result.total_jump_weight > 0
        else 0.0
    )
    print(f"engine {rc.engine}: {rc.n_traj} trajectories, {rc.n_steps()} steps of dt = {rc.dt:g}")
    print(f"jumps: {jumps}")
    print(f"leaked weight: {result.leaked_weight:.6g} ({leak_pct:.3f}% of total jump weight)")
    print(f"wall time: {wall:.2f} s")
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_exact(args) -> int:
    cfg = load_config(args.config)
    model, rc, psi0, echo = _echo_for_run(cfg, {})
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dt_exact = args.dt_exact or float(cfg.get("exact.dt_exact", rc.dt / 10.0))
    sample_times = np.array([k * rc.dt for k in rc.sample_indices()])
    rho0 = np.outer(psi0, psi0.conj())
    t0 = time.perf_counter()
    times, rhos = integrate_master_equation(model, rho0, rc.t_max, dt_exact, sample_times)
    wall = time.perf_counter() - t0
    means = np.column_stack([[o.of_rho(r) for r in rhos] for o in rc.observables]) if rc.observables else np.zeros((len(times), 0))
    meta = dict(echo)
    meta["exact.dt_exact"] = format(dt_exact, ".17g")
    path = out_dir / cfg.get("output.exact", "exact.csv")
    write_series_csv(
        path,
        meta,
        times,
        rhos,
        [o.name for o in rc.observables],
        means,
        np.zeros_like(means),
    )
    print(f"integrated {len(times)} output times with dt_exact = {dt_exact:g}")
    print(f"wall time: {wall:.2f} s")
    print(f"wrote {path}")
    return 0


def cmd_compare(args) -> int:
    cfg = load_config(args.config) if args.config else {}
    max_z = float(cfg.get("compare.max_z", 3.0))
    abs_floor = float(cfg.get("compare.abs_floor", 0.0))
    max_td = cfg.get("compare.max_trace_distance")
    max_td = float(max_td) if max_td is not None else None

    _, t_sim, rho_sim, obs_sim = read_series_csv(args.sim)
    _, t_exact, rho_exact, obs_exact = read_series_csv(args.exact)
    if len(t_sim) != len(t_exact) or np.max(np.abs(t_sim - t_exact)) > 1e-9:
        raise ConfigError("compare", "time grids of the two files are not aligned")

    failed = False
    td = np.array([trace_distance(a, b) for a, b in zip(rho_sim, rho_exact)])
    print(f"trace distance: max {td.max():.6g} at t = {t_sim[int(np.argmax(td))]:g}")
    if max_td is not None and td.max() > max_td:
        print(f"FAIL: trace distance exceeds compare.max_trace_distance = {max_td:g}")
        failed = True
    common = [name for name in obs_sim if name in obs_exact]
    for name in common:
        mean_s, se_s = obs_sim[name]
        mean_e, se_e = obs_exact[name]
        delta = np.abs(mean_s - mean_e)
        se = np.sqrt(se_s**2 + se_e**2)
        allowed = np.maximum(max_z * se, abs_floor)
        worst = int(np.argmax(delta - allowed))
        ok = bool(np.all(delta <= allowed))
        finite = se > 0
        max_z = float(np.max(delta[finite] / se[finite])) if np.any(finite) else 0.0
        print(
            f"obs {name}: max |delta| = {delta.max():.6g}, max z = {max_z:.3g} "
            f"{'ok' if ok else f'FAIL at t = {t_sim[worst]:g}'}"
        )
        if not ok:
            failed = True
    return 3 if failed else 0


def cmd_probe(args) -> int:
    cfg = load_config(args.config)
    model, _ = build_model(cfg)
    grid_spec = cfg.get("probe.t_grid", "0:10:21")
    if ":" in grid_spec:
        try:
            start, stop, num = grid_spec.split(":")
            t_grid = np.linspace(float(start), float(stop), int(num))
        except ValueError as exc:
            raise ConfigError("probe.t_grid", f"expected start:stop:num, got {grid_spec!r}") from exc
    else:
        t_grid = np.array([float(v) for v in grid_spec.split()])
    n_states = int(cfg.get("probe.n_states", 100))
    seed = args.seed if args.seed is not None else int(cfg.get("probe.seed", 0))
    report = p_divisibility_probe(model, t_grid, n_states=n_states, seed=seed)
    for t, me, ok in zip(report.times, report.min_eigenvalues, report.consistent):
        print(f"t = {t:8.4f}  min_eigenvalue = {me: .6e}  {'consistent' if ok else 'INCONSISTENT'}")
    n_bad = int(np.sum(~report.consistent))
    print(f"{n_bad} of {len(report.times)} grid times inconsistent with P-divisibility")
    if cfg.get("output.probe"):
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / cfg["output.probe"]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("t,min_eigenvalue,consistent\n")
            for t, me, ok in zip(report.times, report.min_eigenvalues, report.consistent):
                fh.write(f"{t:.17g},{me:.17g},{int(ok)}\n")
        print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise _UsageError("a command is required (run, exact, compare, probe)")
        handler = {
            "run": cmd_run,
            "exact": cmd_exact,
            "compare": cmd_compare,
            "probe": cmd_probe,
        }[args.command]
        return handler(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (
        ValueError,
        engines.PDivisibilityError,
        engines.NegativeRateError,
        engines.UnmatchedChannelError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
