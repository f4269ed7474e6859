"""Command-line entry point: benchmark subcommands, generic config runs,
and mesh statistics.  Progress goes to stderr, tables to stdout, rows
and figures to the output directory."""

import argparse
import os
import sys
import time
from dataclasses import replace

import numpy as np

from octoflow import io, plots
from octoflow.cases import (bubble_init, bubble_spec, l2_error,
                            load_reference, mms_bc, mms_flow_forcing,
                            mms_mesh, mms_params, mms_phase,
                            mms_phase_forcing, mms_state, mms_velocity,
                            rt_fronts, rt_init, rt_spec)
from octoflow.chns import RemeshConfig, Simulation, StepFailure


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


# ── argument handling ──────────────────────────────────────────────────


def _add_common(sp, config_positional=False):
    if config_positional:
        sp.add_argument("config", help="run configuration file")
    else:
        sp.add_argument("--config",
                        help="configuration file; flags take precedence")
    sp.add_argument("--dt", type=float, help="time step")
    sp.add_argument("--t-final", dest="t_final", type=float,
                    help="end time")
    sp.add_argument("--min-level", dest="min_level", type=int,
                    help="coarsest tree level")
    sp.add_argument("--max-level", dest="max_level", type=int,
                    help="finest tree level")
    sp.add_argument("--out-dir", dest="out_dir", help="output directory")
    sp.add_argument("--dim", type=int, choices=(2, 3),
                    help="spatial dimension")
    sp.add_argument("-v", "--verbose", action="count", default=0,
                    help="per-step progress on stderr")


def _build_parser():
    p = argparse.ArgumentParser(
        prog="octoflow",
        description="Adaptive diffuse-interface two-phase flow benchmarks.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("mms",
                        help="manufactured-solution convergence study")
    _add_common(sp)
    sp.add_argument("--h-sweep", dest="h_sweep",
                    help="comma list of cells per side, e.g. 50,75,100")
    sp.add_argument("--dt-sweep", dest="dt_sweep",
                    help="comma list of time steps (fixed mesh)")
    sp.add_argument("--n", type=int, default=150,
                    help="cells per side for --dt-sweep")
    sp.set_defaults(func=cmd_mms)

    sp = sub.add_parser("bubble", help="rising-bubble benchmark")
    _add_common(sp)
    sp.add_argument("--case", type=int, choices=(1, 2),
                    help="parameter set (default 1)")
    sp.add_argument("--cn", type=float, help="interface width")
    sp.set_defaults(func=cmd_bubble)

    sp = sub.add_parser("rt", help="Rayleigh-Taylor benchmark")
    _add_common(sp)
    sp.add_argument("--atwood", type=float,
                    help="Atwood number; sets both phase ratios")
    sp.add_argument("--cn", type=float, help="interface width")
    sp.set_defaults(func=cmd_rt)

    sp = sub.add_parser("run", help="run an arbitrary configuration")
    _add_common(sp, config_positional=True)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("mesh-stats",
                        help="build the initial mesh and report statistics")
    _add_common(sp)
    sp.add_argument("--case", dest="case_name", choices=io.CASES,
                    help="which case's initial mesh")
    sp.set_defaults(func=cmd_mesh_stats)
    return p


def _config_for(args):
    """Config from file plus CLI overrides (CLI > file > defaults)."""
    path = getattr(args, "config", None)
    if path is not None:
        with open(path) as f:
            cfg = io.parse_config(f.read())
    else:
        cfg = io.Config()
    if args.command == "bubble":
        case = getattr(args, "case", None)
        if case is not None:
            cfg = replace(cfg, case=f"bubble{case}")
        elif not cfg.case.startswith("bubble"):
            cfg = replace(cfg, case="bubble1")
    elif args.command in ("mms", "rt"):
        cfg = replace(cfg, case=args.command)
    elif args.command == "mesh-stats":
        case = getattr(args, "case_name", None)
        if case is not None:
            cfg = replace(cfg, case=case)
    for name in ("dt", "t_final", "min_level", "max_level", "out_dir",
                 "dim"):
        val = getattr(args, name, None)
        if val is not None:
            cfg = replace(cfg, **{name: val})
    overrides = dict(cfg.params)
    if getattr(args, "cn", None) is not None:
        overrides["cn"] = args.cn
    if getattr(args, "atwood", None) is not None:
        r = (1.0 - args.atwood) / (1.0 + args.atwood)
        overrides["rho_minus"] = r
        overrides["eta_minus"] = r
    cfg = replace(cfg, params=overrides)
    io._validate(cfg)
    return cfg


def main(argv=None):
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        cfg = _config_for(args)
    except io.ConfigError as exc:
        _log(f"config error: {exc}")
        return 2
    except OSError as exc:
        _log(f"error: {exc}")
        return 2
    return args.func(args, cfg)


# ── shared run driver ──────────────────────────────────────────────────


def _drive(sim, cfg, dt, t_final, verbose, label, extra=None):
    """Run to t_final writing CSV, VTK frames, and checkpoints under
    cfg.out_dir; returns (exit_code, rows).  extra(row) runs after each
    row for per-case trackers.  A step failure writes failure.ckpt and
    exits 1."""
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    io.write_vtk(sim.mesh, sim.state, os.path.join(out, "frame_000000.vtk"))
    rows = []
    t0 = time.time()
    with io.DiagnosticsWriter(os.path.join(out, cfg.csv_path),
                              sim.mesh.dim) as w:
        def on_row(row):
            rows.append(row)
            w.write(row)
            if extra is not None:
                extra(row)
            n = len(rows)
            if n % cfg.vtk_interval == 0:
                io.write_vtk(sim.mesh, sim.state,
                             os.path.join(out, f"frame_{n:06d}.vtk"))
            if n % cfg.checkpoint_interval == 0:
                io.checkpoint_save(sim.mesh, sim.state,
                                   os.path.join(out,
                                                f"checkpoint_{n:06d}.ckpt"))
            if verbose or n % 25 == 0:
                _log(f"[{label}] step {n} t={row.t:.6g} "
                     f"E={row.e_total:.9g} drift={row.total_phi_drift:.3g}")

        try:
            sim.run(t_final, dt, on_row)
        except StepFailure as exc:
            path = os.path.join(out, "failure.ckpt")
            io.checkpoint_save(sim.mesh, exc.state, path)
            _log(f"[{label}] aborted: {exc}; checkpoint written to {path}")
            return 1, rows
    io.write_vtk(sim.mesh, sim.state, os.path.join(out, "frame_final.vtk"))
    io.checkpoint_save(sim.mesh, sim.state,
                       os.path.join(out, "checkpoint_final.ckpt"))
    _log(f"[{label}] done: {len(rows)} rows, t={sim.state.t:.6g}, "
         f"{time.time() - t0:.1f}s")
    return 0, rows


def _report_figures(sim, cfg, rows):
    out = cfg.out_dir
    cols = io.read_diagnostics(os.path.join(out, cfg.csv_path))
    plots.plot_diagnostics(cols, os.path.join(out, "diagnostics.png"))
    if sim.mesh.dim == 2:
        plots.plot_phase_field(sim.mesh, sim.state.phi,
                               os.path.join(out, "phase_final.png"),
                               t=sim.state.t)


# ── subcommands ────────────────────────────────────────────────────────


def cmd_bubble(args, cfg):
    case = 2 if cfg.case == "bubble2" else 1
    spec = bubble_spec(case, cn=cfg.params.get("cn", 5e-3),
                       max_level=cfg.max_level, min_level=cfg.min_level,
                       dim=cfg.dim)
    spec = replace(spec,
                   params=io.apply_param_overrides(spec.params, cfg.params))
    mesh, state = bubble_init(spec, dim=cfg.dim)
    _log(f"[{cfg.case}] {mesh.nelems} elements, {mesh.nnodes} nodes, "
         f"levels {spec.min_level}..{spec.max_level}")
    sim = Simulation(mesh, spec.params, state, bc=spec.bc,
                     settings=io.solve_settings(cfg),
                     remesh=RemeshConfig(every=cfg.remesh_interval,
                                         min_level=spec.min_level,
                                         max_level=spec.max_level,
                                         band=spec.band,
                                         carve_fn=spec.carve_fn))
    dt = cfg.dt if cfg.dt > 0 else spec.dt
    t_final = cfg.t_final if cfg.t_final > 0 else spec.t_final
    code, rows = _drive(sim, cfg, dt, t_final, args.verbose, cfg.case)
    if rows:
        t = np.array([r.t for r in rows])
        yc = np.array([r.centroid[1] for r in rows])
        ref = load_reference("hysing_centroid.csv") if case == 1 else None
        plots.plot_centroid(t, yc, os.path.join(cfg.out_dir, "centroid.png"),
                            ref=ref)
        _report_figures(sim, cfg, rows)
    return code


def cmd_rt(args, cfg):
    spec = rt_spec(cn=cfg.params.get("cn", 0.01), max_level=cfg.max_level,
                   min_level=cfg.min_level, dim=cfg.dim)
    spec = replace(spec,
                   params=io.apply_param_overrides(spec.params, cfg.params))
    mesh, state = rt_init(spec, dim=cfg.dim)
    _log(f"[rt] {mesh.nelems} elements, {mesh.nnodes} nodes, "
         f"levels {spec.min_level}..{spec.max_level}")
    at = ((1.0 - spec.params.rho_minus) / (1.0 + spec.params.rho_minus))
    sqat = np.sqrt(at)
    sim = Simulation(mesh, spec.params, state, bc=spec.bc,
                     settings=io.solve_settings(cfg),
                     remesh=RemeshConfig(every=cfg.remesh_interval,
                                         min_level=spec.min_level,
                                         max_level=spec.max_level,
                                         band=spec.band,
                                         carve_fn=spec.carve_fn))
    dt = cfg.dt if cfg.dt > 0 else spec.dt
    t_final = cfg.t_final if cfg.t_final > 0 else spec.t_final
    fronts = [(0.0,) + rt_fronts(mesh, state.phi)]

    def track_fronts(row):
        fronts.append((row.t * sqat,) + rt_fronts(sim.mesh, sim.state.phi))

    code, rows = _drive(sim, cfg, dt, t_final, args.verbose, "rt",
                        extra=track_fronts)
    fr = np.array(fronts)
    with open(os.path.join(cfg.out_dir, "fronts.csv"), "w") as f:
        f.write("t_prime,top,bottom\n")
        for tp, hi, lo in fr:
            f.write(f"{tp:.17g},{hi:.17g},{lo:.17g}\n")
    ref = load_reference("rt_fronts_at05.csv") if abs(at - 0.5) < 1e-9 \
        else None
    plots.plot_fronts(fr[:, 0], fr[:, 1], fr[:, 2],
                      os.path.join(cfg.out_dir, "fronts.png"), ref=ref)
    if rows:
        _report_figures(sim, cfg, rows)
    return code


def _run_mms_single(args, cfg):
    prm = io.apply_param_overrides(mms_params(), cfg.params)
    mesh = mms_mesh(2 ** cfg.max_level)
    _log(f"[mms] {mesh.nelems} elements, {mesh.nnodes} nodes")
    sim = Simulation(mesh, prm, mms_state(mesh, 0.0), bc=mms_bc(),
                     forcing=mms_flow_forcing(prm),
                     phase_forcing=mms_phase_forcing(prm),
                     settings=io.solve_settings(cfg))
    dt = cfg.dt if cfg.dt > 0 else 1e-3
    t_final = cfg.t_final if cfg.t_final > 0 else 0.2
    code, rows = _drive(sim, cfg, dt, t_final, args.verbose, "mms")
    if code == 0:
        tf = sim.state.t
        for name, err in _mms_errors(mesh, sim.state, tf).items():
            print(f"{name},{err:.6e}")
    if rows:
        _report_figures(sim, cfg, rows)
    return code


def cmd_run(args, cfg):
    if cfg.case == "mms":
        return _run_mms_single(args, cfg)
    if cfg.case in ("bubble1", "bubble2"):
        return cmd_bubble(args, cfg)
    return cmd_rt(args, cfg)


# ── manufactured-solution study ────────────────────────────────────────


def _mms_errors(mesh, state, t):
    return {
        "v1": l2_error(mesh, state.v[:, 0],
                       lambda p: mms_velocity(p, t)[:, 0]),
        "v2": l2_error(mesh, state.v[:, 1],
                       lambda p: mms_velocity(p, t)[:, 1]),
        "phi": l2_error(mesh, state.phi, lambda p: mms_phase(p, t)),
    }


def mms_study(ns_or_dts, dt=None, n=None, t_end=0.2, settings=None,
              progress=None):
    """Convergence sweep of the manufactured solution.

    Pass dt= for a spatial sweep over cells-per-side ns_or_dts, or n=
    for a temporal sweep over the listed time steps.  Returns (xs,
    errors) where xs is h or dt and errors maps v1/v2/phi to arrays.
    """
    if (dt is None) == (n is None):
        raise ValueError("exactly one of dt= or n= must be given")
    prm = mms_params()
    bc = mms_bc()
    ff, pf = mms_flow_forcing(prm), mms_phase_forcing(prm)
    xs, errs = [], {"v1": [], "v2": [], "phi": []}
    for item in ns_or_dts:
        mesh = mms_mesh(int(n) if n is not None else int(item))
        step = float(dt) if dt is not None else float(item)
        sim = Simulation(mesh, prm, mms_state(mesh, 0.0), bc=bc,
                         forcing=ff, phase_forcing=pf, settings=settings)
        sim.run(t_end, step)
        xs.append(step if n is not None else 1.0 / item)
        for name, err in _mms_errors(mesh, sim.state, sim.state.t).items():
            errs[name].append(err)
        if progress is not None:
            progress(item, errs)
    return np.array(xs), {k: np.array(v) for k, v in errs.items()}


def rate_table(xs, errors, xlabel):
    """Delimited error/rate table; rates are successive log slopes."""
    names = list(errors)
    head = [xlabel]
    for nm in names:
        head += [f"{nm}_err", f"{nm}_rate"]
    lines = [",".join(head)]
    for i, x in enumerate(xs):
        cells = [f"{x:.8g}"]
        for nm in names:
            err = errors[nm][i]
            if i == 0:
                rate = float("nan")
            else:
                rate = (np.log(errors[nm][i - 1] / err)
                        / np.log(xs[i - 1] / x))
            cells += [f"{err:.6e}", f"{rate:.3f}"]
        lines.append(",".join(cells))
    return "\n".join(lines)


def cmd_mms(args, cfg):
    settings = io.solve_settings(cfg)
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    t0 = time.time()

    def progress(item, errs):
        _log(f"[mms] {item}: phi_err={errs['phi'][-1]:.3e} "
             f"({time.time() - t0:.1f}s)")

    try:
        if args.dt_sweep:
            dts = [float(s) for s in args.dt_sweep.split(",")]
            t_end = cfg.t_final if cfg.t_final > 0 else float(np.pi)
            xs, errors = mms_study(dts, n=args.n, t_end=t_end,
                                   settings=settings, progress=progress)
            xlabel = "dt"
        else:
            ns = [int(s) for s in (args.h_sweep or "25,50").split(",")]
            dt = cfg.dt if cfg.dt > 0 else 1e-3
            t_end = cfg.t_final if cfg.t_final > 0 else 0.2
            xs, errors = mms_study(ns, dt=dt, t_end=t_end,
                                   settings=settings, progress=progress)
            xlabel = "h"
    except StepFailure as exc:
        _log(f"[mms] aborted: {exc}")
        return 1
    table = rate_table(xs, errors, xlabel)
    print(table)
    with open(os.path.join(out, "mms_rates.csv"), "w") as f:
        f.write(table + "\n")
    plots.plot_mms_convergence(
        xs, errors, os.path.join(out, "mms_convergence.png"),
        order=2.0)
    return 0


# ── mesh statistics ────────────────────────────────────────────────────


def cmd_mesh_stats(args, cfg):
    if cfg.case == "mms":
        mesh = mms_mesh(2 ** cfg.max_level)
    elif cfg.case in ("bubble1", "bubble2"):
        spec = bubble_spec(2 if cfg.case == "bubble2" else 1,
                           cn=cfg.params.get("cn", 5e-3),
                           max_level=cfg.max_level,
                           min_level=cfg.min_level, dim=cfg.dim)
        mesh, _ = bubble_init(spec, dim=cfg.dim)
    else:
        spec = rt_spec(cn=cfg.params.get("cn", 0.01),
                       max_level=cfg.max_level, min_level=cfg.min_level,
                       dim=cfg.dim)
        mesh, _ = rt_init(spec, dim=cfg.dim)
    levels = mesh.elem_level
    print(f"case,{cfg.case}")
    print(f"dim,{mesh.dim}")
    print(f"elements,{mesh.nelems}")
    print(f"nodes,{mesh.nnodes}")
    print(f"hanging,{len(mesh.hanging)}")
    print(f"h_min,{mesh.elem_h().min():.8g}")
    print(f"h_max,{mesh.elem_h().max():.8g}")
    for lvl in range(int(levels.min()), int(levels.max()) + 1):
        print(f"level_{lvl},{int((levels == lvl).sum())}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
