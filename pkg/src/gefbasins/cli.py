"""Command line entry point ``gefbasins``.

Exit status is 0 on success, 1 when the pipeline raises a domain error (the
error category and message go to stderr as ``error[category]: message``) or
a verification fails, and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .basins import all_geometries, required_radius, tessellate
from .critical import critical_search, find_zeros, points_to_rows
from .cutoff import partition_from_basins, run_cutoff, verify_cutoff
from .errors import GefError
from .flow import FlowDomain, IntegratorConfig, integrate_gradient_curve
from .gef import sample_gef, sample_manifest
from .io import (atomic_write, load_basin_map, load_partition, read_grid, save_basin_map,
                 save_partition, write_csv, write_json)
from .render import render_svg
from .stats import (KINDS, EnsembleManifest, covariance_test, density_census, run_ensemble,
                    slope_diagnostic, tail_curves, travel_time_test)

__all__ = ["main", "build_parser"]

DEFAULTS = {"seed": 0, "window": 6.0, "pitch": 0.05, "rel_tol": 1e-7, "capture_radius": 1e-3,
            "eps": 0.1, "samples": 100}


def _complex(text):
    try:
        parts = [float(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y but got {text!r}")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected x,y but got {text!r}")
    return complex(parts[0], parts[1])


def _positive(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gefbasins", description=(
        "Gradient-flow basins of Gaussian entire functions: sampling, zeros, critical points, "
        "tessellation, tentacle cut-off and ensemble statistics."))
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="subcommand")

    def common(sp, pitch=False, flow=False, out=True, inp=False):
        sp.add_argument("--seed", type=int, default=DEFAULTS["seed"])
        sp.add_argument("--window", type=_positive, default=DEFAULTS["window"],
                        help="half side of the square window (default 6)")
        sp.add_argument("--center", type=_complex, default=0j, help="window center x,y")
        if pitch:
            sp.add_argument("--pitch", type=_positive, default=DEFAULTS["pitch"])
        if flow:
            sp.add_argument("--rel-tol", type=_positive, default=DEFAULTS["rel_tol"])
            sp.add_argument("--capture-radius", type=_positive, default=DEFAULTS["capture_radius"])
        if out:
            sp.add_argument("--out", required=True)
        if inp:
            sp.add_argument("--in", dest="inp", required=True)

    common(sub.add_parser("sample", help="write the manifest of one sample"))
    common(sub.add_parser("zeros", help="zeros of f in the window (CSV)"))
    common(sub.add_parser("critical", help="zeros, saddles and maxima in the window (CSV)"))
    sp = sub.add_parser("flow", help="gradient curves from given or random starts (CSV)")
    common(sp, flow=True)
    sp.add_argument("--point", type=_complex, action="append", default=[],
                    help="start point x,y (repeatable)")
    sp.add_argument("--samples", type=int, default=0, help="number of random starts")
    sp = sub.add_parser("tessellate", help="basin map of the window (binary grid + sidecar)")
    common(sp, pitch=True, flow=True)
    sp.add_argument("--no-early-exit", action="store_true")
    sp = sub.add_parser("geometry", help="area, diameter and distance per basin (CSV)")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--all", action="store_true", help="include basins touching the window edge")
    sp = sub.add_parser("cutoff", help="cut tentacles off a partition or basin map")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--eps", type=float, default=DEFAULTS["eps"])
    sp = sub.add_parser("ensemble", help="run a Monte Carlo ensemble")
    common(sp, pitch=True, flow=True)
    sp.add_argument("--kind", choices=KINDS, required=True)
    sp.add_argument("--samples", type=int, default=DEFAULTS["samples"])
    sp.add_argument("--starts", type=int, default=500, help="starts per sample (travel_time)")
    sp.add_argument("--no-resume", action="store_true")
    sp = sub.add_parser("render", help="SVG picture of a basin map")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--render-trajectories", type=int, default=0, metavar="N",
                    help="draw N gradient curves from a regular grid of starts")
    sp.add_argument("--interior-only", action="store_true")
    return p


def _config(args):
    return IntegratorConfig(rel_tol=args.rel_tol, capture_radius=args.capture_radius)


def _window(args):
    return (complex(args.center), float(args.window))


def _sample_for(args, window=None):
    window = window or _window(args)
    return sample_gef(args.seed, required_radius(window))


def _sidecar(args, **extra):
    doc = {"command": args.command, "seed": getattr(args, "seed", None)}
    for k in ("window", "pitch", "rel_tol", "capture_radius", "eps", "samples"):
        if hasattr(args, k):
            doc[k] = getattr(args, k)
    if hasattr(args, "center"):
        doc["center"] = [args.center.real, args.center.imag]
    doc.update(extra)
    return doc


def _inside(z, window):
    c, half = window
    d = z - c
    return abs(d.real) < half and abs(d.imag) < half


def cmd_sample(args):
    s = _sample_for(args)
    write_json(args.out, {"sample": sample_manifest(s), **_sidecar(args)})


def cmd_zeros(args):
    win = _window(args)
    s = _sample_for(args)
    zs = [q for q in find_zeros(s, s.valid_radius - 2) if _inside(q.location, win)]
    write_csv(args.out, ["x", "y", "kind", "residual", "hessian_det"], points_to_rows(zs))
    write_json(args.out + ".json", _sidecar(args, count=len(zs)))


def cmd_critical(args):
    win = _window(args)
    s = _sample_for(args)
    zs = find_zeros(s, s.valid_radius - 2)
    cs = critical_search(s, abs(win[0]) + (win[1] + 1) * math.sqrt(2), zeros=zs)
    zin = [q for q in zs if _inside(q.location, win)]
    cin = [q for q in cs.points if _inside(q.location, win)]
    write_csv(args.out, ["x", "y", "kind", "residual", "hessian_det"], points_to_rows(zin, cin))
    write_json(args.out + ".json", _sidecar(args, zeros=len(zin),
                                            saddles=sum(q.kind == "saddle" for q in cin),
                                            maxima=sum(q.kind == "local_max" for q in cin),
                                            coverage_gaps=len(cs.coverage_gaps)))


def cmd_flow(args):
    win = _window(args)
    s = _sample_for(args)
    zs = find_zeros(s, s.valid_radius - 2)
    dom = FlowDomain.around(s, zs, win[0], win[1] + 2)
    starts = list(args.point)
    if args.samples:
        rng = np.random.default_rng(args.seed)
        c, half = win
        starts += list(c + rng.uniform(-half, half, args.samples)
                       + 1j * rng.uniform(-half, half, args.samples))
    cfg = _config(args)
    rows = []
    for k, z0 in enumerate(starts):
        tr = integrate_gradient_curve(s, z0, zs, cfg, domain=dom)
        rows.append((k, z0.real, z0.imag, tr.terminal, tr.sink_index, tr.travel_time,
                     tr.arc_length, tr.diameter, tr.end.real, tr.end.imag))
    write_csv(args.out, ["curve", "x0", "y0", "terminal", "sink", "travel_time", "arc_length",
                         "diameter", "x_end", "y_end"], rows)
    write_json(args.out + ".json", _sidecar(args, config=cfg.to_dict(), starts=len(starts)))


def cmd_tessellate(args):
    win = _window(args)
    s = _sample_for(args)
    cfg = _config(args)
    bm = tessellate(s, win, args.pitch, cfg, early_exit=not args.no_early_exit)
    save_basin_map(args.out, bm, _sidecar(args, valid_radius=s.valid_radius,
                                          tail_tol=s.tail_tol, config=cfg.to_dict()))


def cmd_geometry(args):
    bm, _ = load_basin_map(args.inp)
    rows = [(g.zero_index, bm.zeros[g.zero_index].location.real,
             bm.zeros[g.zero_index].location.imag, g.area, g.diameter, g.max_distance_to_sink,
             int(g.interior), g.node_count)
            for g in all_geometries(bm, interior_only=not args.all)]
    write_csv(args.out, ["zero", "x", "y", "area", "diameter", "max_distance", "interior",
                         "nodes"], rows)


def cmd_cutoff(args):
    g = read_grid(args.inp)
    if g.kind == "basins":
        bm, _ = load_basin_map(args.inp)
        part = partition_from_basins(bm)
    else:
        part, _ = load_partition(args.inp)
    res = run_cutoff(part, args.eps)
    rep = verify_cutoff(part, res.modified, args.eps, res.storages)
    regions = [{"R": float(res.R[i]), "r": float(res.r[i]),
                "tentacle_area": float(res.tentacle_area[i]), "overlap": float(res.overlap[i]),
                "containment": float(res.containment[i])} for i in range(part.n_regions)]
    save_partition(args.out, res.modified, {"eps": args.eps, "source": os.path.basename(args.inp),
                                            "verify": rep.checks, "details": rep.details,
                                            "regions": regions,
                                            "storages": [[i, list(q), len(p)]
                                                         for i, q, p in res.storages.ledger()]})
    print(json.dumps({"passed": rep.passed, **rep.checks}, sort_keys=True))
    return 0 if rep.passed else 1


def cmd_ensemble(args):
    win = _window(args)
    if args.kind == "covariance":
        rep = covariance_test(args.samples, base_seed=args.seed)
        os.makedirs(args.out, exist_ok=True)
        write_json(os.path.join(args.out, "summary.json"), {
            "passed": rep.passed, "n_samples": rep.n_samples,
            "f_kernel": [[str(e[0]), e[1], e[2], e[3], e[4]] for e in rep.f_kernel],
            "xi_kernel": [[str(e[0]), e[1], e[2], e[3], e[4]] for e in rep.xi_kernel],
            "taylor_bound": [[str(e[0]), e[1], e[2], e[3], e[4]] for e in rep.taylor_bound]})
        return 0
    cfg = _config(args)
    if win[0].imag != 0:
        raise ValueError("ensemble windows are centered on the real axis")
    m = EnsembleManifest(args.kind, args.samples, args.seed, (win[0].real, win[1]), args.pitch,
                         cfg.to_dict(), starts_per_sample=args.starts)
    recs = run_ensemble(m, args.out, resume=not args.no_resume,
                        progress=lambda i, r, dt: print(f"sample {i} {r.status} {dt:.1f}s",
                                                        file=sys.stderr))
    summary = {"manifest": m.to_dict(), "failed": sum(r.status != "ok" for r in recs)}
    if args.kind == "travel_time":
        t = travel_time_test(recs)
        summary["travel_time"] = {"n": t.n, "ks": t.ks_statistic, "critical": t.ks_critical,
                                  "passed": t.passed, "survival": t.survival}
    elif args.kind in ("densities", "neighbors"):
        d = density_census(recs)
        summary["densities"] = {k: getattr(d, k) for k in (
            "n_samples", "area", "zero_density", "saddle_density", "maximum_density",
            "grid_neighbors", "saddle_neighbors", "total_zeros")}
    elif args.kind == "tails":
        for obs in ("diameter", "distance", "core_mass"):
            c = tail_curves(recs, obs)
            write_csv(os.path.join(args.out, f"tail_{obs}.csv"),
                      ["R", "survival", "stderr", "n", "exceedances", "unreliable"], c.rows())
            summary[f"slope_{obs}"] = slope_diagnostic(c)
    write_json(os.path.join(args.out, "summary.json"), summary)
    return 0


def cmd_render(args):
    bm, doc = load_basin_map(args.inp)
    trajs = []
    if args.render_trajectories:
        c, half = bm.window
        s = sample_gef(int(doc["seed"]), float(doc["valid_radius"]), float(doc["tail_tol"]))
        cfg = IntegratorConfig(**doc["config"]) if "config" in doc else IntegratorConfig()
        dom = FlowDomain.around(s, bm.zeros, c, half + 2)
        k = max(1, int(math.ceil(math.sqrt(args.render_trajectories))))
        g = (np.arange(k) + 0.5) / k * 2 * half - half
        starts = (complex(c) + g[None, :] + 1j * g[:, None]).ravel()[: args.render_trajectories]
        trajs = [integrate_gradient_curve(s, z0, bm.zeros, cfg, domain=dom) for z0 in starts]
    svg = render_svg(bm, trajectories=trajs, basins="interior" if args.interior_only else "all")
    atomic_write(args.out, svg.encode())


COMMANDS = {"sample": cmd_sample, "zeros": cmd_zeros, "critical": cmd_critical, "flow": cmd_flow,
            "tessellate": cmd_tessellate, "geometry": cmd_geometry, "cutoff": cmd_cutoff,
            "ensemble": cmd_ensemble, "render": cmd_render}


def _threads():
    v = os.environ.get("GEF_THREADS")
    if not v:
        return
    import numba

    numba.set_num_threads(max(1, min(int(v), numba.config.NUMBA_NUM_THREADS)))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "flow" and not args.point and args.samples <= 0:
        parser.error("flow needs --point or --samples")
    try:
        _threads()
        rc = COMMANDS[args.command](args)
    except GefError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 1
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
