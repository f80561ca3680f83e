"""Command-line entry point: ``tlsfdtd run|sweep|fit|plot|oracle|list``.

Exit codes: 0 success, 1 invalid input, 2 numerical instability,
3 an embedded verification check failed.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_INVALID, EXIT_UNSTABLE, EXIT_VERIFY = 0, 1, 2, 3


def _floats(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    return vals


def _overrides(pairs: list[str]) -> dict[str, float]:
    out = {}
    for p in pairs or []:
        if "=" not in p:
            raise ValueError(f"--set expects NAME=VALUE, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = float(v)
    return out


def _print_checks(checks):
    for c in checks:
        mark = "PASS" if c["passed"] else "FAIL"
        tol = f" tol={c['tol']:g}" if c["check"] == "rel" else ""
        print(f"  [{mark}] {c['quantity']} = {c['value']:.6g} {c['check']} "
              f"{c['reference']:.6g}{tol}")


# -- subcommands -----------------------------------------------------------------

def cmd_run(args) -> int:
    from .runner import run
    from .scenario import load_scenario
    sc = load_scenario(args.scenario, _overrides(args.set))
    out = Path(args.out) if args.out else Path("runs") / sc.name
    rec = run(sc, out, args.threads)
    print(f"{sc.name}: {rec.steps} steps in {rec.wall_time:.1f} s ({rec.stop_reason}); outputs in {out}")
    for k, v in rec.results.items():
        print(f"  {k} = {v:.10g}")
    if args.verify:
        if not rec.checks:
            print("  (scenario embeds no checks)")
        _print_checks(rec.checks)
        if not rec.passed:
            return EXIT_VERIFY
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .runner import sweep
    out = Path(args.out) if args.out else Path("runs") / f"{Path(args.scenario).stem}_sweep_{args.param}"
    rows = sweep(args.scenario, args.param, args.values, out, args.threads)
    print(f"wrote {out / 'sweep.csv'} ({len(rows)} rows)")
    failed = [r[args.param] for r in rows if not r["passed"]]
    if args.verify and failed:
        print(f"verification failed at {args.param} = {failed}")
        return EXIT_VERIFY
    return EXIT_OK


def _col(header, data, name, fallbacks=()):
    for n in (name, *fallbacks):
        if n and n in header:
            return data[:, header.index(n)]
    raise ValueError(f"none of the columns {[n for n in (name, *fallbacks) if n]} in {header}")


def cmd_fit(args) -> int:
    from . import fitting
    from .runner import read_csv
    header, data = read_csv(args.csv)
    if args.model == "exp":
        t = _col(header, data, args.x, ("t",))
        y = _col(header, data, args.y, ("n_exc", "P0"))
        r = fitting.fit_exponential(t, y, window=(args.window[0], args.window[1]))
    elif args.model == "lorentzian":
        w = _col(header, data, args.x, ("omega",))
        y = _col(header, data, args.y, ("sigma", "flux", "value"))
        r = fitting.fit_lorentzian(w, y)
    elif args.model == "master":
        t = _col(header, data, args.x, ("t",))
        P1, P2 = _col(header, data, "P0"), _col(header, data, "P1")
        b1 = b2 = None
        if all(c in header for c in ("re_b0", "im_b0", "re_b1", "im_b1")):
            b1 = _col(header, data, "re_b0") + 1j * _col(header, data, "im_b0")
            b2 = _col(header, data, "re_b1") + 1j * _col(header, data, "im_b1")
        r = fitting.fit_master_equation(t, P1, P2, b1, b2)
    else:
        x = _col(header, data, args.x, (header[0],))
        y = _col(header, data, args.y, (header[1] if len(header) > 1 else None,))
        r = fitting.fit_powerlaw(x, y)
    print(json.dumps({"model": args.model, "params": r.params, "residual_norm": r.residual_norm,
                      "converged": r.converged}, indent=2))
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import plot_csv
    cols = args.columns.split(",") if args.columns else None
    out = plot_csv(args.csv, args.kind, args.out, log=args.log, columns=cols)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    from . import oracles
    if args.what == "gamma":
        g = oracles.gamma_vac(args.omega0, args.dipole, args.dim)
        print(json.dumps({"gamma_vac": g}))
    elif args.what == "green":
        kw = {}
        if args.env == "pec_halfspace":
            kw = {"mirror_axis": args.mirror_axis, "mirror_plane": args.mirror_plane}
        elif args.env == "pec_waveguide":
            kw = {"width": args.width, "wall": args.wall, "method": args.method}
        G = oracles.green_function(args.env, args.ra, args.rb, args.omega0, **kw)
        res = {"re": G.value.real.tolist(), "im": G.value.imag.tolist(), "coincident": G.coincident}
        if args.di:
            dj = args.dj or args.di
            cr = oracles.collective_rates(G, args.di, dj, args.omega0)
            res.update(gamma_ij=cr.gamma, g_ij=cr.g)
        print(json.dumps(res, indent=2))
    else:
        t = np.linspace(0.0, args.t_max, args.points)
        P1, P2 = oracles.master_p1p2(t, args.gamma11, args.gamma12, args.g12)
        if args.out:
            from .runner import write_csv
            write_csv(Path(args.out), ["t", "P0", "P1"], [t, P1, P2])
            print(f"wrote {args.out}")
        else:
            print("t,P0,P1")
            for row in zip(t, P1, P2):
                print(",".join("%.17g" % v for v in row))
    return EXIT_OK


def cmd_list(args) -> int:
    from .scenario import load_scenario, packaged_scenarios
    for name in packaged_scenarios():
        print(f"{name:28s} {load_scenario(name).description}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tlsfdtd", description="FDTD with embedded two-level emitters")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario file or packaged scenario")
    r.add_argument("scenario")
    r.add_argument("--verify", action="store_true", help="exit 3 if an embedded check fails")
    r.add_argument("--out", help="output directory (default runs/<name>)")
    r.add_argument("--threads", type=int, default=None)
    r.add_argument("--set", action="append", metavar="NAME=VALUE", help="override a declared parameter")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run once per parameter value and aggregate")
    s.add_argument("scenario")
    s.add_argument("--param", required=True)
    s.add_argument("--values", required=True, type=_floats)
    s.add_argument("--out")
    s.add_argument("--threads", type=int, default=None)
    s.add_argument("--verify", action="store_true")
    s.set_defaults(func=cmd_sweep)

    f = sub.add_parser("fit", help="fit a model to CSV columns")
    f.add_argument("csv")
    f.add_argument("--model", required=True, choices=["exp", "lorentzian", "master", "powerlaw"])
    f.add_argument("--x", help="abscissa column")
    f.add_argument("--y", help="ordinate column")
    f.add_argument("--window", type=_floats, default=[1e-4, 0.9],
                   help="exp fit window as lo,hi fractions of max(y)")
    f.set_defaults(func=cmd_fit)

    pl = sub.add_parser("plot", help="render a CSV to SVG")
    pl.add_argument("csv")
    pl.add_argument("--kind", required=True, choices=["timeseries", "spectrum", "sweep"])
    pl.add_argument("--out")
    pl.add_argument("--log", action="store_true", help="logarithmic y axis")
    pl.add_argument("--columns", help="comma-separated subset of columns")
    pl.set_defaults(func=cmd_plot)

    o = sub.add_parser("oracle", help="analytic reference values")
    osub = o.add_subparsers(dest="what", required=True)
    og = osub.add_parser("gamma", help="vacuum decay rate")
    og.add_argument("--omega0", type=float, default=2 * np.pi)
    og.add_argument("--dipole", type=float, required=True)
    og.add_argument("--dim", type=int, choices=[2, 3], required=True)
    gr = osub.add_parser("green", help="dyadic Green's function (and rates with --di)")
    gr.add_argument("--env", required=True, choices=["vacuum2d", "vacuum3d", "pec_halfspace", "pec_waveguide"])
    gr.add_argument("--ra", type=_floats, required=True)
    gr.add_argument("--rb", type=_floats, required=True)
    gr.add_argument("--omega0", type=float, default=2 * np.pi)
    gr.add_argument("--di", type=_floats)
    gr.add_argument("--dj", type=_floats)
    gr.add_argument("--mirror-axis", type=int, default=1)
    gr.add_argument("--mirror-plane", type=float, default=0.0)
    gr.add_argument("--width", type=float)
    gr.add_argument("--wall", type=float, default=0.0)
    gr.add_argument("--method", choices=["modes", "images"], default="modes")
    om = osub.add_parser("master", help="two-emitter populations P0(t), P1(t)")
    om.add_argument("--gamma11", type=float, required=True)
    om.add_argument("--gamma12", type=float, required=True)
    om.add_argument("--g12", type=float, required=True)
    om.add_argument("--t-max", type=float, required=True)
    om.add_argument("--points", type=int, default=201)
    om.add_argument("--out")
    for q in (og, gr, om):
        q.set_defaults(func=cmd_oracle)

    ls = sub.add_parser("list", help="list packaged scenarios")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv: list[str] | None = None) -> int:
    from .runner import InstabilityError, SweepError
    from .scenario import ScenarioError
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InstabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except SweepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE if isinstance(exc.__cause__, InstabilityError) else EXIT_INVALID
    except ScenarioError as exc:
        print("invalid scenario:", file=sys.stderr)
        for e in exc.errors:
            print(f"  - {e}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
