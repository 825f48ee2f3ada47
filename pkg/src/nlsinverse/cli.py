"""Command line front end.

Exit codes: 0 pass, 1 numeric tolerance failure, 2 usage or configuration
error, 3 simulation guard tripped.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import gaussian, nls, pairing, recovery, special
from .errors import DomainError, IllConditionedError, RangeError, SimulationGuardError
from .manifest import RunManifest, manifest_path, write_field
from .nonlinearity import from_spec, polynomial, power_law, saturating, zero

logger = logging.getLogger("nlsinverse")

EXIT_OK, EXIT_TOL, EXIT_USAGE, EXIT_GUARD = 0, 1, 2, 3

BUILTINS = {
    "cubic": lambda: power_law(1.0, 2),
    "quintic": lambda: power_law(1.0, 4),
    "mixture": lambda: polynomial([(1.0, 2), (0.5, 4)]),
    "saturating": lambda: saturating(1.0),
    "zero": zero,
}


class UsageError(Exception):
    pass


def load_nl(arg: str):
    """Built-in name, path to a JSON spec, or an inline JSON object."""
    if arg in BUILTINS:
        return BUILTINS[arg]()
    try:
        if arg.lstrip().startswith("{"):
            spec = json.loads(arg)
        else:
            with open(arg) as fh:
                spec = json.load(fh)
        return from_spec(spec)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot load nonlinearity {arg!r}: {exc}") from exc


def _num(x) -> str:
    return repr(float(x))


def _write_csv(path, header, rows):
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([_num(v) if isinstance(v, (float, np.floating, int, np.integer)) and not isinstance(v, bool)
                         else v for v in r])
    finally:
        if path:
            fh.close()


def _finish(args, man: RunManifest, outputs=(), inputs=()):
    for p in inputs:
        man.add_input(p)
    for p in outputs:
        man.add_output(p)
    man.wall_time = time.time() - args._t0
    if outputs:
        man.save(manifest_path(outputs[0]))


def _params(args) -> dict:
    return {k: v for k, v in vars(args).items() if not k.startswith("_") and k not in ("func", "config")}


# -- commands -------------------------------------------------------------


def cmd_weight_table(args):
    k = np.linspace(args.kmin, args.kmax, args.n)
    _write_csv(args.out, ["k", "w"], zip(k, special.weight_w(k)))
    if args.out:
        _finish(args, RunManifest("weight-table", _params(args)), [args.out])
    return EXIT_OK


def cmd_laplace_table(args):
    xi = np.linspace(-args.ximax, args.ximax, args.n)
    W = special.weight_laplace_W(args.sigma_line + 1j * xi)
    _write_csv(args.out, ["xi", "re_W", "im_W", "abs_W"], zip(xi, W.real, W.imag, np.abs(W)))
    if args.out:
        _finish(args, RunManifest("laplace-table", _params(args)), [args.out])
    return EXIT_OK


def cmd_verify_identity(args):
    nl = load_nl(args.nl)
    d = gaussian.GaussianDatum(args.A, args.sigma)
    ex = gaussian.spacetime_G_exact(nl, d, args.side)
    di = gaussian.spacetime_G_direct(nl, d, side=args.side)
    gap = abs(ex - di) / abs(ex) if ex != 0 else abs(di)
    print(f"exact  = {ex.real!r} {ex.imag:+.17g}i")
    print(f"direct = {di.real!r} {di.imag:+.17g}i")
    print(f"relative gap = {gap:.3e} (tolerance {args.tol:g})")
    return EXIT_OK if gap <= args.tol else EXIT_TOL


def cmd_simulate(args):
    nl = load_nl(args.nl)
    L = args.L
    grid = nls.Grid2D(L, args.N) if L else nls.grid_for_gaussian(args.sigma, args.T, args.N)
    u0 = nls.Field.gaussian(grid, args.A, args.sigma)
    cfg = nls.EvolutionConfig(args.T, args.dt, nl)
    uT, traj = nls.splitstep_evolve(cfg, u0, capture=True, capture_stride=10**9, lp_exponents=(6.0,))
    mass0 = u0.mass()
    res = {
        "mass_drift": float(abs(traj.l2[-1] ** 2 - mass0) / mass0) if mass0 else 0.0,
        "linf_max": float(traj.linf.max()),
        "boundary_mass": uT.meta["boundary_mass"],
        "valid": bool(uT.meta["valid"]),
        "L3L6": nls.spacetime_norm(traj.times, traj.lp[6.0], 3.0),
        "grid": grid.to_dict(),
    }
    if args.wave:
        om = nls.wave_operator(cfg, u0)
        m = pairing.extract_m(pairing.born_functional(om, u0), args.sigma)
        res.update(m_hat=m, tail_bound=om.meta["tail_bound"], tail_residual=om.meta["tail_residual"],
                   m_exact=pairing.exact_m(nl, 2 * math.log(args.A)))
    print(json.dumps({k: (repr(v) if isinstance(v, complex) else v) for k, v in res.items()}, indent=2))
    man = RunManifest("simulate", _params(args), results=res)
    outs = []
    if args.field_out:
        write_field(args.field_out, uT, {"t": args.T})
        outs += [args.field_out, f"{args.field_out}.json"]
    if args.out:
        man.outputs = {}
        _finish(args, man, outs)
        man.save(args.out)
    return EXIT_OK if res["valid"] else EXIT_TOL


def _jobs(args):
    env = os.environ.get("NLSINV_JOBS")
    if args.jobs is None and env:
        return int(env)
    return args.jobs or 1


def _settings(args):
    return pairing.ProbeSettings(S=args.S, dt_s=args.dt_s, N=args.N, operator=args.operator)


def cmd_campaign(args):
    nl = load_nl(args.nl)
    ells = np.linspace(args.ell_min, args.ell_max, args.n) if args.n > 0 else np.array([])
    ds = pairing.measurement_campaign(args.source, ells, args.sigma, nl, _settings(args), _jobs(args))
    ds.to_csv(args.out)
    man = RunManifest("campaign", _params(args), results=ds.manifest())
    _finish(args, man, [args.out])
    n_bad = sum(not m.valid for m in ds.measurements)
    print(f"{len(ds)} points, {n_bad} invalid -> {args.out}")
    return EXIT_OK if n_bad == 0 else EXIT_GUARD


def _load_dataset(args):
    mp = args.manifest or manifest_path(args.data)
    man = None
    if os.path.exists(mp):
        man = RunManifest.load(mp)
    sigma = (man.results.get("sigma") if man else None) or 1.0
    conv = (man.results.get("convention") if man else None) or "half"
    return pairing.MeasurementDataset.from_csv(args.data, sigma, convention=conv)


def _recover(ds, args):
    if args.method == "windowed":
        window = None if args.kmin is None or args.kmax is None else (args.kmin, args.kmax)
        return recovery.deconvolve_windowed(ds, window, reg=args.reg), None
    if args.method == "fourier":
        return recovery.deconvolve_fourier(ds, band_limit=args.band_limit), None
    if args.method == "poly":
        exps = args.exponents or recovery.detect_exponents(ds)
        if not exps:
            return None, recovery.PolyFit([], [], 1.0)
        return None, recovery.fit_polynomial(ds, exps)
    raise UsageError(f"unknown method {args.method!r}")


def cmd_recover(args):
    ds = _load_dataset(args)
    rh, pf = _recover(ds, args)
    if rh is not None:
        out = {"method": args.method, "parameters": _params(args), **rh.to_dict()}
    else:
        out = {"method": "poly", "parameters": _params(args), "exponents": pf.exponents,
               "coefficients": [[complex(c).real, complex(c).imag] for c in pf.coefficients],
               "condition_number": pf.condition_number, "residual_norm": pf.residual_norm}
    with open(args.out, "w") as fh:
        json.dump(out, fh, indent=2)
    _finish(args, RunManifest("recover", _params(args)), [args.out], [args.data])
    print(f"recovered ({args.method}) -> {args.out}")
    return EXIT_OK


def cmd_check_contraction(args):
    nl = load_nl(args.nl)
    grid = nls.Grid2D(args.L, args.N) if args.L else nls.grid_for_gaussian(args.sigma, args.T, args.N)
    u0 = nls.Field.gaussian(grid, args.A, args.sigma)
    cfg = nls.EvolutionConfig(args.T, args.dt, nl)
    res = nls.picard_iterate(cfg, u0, args.n_iter)
    print("distances:", " ".join(f"{d:.3e}" for d in res.distances))
    print("ratios:   ", " ".join(f"{r:.3f}" for r in res.ratios))
    ok = res.contracting and bool(np.all(res.ratios <= args.max_ratio))
    print("contracting" if ok else "ratio above bound")
    return EXIT_OK if ok else EXIT_TOL


def born_scaling(nl, A, sigmas, settings, floor=1e-12):
    """(errors, slope) of |m_hat - m| against sigma; slope is None below the floor."""
    ell = 2 * math.log(A)
    exact = pairing.exact_m(nl, ell)
    errs = []
    for s in sigmas:
        m = pairing.simulate_m(nl, ell, s, settings)
        errs.append(abs(m.value - exact))
    errs = np.array(errs)
    scale = max(abs(exact), 1.0)
    if np.any(errs <= floor * scale):
        return errs, None
    slope = float(np.polyfit(np.log(sigmas), np.log(errs), 1)[0])
    return errs, slope


def cmd_born_scaling(args):
    nl = load_nl(args.nl)
    errs, slope = born_scaling(nl, args.A, np.array(args.sigmas), _settings(args))
    for s, e in zip(args.sigmas, errs):
        print(f"sigma={s:g}  |m_hat - m| = {e:.3e}")
    if slope is None:
        print("rate undefined, gap below floor")
        return EXIT_OK
    print(f"log-log slope = {slope:.3f} (need >= {args.min_slope:g})")
    return EXIT_OK if slope >= args.min_slope else EXIT_TOL


def recover_end_to_end(hidden, ells, sigma, settings, method="windowed", exponents=None,
                       defect_iters=2, jobs=1, lam_window=(0.05, 0.5)):
    """Simulate a campaign against ``hidden``, recover blind, then score against ``hidden``."""
    ds = pairing.measurement_campaign("simulated", ells, sigma, hidden, settings, jobs)
    # from here on only the dataset is used; ``hidden`` returns for scoring
    report = {"n_points": len(ds), "n_valid": len(ds.valid())}
    lam = np.linspace(*lam_window, 200)
    truth = hidden.h(lam)
    if method == "poly":
        valid = ds.valid()
        exps = exponents or recovery.detect_exponents(valid)
        if exps:
            pf = recovery.fit_polynomial(valid, exps)
            got = pf.nonlinearity().h(lam)
            report.update(exponents=exps, coefficients=[complex(c) for c in pf.coefficients])
        else:
            got = np.zeros_like(lam, dtype=complex)
            report.update(exponents=[], coefficients=[])
    else:
        sim = lambda cand: pairing.measurement_campaign("simulated", ells, sigma, cand, settings, jobs)
        dec = recovery.deconvolve_windowed if method == "windowed" else recovery.deconvolve_fourier
        if defect_iters > 0:
            rh, hist = recovery.defect_corrected_recovery(ds, sim, defect_iters, dec)
            report["defect_history"] = hist
        else:
            rh = dec(ds.valid())
        got = recovery.recover_nonlinearity(rh).h(lam)
    scale = np.abs(truth)
    if np.all(scale == 0):
        err = float(np.max(np.abs(got)))
        report["abs_error"] = err
    else:
        err = float(np.max(np.abs(got - truth) / scale))
        report["rel_error"] = err
    report["error"] = err
    return report


def cmd_recover_end_to_end(args):
    hidden = load_nl(args.hidden)
    ells = np.linspace(args.ell_min, args.ell_max, args.n)
    report = recover_end_to_end(hidden, ells, args.sigma, _settings(args), args.method, args.exponents,
                                args.defect_iters, _jobs(args), (args.lam_min, args.lam_max))
    text = json.dumps({k: (repr(v) if isinstance(v, complex) else v) for k, v in report.items()},
                      indent=2, default=repr)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
        _finish(args, RunManifest("recover-end-to-end", _params(args), results=report), [args.out])
    ok = report["error"] <= args.tol
    print(f"max error on [{args.lam_min:g}, {args.lam_max:g}] = {report['error']:.3e} "
          f"({'pass' if ok else 'fail'}, tolerance {args.tol:g})")
    return EXIT_OK if ok else EXIT_TOL


# -- parser ---------------------------------------------------------------


def _probe_opts(p, N=256):
    p.add_argument("--S", type=float, default=10.0, help="time horizon in units of sigma^2")
    p.add_argument("--dt-s", type=float, default=0.02, help="time step in units of sigma^2")
    p.add_argument("--N", type=int, default=N)
    p.add_argument("--operator", choices=["wave", "scattering"], default="wave")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nlsinverse", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="JSON file of defaults; explicit flags win")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("weight-table", help="CSV of the weight w(k)")
    p.add_argument("--kmin", type=float, default=-1.0)
    p.add_argument("--kmax", type=float, default=5.0)
    p.add_argument("--n", type=int, default=61)
    p.add_argument("--out")
    p.set_defaults(func=cmd_weight_table)

    p = sub.add_parser("laplace-table", help="CSV of W on a vertical line")
    p.add_argument("--sigma-line", type=float, default=1.75)
    p.add_argument("--ximax", type=float, default=50.0)
    p.add_argument("--n", type=int, default=201)
    p.add_argument("--out")
    p.set_defaults(func=cmd_laplace_table)

    p = sub.add_parser("verify-identity", help="compare both routes to the space-time G integral")
    p.add_argument("--nl", required=True)
    p.add_argument("--A", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--side", choices=["half", "full"], default="half")
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_verify_identity)

    p = sub.add_parser("simulate", help="split-step run of a Gaussian probe")
    p.add_argument("--nl", required=True)
    p.add_argument("--A", type=float, default=0.1)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--T", type=float, default=5.0)
    p.add_argument("--dt", type=float, default=0.02)
    p.add_argument("--L", type=float, default=None, help="half length (default: sized from T)")
    p.add_argument("--N", type=int, default=256)
    p.add_argument("--wave", action="store_true", help="also apply the wave operator and extract m")
    p.add_argument("--out", help="run manifest (JSON)")
    p.add_argument("--field-out", help="binary dump of u(T)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("campaign", help="measure m on an l grid")
    p.add_argument("--nl", required=True)
    p.add_argument("--source", choices=["exact", "simulated"], default="exact")
    p.add_argument("--ell-min", type=float, default=-3.0)
    p.add_argument("--ell-max", type=float, default=0.0)
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--sigma", type=float, default=0.5)
    _probe_opts(p)
    p.add_argument("--jobs", type=int, default=None, help="worker processes (env NLSINV_JOBS)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("recover", help="recover H or polynomial coefficients from a campaign")
    p.add_argument("--data", required=True)
    p.add_argument("--manifest")
    p.add_argument("--method", choices=["windowed", "fourier", "poly"], default="windowed")
    p.add_argument("--kmin", type=float)
    p.add_argument("--kmax", type=float)
    p.add_argument("--reg", type=float, default=1e-8)
    p.add_argument("--band-limit", type=float, default=24.0)
    p.add_argument("--exponents", type=float, nargs="*")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("check-contraction", help="Picard iteration and contraction ratios")
    p.add_argument("--nl", default="cubic")
    p.add_argument("--A", type=float, default=0.05)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--T", type=float, default=4.0)
    p.add_argument("--dt", type=float, default=0.02)
    p.add_argument("--L", type=float, default=None)
    p.add_argument("--N", type=int, default=256)
    p.add_argument("--n-iter", type=int, default=6)
    p.add_argument("--max-ratio", type=float, default=0.5)
    p.set_defaults(func=cmd_check_contraction)

    p = sub.add_parser("born-scaling", help="rate of the Born error in sigma")
    p.add_argument("--nl", default="cubic")
    p.add_argument("--A", type=float, default=0.3)
    p.add_argument("--sigmas", type=float, nargs="+", default=[0.8, 0.4, 0.2])
    p.add_argument("--min-slope", type=float, default=1.6)
    _probe_opts(p, N=512)
    p.set_defaults(func=cmd_born_scaling)

    p = sub.add_parser("recover-end-to-end", help="simulate, recover blind, score against the truth")
    p.add_argument("--hidden", required=True)
    p.add_argument("--ell-min", type=float, default=-3.0)
    p.add_argument("--ell-max", type=float, default=0.0)
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--sigma", type=float, default=0.5)
    _probe_opts(p)
    p.add_argument("--method", choices=["windowed", "fourier", "poly"], default="windowed")
    p.add_argument("--exponents", type=float, nargs="*")
    p.add_argument("--defect-iters", type=int, default=2)
    p.add_argument("--lam-min", type=float, default=0.05)
    p.add_argument("--lam-max", type=float, default=0.5)
    p.add_argument("--tol", type=float, default=0.05)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_recover_end_to_end)
    return ap


def _parse(argv):
    ap = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        try:
            with open(known.config) as fh:
                cfg = json.load(fh)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {known.config!r}: {exc}") from exc
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        ap.set_defaults(**cfg)
        for action in ap._subparsers._group_actions:
            for sp in action.choices.values():
                sp.set_defaults(**{k: v for k, v in cfg.items()
                                   if any(a.dest == k for a in sp._actions)})
    return ap.parse_args(argv)


def main(argv=None) -> int:
    try:
        args = _parse(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args._t0 = time.time()
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SimulationGuardError as exc:
        print(f"simulation guard: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (DomainError, IllConditionedError, RangeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
