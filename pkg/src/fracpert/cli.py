"""Command-line front end.

    fracpert <subcommand> [--config FILE] [--out DIR] [flags]

Config files are sectioned key = value text ([model], [domain], [mc],
[quadrature], [verify]); flags override file values. Exit codes: 0 success or
PASS, 1 verification FAIL, 2 usage error, 3 numerical failure.
"""

import argparse
import configparser
import csv
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .geometry import Ball, parse_domain
from .jump_kernel import PerturbationB, dominating_kernel, eps_A, j_b
from .quadrature import NumericalError
from .special import StableParams, normalizing_constant, riesz_constant

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
THREADS_ENV = "FRACPERT_THREADS"

DEFAULTS = {
    "model": {"d": "2", "alpha": "1.0", "beta": "0.5", "b_form": "zero", "a": "0.0"},
    "domain": {"balls": "ball 0 0 1"},
    "mc": {"n_paths": "10000", "delta": "1e-3", "seed": "0", "horizon": "1.0"},
    "quadrature": {"tol": "1e-4", "grid_theta": "16", "grid_rad": "8"},
    "verify": {"n_probes": "50", "times": "0.05 0.1 0.2 0.5 1.0", "band_lo": "0.01", "band_hi": "100",
               "boundary_slope": "yes"},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# -- configuration ----------------------------------------------------------------

def load_config(path=None):
    cfg = configparser.ConfigParser()
    cfg.read_dict(DEFAULTS)
    if path is not None:
        if not os.path.exists(path):
            raise UsageError(f"config file not found: {path}")
        with open(path) as fh:
            cfg.read_file(fh)
    return cfg


def _override(cfg, args):
    pairs = {
        "paths": ("mc", "n_paths"), "delta": ("mc", "delta"), "seed": ("mc", "seed"), "horizon": ("mc", "horizon"),
        "d": ("model", "d"), "alpha": ("model", "alpha"), "beta": ("model", "beta"), "b_form": ("model", "b_form"),
        "a": ("model", "a"), "A": ("model", "A"), "cutoff": ("model", "cutoff"),
    }
    for name, (sec, key) in pairs.items():
        val = getattr(args, name, None)
        if val is not None:
            cfg[sec][key] = str(val)
    dom = getattr(args, "domain", None)
    if dom is not None:
        cfg["domain"]["balls"] = dom


def config_digest(cfg):
    text = json.dumps({s: dict(cfg[s]) for s in cfg.sections()}, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


def model_from_config(cfg):
    m = cfg["model"]
    params = StableParams(m.getint("d"), m.getfloat("alpha"), m.getfloat("beta"))
    form = m.get("b_form")
    A = m.getfloat("A") if "A" in m else None
    if form == "truncated_stable":
        b = PerturbationB.truncated_stable(params, cutoff=m.getfloat("cutoff", 1.0))
        if A is not None:
            b.A = max(b.A, A)
    else:
        b = PerturbationB.from_config(params, form, a=m.getfloat("a"), A=A)
    dom = parse_domain(cfg["domain"]["balls"])
    return params, b, dom


def _mc_config(cfg, **extra):
    from .mc import McConfig

    m = cfg["mc"]
    return McConfig(n_paths=m.getint("n_paths"), horizon=m.getfloat("horizon"), delta=m.getfloat("delta"),
                    seed=m.getint("seed"), **extra)


# -- output -----------------------------------------------------------------------

def _header(cfg):
    return [f"# fracpert {__version__}", f"# config-digest {config_digest(cfg)}", f"# seed {cfg['mc']['seed']}"]


def _fmt(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    return "%.16e" % float(v)


def write_csv(path, cfg, columns, rows):
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(_header(cfg)) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows([_fmt(v) for v in row] for row in rows)


def write_json(path, cfg, text):
    obj = json.loads(text)
    obj["header"] = {"version": __version__, "config_digest": config_digest(cfg), "seed": cfg["mc"].getint("seed")}
    with open(path, "w") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _point(text):
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise UsageError(f"bad point {text!r}") from exc


def _out(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


# -- subcommands --------------------------------------------------------------------

def cmd_constants(args, cfg):
    params, b, _ = model_from_config(cfg)
    d, al, be = params.d, params.alpha, params.beta
    rows = [
        (f"A({d},-{al:g})", normalizing_constant(d, al)),
        (f"A({d},-{be:g})", normalizing_constant(d, be)),
        ("green_global_prefactor", riesz_constant(d, al)),
        ("eps_A", eps_A(params, b.A) if b.A > 0 else math.inf),
    ]
    write_csv(_out(args, "constants.csv"), cfg, ["name", "value"], rows)
    print(f"A({d},-{al:g}) = {rows[0][1]:.17g}")
    return EXIT_OK


def cmd_kernel_eval(args, cfg):
    params, b, _ = model_from_config(cfg)
    radii = [float(r) for r in args.r.split(",")]
    x0 = np.zeros(params.d)
    rows = []
    for r in radii:
        y = x0.copy()
        y[0] = r
        rows.append((r, j_b(params, b, x0, y), dominating_kernel(params, b.positive_sup, r)))
    write_csv(_out(args, "kernel.csv"), cfg, ["r", "j_b", "j_dom"], rows)
    print(f"evaluated j_b at {len(rows)} radii")
    return EXIT_OK


def cmd_green_ball(args, cfg):
    from .exact_ball import green_ball, green_global, poisson_ball

    params, _, dom = model_from_config(cfg)
    if not isinstance(dom, Ball):
        raise UsageError("green-ball needs a single ball domain")
    x, y = _point(args.x), _point(args.y)
    G = green_global(params, x, y)
    GB = green_ball(params, dom, x, y)
    cols, row = ["G", "G_B"], [G, GB]
    if args.z is not None:
        cols.append("K_B")
        row.append(poisson_ball(params, dom, x, _point(args.z)))
    write_csv(_out(args, "green_ball.csv"), cfg, cols, [row])
    print(",".join(f"{c}={v:.17g}" for c, v in zip(cols, row)))
    return EXIT_OK


def cmd_sb_apply(args, cfg):
    from .nonlocal_op import apply_Sb, apply_Sb_to_green_ball

    params, b, dom = model_from_config(cfg)
    x = _point(args.x)
    if args.y is not None:
        if not isinstance(dom, Ball):
            raise UsageError("sb-apply on G_B needs a single ball domain")
        val = apply_Sb_to_green_ball(params, b, dom, x, _point(args.y))
        what = "S^b_x G_B(x,y)"
    else:
        xi = _point(args.xi) if args.xi else np.eye(params.d)[0]
        val = apply_Sb(params, b, lambda p: np.cos(p @ xi), x)
        what = "S^b cos(<xi,.>)(x)"
    write_csv(_out(args, "sb_apply.csv"), cfg, ["value"], [(val,)])
    print(f"{what} = {val:.17g}")
    return EXIT_OK


def _read_probes(path, d):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#")[0].strip()
            if not line or line[0].isalpha():
                continue
            vals = [float(v) for v in line.split(",")]
            if len(vals) != 2 * d:
                raise UsageError(f"probe line needs {2 * d} numbers: {line!r}")
            rows.append((vals[:d], vals[d:]))
    if not rows:
        raise UsageError("no probes in file")
    return np.array(rows)


def cmd_duhamel(args, cfg):
    from .duhamel import polar_grid, sum_series

    params, b, _ = model_from_config(cfg)
    if args.b_form is not None or args.A is not None:
        A = args.A if args.A is not None else b.A
        form = args.b_form or b.name
        b = (PerturbationB.truncated_stable(params) if form == "truncated_stable"
             else PerturbationB.from_config(params, form, a=A if form == "const" else 0.0))
    ball = Ball(np.zeros(params.d), args.radius)
    probes = _read_probes(args.probes, params.d) if args.probes else None
    if probes is None:
        raise UsageError("duhamel needs --probes")
    q = cfg["quadrature"]
    res = sum_series(params, b, ball, probes, tol=q.getfloat("tol"),
                     grid=polar_grid(ball, q.getint("grid_theta"), q.getint("grid_rad")))
    rows = [tuple(p[0]) + tuple(p[1]) + (g, v, v / g, res.n_terms, res.delta, tb)
            for p, g, v, tb in zip(probes, res.green_ball, res.values, res.tail_bound)]
    cols = [f"x{k}" for k in range(params.d)] + [f"y{k}" for k in range(params.d)]
    cols += ["G_B", "G_b_B", "ratio", "N", "delta", "tail_bound"]
    write_csv(_out(args, "duhamel.csv"), cfg, cols, rows)
    print(f"summed {res.n_terms} terms at {len(probes)} probes, delta={res.delta:.3g}")
    return EXIT_OK


def cmd_simulate(args, cfg):
    from .mc import BinSpec, estimate_green, estimate_heat_kernel, simulate, survival_curve

    params, b, dom = model_from_config(cfg)
    x0 = _point(args.x0) if args.x0 else dom.balls[0].center
    mcfg = _mc_config(cfg, record_times=(cfg["mc"].getfloat("horizon"),))
    run = simulate(params, b, dom, x0, mcfg)
    n = len(run)
    times = np.linspace(0.0, mcfg.horizon, 21)
    t, p, se = survival_curve(params, b, dom, x0, mcfg, times, run=run)
    write_csv(_out(args, "survival.csv"), cfg, ["t", "estimate", "se", "n"], [(a, b_, c, n) for a, b_, c in zip(t, p, se)])
    done = ~run.censored
    tau = run.exit_time[done]
    write_csv(_out(args, "exit_time.csv"), cfg, ["statistic", "estimate", "se", "n"],
              [("mean_exit_time_uncensored", tau.mean() if tau.size else math.nan,
                tau.std() / math.sqrt(tau.size) if tau.size > 1 else math.nan, int(tau.size))])
    R = dom.balls[0].radius
    spec = BinSpec.radial(x0, np.linspace(0.0, R, 11))
    hk = estimate_heat_kernel(params, b, dom, x0, mcfg.horizon, mcfg, bin_spec=spec, run=run)
    write_csv(_out(args, "heat_kernel.csv"), cfg, ["r_mid", "estimate", "se", "n"],
              [(c, e, s, n) for c, e, s in zip(hk.centers, hk.estimate, hk.se)])
    if args.green:
        gcfg = _mc_config(cfg, bin_spec=spec, record_occupation=True)
        gr = estimate_green(params, b, dom, x0, gcfg)
        write_csv(_out(args, "green.csv"), cfg, ["r_mid", "estimate", "se", "n"],
                  [(c, e, s, n) for c, e, s in zip(gr.centers, gr.estimate, gr.se)])
    print(f"simulated {n} paths, survival at horizon {p[-1]:.6g}")
    return EXIT_OK


def cmd_verify_bounds(args, cfg):
    from .verify import verify_green_bounds, verify_heat_bounds

    params, b, dom = model_from_config(cfg)
    v = cfg["verify"]
    if args.kind == "green":
        rep = verify_green_bounds(params, b, dom, method="exact" if b.name == "zero" else "mc",
                                  n_pairs=v.getint("n_probes"), seed=cfg["mc"].getint("seed"), cfg=_mc_config(cfg))
    else:
        times = [float(t) for t in v.get("times").split()]
        rep = verify_heat_bounds(params, b, dom, _mc_config(cfg), n_probes=v.getint("n_probes"), times=times,
                                 seed=cfg["mc"].getint("seed"), band=(v.getfloat("band_lo"), v.getfloat("band_hi")),
                                 fit_slope=v.getboolean("boundary_slope"))
    write_json(_out(args, "bound_report.json"), cfg, rep.to_json())
    print(f"{'PASS' if rep.passed else 'FAIL'} band=[{rep.C_lower:.4g}, {rep.C_upper:.4g}] "
          f"violations={len(rep.violations)}")
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_lambda1(args, cfg):
    from .verify import FitError, fit_lambda1

    params, b, dom = model_from_config(cfg)
    try:
        fit = fit_lambda1(params, b, dom, _mc_config(cfg))
    except FitError as exc:
        print(f"FAIL {exc}")
        return EXIT_FAIL
    write_json(_out(args, "spectral_fit.json"), cfg, fit.to_json())
    ok = fit.consistent
    print(f"{'PASS' if ok else 'FAIL'} lambda1={fit.lambda1_hat:.6g} +- {fit.lambda1_se:.2g} "
          f"lambda0={fit.lambda0_bound:.6g} R2={fit.r_squared:.5f}")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "constants": cmd_constants,
    "kernel-eval": cmd_kernel_eval,
    "green-ball": cmd_green_ball,
    "sb-apply": cmd_sb_apply,
    "duhamel": cmd_duhamel,
    "simulate": cmd_simulate,
    "verify-bounds": cmd_verify_bounds,
    "lambda1": cmd_lambda1,
}
NEEDS_CONFIG = {"simulate", "verify-bounds", "lambda1"}


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config")
    common.add_argument("--out", default=".")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--paths", type=int)
    common.add_argument("--delta", type=float)
    common.add_argument("--horizon", type=float)
    common.add_argument("--d", type=int)
    common.add_argument("--alpha", type=float)
    common.add_argument("--beta", type=float)
    common.add_argument("--a", type=float)
    common.add_argument("--cutoff", type=float)
    common.add_argument("--domain", help="domain literal, e.g. 'ball 0 0 1'")

    p = _Parser(prog="fracpert", description="Stable processes with non-local perturbations.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    s = sub.add_parser("constants", parents=[common])
    s.add_argument("--b-form", dest="b_form")
    s.add_argument("--A", type=float)
    s = sub.add_parser("kernel-eval", parents=[common])
    s.add_argument("--b-form", dest="b_form")
    s.add_argument("--A", type=float)
    s.add_argument("--r", required=True, help="comma-separated radii")
    s = sub.add_parser("green-ball", parents=[common])
    s.add_argument("--x", required=True)
    s.add_argument("--y", required=True)
    s.add_argument("--z", help="exterior point for the Poisson kernel")
    s = sub.add_parser("sb-apply", parents=[common])
    s.add_argument("--b-form", dest="b_form")
    s.add_argument("--A", type=float)
    s.add_argument("--x", required=True)
    s.add_argument("--y", help="second point: evaluate on G_B(., y)")
    s.add_argument("--xi", help="frequency of the cosine test function")
    s = sub.add_parser("duhamel", parents=[common])
    s.add_argument("--radius", type=float, required=True)
    s.add_argument("--A", type=float)
    s.add_argument("--b-form", dest="b_form", choices=["zero", "const", "truncated_stable"])
    s.add_argument("--probes", help="CSV file of x1,..,xd,y1,..,yd rows")
    s = sub.add_parser("simulate", parents=[common])
    s.add_argument("--b-form", dest="b_form")
    s.add_argument("--A", type=float)
    s.add_argument("--x0")
    s.add_argument("--green", action="store_true")
    s = sub.add_parser("verify-bounds", parents=[common])
    s.add_argument("--b-form", dest="b_form")
    s.add_argument("--A", type=float)
    s.add_argument("--kind", choices=["heat", "green"], default="heat")
    s = sub.add_parser("lambda1", parents=[common])
    s.add_argument("--b-form", dest="b_form")
    s.add_argument("--A", type=float)
    return p


def _set_threads(n):
    if n is None:
        env = os.environ.get(THREADS_ENV)
        n = int(env) if env else None
    if n is not None:
        import numba

        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def run(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        if args.command in NEEDS_CONFIG and args.config is None:
            raise UsageError(f"{args.command} needs --config")
        cfg = load_config(args.config)
        _override(cfg, args)
        _set_threads(args.threads)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # --help / --version
        return int(exc.code or 0)
    except (ValueError, KeyError, configparser.Error) as exc:
        print(f"fracpert: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"fracpert: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main():
    return run()


if __name__ == "__main__":
    sys.exit(main())
