"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 numeric or domain error, 3 missing dependency result.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .errors import DependencyError, MixidentError

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN, EXIT_DEPENDENCY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _meta(args) -> dict:
    meta = {"version": __version__, "seed": getattr(args, "seed", None), "command": args.command}
    if not getattr(args, "no_timestamp", False):
        meta["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return meta


def _write_json(path: str, doc: dict, args) -> None:
    out = {"meta": _meta(args)}
    out.update(doc)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=2, sort_keys=False, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    return str(o)


def _load_measure(path: str):
    from .families import family_from_json
    from .measures import MixingMeasure

    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    G = MixingMeasure.from_dict(doc)
    fam = family_from_json(doc["family"]) if "family" in doc else None
    return G, fam, doc


def _need_family(fam, args):
    if fam is not None:
        return fam
    if getattr(args, "family", None):
        from .families import family_from_json

        return family_from_json(json.loads(args.family))
    raise UsageError("a family descriptor is required (JSON 'family' field or --family)")


# --- subcommands ---------------------------------------------------------------------

def cmd_wasserstein(args) -> int:
    from .measures import wasserstein

    A, _, _ = _load_measure(args.a)
    B, _, _ = _load_measure(args.b)
    val, plan = wasserstein(A, B, args.r)
    print(repr(float(val)))
    if args.out:
        _write_json(args.out, {"r": args.r, "value": val, "plan": plan.q}, args)
    return EXIT_OK


def cmd_divergence(args) -> int:
    from .divergences import BoundRecord, bound_check, default_spec

    A, fa, _ = _load_measure(args.a)
    B, fb, _ = _load_measure(args.b)
    fam = _need_family(fa or fb, args)
    spec = default_spec(fam, [A, B], rtol=args.rtol, atol=args.atol)
    rec = bound_check(A, B, fam, r=args.r, spec=spec, composite=not args.no_composite)
    print(f"V = {rec.V!r}\nh = {rec.h!r}\nW1 = {rec.W1!r}\nW2 = {rec.W2!r}")
    if args.out:
        from .experiments import write_csv

        write_csv(args.out, BoundRecord.CSV_HEADER.split(","),
                  [[rec.family, rec.r, rec.W1, rec.W2, rec.Wr, rec.V, rec.h, rec.composite]], _meta(args))
    return EXIT_OK


def cmd_classify(args) -> int:
    from .identifiability import gamma_classify, skew_classify

    G, fam, _ = _load_measure(args.g0)
    kind = args.kind or (fam.kind if fam is not None else None)
    if kind == "gamma":
        doc = gamma_classify(G, args.setting).to_dict()
    elif kind == "skew_normal":
        doc = skew_classify(G).to_dict()
    else:
        raise UsageError("classify needs --kind gamma or skew_normal")
    print(json.dumps(doc, default=_jsonable))
    if args.out:
        _write_json(args.out, doc, args)
    return EXIT_OK


def cmd_probe(args) -> int:
    from .identifiability import rank_probe

    G, fam, _ = _load_measure(args.g0)
    fam = _need_family(fam, args)
    res = rank_probe(fam, list(G.points), order=args.order, N=args.N, seed=args.seed)
    doc = res.to_dict()
    print(json.dumps(doc, default=_jsonable))
    if args.out:
        _write_json(args.out, doc, args)
    return EXIT_OK


def cmd_polysys(args) -> int:
    from . import polysys as ps

    if args.gaussian == args.skew:
        raise UsageError("choose exactly one of --gaussian and --skew")
    if args.table:
        if args.gaussian:
            s = 1 if args.k_minus_k0 is None else args.k_minus_k0
            out = ps.rbar(s, r_max=args.r_max, budget=args.budget, seed=args.seed)
            print(f"r̄ = {out['rbar']} (k-k0 = {s}; certified table value: {out['certified']}; "
                  f"search agrees: {out['agrees']})")
        else:
            k = 1 if args.k_star is None else args.k_star
            out = ps.sbar(k, r_max=args.r_max, budget=args.budget, seed=args.seed)
            print(f"s̄ = {out['sbar']} (k* = {k}; certified table value: {out['certified']}; "
                  f"search agrees: {out['agrees']})")
        doc = out
    else:
        if args.r is None:
            raise UsageError("--r is required without --table")
        s = 1 if args.k_minus_k0 is None else args.k_minus_k0
        k = 1 if args.k_star is None else args.k_star
        sys_ = ps.gaussian_system(s + 1, args.r) if args.gaussian else ps.skew_system(k, args.r)
        doc = ps.find_nontrivial(sys_, budget=args.budget, seed=args.seed).to_dict()
        print(json.dumps(doc, default=_jsonable))
    if args.out:
        _write_json(args.out, doc, args)
    return EXIT_OK


def _read_data(path: str) -> np.ndarray:
    rows = []
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                try:
                    rows.append([float(v) for v in line.split(",")])
                except ValueError:
                    if rows:
                        raise UsageError(f"non-numeric row in {path}: {line!r}") from None
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise UsageError("data CSV must hold rows of equal length")
    return np.array(rows)


def cmd_fit(args) -> int:
    from .estimation import FitConfig, fit_gamma_mle, fit_gaussian_em

    X = _read_data(args.data)
    cfg = FitConfig(k=args.k, restarts=args.restarts, max_iter=args.max_iter, tol=args.tol,
                    eig_lo=args.eig_lo, eig_hi=args.eig_hi, seed=args.seed, threads=args.threads)
    if args.model == "gaussian":
        res = fit_gaussian_em(X, cfg)
        fam = {"kind": "gaussian", "d": X.shape[1]}
    else:
        if X.shape[1] != 1:
            raise UsageError("Gamma data must have one column")
        res = fit_gamma_mle(X[:, 0], cfg)
        fam = {"kind": "gamma"}
    doc = res.to_dict(fam)
    print(f"log-likelihood {res.loglik!r} after {res.iterations} iterations (restart {res.restart}, "
          f"converged {res.converged})")
    _write_json(args.out or "fit.json", doc, args)
    return EXIT_OK


def cmd_experiment(args) -> int:
    from . import experiments as ex

    os.makedirs(args.out, exist_ok=True)
    meta = _meta(args)
    name = args.preset
    base = os.path.join(args.out, name)
    if name in ex.SCATTER_PRESETS:
        cfg = ex.scatter_preset(name, M=args.M, seed=args.seed, threads=args.threads)
        res = ex.run_scatter(cfg)
        ex.write_csv(base + ".csv", ex.SCATTER_HEADER, res.rows, meta)
        col = ex.SCATTER_HEADER.index(cfg.envelope_on)
        xs = [row[col] for row in res.rows]
        ys = [row[4] for row in res.rows]
        guides = ex.envelope_guides(res.lower) + ex.envelope_guides(res.upper)
        with open(base + ".svg", "w", encoding="utf-8") as fh:
            fh.write(ex.svg_loglog([("V", xs, ys, "#1f5fa8")], name, cfg.envelope_on, "V", guides))
        summary = res.summary()
        print(f"{name}: lower slope {summary['lower_slope']:.3f}, upper slope {summary['upper_slope']:.3f}")
    elif name in ex.RATE_PRESETS:
        kw = {}
        if args.R is not None:
            kw["R"] = args.R
        if args.n_grid:
            kw["n_grid"] = tuple(int(v) for v in args.n_grid.split(","))
        cfg = ex.rate_preset(name, seed=args.seed, threads=args.threads, **kw)
        res = ex.run_rate_sweep(cfg)
        ex.write_csv(base + ".csv", ex.RATE_HEADER, res.rows, meta)
        good = [row for row in res.rows if math.isfinite(row[2]) and row[2] > 0]
        fit = res.fit
        icpt = float(np.mean([math.log10(r[2]) for r in good]) - fit.slope *
                     np.mean([math.log10(r[0]) for r in good])) if good else 0.0
        with open(base + ".svg", "w", encoding="utf-8") as fh:
            fh.write(ex.svg_loglog([(f"W{cfg.r:g}", [r[0] for r in good], [r[2] for r in good], "#a8321f")],
                                   name, "n", f"W{cfg.r:g}", [(fit.slope, icpt)]))
        summary = fit.to_dict()
        print(f"{name}: slope {fit.slope:.3f} (95% CI {fit.ci[0]:.3f} .. {fit.ci[1]:.3f}), "
              f"{fit.failures} failed fits")
    elif name.startswith("adversarial_") and name[len("adversarial_"):] in ex.ADVERSARIAL_KINDS:
        kind = name[len("adversarial_"):]
        res = ex.run_adversarial(kind)
        ex.write_csv(base + ".csv", ex.ADVERSARIAL_HEADER, res.rows, meta)
        with open(base + ".svg", "w", encoding="utf-8") as fh:
            fh.write(ex.svg_loglog([("ratio", [r[0] for r in res.rows], [r[5] for r in res.rows], "#2f7d32")],
                                   name, "n", "ratio"))
        summary = {"verdicts": res.verdicts, "passed": res.passed}
        print(f"{name}: " + ", ".join(f"r={v['r']:g} {'ok' if v['pass'] else 'not vanishing'}"
                                      for v in res.verdicts))
    else:
        raise UsageError(f"unknown preset {name!r}")
    _write_json(base + ".json", {"preset": name, "summary": summary}, args)
    return EXIT_OK


# --- parser -------------------------------------------------------------------------

def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out")
    common.add_argument("--no-timestamp", action="store_true")
    common.add_argument("--config", help="JSON file whose keys replace flag defaults")

    p = _Parser(prog="mixident", description="Identifiability and convergence tools for finite mixtures.")
    p.add_argument("--version", action="version", version=f"mixident {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("wasserstein", parents=[common], help="W_r between two mixing measures")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--r", type=float, default=1.0)
    s.set_defaults(func=cmd_wasserstein)

    s = sub.add_parser("divergence", parents=[common], help="V, h and the bound record")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--r", type=float, default=2.0)
    s.add_argument("--family", help="family descriptor JSON if the inputs carry none")
    s.add_argument("--rtol", type=float, default=1e-7)
    s.add_argument("--atol", type=float, default=1e-12)
    s.add_argument("--no-composite", action="store_true")
    s.set_defaults(func=cmd_divergence)

    s = sub.add_parser("classify", parents=[common], help="Gamma or skew-normal regime of G0")
    s.add_argument("--g0", required=True)
    s.add_argument("--kind", choices=["gamma", "skew_normal"])
    s.add_argument("--setting", choices=["exact", "over"], default="exact")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("probe", parents=[common], help="numerical rank probe of derivative independence")
    s.add_argument("--g0", required=True)
    s.add_argument("--order", type=int, choices=[1, 2], default=1)
    s.add_argument("--N", type=int)
    s.add_argument("--family")
    s.set_defaults(func=cmd_probe)

    s = sub.add_parser("polysys", parents=[common], help="rate-governing polynomial systems")
    s.add_argument("--gaussian", action="store_true")
    s.add_argument("--skew", action="store_true")
    s.add_argument("--k-minus-k0", type=int)
    s.add_argument("--k-star", type=int)
    s.add_argument("--r", type=int)
    s.add_argument("--r-max", type=int, default=8)
    s.add_argument("--budget", type=int, default=500)
    s.add_argument("--table", action="store_true")
    s.set_defaults(func=cmd_polysys)

    s = sub.add_parser("fit", parents=[common], help="maximum-likelihood fit of a mixture")
    s.add_argument("--data", required=True)
    s.add_argument("--model", choices=["gaussian", "gamma"], default="gaussian")
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--restarts", type=int, default=10)
    s.add_argument("--max-iter", type=int, default=1000)
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--eig-lo", type=float, default=0.05)
    s.add_argument("--eig-hi", type=float, default=20.0)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("experiment", parents=[common], help="run a named experiment preset")
    s.add_argument("--preset", required=True)
    s.add_argument("--M", type=int, default=2000)
    s.add_argument("--R", type=int)
    s.add_argument("--n-grid")
    s.set_defaults(func=cmd_experiment)
    return p


def _apply_config(parser: _Parser, argv: list):
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                conf = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(conf, dict):
            raise UsageError("config must be a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        bad = sorted(set(k.replace("-", "_") for k in conf) - known)
        if bad:
            raise UsageError(f"unknown config keys {bad}")
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in conf.items()})
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        if not getattr(args, "command", None):
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        if args.command == "experiment" and not args.out:
            raise UsageError("experiment needs --out DIR")
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (MixidentError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
