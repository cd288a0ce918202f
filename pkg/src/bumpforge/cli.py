"""Command-line front end.

Subcommands: hypotheses, limit, solve, maxmin, ladder, scan, probe.
Exit codes: 0 ok, 1 solver failure, 2 hypothesis failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .decomp import BumpLayout, make_thresholds
from .diagnostics import b_scan, decay_check, ground_state_probe, shape_distance
from .energy import Problem, action_I
from .errors import BumpforgeError, ConfigError, IndeterminateVerdict, NotConverged
from .field import (
    CoefficientPair,
    Domain,
    GridField,
    check_hypotheses,
    domain_from_config,
    e1_pair,
    e2_pair,
    flat_pair,
    pair_from_config,
    read_config,
)
from .limit import solve_ground_state
from .maxmin import (
    InnerOptions,
    OuterOptions,
    initial_guess,
    ladder_check,
    minimize_on_S,
    outer_maximize,
)

EXIT_OK, EXIT_SOLVER, EXIT_HYPOTHESES, EXIT_USAGE = 0, 1, 2, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- config

def _floats(text: str) -> list:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def parse_centers(text: str, N: int) -> np.ndarray:
    """'x1,y1;x2,y2' -> array of shape (k, N)."""
    rows = [_floats(chunk) for chunk in text.split(";") if chunk.strip()]
    if not rows or any(len(r) != N for r in rows):
        raise ConfigError(f"centers must be ';'-separated tuples of {N} numbers")
    return np.array(rows)


def _preset(name: str, C, n) -> CoefficientPair:
    if name == "flat":
        return flat_pair()
    if name == "e1":
        return e1_pair(C if C is not None else 0.1)
    if name == "e2":
        return e2_pair(n if n is not None else 16, C if C is not None else 0.05)
    raise ConfigError(f"unknown preset {name!r}")


class RunConfig:
    """Resolved configuration: config file first, command-line flags on top."""

    def __init__(self, args):
        cp = read_config(args.config) if args.config else None
        sections = {s: dict(cp[s]) for s in cp.sections()} if cp else {}
        problem = sections.get("problem", {})
        solver = sections.get("solver", {})

        def pick(flag, key, default, conv=float, sec=problem):
            val = getattr(args, flag, None)
            if val is not None:
                return val
            if key in sec:
                try:
                    return conv(sec[key])
                except ValueError as exc:
                    raise ConfigError(f"{key} must be {conv.__name__}") from exc
            return default

        if cp is not None and cp.has_section("domain"):
            dom = domain_from_config(cp)
            N, L, M = dom.N, dom.L, dom.M
        else:
            N = args.N if getattr(args, "N", None) is not None else 2
            L, M = (12.0, 481) if N == 1 else (12.0, 129)
        N = args.N if getattr(args, "N", None) is not None else N
        L = args.L if getattr(args, "L", None) is not None else L
        M = args.M if getattr(args, "M", None) is not None else M
        self.domain = Domain(N, float(L), int(M))
        if getattr(args, "preset", None):
            self.pair = _preset(args.preset, getattr(args, "C", None), getattr(args, "n", None))
        elif cp is not None and cp.has_section("coefficients"):
            self.pair = pair_from_config(cp, N)
            if getattr(args, "C", None) is not None:
                self.pair = self.pair.with_b_amplitude(args.C)
        else:
            self.pair = flat_pair(getattr(args, "a_inf", None) or 1.0)
        if N == 1 and len(self.pair.zeta) != 1:
            self.pair = dataclasses.replace(self.pair, zeta=(1.0,))
        self.p = pick("p", "p", 3.0)
        self.q = pick("q", "q", 2.0)
        if not 1 < self.q < self.p:
            raise ConfigError("exponents must satisfy 1 < q < p")
        self.delta = pick("delta", "delta", None)
        self.seed = int(pick("seed", "seed", 0, int))
        self.inner = InnerOptions(
            energy_tol=pick("energy_tol", "energy_tol", 1e-10, sec=solver),
            residual_tol=pick("residual_tol", "residual_tol", 1e-6, sec=solver),
            max_sweeps=int(pick("max_sweeps", "max_sweeps", 300, int, sec=solver)),
        )
        self.outer = OuterOptions(
            seed=self.seed,
            n_random=int(pick("n_random", "n_random", 2, int, sec=solver)),
            max_evals=int(pick("max_evals", "max_evals", 80, int, sec=solver)),
        )
        self.config_path = args.config

    def as_dict(self) -> dict:
        return {
            "domain": dataclasses.asdict(self.domain),
            "coefficients": _jsonable(dataclasses.asdict(self.pair)),
            "p": self.p,
            "q": self.q,
            "delta_override": self.delta,
            "seed": self.seed,
            "inner": dataclasses.asdict(self.inner),
            "outer": _jsonable(dataclasses.asdict(self.outer)),
            "note": "no Sobolev-critical bound applies for N <= 2",
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _emit(payload: dict, out) -> None:
    text = json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _setup(cfg: RunConfig):
    dom, pair = cfg.domain, cfg.pair
    pack = solve_ground_state(pair.a_inf, cfg.p, dom)
    thr = make_thresholds(pack, pair.a0, pair.eta, cfg.q, cfg.delta)
    prob = Problem.from_pair(pair, dom, cfg.p, cfg.q)
    return pack, thr, prob


def _grid_reference(cfg, pack, thr):
    """mu of one bump for the limit problem on the same grid (grid analogue of m_inf)."""
    flat = Problem.flat(cfg.domain, cfg.pair.a_inf, cfg.p, cfg.q)
    lay = BumpLayout(np.zeros((1, cfg.domain.N)), thr.R)
    return minimize_on_S(lay, initial_guess(lay, pack, flat, thr), flat, thr, cfg.inner).mu


def _gate(cfg, args):
    if getattr(args, "skip_hypotheses", False):
        return None
    rep = check_hypotheses(cfg.pair, cfg.domain)
    if not rep.passed:
        return rep
    return None


# ---------------------------------------------------------------- commands

def cmd_hypotheses(args, cfg):
    rep = check_hypotheses(cfg.pair, cfg.domain)
    _emit({"command": "hypotheses", "config": cfg.as_dict(), "report": rep.as_dict()}, args.out)
    return EXIT_OK if rep.passed else EXIT_HYPOTHESES


def cmd_limit(args, cfg):
    a_inf = args.a_inf if args.a_inf is not None else cfg.pair.a_inf
    dom = cfg.domain
    pack = solve_ground_state(a_inf, cfg.p, dom)
    prof = pack.profile
    _emit({"command": "limit", "config": cfg.as_dict(), "a_inf": a_inf, "p": cfg.p, "N": dom.N,
           "L": dom.L, "M": dom.M, "peak": pack.peak, "m_inf": pack.m_inf,
           "sigma": prof.sigma, "kappa": prof.kappa}, args.out)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["r", "w", "dw"])
            for row in zip(prof.r, prof.w, prof.dw):
                wr.writerow([repr(float(x)) for x in row])
    return EXIT_OK


def cmd_solve(args, cfg):
    pack, thr, prob = _setup(cfg)
    centers = parse_centers(args.centers, cfg.domain.N)
    if args.k is not None and args.k != len(centers):
        raise ConfigError(f"--k {args.k} does not match {len(centers)} centers")
    lay = BumpLayout(centers, thr.R)
    lay.validate(cfg.domain, 1.0 / math.sqrt(cfg.pair.a0))
    init = initial_guess(lay, pack, prob, thr)
    status = EXIT_OK
    try:
        res = minimize_on_S(lay, init, prob, thr, cfg.inner)
    except NotConverged as exc:
        res, status = exc.result, EXIT_SOLVER
    payload = {"command": "solve", "config": cfg.as_dict(), "thresholds": thr.as_dict(),
               "m_inf": pack.m_inf, **res.as_dict(),
               "energy": action_I(res.u, prob).as_dict()}
    try:
        payload["decay_rate"], payload["decay_pass"] = decay_check(res, lay, thr, cfg.domain,
                                                                   cfg.pair.a0)
    except BumpforgeError as exc:
        payload["decay_rate"], payload["decay_pass"] = None, str(exc)
    dists, inside = shape_distance(res, lay, pack, min(thr.R / 2, cfg.domain.L - np.abs(centers).max()),
                                   cfg.domain, thr.delta)
    payload["shape_distance"], payload["support_inside"] = dists, inside
    _emit(payload, args.out)
    if args.csv:
        GridField(cfg.domain, res.u).to_csv(args.csv)
    return status


def _maxmin_payload(rep):
    return rep.as_dict()


def cmd_maxmin(args, cfg):
    bad = _gate(cfg, args)
    if bad is not None:
        _emit({"command": "maxmin", "config": cfg.as_dict(), "hypotheses": bad.as_dict()}, args.out)
        return EXIT_HYPOTHESES
    pack, thr, prob = _setup(cfg)
    rep = outer_maximize(args.k, prob, thr, pack, cfg.pair.a0, zeta=cfg.pair.zeta,
                         inner=cfg.inner, opts=cfg.outer)
    _emit({"command": "maxmin", "config": cfg.as_dict(), "thresholds": thr.as_dict(),
           "m_inf": pack.m_inf, "report": _maxmin_payload(rep)}, args.out)
    if args.csv:
        GridField(cfg.domain, rep.result.u).to_csv(args.csv)
    return EXIT_OK


def cmd_ladder(args, cfg):
    bad = _gate(cfg, args)
    if bad is not None:
        _emit({"command": "ladder", "config": cfg.as_dict(), "hypotheses": bad.as_dict()}, args.out)
        return EXIT_HYPOTHESES
    pack, thr, prob = _setup(cfg)
    m_grid = _grid_reference(cfg, pack, thr)
    m_ref = m_grid if args.reference == "grid" else pack.m_inf
    reports, seeds = [], None
    for k in range(1, args.k + 1):
        rep = outer_maximize(k, prob, thr, pack, cfg.pair.a0, zeta=cfg.pair.zeta,
                             inner=cfg.inner, opts=cfg.outer, seeds=seeds)
        reports.append(rep)
        prev = rep.layout.centers
        seeds = [np.vstack([prev, -prev[:1]])] if k == 1 else [np.vstack([prev, -prev.sum(axis=0, keepdims=True)])]
    tol = args.tol * m_ref if args.relative_tol else args.tol
    flags = ladder_check(reports, m_ref, tol)
    _emit({"command": "ladder", "config": cfg.as_dict(), "thresholds": thr.as_dict(),
           "m_inf": pack.m_inf, "m_inf_grid": m_grid, "reference": args.reference,
           "tol": tol, "rungs": flags, "reports": [_maxmin_payload(r) for r in reports]}, args.out)
    return EXIT_OK


def cmd_scan(args, cfg):
    bad = _gate(cfg, args)
    if bad is not None:
        _emit({"command": "scan", "config": cfg.as_dict(), "hypotheses": bad.as_dict()}, args.out)
        return EXIT_HYPOTHESES
    pack, thr, _ = _setup(cfg)
    res = b_scan(cfg.pair, _floats(args.C_list), args.k, cfg.domain, pack, cfg.p, cfg.q,
                 thr=thr, inner=cfg.inner, outer=cfg.outer)
    _emit({"command": "scan", "config": cfg.as_dict(), "thresholds": thr.as_dict(),
           **res.as_dict()}, args.out)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            fields = list(res.rows[0].as_dict())
            wr = csv.DictWriter(fh, fieldnames=fields)
            wr.writeheader()
            for row in res.rows:
                wr.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.as_dict().items()})
    return EXIT_OK


def cmd_probe(args, cfg):
    status = EXIT_OK
    try:
        verdict = ground_state_probe(cfg.pair, _floats(args.L_list), cfg.domain.N, cfg.p, cfg.q,
                                     h_target=args.h, budget=args.budget)
    except IndeterminateVerdict as exc:
        verdict, status = exc.args[0], EXIT_SOLVER
    _emit({"command": "probe", "config": cfg.as_dict(), **verdict.as_dict()}, args.out)
    return status


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bumpforge", description="Multi-bump standing waves by a max-min scheme.")
    parser.add_argument("--version", action="version", version=__version__)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI file with [coefficients], [domain], [cone], [problem], [solver]")
    common.add_argument("--preset", choices=["flat", "e1", "e2"], help="built-in coefficient pair")
    common.add_argument("--C", type=float, help="amplitude of b")
    common.add_argument("--n", type=int, help="well index for the e2 preset")
    common.add_argument("--N", type=int, choices=[1, 2])
    common.add_argument("--L", type=float)
    common.add_argument("--M", type=int)
    common.add_argument("--p", type=float)
    common.add_argument("--q", type=float)
    common.add_argument("--delta", type=float, help="override the automatic delta")
    common.add_argument("--seed", type=int)
    common.add_argument("--energy-tol", dest="energy_tol", type=float)
    common.add_argument("--residual-tol", dest="residual_tol", type=float)
    common.add_argument("--max-sweeps", dest="max_sweeps", type=int)
    common.add_argument("--max-evals", dest="max_evals", type=int)
    common.add_argument("--n-random", dest="n_random", type=int)
    common.add_argument("--out", help="write JSON here instead of stdout")
    common.add_argument("--skip-hypotheses", action="store_true",
                        help="do not stop when (h1)-(h4) fail")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("hypotheses", parents=[common], help="check (h1)-(h4) on the grid")
    p.set_defaults(func=cmd_hypotheses)

    p = sub.add_parser("limit", parents=[common], help="ground state of the limit problem")
    p.add_argument("--a-inf", dest="a_inf", type=float)
    p.add_argument("--csv", help="radial profile as CSV")
    p.set_defaults(func=cmd_limit)

    p = sub.add_parser("solve", parents=[common], help="inner minimisation for fixed centers")
    p.add_argument("--centers", required=True, help="'x1,y1;x2,y2'")
    p.add_argument("--k", type=int)
    p.add_argument("--csv", help="minimiser field as CSV")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("maxmin", parents=[common], help="outer maximisation over layouts")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--csv", help="best minimiser field as CSV")
    p.set_defaults(func=cmd_maxmin)

    p = sub.add_parser("ladder", parents=[common], help="mu_1..mu_K and the ladder inequalities")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--tol", type=float, default=0.0)
    p.add_argument("--relative-tol", action="store_true", help="tol is relative to m_inf")
    p.add_argument("--reference", choices=["grid", "continuum"], default="grid",
                   help="m_inf from the same grid or from the radial profile")
    p.set_defaults(func=cmd_ladder)

    p = sub.add_parser("scan", parents=[common], help="trend scan over the amplitude of b")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--C-list", dest="C_list", default="0.2,0.1,0.05,0.025")
    p.add_argument("--csv", help="scan table as CSV")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("probe", parents=[common], help="ground-state existence probe")
    p.add_argument("--L-list", dest="L_list", default="20,30")
    p.add_argument("--h", type=float, default=0.25, help="target grid spacing")
    p.add_argument("--budget", type=int, default=150)
    p.set_defaults(func=cmd_probe)
    return parser


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = RunConfig(args)
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_USAGE
    try:
        return args.func(args, cfg)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_USAGE
    except BumpforgeError as exc:
        sys.stderr.write(f"solver error: {exc}\n")
        return EXIT_SOLVER


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
