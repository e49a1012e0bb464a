"""Command-line front end.

Each verb reads one JSON config (flags override its fields), runs a study
and writes CSV/JSON files into ``--out``.  Exit codes: 0 success, 2 config
error, 3 capability error, 4 hypothesis violation, 5 non-convergence.

Outputs contain no timestamps or timings unless ``--timing`` is given, so
identical config and seed give byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from pathlib import Path

import numpy as np

from . import analysis
from .driver import check_chen, check_weak_geometric, driver_from_config
from .errors import ConfigError, HypothesisViolation, RoughFlowError
from .fields import analytic_four_point, empirical_four_point_defect, field_from_config
from .flows import (
    Partition,
    almost_flow_defect,
    galaxy_study,
    linear_flow,
    sample_points,
    sewing_gap,
    ul_lipschitz_estimate,
)
from .reports import to_jsonable
from .schemes import SchemeSpec
from .sewing import (
    DegenerateRateWarning,
    convergence_study,
    davie_constant_continuous,
    davie_constant_discrete,
    sew,
    solve_driven_ode,
    theoretical_rate,
)

VERBS = ("solve", "rate", "verify", "compare", "invert", "constants")


@dataclass
class RunConfig:
    driver: dict
    field: dict
    schemes: list
    starts: np.ndarray
    level: int = 8
    levels: list = field(default_factory=list)
    seed: int = 0
    tol: float = 1e-6
    reference: str = "auto"
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, cfg, seed=None, levels=None):
        if not isinstance(cfg, dict) or not cfg:
            raise ConfigError("config must be a non-empty JSON object")
        try:
            driver, fld = dict(cfg["driver"]), dict(cfg["field"])
        except (KeyError, TypeError):
            raise ConfigError("config needs 'driver' and 'field' objects") from None
        raw = cfg.get("schemes", cfg.get("scheme", "davie"))
        raw = raw if isinstance(raw, list) else [raw]
        schemes = [SchemeSpec.parse(s) for s in raw]
        seed = int(cfg.get("seed", 0) if seed is None else seed)
        level = int(cfg.get("level", 8) if levels is None else levels)
        if level < 1:
            raise ConfigError("level must be >= 1")
        lv = cfg.get("levels")
        if levels is not None or lv is None:
            lv = list(range(max(1, level - 5), level + 1))
        starts = _starts(cfg.get("starts", cfg.get("start")), seed)
        known = {"driver", "field", "scheme", "schemes", "seed", "level", "levels",
                 "starts", "start", "tol", "reference"}
        return cls(driver, fld, schemes, starts, level, [int(k) for k in lv], seed,
                   float(cfg.get("tol", 1e-6)), str(cfg.get("reference", "auto")),
                   {k: v for k, v in cfg.items() if k not in known})

    def build(self):
        try:
            d = driver_from_config(self.driver)
            v = field_from_config(self.field)
        except RoughFlowError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad driver/field spec: {exc}") from None
        if self.starts.shape[-1] != v.state_dim:
            raise ConfigError(f"starts have dimension {self.starts.shape[-1]}, field expects {v.state_dim}")
        return d, v


def _starts(spec, seed):
    if spec is None:
        raise ConfigError("config needs 'starts' (points or {'random': n, 'dim': d})")
    if isinstance(spec, dict):
        try:
            return sample_points(int(spec["random"]), int(spec["dim"]), float(spec.get("box", 1.0)), seed)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad random starts spec: {exc}") from None
    arr = np.atleast_2d(np.asarray(spec, dtype=float))
    if arr.ndim != 2:
        raise ConfigError("starts must be a list of points")
    return arr


def _dump(obj):
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2) + "\n"


class Output:
    def __init__(self, out, quiet):
        self.dir = Path(out)
        self.quiet = quiet
        self.files = {}

    def add(self, name, text):
        self.files[name] = text

    def flush(self, summary):
        # written once, at the end of the command
        self.dir.mkdir(parents=True, exist_ok=True)
        for name, text in self.files.items():
            (self.dir / name).write_text(text)
        if not self.quiet:
            sys.stdout.write(_dump(summary))


def _exact_linear_generator(cfg: RunConfig):
    """``sum_ij A_ij B_j B_i`` for a linear field driven by pure area."""
    if cfg.driver.get("kind") != "pure_area" or cfg.field.get("kind") != "linear":
        return None
    A = np.asarray(cfg.driver["area"], dtype=float)
    B = np.asarray(cfg.field["matrices"], dtype=float)
    return np.einsum("ij,jmp,ipq->mq", A, B, B)


def _reference(cfg: RunConfig, d, v):
    kind = cfg.reference
    T = d.T
    if kind in ("auto", "exact"):
        C = _exact_linear_generator(cfg)
        if C is not None:
            exact = linear_flow(C)
            return lambda pts: exact(0.0, T, pts), "exact"
        if kind == "exact":
            raise ConfigError("an exact reference needs a linear field driven by pure area")
    if kind in ("auto", "ode"):
        vel = getattr(d, "velocity", None)
        if vel is not None:
            return lambda pts: solve_driven_ode(v, vel, 0.0, T, pts), "ode"
        if kind == "ode":
            raise ConfigError("an ODE reference needs a smooth driver")
    if kind in ("auto", "self"):
        return None, "self"
    raise ConfigError(f"unknown reference {kind!r}")


def _order(spec: SchemeSpec):
    return spec.n if spec.kind == "euler_n" else 2


def cmd_solve(cfg: RunConfig, out: Output, args):
    d, v = cfg.build()
    phi = cfg.schemes[0].build(v, d)
    res = sew(phi, 0.0, d.T, cfg.starts, max_level=max(cfg.level, 2), tol=cfg.tol, strict=True)
    path = analysis.solve(phi, cfg.starts, d.T, cfg.level)
    check = analysis.davie_solution_check(path, phi, d.params.remainder, d.control)
    out.add("trajectory.csv", path.to_csv())
    summary = {
        "scheme": cfg.schemes[0].label,
        "level": cfg.level,
        "starts": cfg.starts,
        "final": path.values[-1],
        "sewn_final": res.value,
        "sew_level": res.level,
        "cauchy_trace": res.trace,
        "davie_C": check.value,
    }
    out.add("solve.json", _dump(summary))
    return {k: summary[k] for k in ("scheme", "level", "final", "sew_level", "davie_C")}


def cmd_rate(cfg: RunConfig, out: Output, args):
    d, v = cfg.build()
    ref, ref_kind = _reference(cfg, d, v)
    ref_values = ref(cfg.starts) if ref is not None else None
    p, gamma = d.params.p, d.params.gamma
    reports = {}
    for spec in cfg.schemes:
        phi = spec.build(v, d)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DegenerateRateWarning)
            theory = theoretical_rate(_order(spec), gamma, p)
        rep = convergence_study(phi, ref_values, cfg.starts, cfg.levels, T=d.T,
                                theoretical=theory, seed=cfg.seed)
        for w in caught:
            rep.meta.setdefault("notes", []).append(str(w.message))
            if not args.quiet:
                print(f"roughflow rate: {spec.label}: {w.message}", file=sys.stderr)
        rep.meta["reference"] = ref_kind if ref is not None else rep.meta["reference"]
        out.add(f"rate_{spec.label}.csv", rep.to_csv(timing=args.timing))
        reports[spec.label] = rep.to_dict(timing=args.timing)
    out.add("rate.json", _dump(reports))
    return {k: {"fitted_order": r["fitted_order"], "theoretical_order": r["theoretical_order"]}
            for k, r in reports.items()}


def cmd_verify(cfg: RunConfig, out: Output, args):
    d, v = cfg.build()
    phi = cfg.schemes[0].build(v, d)
    varpi, omega = d.params.remainder, d.control
    x = cfg.extra
    grid = Partition.dyadic(d.T, int(x.get("grid_level", 4))).times
    points = sample_points(int(x.get("points", 8)), v.state_dim, float(x.get("box", 1.0)), cfg.seed)
    pairs = np.stack([points, points + 1e-3 * sample_points(len(points), v.state_dim, 1.0, cfg.seed + 1)], axis=1)
    pi = Partition.dyadic(d.T, cfg.level)
    hard, soft = {}, {}
    hard["chen"] = check_chen(d, grid)
    hard["weak_geometric"] = check_weak_geometric(d, grid)
    consts = analytic_four_point(v).scaled(1.0 + float(x.get("four_point_slack", 0.1)))
    hard["four_point"] = empirical_four_point_defect(v, consts, samples=int(x.get("quadruples", 10_000)),
                                                     radius=float(x.get("box", 1.0)), seed=cfg.seed,
                                                     dim=v.state_dim)
    M = almost_flow_defect(phi, grid, points, varpi, omega)
    soft["almost_flow_M"] = M
    soft["sewing_L"] = sewing_gap(phi, pi, grid[::2], points, varpi, omega, M=M.value,
                                  delta_T=d.params.delta())
    soft["ul_lipschitz"] = ul_lipschitz_estimate(phi, pi, pairs, grid=grid[::4])
    certified, reps = analysis.certify_davie_solution(
        lambda k: analysis.solve(phi, points, d.T, k), phi, varpi, omega,
        [cfg.level, cfg.level + 1, cfg.level + 2])
    soft["davie_solution"] = reps
    soft["horizon_condition"] = {"ok": d.params.horizon_ok(), "delta_T": d.params.delta(),
                                 "kappa": varpi.kappa}
    failures = [k for k, r in hard.items() if not r.ok]
    if not np.isfinite(M.value):
        failures.append("almost_flow_M")
    if not certified:
        failures.append("davie_solution")
    report = {
        "scheme": cfg.schemes[0].label,
        "hard": {k: r.to_dict() for k, r in hard.items()},
        "measured": {k: ([r.to_dict() for r in val] if isinstance(val, list)
                         else val.to_dict() if hasattr(val, "to_dict") else val)
                     for k, val in soft.items()},
        "failures": failures,
    }
    out.add("verify.json", _dump(report))
    if failures:
        out.flush({"failures": failures})
        raise HypothesisViolation(f"hard invariants violated: {', '.join(failures)}")
    return {"failures": failures, "almost_flow_M": M.value, "davie_C": reps[-1].value}


def cmd_compare(cfg: RunConfig, out: Output, args):
    if len(cfg.schemes) < 2:
        raise ConfigError("compare needs at least two schemes")
    d, v = cfg.build()
    flows = {s.label: s.build(v, d) for s in cfg.schemes}
    varpi, omega = d.params.remainder, d.control
    x = cfg.extra
    levels = [int(k) for k in x.get("galaxy_levels", [4, 5, 6])]
    points = sample_points(int(x.get("points", 2)), v.state_dim, float(x.get("box", 1.0)), cfg.seed)
    galaxy, limits = {}, {}
    finals = {k: analysis.solve(phi, cfg.starts, d.T, cfg.level).values[-1] for k, phi in flows.items()}
    for (n1, p1), (n2, p2) in combinations(flows.items(), 2):
        key = f"{n1}|{n2}"
        stable, reps = galaxy_study(p1, p2, d.T, levels, points, varpi, omega,
                                    max_pairs=int(x.get("max_pairs", 2000)), seed=cfg.seed)
        galaxy[key] = {"stable": stable, "values": [r.value for r in reps], "levels": levels}
        limits[key] = float(np.max(np.linalg.norm(finals[n1] - finals[n2], axis=-1)))
    report = {"level": cfg.level, "galaxy": galaxy, "limit_distance": limits}
    out.add("compare.json", _dump(report))
    return report


def cmd_invert(cfg: RunConfig, out: Output, args):
    d, v = cfg.build()
    phi = cfg.schemes[0].build(v, d)
    s, t = float(cfg.extra.get("s", 0.0)), float(cfg.extra.get("t", d.T))
    left, right = analysis.inversion_round_trip(phi, s, t, cfg.starts, cfg.level)
    report = {"scheme": cfg.schemes[0].label, "level": cfg.level, "s": s, "t": t,
              "zeta_after_psi": left, "psi_after_zeta": right, "tol": cfg.tol,
              "ok": max(left, right) <= cfg.tol}
    out.add("invert.json", _dump(report))
    return report


def _fraction(text):
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"not a rational number: {text!r}") from None


def cmd_constants(args, out: Output):
    cfg = {}
    if args.config:
        cfg = _load(args.config).get("constants", {})
    vals = {k: getattr(args, k) if getattr(args, k) is not None else cfg.get(k)
            for k in ("D", "B", "alpha", "kappa")}
    if vals["B"] is None or vals["alpha"] is None or vals["kappa"] is None:
        raise ConfigError("constants needs B, alpha and kappa (and D for the discrete constant)")
    B, alpha, kappa = (_fraction(str(vals[k])) for k in ("B", "alpha", "kappa"))
    report = {"B": str(B), "alpha": str(alpha), "kappa": str(kappa)}
    if vals["D"] is not None:
        D = _fraction(str(vals["D"]))
        report["D"] = str(D)
        report["discrete"] = str(davie_constant_discrete(D, B, alpha, kappa))
    report["continuous"] = str(davie_constant_continuous(B, alpha, kappa))
    out.add("constants.json", _dump(report))
    return report


def _load(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", default="roughflow_out", help="output directory")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--levels", type=int, help="finest dyadic level (overrides the config)")
    common.add_argument("--quiet", action="store_true", help="no summary on stdout")
    common.add_argument("--timing", action="store_true", help="record runtimes (breaks byte-identity)")
    parser = argparse.ArgumentParser(prog="roughflow", description="Rough differential equations via almost flows.")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        p = sub.add_parser(verb, parents=[common])
        if verb == "constants":
            for name in ("D", "B", "alpha", "kappa"):
                p.add_argument(f"--{name}", help="rational, e.g. 1/2")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    out = Output(args.out, args.quiet)
    try:
        if args.verb == "constants":
            summary = cmd_constants(args, out)
        else:
            if not args.config:
                raise ConfigError(f"{args.verb} needs --config")
            cfg = RunConfig.from_dict(_load(args.config), seed=args.seed, levels=args.levels)
            summary = globals()[f"cmd_{args.verb}"](cfg, out, args)
        out.flush(summary)
    except RoughFlowError as exc:
        print(f"roughflow {args.verb}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
