"""Acceptance suite: one test per criterion, each printing a pass/fail line."""

import subprocess
import sys
import time
from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest
from scipy.linalg import expm

from conftest import AREA, PHASES, PROBES, W, area_matrices, bracket, record
from roughflow.algebra import (
    TensorSeries,
    max_abs_difference,
    piecewise_linear_signature,
    tensor_product,
)
from roughflow.analysis import (
    apply_perturbation,
    certify_davie_solution,
    constant_path,
    inversion_round_trip,
    scaled_perturbation,
    solve,
)
from roughflow.driver import lift_smooth, named_path, piecewise_linear_driver, pure_area_driver
from roughflow.errors import HorizonTooLarge
from roughflow.fields import (
    FourPointConstants,
    analytic_four_point,
    compose_four_point,
    empirical_four_point_defect,
    linear_field,
    sum_four_point,
    trig_field,
)
from roughflow.flows import galaxy_distance, galaxy_study
from roughflow.schemes import (
    bailleul_almost_flow,
    bailleul_remainder,
    davie_almost_flow,
    friz_victoir_almost_flow,
    step_n_euler,
)
from roughflow.sewing import (
    DegenerateRateWarning,
    convergence_study,
    davie_constant_continuous,
    davie_constant_discrete,
    solve_driven_ode,
    theoretical_rate,
    trajectory,
)

ODE_SUBSTEPS = 4


def area_setup():
    B = area_matrices()
    return linear_field(B), pure_area_driver(AREA), bracket(B)


def smooth_setup():
    path, velocity = named_path("circle")
    return trig_field(W, PHASES), lift_smooth(path, T=1.0, substeps=1 << 14)


def schemes(v, d):
    return {
        "davie": davie_almost_flow(v, d),
        "bailleul": bailleul_almost_flow(v, d, ODE_SUBSTEPS),
        "friz_victoir": friz_victoir_almost_flow(v, d, ODE_SUBSTEPS),
    }


def test_criterion_01_algebra_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    chen = assoc = 0.0
    for k in range(1000):
        dim, depth = (2, 3)[k % 2], (2, 3)[(k // 2) % 2]
        pts = rng.normal(size=(rng.integers(3, 8), dim))
        cut = int(rng.integers(1, len(pts) - 1))
        whole = piecewise_linear_signature(pts, depth)
        head = piecewise_linear_signature(pts[: cut + 1], depth)
        tail = piecewise_linear_signature(pts[cut:], depth)
        chen = max(chen, max_abs_difference(tensor_product(head, tail), whole))
        a, b, c = (TensorSeries([np.ones(())] + [rng.normal(size=(dim,) * j) for j in range(1, depth + 1)])
                   for _ in range(3))
        assoc = max(assoc, max_abs_difference(tensor_product(tensor_product(a, b), c),
                                              tensor_product(a, tensor_product(b, c))))
    # Chen for arbitrary (non-vertex) times through the segment tree
    d = piecewise_linear_driver(np.linspace(0, 1, 17), rng.normal(size=(17, 3)), depth=3)
    rst = np.sort(rng.uniform(0, 1, size=(1000, 3)), axis=1)
    x_rs, x_st, x_rt = d(rst[:, 0], rst[:, 1]), d(rst[:, 1], rst[:, 2]), d(rst[:, 0], rst[:, 2])
    chen = max(chen, max_abs_difference(tensor_product(x_rs, x_st), x_rt))
    elapsed = time.perf_counter() - t0
    ok = chen <= 1e-12 and assoc <= 1e-12 and elapsed < 5
    assert record(1, "algebra exactness", ok,
                  f"chen {chen:.2e}, associativity {assoc:.2e} (<= 1e-12), {elapsed:.2f}s (< 5s)")


def test_criterion_02_pure_area_unique_flow():
    t0 = time.perf_counter()
    v, d, C = area_setup()
    starts = np.random.default_rng(202).uniform(-1, 1, size=(10, 2))
    _, values = trajectory(davie_almost_flow(v, d), starts, 1.0, 12)
    err = float(np.max(np.abs(values[-1] - starts @ expm(C).T)))
    elapsed = time.perf_counter() - t0
    ok = err <= 1e-6 and elapsed < 10
    assert record(2, "pure-area flow vs exp(T[B2,B1])a", ok,
                  f"max error {err:.2e} (<= 1e-6) at level 12, 10 starts, {elapsed:.2f}s (< 10s)")


def test_criterion_03_rate_fitting():
    t0 = time.perf_counter()
    path, velocity = named_path("circle")
    d = lift_smooth(path, T=1.0, substeps=1 << 16, depth=3)
    v = trig_field(W, PHASES)
    ref = solve_driven_ode(v, velocity, 0.0, 1.0, PROBES)
    cases = [
        ("euler_1", step_n_euler(v, d, 1), 1, range(4, 10), (0.7, 1.3)),
        ("davie", davie_almost_flow(v, d), 2, range(3, 9), (1.7, 2.3)),
        ("euler_2", step_n_euler(v, d, 2), 2, range(3, 9), (1.7, 2.3)),
        ("euler_3", step_n_euler(v, d, 3), 3, range(2, 8), (2.6, 3.4)),
    ]
    parts, ok = [], True
    for name, phi, n, levels, (lo, hi) in cases:
        if n == 1:
            # n + gamma = p: the bound gives no positive rate
            with pytest.warns(DegenerateRateWarning):
                theory = theoretical_rate(n, 1.0, 2.0)
        else:
            theory = theoretical_rate(n, 1.0, 2.0)
        rep = convergence_study(phi, ref, PROBES, levels, theoretical=theory)
        good = lo <= rep.fitted_order <= hi and rep.meets_theory(0.2)
        ok &= good
        parts.append(f"{name} {rep.fitted_order:.3f} in [{lo}, {hi}] (theory {rep.theoretical_order:.2f})")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 60
    assert record(3, "rate fitting", ok, "; ".join(parts) + f"; {elapsed:.1f}s (< 60s)")


def test_criterion_04_scheme_unification():
    t0 = time.perf_counter()
    pts = np.array([[0.3, -0.2], [1.0, 0.5]])
    parts, ok = [], True
    for label, (v, d) in {"area": area_setup()[:2], "circle": smooth_setup()}.items():
        flows = schemes(v, d)
        varpi, omega = d.params.remainder, d.control
        for (n1, p1), (n2, p2) in combinations(flows.items(), 2):
            stable, reps = galaxy_study(p1, p2, 1.0, range(6, 11), pts, varpi, omega, max_pairs=3000)
            vals = [r.value for r in reps]
            drift = max(abs(b - a) / a for a, b in zip(vals[:-1], vals[1:]))
            ok &= stable
            parts.append(f"{label} {n1}/{n2} drift {drift:.1%}")
        ends = {k: trajectory(phi, pts, 1.0, 12)[1][-1] for k, phi in flows.items()}
        gap = max(np.abs(ends[a] - ends[b]).max() for a, b in combinations(ends, 2))
        ok &= gap <= 1e-5
        parts.append(f"{label} limit gap {gap:.1e}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 60
    assert record(4, "scheme unification", ok,
                  ", ".join(parts) + f" (drift <= 10%, gap <= 1e-5); {elapsed:.1f}s (< 60s)")


def test_criterion_05_inversion():
    t0 = time.perf_counter()
    v, d, _ = area_setup()
    starts = np.random.default_rng(505).uniform(-1, 1, size=(10, 2))
    left, right = inversion_round_trip(davie_almost_flow(v, d), 0.0, 1.0, starts, 10)
    elapsed = time.perf_counter() - t0
    ok = left <= 1e-6 and elapsed < 20
    assert record(5, "inversion round trip", ok,
                  f"zeta(psi(a)) - a = {left:.1e}, psi(zeta(a)) - a = {right:.1e} (<= 1e-6), "
                  f"{elapsed:.1f}s (< 20s)")


def test_criterion_06_davie_constants():
    half = Fraction(1, 2)
    values = (davie_constant_discrete(1, 0, 0, half), davie_constant_discrete(0, 1, 0, half),
              davie_constant_continuous(1, 0, half))
    rejected = 0
    for alpha, kappa in [(0, 1), (half, half), (Fraction(1, 5), Fraction(3, 4))]:
        try:
            davie_constant_discrete(1, 1, alpha, kappa)
        except HorizonTooLarge:
            rejected += 1
    ok = values == (2, 4, 4) and all(isinstance(x, Fraction) for x in values) and rejected == 3
    assert record(6, "Davie constants", ok,
                  f"values {tuple(str(x) for x in values)} (want 2, 4, 4 exactly), "
                  f"{rejected}/3 horizon violations rejected")


def test_criterion_07_four_point_control():
    lin = linear_field(area_matrices(seed=7, scale=1.0))
    sin = trig_field([[[1.0]]])
    defects = {name: empirical_four_point_defect(f, analytic_four_point(f).scaled(1.1), samples=10_000,
                                                 seed=7).value
               for name, f in (("linear", lin), ("sin", sin))}
    cs = analytic_four_point(sin)
    ct = FourPointConstants(lambda x: 2.0 * 0.77 * np.asarray(x), 1.0)
    g_sin = lambda a: np.sin(a)
    g_tanh = np.tanh
    defects["sum"] = empirical_four_point_defect(lambda a: 2.0 * g_sin(a) - 0.5 * g_tanh(a),
                                                 sum_four_point(cs, ct, 2.0, -0.5), samples=10_000,
                                                 dim=1, seed=8).value
    defects["composition"] = empirical_four_point_defect(lambda a: g_sin(g_tanh(a)),
                                                         compose_four_point(cs, ct, 1.0), samples=10_000,
                                                         dim=1, seed=9).value
    ok = all(v <= 0.0 for v in defects.values())
    assert record(7, "4-points control", ok,
                  ", ".join(f"{k} {v:.1e}" for k, v in defects.items()) + " (all <= 0, 10^4 quadruples)")


def test_criterion_08_davie_solution_certification():
    parts, ok = [], True
    for label, (v, d) in {"area": area_setup()[:2], "circle": smooth_setup()}.items():
        varpi, omega = d.params.remainder, d.control
        a = np.array([0.3, -0.2])
        for name, phi in schemes(v, d).items():
            certified, reps = certify_davie_solution(lambda k: solve(phi, a, 1.0, k), phi, varpi, omega,
                                                     [8, 9, 10])
            vals = [r.value for r in reps]
            drift = max(abs(b - x) / x for x, b in zip(vals[:-1], vals[1:]))
            ok &= certified
            parts.append(f"{label}/{name} C={vals[-1]:.2e} drift {drift:.1%}")
        phi = davie_almost_flow(v, d)
        rejected, _ = certify_davie_solution(lambda k: constant_path(a, np.linspace(0, 1, 2 ** k + 1)),
                                             phi, varpi, omega, [8, 9, 10], max_times=2 ** 10 + 1)
        ok &= not rejected
        parts.append(f"{label} constant path {'rejected' if not rejected else 'ACCEPTED'}")
    assert record(8, "Davie-solution certification", ok, "; ".join(parts))


def test_criterion_09_perturbation_invariance():
    parts, ok = [], True
    a = np.array([[0.3, -0.2], [1.0, 0.5]])
    for label, (v, d) in {"area": area_setup()[:2], "circle": smooth_setup()}.items():
        varpi, omega = d.params.remainder, d.control
        phi = davie_almost_flow(v, d)
        base = trajectory(phi, a, 1.0, 12)[1][-1]
        # synthetic Lipschitz perturbation of size varpi(omega)^2 <= varpi(omega_{0,T}) varpi(omega)
        synth = scaled_perturbation(lambda w: varpi(w) ** 2, omega, lambda y: 0.5 + 0.2 * np.sin(y))
        for name, eps in (("bailleul_remainder", bailleul_remainder(v, d, ODE_SUBSTEPS)), ("synthetic", synth)):
            psi = apply_perturbation(phi, eps)
            change = float(np.abs(trajectory(psi, a, 1.0, 12)[1][-1] - base).max())
            dist = galaxy_distance(phi, psi, np.linspace(0, 1, 33), a, varpi, omega).value
            ok &= change <= 1e-6 and np.isfinite(dist)
            parts.append(f"{label}/{name} change {change:.1e}, galaxy {dist:.1e}")
    assert record(9, "perturbation invariance", ok, "; ".join(parts) + " (change <= 1e-6, galaxy finite)")


def _cli(tmp, verb, config, out):
    cmd = [sys.executable, "-m", "roughflow", verb, "--config", str(config), "--out", str(out), "--quiet",
           "--seed", "17"]
    return subprocess.run(cmd, capture_output=True, text=True, check=False)


def test_criterion_10_determinism(tmp_path):
    import json
    from importlib.resources import files

    fx = files("roughflow") / "fixtures"
    area = json.loads((fx / "pure_area.json").read_text())
    area.update(level=8, starts={"random": 5, "dim": 2}, tol=1e-3)
    circle = json.loads((fx / "smooth_circle.json").read_text())
    circle["levels"] = [3, 4, 5, 6]
    jobs = []
    for name, cfg, verb in (("area", area, "solve"), ("area", area, "verify"), ("circle", circle, "rate")):
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(cfg))
        jobs.append((verb, path))
    same, total, codes = 0, 0, []
    for verb, cfg in jobs:
        runs = []
        for k in range(2):
            out = tmp_path / f"{verb}_{cfg.stem}_{k}"
            codes.append(_cli(tmp_path, verb, cfg, out).returncode)
            runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        total += len(runs[0])
        same += sum(runs[0][n] == runs[1].get(n) for n in runs[0])
    ok = all(c == 0 for c in codes) and total > 0 and same == total
    assert record(10, "determinism", ok, f"{same}/{total} output files byte-identical across repeated runs "
                  f"(exit codes {sorted(set(codes))})")
