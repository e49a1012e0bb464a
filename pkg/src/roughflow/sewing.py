"""Dyadic sewing, convergence-rate studies and the Davie-lemma constants."""

from __future__ import annotations

import csv
import io
import json
import time
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations

import numpy as np
from scipy.integrate import solve_ivp

from .errors import HorizonTooLarge, NonConvergence
from .flows import FlowFamily, IncrementFlow, Partition, iterated_product
from .reports import to_jsonable

FIT_FLOOR = 1e-11


class SewingWarning(RuntimeWarning):
    pass


class DegenerateRateWarning(RuntimeWarning):
    pass


def dyadic_nodes(s, t, level):
    return s + (t - s) * np.arange(2 ** level + 1) / 2 ** level


@dataclass
class SewResult:
    value: np.ndarray
    level: int
    trace: list
    converged: bool

    @property
    def increments(self):
        return [d for _, d in self.trace]


def sew(phi: FlowFamily, s, t, a, max_level=12, tol=1e-10, min_level=1, strict=False):
    """Iterate ``phi`` over dyadic partitions of ``[s, t]`` until two
    successive levels agree to ``tol`` (sup over points) or ``max_level``.

    Returns the finest value.  Failing to meet ``tol`` warns, or raises
    :class:`NonConvergence` when ``strict``.
    """
    if max_level < 2:
        raise ValueError("max_level must be >= 2")
    a = np.asarray(a, dtype=float)
    prev = iterated_product(phi, Partition(dyadic_nodes(s, t, 0)), s, t, a) if s < t else a.copy()
    trace = []
    value = prev
    level = 0
    for level in range(1, max_level + 1):
        if s == t:
            trace.append((level, 0.0))
            break
        value = iterated_product(phi, Partition(dyadic_nodes(s, t, level)), s, t, a)
        delta = float(np.max(np.linalg.norm(value - prev, axis=-1)))
        trace.append((level, delta))
        prev = value
        if not np.all(np.isfinite(value)):
            raise NonConvergence(f"non-finite sewing value at level {level}")
        if level >= min_level and delta < tol:
            return SewResult(value, level, trace, True)
    converged = s == t
    if not converged:
        msg = (f"sewing not Cauchy to tol={tol:g} by level {max_level} "
               f"(last increment {trace[-1][1]:.3g})")
        if strict:
            raise NonConvergence(msg)
        warnings.warn(msg, SewingWarning, stacklevel=2)
    return SewResult(value, level, trace, converged)


def trajectory(phi: FlowFamily, a, T, level, r=0.0):
    """States along the dyadic partition of ``[r, T]``: ``(times, values)``.

    ``values[k]`` is the iterated product from ``r`` to ``times[k]``.
    """
    nodes = dyadic_nodes(r, T, level)
    a = np.asarray(a, dtype=float)
    out = [a]
    if isinstance(phi, IncrementFlow):
        incs = phi.driver(nodes[:-1], nodes[1:])
        for k in range(len(nodes) - 1):
            out.append(phi.step(incs.take(k), out[-1]))
    else:
        for k in range(len(nodes) - 1):
            out.append(phi(nodes[k], nodes[k + 1], out[-1]))
    return nodes, np.stack(out)


def solve_driven_ode(v, velocity, s, t, a, rtol=1e-13, atol=1e-14):
    """Reference solution of ``y' = f(y) x'(u)`` with an adaptive
    eighth-order Runge-Kutta integrator; batches over leading axes of ``a``."""
    a = np.asarray(a, dtype=float)
    shape = a.shape
    d = shape[-1]

    def rhs(u, y):
        y = y.reshape(-1, d)
        return np.einsum("...mi,i->...m", v(y), velocity(u)).ravel()

    sol = solve_ivp(rhs, (s, t), a.ravel(), method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise NonConvergence(f"reference integrator failed: {sol.message}")
    return sol.y[:, -1].reshape(shape)


def theoretical_rate(n, gamma, p):
    """Exponent ``(n + gamma) / p - 1`` of the step-``n`` error bound.

    Warns with :class:`DegenerateRateWarning` when ``n + gamma <= p``.
    """
    rate = (n + gamma) / p - 1.0
    if n + gamma <= p:
        warnings.warn(f"n + gamma = {n + gamma} <= p = {p}: no positive rate",
                      DegenerateRateWarning, stacklevel=2)
        if n + gamma == p:
            return 0.0
    return rate


def fit_order(meshes, errors, floor=FIT_FLOOR):
    """Least-squares slope of ``log(error)`` against ``log(mesh)``.

    Errors below ``floor`` are dropped; fewer than three usable levels
    give ``nan``.
    """
    meshes = np.asarray(meshes, dtype=float)
    errors = np.asarray(errors, dtype=float)
    ok = errors > floor
    if np.count_nonzero(ok) < 3:
        return float("nan")
    slope, _ = np.polyfit(np.log(meshes[ok]), np.log(errors[ok]), 1)
    return float(slope)


@dataclass
class ConvergenceReport:
    scheme: str
    records: list
    fitted_order: float
    theoretical_order: float | None
    cauchy: list
    probes: np.ndarray
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def levels(self):
        return [r["level"] for r in self.records]

    @property
    def errors(self):
        return [r["error"] for r in self.records]

    def meets_theory(self, slack=0.2):
        if self.theoretical_order is None:
            return True
        return bool(self.fitted_order >= self.theoretical_order - slack)

    def to_csv(self, timing=True):
        """Rows ``level, mesh, error, runtime_ms``; the runtime column is
        left empty when ``timing`` is false so output is reproducible."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "mesh", "error", "runtime_ms"])
        for r in self.records:
            w.writerow([r["level"], repr(float(r["mesh"])), repr(float(r["error"])),
                        f"{r['runtime_ms']:.3f}" if timing else ""])
        return buf.getvalue()

    def to_dict(self, timing=True):
        recs = [dict(r) for r in self.records]
        if not timing:
            for r in recs:
                r.pop("runtime_ms", None)
        return to_jsonable({
            "scheme": self.scheme,
            "records": recs,
            "fitted_order": self.fitted_order,
            "theoretical_order": self.theoretical_order,
            "cauchy": self.cauchy,
            "probes": self.probes,
            "seed": self.seed,
            "meta": self.meta,
        })

    def to_json(self, timing=True):
        return json.dumps(self.to_dict(timing), sort_keys=True, indent=2)


def convergence_study(phi: FlowFamily, reference, probes, levels, T=1.0, s=0.0,
                      theoretical=None, seed=None):
    """Errors of ``phi^{pi_k}_{T,s}`` against ``reference`` on dyadic levels.

    ``reference`` is an array of limit values at ``probes`` or a callable
    ``probes -> values``; with ``reference=None`` the study uses the
    iterated product two levels beyond the finest as self-reference.
    """
    levels = sorted(int(k) for k in levels)
    if len(levels) < 3:
        raise ValueError("a convergence study needs at least three levels")
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    meta = {}
    if reference is None:
        ref = iterated_product(phi, Partition(dyadic_nodes(s, T, levels[-1] + 2)), s, T, probes)
        meta["reference"] = f"self@level{levels[-1] + 2}"
    elif callable(reference):
        ref = np.asarray(reference(probes), dtype=float)
        meta["reference"] = "oracle"
    else:
        ref = np.asarray(reference, dtype=float)
        meta["reference"] = "oracle"
    records, values = [], []
    for k in levels:
        t0 = time.perf_counter()
        val = iterated_product(phi, Partition(dyadic_nodes(s, T, k)), s, T, probes)
        elapsed = 1e3 * (time.perf_counter() - t0)
        err = float(np.max(np.linalg.norm(val - ref, axis=-1)))
        records.append({"level": k, "mesh": (T - s) / 2 ** k, "error": err, "runtime_ms": elapsed})
        values.append(val)
    cauchy = [float(np.max(np.linalg.norm(b - a, axis=-1))) for a, b in zip(values[:-1], values[1:])]
    order = fit_order([r["mesh"] for r in records], [r["error"] for r in records])
    return ConvergenceReport(phi.name, records, order, theoretical, cauchy, probes, seed, meta)


def cauchy_ratios(increments, start=0):
    """Successive ratios of level-to-level increments."""
    inc = np.asarray(increments, dtype=float)[start:]
    with np.errstate(divide="ignore", invalid="ignore"):
        return inc[1:] / inc[:-1]


def rate_bound_M(phi_or_mu, pi, omega):
    """``M(pi) = sup_{successive r, t} mu(omega_{r,t})``, with ``mu(delta) = varpi(delta) / delta``
    when a remainder is passed."""
    pi = pi if isinstance(pi, Partition) else Partition(pi)
    w = omega(pi.times[:-1], pi.times[1:])
    mu = phi_or_mu
    if hasattr(mu, "theta"):
        varpi = mu
        mu = lambda d: varpi(d) / d
    return float(np.max(mu(w)))


# Davie lemma constants

def _rational(x):
    if isinstance(x, (int, Fraction)):
        return Fraction(x), True
    return Fraction(float(x)), False


def _davie_denominator(alpha, kappa):
    den = 1 - (kappa * (1 + alpha) ** 2 + alpha)
    if den <= 0:
        raise HorizonTooLarge(
            f"kappa (1 + alpha)^2 + alpha = {float(1 - den):g} >= 1: shrink the horizon"
        )
    return den


def davie_constant_discrete(D, B, alpha, kappa):
    """``A = (D (1 + a)(1 + a)^2 + B (2 + a)) / (1 - (kappa (1 + a)^2 + a))``.

    Exact when every input is an ``int`` or ``Fraction``.
    """
    vals = [_rational(x) for x in (D, B, alpha, kappa)]
    D_, B_, a, k = (v for v, _ in vals)
    A = (D_ * (1 + a) * (1 + a) ** 2 + B_ * (2 + a)) / _davie_denominator(a, k)
    return A if all(exact for _, exact in vals) else float(A)


def davie_constant_continuous(B, alpha, kappa):
    """``A = B (2 + a) / (1 - (kappa (1 + a)^2 + a))``."""
    vals = [_rational(x) for x in (B, alpha, kappa)]
    B_, a, k = (v for v, _ in vals)
    A = B_ * (2 + a) / _davie_denominator(a, k)
    return A if all(exact for _, exact in vals) else float(A)


@dataclass
class DavieCheck:
    ok: bool
    A: float
    worst_pair: tuple | None
    worst_ratio: float
    failure: str | None = None


def davie_recursion_verify(U, times, D, B, alpha, kappa, varpi, omega, rtol=1e-12):
    """Check the Davie-lemma hypotheses on a table ``U[i, j]`` over partition
    points, then its conclusion ``U_{r,t} <= A varpi(omega_{r,t})``.

    A failed hypothesis is reported in ``failure`` with its witness.
    """
    U = np.asarray(U, dtype=float)
    times = np.asarray(times, dtype=float)
    n = len(times)
    A = float(davie_constant_discrete(D, B, alpha, kappa))
    lo, hi = np.minimum.outer(times, times), np.maximum.outer(times, times)
    W = varpi(omega(lo, hi))
    if np.any(np.abs(np.diag(U)) > 0):
        i = int(np.argmax(np.abs(np.diag(U))))
        return DavieCheck(False, A, (i, i), float("nan"), "U_{r,r} != 0")
    for i in range(n - 1):
        if U[i, i + 1] > D * W[i, i + 1] * (1 + rtol):
            return DavieCheck(False, A, (i, i + 1), U[i, i + 1] / W[i, i + 1],
                              "successive-pair bound U <= D varpi violated")
    for i, j, k in combinations(range(n), 3):
        rhs = (1 + alpha) * (U[i, j] + U[j, k]) + B * W[i, k]
        if U[i, k] > rhs * (1 + rtol) + 1e-300:
            return DavieCheck(False, A, (i, j, k), float("nan"), "recursion hypothesis violated")
    iu = np.triu_indices(n, 1)
    ratio = U[iu] / W[iu]
    w = int(np.argmax(ratio))
    worst = (int(iu[0][w]), int(iu[1][w]))
    return DavieCheck(bool(ratio[w] <= A * (1 + rtol)), A, worst, float(ratio[w]))
