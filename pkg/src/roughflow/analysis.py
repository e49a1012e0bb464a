"""Solutions in the sense of Davie, comparison of two schemes,
perturbations and inversion of flows."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import HorizonTooLarge, NonConvergence
from .flows import (
    FlowFamily,
    IncrementFlow,
    Partition,
    galaxy_distance,
    grid_pairs,
    iterated_product,
)
from .reports import DefectReport, to_jsonable
from .sewing import dyadic_nodes, trajectory


@dataclass
class SolutionPath:
    """Trajectory ``t_k -> y_{r -> t_k}`` started from ``a`` at time ``r``.

    ``values`` has shape ``(len(times),) + a.shape``.
    """

    r: float
    a: np.ndarray
    times: np.ndarray
    values: np.ndarray
    scheme: str = ""

    def __post_init__(self):
        if not np.array_equal(self.values[0], self.a):
            raise ValueError("a solution path must start at its initial point")

    def subsample(self, n_times):
        """Keep ``n_times`` evenly spaced samples (a dyadic sub-grid when possible)."""
        stride = max(1, (len(self.times) - 1) // (n_times - 1))
        idx = np.arange(0, len(self.times), stride)
        return SolutionPath(self.r, self.a, self.times[idx], self.values[idx], self.scheme)

    def to_csv(self):
        """Rows ``t, y0, y1, ...``; several starts give columns ``y{start}_{component}``."""
        vals = self.values
        if vals.ndim == 2:
            head = [f"y{j}" for j in range(vals.shape[1])]
        else:
            n, dim = vals.shape[1], vals.shape[-1]
            head = [f"y{i}_{j}" for i in range(n) for j in range(dim)]
        lines = [",".join(["t"] + head)]
        for t, row in zip(self.times, vals.reshape(len(self.times), -1)):
            lines.append(",".join([repr(float(t))] + [repr(float(x)) for x in row]))
        return "\n".join(lines) + "\n"


def solve(phi: FlowFamily, a, T, level, r=0.0) -> SolutionPath:
    """Sewn trajectory of ``phi`` on the dyadic partition of ``[r, T]``."""
    a = np.asarray(a, dtype=float)
    times, values = trajectory(phi, a, T, level, r)
    return SolutionPath(r, a, times, values, phi.name)


def constant_path(a, times):
    a = np.asarray(a, dtype=float)
    times = np.asarray(times, dtype=float)
    return SolutionPath(float(times[0]), a, times, np.broadcast_to(a, (len(times),) + a.shape).copy(), "constant")


def davie_solution_check(y: SolutionPath, phi: FlowFamily, varpi, omega, max_times=33) -> DefectReport:
    """Estimate ``C = sup |y_t - phi_{t,s}(y_s)| / varpi(omega_{s,t})`` over
    pairs of (at most ``max_times``) trajectory samples."""
    if len(y.times) < 3:
        raise ValueError("trajectory too short")
    ys = y.subsample(max_times) if len(y.times) > max_times else y
    idx = np.array(list(combinations(range(len(ys.times)), 2)))
    s, t = ys.times[idx[:, 0]], ys.times[idx[:, 1]]
    start = ys.values[idx[:, 0]]
    end = ys.values[idx[:, 1]]
    extra = (1,) * (start.ndim - 1)
    pred = phi(s.reshape(-1, *extra[:-1]) if start.ndim > 2 else s,
               t.reshape(-1, *extra[:-1]) if start.ndim > 2 else t, start)
    gap = np.linalg.norm(end - pred, axis=-1)
    if gap.ndim > 1:
        gap = gap.max(axis=tuple(range(1, gap.ndim)))
    den = varpi(omega(s, t))
    ratio = gap / den
    k = int(np.argmax(ratio))
    return DefectReport("davie_solution_C", float(ratio[k]),
                        witness={"times": (float(s[k]), float(t[k]))},
                        samples={"pairs": len(s), "times": len(ys.times), "trajectory_points": len(y.times)})


def stable_under_refinement(values, drift=0.10):
    """Finite values whose successive relative changes stay within ``drift``."""
    vals = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(vals)):
        return False
    if vals.max() == 0.0:
        return True
    changes = np.abs(np.diff(vals)) / np.maximum(vals[:-1], 1e-300)
    return bool(np.all(changes <= drift))


def certify_davie_solution(build, phi, varpi, omega, levels, max_times=33, drift=0.10):
    """Check a family of trajectories ``build(level)`` against ``phi``.

    Returns ``(certified, reports)``; certification requires the estimated
    constant to be finite and stable across the levels.
    """
    reports = [davie_solution_check(build(k), phi, varpi, omega, max_times) for k in levels]
    return stable_under_refinement([r.value for r in reports], drift), reports


def _composition_defect(fam, r, s, t, a):
    return fam(s, t, fam(r, s, a)) - fam(r, t, a)


@dataclass
class ComparisonReport:
    distance: float
    eps1: float
    eps2: float
    eps3: float
    start_gap: float
    C: float
    level: int
    notes: list = field(default_factory=list)

    @property
    def bound_shape(self):
        return self.eps1 + self.eps2 + self.eps3 + self.start_gap

    def to_dict(self):
        return to_jsonable({**self.__dict__, "bound_shape": self.bound_shape})


def solution_compare(phi: FlowFamily, zeta: FlowFamily, a, b, T, level, varpi, omega,
                     check_times=9, lip_offset=1e-3):
    """Compare the sewn solutions ``y`` (from ``phi``, ``a``) and ``z`` (from
    ``zeta``, ``b``).

    With ``alpha = zeta - phi`` the report estimates
    ``eps1 = sup |alpha_{t,s,r}(z_r)| / varpi``, ``eps2`` (sampled Lipschitz
    constant of ``alpha``, a lower bound) and ``eps3 = sup |alpha_{t,s}(z_s)|``
    over a coarse time grid, and ``C = sup|y - z| / (eps1 + eps2 + eps3 + |a - b|)``.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    y = solve(phi, a, T, level)
    z = solve(zeta, b, T, level)
    dist = float(np.max(np.linalg.norm(y.values - z.values, axis=-1)))
    zc = z.subsample(check_times)
    tt = zc.times
    zmap = dict(zip(tt.tolist(), zc.values))
    eps1 = 0.0
    for r, s, t in combinations(tt.tolist(), 3):
        zr = zmap[r]
        al = _composition_defect(zeta, r, s, t, zr) - _composition_defect(phi, r, s, t, zr)
        eps1 = max(eps1, float(np.max(np.linalg.norm(al, axis=-1))) / float(varpi(omega(r, t))))
    eps2 = eps3 = 0.0
    rng = np.random.default_rng(0)
    for s, t in zip(*grid_pairs(tt)):
        zs = zmap[s]
        al = zeta(s, t, zs) - phi(s, t, zs)
        eps3 = max(eps3, float(np.max(np.linalg.norm(al, axis=-1))))
        off = lip_offset * rng.normal(size=zs.shape)
        al2 = zeta(s, t, zs + off) - phi(s, t, zs + off)
        q = np.linalg.norm(al2 - al, axis=-1) / np.linalg.norm(off, axis=-1)
        eps2 = max(eps2, float(np.max(q)))
    gap = float(np.max(np.linalg.norm(a - b, axis=-1)))
    total = eps1 + eps2 + eps3 + gap
    C = dist / total if total > 0 else (0.0 if dist == 0 else float("inf"))
    return ComparisonReport(dist, eps1, eps2, eps3, gap, C, level)


class PerturbationFamily(FlowFamily):
    """Family ``eps_{t,s}`` with ``eps_{t,t} = 0``; ``kind`` is ``plain`` or ``lipschitz``."""

    is_perturbation = True

    def __init__(self, fn, kind="plain", name="perturbation"):
        if kind not in ("plain", "lipschitz"):
            raise ValueError("kind must be 'plain' or 'lipschitz'")
        super().__init__(fn, name=name)
        self.kind = kind


def scaled_perturbation(varpi, omega, g, kind="lipschitz", name="scaled"):
    """``eps_{t,s}(a) = varpi(omega_{s,t}) g(a)``."""
    def fn(s, t, a):
        w = np.asarray(varpi(omega(s, t)), dtype=float)
        return w[..., None] * g(a)
    return PerturbationFamily(fn, kind, name)


def apply_perturbation(phi: FlowFamily, eps: FlowFamily) -> FlowFamily:
    """Pointwise sum ``phi + eps``; stays an increment flow when both share a driver."""
    if isinstance(phi, IncrementFlow) and isinstance(eps, IncrementFlow) and eps.driver is phi.driver:
        return IncrementFlow(phi.driver, lambda x, a: phi.step(x, a) + eps.step(x, a),
                             name=f"{phi.name}+{eps.name}", meta=phi.meta)
    return FlowFamily(lambda s, t, a: phi(s, t, a) + eps(s, t, a), name=f"{phi.name}+{eps.name}")


def verify_perturbation(phi, eps, grid, points, varpi, omega, lip_offset=1e-3, seed=0):
    """Ratio checks for ``eps`` plus the galaxy distance between ``phi`` and ``phi + eps``.

    Returns a dict of reports: ``size`` (``sup |eps_{t,s}| / varpi``),
    ``lipschitz`` (sampled ``Lip(eps_{t,s}) / varpi``), ``diagonal``
    (``sup |eps_{t,t}|``) and ``galaxy``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    s, t = grid_pairs(grid)
    S, Tt = s[:, None], t[:, None]
    A = np.broadcast_to(points, (len(s),) + points.shape)
    den = varpi(omega(s, t))[:, None]
    e = eps(S, Tt, A)
    size = np.linalg.norm(e, axis=-1) / den
    rng = np.random.default_rng(seed)
    off = lip_offset * rng.normal(size=A.shape)
    lip = np.linalg.norm(eps(S, Tt, A + off) - e, axis=-1) / np.linalg.norm(off, axis=-1) / den
    grid = np.asarray(grid, dtype=float)
    diag = np.linalg.norm(eps(grid[:, None], grid[:, None], np.broadcast_to(points, (len(grid),) + points.shape)), axis=-1)
    out = {
        "size": DefectReport("perturbation_size", float(size.max()), samples={"pairs": len(s)}),
        "lipschitz": DefectReport("perturbation_lipschitz", float(lip.max()), samples={"pairs": len(s)}),
        "diagonal": DefectReport("perturbation_diagonal", float(diag.max()), threshold=0.0),
        "galaxy": galaxy_distance(phi, apply_perturbation(phi, eps), grid, points, varpi, omega),
    }
    return out


# inversion

def _lipschitz_near(fn, b, scale, n=4, seed=0):
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(n):
        d1 = scale * rng.normal(size=b.shape)
        d2 = scale * rng.normal(size=b.shape)
        num = np.linalg.norm(fn(b + d1) - fn(b + d2), axis=-1)
        den = np.linalg.norm(d1 - d2, axis=-1)
        best = max(best, float(np.max(num / den)))
    return best


def invert_step(phi: FlowFamily, s, t, b, tol=1e-13, max_iter=100, full_output=False):
    """Solve ``phi_{t,s}(a) = b`` by the fixed point ``a <- b - chi(a)`` with
    ``chi = phi_{t,s} - id``, starting from ``a = b``.

    Refuses (:class:`HorizonTooLarge`) when the sampled Lipschitz constant
    of ``chi`` near ``b`` is not below 1, and raises
    :class:`NonConvergence` when iterates leave the ball
    ``|a - b| <= 2 |chi(b)| / (1 - Lip) + tol`` or ``max_iter`` is hit.
    """
    b = np.asarray(b, dtype=float)
    info = {"iterations": 0, "lipschitz": 0.0}
    if s == t:
        return (b.copy(), info) if full_output else b.copy()

    def chi(a):
        return phi(s, t, a) - a

    c0 = chi(b)
    scale = max(float(np.max(np.abs(c0))), 1e-6)
    lip = _lipschitz_near(chi, b, scale)
    info["lipschitz"] = lip
    if lip >= 1.0:
        raise HorizonTooLarge(f"phi - id is not a contraction near b (Lip ~ {lip:.3g}); shrink the step")
    radius = 2.0 * np.linalg.norm(c0, axis=-1) / (1.0 - lip) + tol
    a = b.copy()
    c = c0
    for it in range(1, max_iter + 1):
        new = b - c
        step = float(np.max(np.linalg.norm(new - a, axis=-1)))
        a = new
        info["iterations"] = it
        if np.any(np.linalg.norm(a - b, axis=-1) > radius):
            raise NonConvergence("inversion iterates left the contraction ball")
        if step < tol:
            info["residual"] = float(np.max(np.linalg.norm(phi(s, t, a) - b, axis=-1)))
            return (a, info) if full_output else a
        c = chi(a)
    raise NonConvergence(f"inversion did not converge in {max_iter} iterations")


def step_inverse(phi: FlowFamily, tol=1e-13, max_iter=100) -> FlowFamily:
    """Reverse family ``zeta_{s,t} = phi_{t,s}^{-1}`` (scalar times)."""
    def fn(s, t, a):
        if np.ndim(s) or np.ndim(t):
            s_b, t_b = np.broadcast_arrays(s, t)
            a_b = np.broadcast_to(a, s_b.shape + a.shape[-1:])
            out = np.empty(a_b.shape)
            for idx in np.ndindex(s_b.shape):
                out[idx] = invert_step(phi, float(s_b[idx]), float(t_b[idx]), a_b[idx], tol, max_iter)
            return out
        return invert_step(phi, float(s), float(t), a, tol, max_iter)
    return FlowFamily(fn, name=f"{phi.name}^-1", reverse=True)


def inverse_flow(phi: FlowFamily, level, tol=1e-13, max_iter=100) -> FlowFamily:
    """Reverse family ``zeta_{s,t}``: per-step inverses of ``phi`` composed
    from ``t`` back to ``s`` over the dyadic partition of ``[s, t]``."""
    inv = step_inverse(phi, tol, max_iter)

    def fn(s, t, a):
        s, t = float(s), float(t)
        return iterated_product(inv, Partition(dyadic_nodes(s, t, level)), s, t, a) if s < t else a
    return FlowFamily(fn, name=f"{phi.name}^-1@{level}", reverse=True)


def sewn_flow(phi: FlowFamily, level) -> FlowFamily:
    """``psi_{t,s} ~ phi^{pi}_{t,s}`` on the dyadic partition of ``[s, t]``."""
    def fn(s, t, a):
        s, t = float(s), float(t)
        return iterated_product(phi, Partition(dyadic_nodes(s, t, level)), s, t, a) if s < t else a
    return FlowFamily(fn, name=f"{phi.name}@{level}")


def inversion_round_trip(phi: FlowFamily, s, t, points, level):
    """``sup_a |zeta_{s,t}(psi_{t,s}(a)) - a|`` and ``sup_a |psi_{t,s}(zeta_{s,t}(a)) - a|``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    psi = sewn_flow(phi, level)
    zeta = inverse_flow(phi, level)
    fwd = psi(s, t, points)
    back = zeta(s, t, fwd)
    left = float(np.max(np.linalg.norm(back - points, axis=-1)))
    other = psi(s, t, zeta(s, t, points))
    right = float(np.max(np.linalg.norm(other - points, axis=-1)))
    return left, right


def manifold_lipschitz_estimate(phi: FlowFamily, starts, T, level) -> DefectReport:
    """``max_pairs sup_t |y_t(a) - y_t(b)| / |a - b|`` along sewn trajectories."""
    starts = np.asarray(starts, dtype=float)
    if starts.ndim != 3 or starts.shape[1] != 2:
        raise ValueError("starts must have shape (n, 2, d)")
    a, b = starts[:, 0], starts[:, 1]
    _, ya = trajectory(phi, a, T, level)
    _, yb = trajectory(phi, b, T, level)
    q = np.linalg.norm(ya - yb, axis=-1) / np.linalg.norm(a - b, axis=-1)
    k = np.unravel_index(int(np.argmax(q)), q.shape)
    return DefectReport("manifold_lipschitz", float(q[k]),
                        witness={"time_index": int(k[0]), "pair": (a[k[1]], b[k[1]])},
                        samples={"pairs": len(a), "level": level})


def limit_four_point_estimate(phi: FlowFamily, s, t, level, samples=2000, radius=1.0,
                              seed=0, dim=None) -> DefectReport:
    """Smallest ``K`` with ``hat(x) = K x`` and ``check = K`` fitting the
    sampled quadruples for the sewn map ``a -> psi_{t,s}(a)``.

    Whether the limit flow keeps a 4-points control is measured here, not
    asserted.
    """
    from .fields import _quadruples

    if dim is None:
        dim = phi.meta.get("state_dim") or 2
    rng = np.random.default_rng(seed)
    q = _quadruples(rng, samples, dim, radius)
    psi = sewn_flow(phi, level)
    g = psi(float(s), float(t), q.reshape(-1, dim)).reshape(q.shape)
    nrm = lambda x: np.linalg.norm(x, axis=-1)
    a, b, c, d = (q[:, k] for k in range(4))
    lhs = nrm(g[:, 0] - g[:, 1] - g[:, 2] + g[:, 3])
    rhs = np.maximum(nrm(a - b), nrm(c - d)) * np.maximum(nrm(a - c), nrm(b - d)) + nrm(a - b - c + d)
    ratio = np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0), 0.0)
    k = int(np.argmax(ratio))
    return DefectReport("limit_four_point_K", float(ratio[k]),
                        witness={"quadruple": q[k]},
                        samples={"quadruples": samples, "level": level, "radius": radius},
                        seed=seed, notes=["empirical measurement; no stability theorem is claimed"])
