"""Two-parameter families of maps, iterated products, and the sampled
estimators for the almost-flow hypotheses.

A :class:`FlowFamily` is called as ``phi(s, t, a)`` and returns
``phi_{t,s}(a)``, the map transporting a state from time ``s`` to time
``t >= s``.  A reverse family (``reverse=True``) is called the same way but
transports from ``t`` back to ``s``.  Times broadcast against the leading
axes of ``a``.

Every estimator returns a :class:`~roughflow.reports.DefectReport`: the
supremum over the samples, which is a lower bound on the true supremum,
together with the sample where it was attained.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np
from scipy.stats import qmc

from .reports import DefectReport

CHUNK = 4096


class FlowFamily:
    """Family ``(s, t, a) -> phi_{t,s}(a)`` with ``phi_{t,t} = id`` enforced.

    Perturbation families (``is_perturbation``) vanish on the diagonal instead.
    """

    is_perturbation = False

    def __init__(self, fn, name="flow", reverse=False, meta=None):
        self._fn = fn
        self.name = name
        self.reverse = reverse
        self.meta = dict(meta or {})

    def __call__(self, s, t, a):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        a = np.asarray(a, dtype=float)
        out = self._fn(s, t, a)
        diag = np.broadcast_to(s == t, np.broadcast_shapes(s.shape, t.shape))
        if np.any(diag):
            out = np.where(diag[..., None], 0.0 if self.is_perturbation else a, out)
        return out

    def __repr__(self):
        kind = "reverse" if self.reverse else "forward"
        return f"FlowFamily({self.name}, {kind})"


class IncrementFlow(FlowFamily):
    """Flow of the form ``phi_{t,s}(a) = step(x_{s,t}, a)`` for a driver ``x``.

    Iterated products fetch all driver increments of a partition in one
    batched call, then apply ``step`` along the chain.
    """

    def __init__(self, driver, step, name="scheme", meta=None):
        self.driver = driver
        self.step = step
        super().__init__(self._eval, name=name, meta=meta)

    def _eval(self, s, t, a):
        return self.step(self.driver(s, t), a)


def identity_flow(name="identity"):
    return FlowFamily(lambda s, t, a: np.broadcast_to(a, np.broadcast_shapes(
        np.shape(s) + (1,), np.shape(t) + (1,), a.shape)).copy(), name=name)


def linear_flow(generator, name="linear_exact"):
    """Exact flow ``a -> exp((t - s) C) a`` of ``y' = C y``."""
    from scipy.linalg import expm

    C = np.asarray(generator, dtype=float)

    def fn(s, t, a):
        h = np.broadcast_to(t - s, np.broadcast_shapes(np.shape(s), np.shape(t)))
        E = np.array([expm(hh * C) for hh in h.ravel()]).reshape(h.shape + C.shape)
        return np.einsum("...mp,...p->...m", E, a)

    return FlowFamily(fn, name=name)


class Partition:
    """Strictly increasing times ``0 = t_0 < ... < t_n = T``."""

    def __init__(self, times):
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or len(times) < 2:
            raise ValueError("a partition needs at least two times")
        if np.any(np.diff(times) <= 0):
            raise ValueError("partition times must be strictly increasing")
        self.times = times

    @classmethod
    def dyadic(cls, T, level):
        return cls(np.linspace(0.0, T, 2 ** level + 1))

    @property
    def T(self):
        return float(self.times[-1])

    @property
    def mesh(self):
        return float(np.max(np.diff(self.times)))

    def __len__(self):
        return len(self.times)

    def nodes(self, s, t):
        """``s``, the partition points strictly inside ``(s, t)``, and ``t``."""
        inner = self.times[(self.times > s) & (self.times < t)]
        if s == t:
            return np.array([s])
        return np.concatenate([[s], inner, [t]])

    def __repr__(self):
        return f"Partition(n={len(self.times) - 1}, mesh={self.mesh:.3g})"


def _as_partition(pi):
    return pi if isinstance(pi, Partition) else Partition(pi)


def iterated_product(phi: FlowFamily, pi, s, t, a):
    """Compose ``phi`` along the partition points inside ``[s, t]``.

    The chain is ``phi_{t,t_j} o ... o phi_{t_{i+1},t_i} o phi_{t_i,s}``
    with ``[t_i, t_j]`` the largest partition interval inside ``[s, t]``;
    without interior points the result is ``phi_{t,s}(a)``.  For a reverse
    family the chain runs from ``t`` down to ``s``.
    """
    pi = _as_partition(pi)
    s, t = float(s), float(t)
    if s > t:
        raise ValueError("iterated products need s <= t")
    a = np.asarray(a, dtype=float)
    nodes = pi.nodes(s, t)
    if len(nodes) < 2:
        return a.copy()
    lo, hi = nodes[:-1], nodes[1:]
    order = range(len(lo) - 1, -1, -1) if phi.reverse else range(len(lo))
    if isinstance(phi, IncrementFlow):
        incs = phi.driver(lo, hi)
        for k in order:
            a = phi.step(incs.take(k), a)
        return a
    for k in order:
        a = phi(lo[k], hi[k], a)
    return a


def product_flow(phi: FlowFamily, pi, name=None) -> FlowFamily:
    """The family ``phi^pi`` (scalar times only)."""
    pi = _as_partition(pi)

    def fn(s, t, a):
        if np.ndim(s) or np.ndim(t):
            s_b, t_b = np.broadcast_arrays(s, t)
            a_b = np.broadcast_to(a, s_b.shape + a.shape[-1:])
            out = np.empty(a_b.shape)
            for idx in np.ndindex(s_b.shape):
                out[idx] = iterated_product(phi, pi, s_b[idx], t_b[idx], a_b[idx])
            return out
        return iterated_product(phi, pi, s, t, a)

    return FlowFamily(fn, name=name or f"{phi.name}^pi", reverse=phi.reverse)


def sample_points(n, dim, box=1.0, seed=0, center=None):
    """Scrambled Sobol points in ``center + [-box, box]^dim``."""
    sampler = qmc.Sobol(d=dim, scramble=True, seed=seed)
    m = int(np.ceil(np.log2(max(n, 1))))
    pts = sampler.random_base2(m)[:n]
    pts = (2.0 * pts - 1.0) * box
    if center is not None:
        pts = pts + np.asarray(center, dtype=float)
    return pts


def grid_pairs(grid):
    grid = np.asarray(grid, dtype=float)
    idx = np.array(list(combinations(range(len(grid)), 2)))
    return grid[idx[:, 0]], grid[idx[:, 1]]


def grid_triples(grid):
    grid = np.asarray(grid, dtype=float)
    idx = np.array(list(combinations(range(len(grid)), 3)))
    return grid[idx[:, 0]], grid[idx[:, 1]], grid[idx[:, 2]]


def _chunks(n, size=CHUNK):
    for lo in range(0, n, size):
        yield slice(lo, min(lo + size, n))


def _norm(x):
    return np.linalg.norm(x, axis=-1)


def _flow_ratio_sup(evaluate, times, points, denom, name, extra=None):
    # evaluate(times_chunk, points) -> array (n_chunk, n_points) of numerators
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(times[0])
    best, where = -1.0, (0, 0)
    size = max(1, CHUNK // max(1, len(points)))
    for sl in _chunks(n, size):
        chunk = tuple(x[sl] for x in times)
        num = evaluate(chunk, points)
        den = denom(chunk)[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0),
                             np.where(num > 0, np.inf, 0.0))
        k = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
        if ratio[k] > best:
            best = float(ratio[k])
            where = (sl.start + int(k[0]), int(k[1]))
    witness = {"times": tuple(float(x[where[0]]) for x in times), "point": points[where[1]]}
    if extra:
        witness.update(extra)
    return DefectReport(name, max(best, 0.0), witness=witness,
                        samples={"time_samples": n, "points": len(points)})


def almost_flow_defect(phi: FlowFamily, grid, points, varpi, omega) -> DefectReport:
    """Estimate ``M``: ``sup |phi_{t,s}(phi_{s,r}(a)) - phi_{t,r}(a)| / varpi(omega_{r,t})``."""
    grid = np.asarray(grid, dtype=float)
    if len(grid) < 3:
        raise ValueError("almost-flow defect needs at least three grid times")
    r, s, t = grid_triples(grid)

    def evaluate(chunk, pts):
        r_, s_, t_ = (x[:, None] for x in chunk)
        a = np.broadcast_to(pts, (len(chunk[0]),) + pts.shape)
        return _norm(phi(s_, t_, phi(r_, s_, a)) - phi(r_, t_, a))

    return _flow_ratio_sup(evaluate, (r, s, t), points,
                           lambda c: varpi(omega(c[0], c[2])), "almost_flow_M")


def sewing_gap(phi: FlowFamily, pi, grid, points, varpi, omega, M=None, delta_T=None) -> DefectReport:
    """Estimate ``L``: ``sup |phi^pi_{t,s}(a) - phi_{t,s}(a)| / varpi(omega_{s,t})``.

    With ``M`` and ``delta_T`` given, the report also carries the bound
    ``2M / (1 - (1 + delta_T) kappa - delta_T)`` for comparison.
    """
    pi = _as_partition(pi)
    s, t = grid_pairs(grid)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    best, where = -1.0, 0
    ratios = np.zeros(len(s))
    for k in range(len(s)):
        num = _norm(iterated_product(phi, pi, s[k], t[k], points) - phi(s[k], t[k], points))
        den = float(varpi(omega(s[k], t[k])))
        ratios[k] = np.max(num) / den if den > 0 else (np.inf if np.max(num) > 0 else 0.0)
        if ratios[k] > best:
            best, where = ratios[k], k
    rep = DefectReport("sewing_L", max(best, 0.0),
                       witness={"times": (float(s[where]), float(t[where]))},
                       samples={"pairs": len(s), "points": len(points), "mesh": pi.mesh})
    if M is not None and delta_T is not None:
        kappa = getattr(varpi, "kappa", None)
        if kappa is not None:
            den = 1.0 - (1.0 + delta_T) * kappa - delta_T
            rep.samples["bound"] = 2.0 * M / den if den > 0 else float("inf")
            if den <= 0:
                rep.notes.append("horizon too large: 1 - (1 + delta_T) kappa - delta_T <= 0")
    return rep


def _point_pairs(pairs):
    pairs = np.asarray(pairs, dtype=float)
    if pairs.ndim != 3 or pairs.shape[1] != 2:
        raise ValueError("point pairs must have shape (n, 2, d)")
    return pairs[:, 0], pairs[:, 1]


def ul_lipschitz_estimate(phi: FlowFamily, pi, pairs, grid=None) -> DefectReport:
    """``max |phi^pi_{t,s}(a) - phi^pi_{t,s}(b)| / |a - b|`` over partition pairs."""
    pi = _as_partition(pi)
    grid = pi.times if grid is None else np.asarray(grid, dtype=float)
    a, b = _point_pairs(pairs)
    s, t = grid_pairs(grid)
    best, where = -1.0, (0, 0)
    for k in range(len(s)):
        ya = iterated_product(phi, pi, s[k], t[k], a)
        yb = iterated_product(phi, pi, s[k], t[k], b)
        q = _norm(ya - yb) / _norm(a - b)
        j = int(np.argmax(q))
        if q[j] > best:
            best, where = float(q[j]), (k, j)
    return DefectReport("ul_lipschitz", best,
                        witness={"times": (float(s[where[0]]), float(t[where[0]])),
                                 "pair": (a[where[1]], b[where[1]])},
                        samples={"time_pairs": len(s), "point_pairs": len(a)})


def flow_property_defect(psi: FlowFamily, triples, points) -> DefectReport:
    """``sup |psi_{t,s}(psi_{s,r}(a)) - psi_{t,r}(a)|`` (unnormalised)."""
    tr = np.sort(np.asarray(triples, dtype=float), axis=1)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    best, where = -1.0, (0, 0)
    for k, (r, s, t) in enumerate(tr):
        gap = _norm(psi(s, t, psi(r, s, points)) - psi(r, t, points))
        j = int(np.argmax(gap))
        if gap[j] > best:
            best, where = float(gap[j]), (k, j)
    return DefectReport("flow_property", best,
                        witness={"triple": tr[where[0]], "point": points[where[1]]},
                        samples={"triples": len(tr), "points": len(points)})


def _thin_pairs(s, t, max_pairs, seed):
    # keep every short pair (where refinement effects live) plus a seeded sample
    if max_pairs is None or len(s) <= max_pairs:
        return s, t
    width = t - s
    short = width <= 4.0 * np.min(width) * (1 + 1e-12)
    idx = np.flatnonzero(short)
    rest = np.flatnonzero(~short)
    extra = max(max_pairs - len(idx), max_pairs // 2)
    if len(rest):
        pick = np.random.default_rng(seed).choice(rest, size=min(extra, len(rest)), replace=False)
        idx = np.concatenate([idx, pick, [int(np.argmax(width))]])
    idx = np.unique(idx)
    return s[idx], t[idx]


def galaxy_distance(phi: FlowFamily, psi: FlowFamily, grid, points, varpi, omega,
                    max_pairs=None, seed=0) -> DefectReport:
    """``sup |phi_{t,s}(a) - psi_{t,s}(a)| / varpi(omega_{s,t})`` over grid pairs.

    With ``max_pairs`` the short pairs are all kept and the longer ones
    sampled (the full-horizon pair is always included).
    """
    s, t = _thin_pairs(*grid_pairs(grid), max_pairs, seed)

    def evaluate(chunk, pts):
        s_, t_ = (x[:, None] for x in chunk)
        a = np.broadcast_to(pts, (len(chunk[0]),) + pts.shape)
        return _norm(phi(s_, t_, a) - psi(s_, t_, a))

    return _flow_ratio_sup(evaluate, (s, t), points, lambda c: varpi(omega(c[0], c[1])),
                           "galaxy_distance")


def galaxy_study(phi, psi, T, levels, points, varpi, omega, drift=0.10, max_pairs=None, seed=0):
    """Galaxy distance on dyadic grids of increasing level.

    Returns ``(same_galaxy, reports)``: the families are judged to share a
    galaxy when every estimate is finite and the relative change between
    successive levels stays within ``drift``.
    """
    reports = [galaxy_distance(phi, psi, Partition.dyadic(T, k).times, points, varpi, omega,
                               max_pairs, seed) for k in levels]
    vals = np.array([r.value for r in reports])
    finite = np.all(np.isfinite(vals))
    changes = np.abs(np.diff(vals)) / np.maximum(vals[:-1], 1e-300)
    stable = finite and (vals.max() == 0.0 or bool(np.all(changes <= drift)))
    for r, k in zip(reports, levels):
        r.samples["level"] = k
    if not stable:
        reports[-1].notes.append("different galaxy: ratio grows under refinement")
    return stable, reports


def lipschitz_gap_estimate(phi: FlowFamily, pi, pairs, grid=None, varpi=None, omega=None) -> DefectReport:
    """``max |(phi^pi - phi)_{t,s}(a) - (phi^pi - phi)_{t,s}(b)| / (|a - b| varpi(omega_{s,t}))``."""
    pi = _as_partition(pi)
    grid = pi.times if grid is None else np.asarray(grid, dtype=float)
    a, b = _point_pairs(pairs)
    s, t = grid_pairs(grid)
    best, where = -1.0, (0, 0)
    for k in range(len(s)):
        da = iterated_product(phi, pi, s[k], t[k], a) - phi(s[k], t[k], a)
        db = iterated_product(phi, pi, s[k], t[k], b) - phi(s[k], t[k], b)
        den = _norm(a - b) * (float(varpi(omega(s[k], t[k]))) if varpi is not None else 1.0)
        q = _norm(da - db) / den
        j = int(np.argmax(q))
        if q[j] > best:
            best, where = float(q[j]), (k, j)
    return DefectReport("lipschitz_gap_L", max(best, 0.0),
                        witness={"times": (float(s[where[0]]), float(t[where[0]])),
                                 "pair": (a[where[1]], b[where[1]])},
                        samples={"time_pairs": len(s), "point_pairs": len(a)})


def refinement_cauchy(phi: FlowFamily, T, levels, points):
    """``sup_a |phi^{pi_{k+1}}_{T,0}(a) - phi^{pi_k}_{T,0}(a)|`` for successive dyadic levels."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    values = [iterated_product(phi, Partition.dyadic(T, k), 0.0, T, points) for k in levels]
    return np.array([np.max(_norm(b - a)) for a, b in zip(values[:-1], values[1:])])
