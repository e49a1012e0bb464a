"""Controls, remainders and rough drivers.

A driver maps a pair of times ``s <= t`` to the truncated signature
``x_{s,t}`` (a :class:`~roughflow.algebra.TensorSeries`).  Evaluation
broadcasts over array-valued ``s`` and ``t``.

Norms on tensor levels are coordinate-wise maxima throughout.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np

from .algebra import (
    TensorSeries,
    identity,
    max_abs_difference,
    segment_signature,
    tensor_product,
)
from .reports import DefectReport


class Control:
    """Super-additive time-scale ``omega_{s,t}`` on ``[0, T]``."""

    def __init__(self, fn, T=1.0, name="control"):
        self._fn = fn
        self.T = float(T)
        self.name = name

    def __call__(self, s, t):
        return self._fn(np.asarray(s, dtype=float), np.asarray(t, dtype=float))

    def __repr__(self):
        return f"Control({self.name}, T={self.T})"


def make_holder_control(c: float, T: float = 1.0) -> Control:
    """``omega_{s,t} = c (t - s)``."""
    if not c > 0:
        raise ValueError(f"control constant must be positive, got {c}")
    c = float(c)
    return Control(lambda s, t: c * (t - s), T=T, name=f"holder(c={c})")


def superadditivity_defect(control: Control, n=1000, seed=0, triples=None, rtol=1e-12):
    """Largest ``omega_{r,s} + omega_{s,t} - omega_{r,t}`` over sampled triples.

    Gaps below ``rtol * omega_{0,T}`` count as rounding.
    """
    if triples is None:
        rng = np.random.default_rng(seed)
        triples = np.sort(rng.uniform(0.0, control.T, size=(n, 3)), axis=1)
    triples = np.asarray(triples, dtype=float)
    r, s, t = triples.T
    gap = control(r, s) + control(s, t) - control(r, t)
    k = int(np.argmax(gap))
    return DefectReport(
        "control_superadditivity",
        max(float(gap[k]), 0.0),
        witness={"triple": triples[k], "raw": float(gap[k])},
        samples={"triples": len(triples)},
        seed=seed,
        threshold=rtol * float(control(0.0, control.T)),
    )


class PowerRemainder:
    """``varpi(delta) = delta ** theta`` with ``theta > 1``."""

    def __init__(self, theta: float):
        if not theta > 1:
            raise ValueError(f"remainder exponent must exceed 1, got {theta}")
        self.theta = float(theta)

    @property
    def kappa(self):
        # 2 varpi(delta / 2) = kappa varpi(delta)
        return 2.0 ** (1.0 - self.theta)

    def __call__(self, delta):
        return np.asarray(delta, dtype=float) ** self.theta

    def __repr__(self):
        return f"PowerRemainder(theta={self.theta:g})"


class SewingParameters:
    """Regularity ``p``, Hölder excess ``gamma`` and horizon ``T``.

    ``delta_T = delta_scale * T ** (gamma / p)`` and
    ``eta(delta) = delta_T * delta ** (theta (1 - gamma))`` are tunables:
    any non-decreasing ``delta_T`` vanishing with ``T`` is admissible, and
    this ``eta`` meets ``eta(omega) varpi(omega)^gamma <= delta_T varpi(omega)``
    with equality.
    """

    def __init__(self, p=2.0, gamma=1.0, T=1.0, delta_scale=1.0):
        p, gamma = float(p), float(gamma)
        if not 2.0 <= p < 3.0:
            raise ValueError(f"p must lie in [2, 3), got {p}")
        if not 0.0 < gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
        if not (2.0 + gamma) / p > 1.0:
            raise ValueError("need (2 + gamma) / p > 1")
        if not T > 0:
            raise ValueError(f"horizon must be positive, got {T}")
        self.p = p
        self.gamma = gamma
        self.T = float(T)
        self.delta_scale = float(delta_scale)

    @property
    def theta(self):
        return (2.0 + self.gamma) / self.p

    @property
    def remainder(self):
        return PowerRemainder(self.theta)

    def delta(self, T=None):
        T = self.T if T is None else T
        return self.delta_scale * T ** (min(self.gamma, 1.0) / self.p)

    def eta(self, delta):
        return self.delta() * np.asarray(delta, dtype=float) ** (self.theta * (1.0 - self.gamma))

    def eta_defect(self, omegas):
        """Largest violation of the eta/delta_T compatibility on sampled omegas."""
        w = np.asarray(omegas, dtype=float)
        varpi = self.remainder
        gap = self.eta(w) * varpi(w) ** self.gamma - self.delta() * varpi(w)
        return max(float(np.max(gap)), 0.0)

    def horizon_ok(self, delta_T=None):
        """``kappa (1 + delta_T)^2 + delta_T < 1``, the small-horizon condition."""
        d = self.delta() if delta_T is None else delta_T
        return self.remainder.kappa * (1 + d) ** 2 + d < 1

    def to_dict(self):
        return {"p": self.p, "gamma": self.gamma, "T": self.T, "delta_scale": self.delta_scale}


class RoughDriver:
    """Base class: ``driver(s, t)`` returns the depth-``depth`` signature."""

    def __init__(self, dim, depth, params=None, control=None, name="driver"):
        self.dim = int(dim)
        self.depth = int(depth)
        self.params = params if params is not None else SewingParameters()
        self.control = control if control is not None else make_holder_control(1.0, self.params.T)
        self.name = name

    @property
    def T(self):
        return self.params.T

    def __call__(self, s, t) -> TensorSeries:
        s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        if np.any(s > t):
            raise ValueError("driver increments are defined for s <= t only")
        return self._increment(s, t)

    def _increment(self, s, t):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.name}, dim={self.dim}, depth={self.depth})"


class PureAreaDriver(RoughDriver):
    """``x^(1)_{s,t} = 0`` and ``x^(2)_{s,t} = (t - s) A`` for antisymmetric ``A``."""

    def __init__(self, area, params=None, control=None):
        area = np.asarray(area, dtype=float)
        if area.ndim != 2 or area.shape[0] != area.shape[1]:
            raise ValueError("area must be a square matrix")
        if not np.allclose(area, -area.T, atol=1e-14, rtol=0):
            raise ValueError("area matrix must be antisymmetric")
        super().__init__(area.shape[0], 2, params, control, name="pure_area")
        self.area = area

    def _increment(self, s, t):
        h = t - s
        l = self.dim
        return TensorSeries(
            [np.ones(h.shape), np.zeros(h.shape + (l,)), h[..., None, None] * self.area],
            dim=l,
        )


def pure_area_driver(A, params=None, control=None) -> PureAreaDriver:
    return PureAreaDriver(A, params, control)


class PiecewiseLinearDriver(RoughDriver):
    """Signature of the piecewise-linear path through ``values`` at ``knots``.

    Signatures of the cells are combined in a dyadic tree at construction,
    so every increment is a genuine path signature and Chen's relation
    holds up to rounding.  An interval made of whole cells costs
    ``O(log M)`` products.
    """

    def __init__(self, knots, values, depth=2, params=None, control=None, name="piecewise_linear"):
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if knots.ndim != 1 or len(knots) < 2 or len(knots) != len(values):
            raise ValueError("need matching knots and values with at least two entries")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        if params is None:
            params = SewingParameters(T=knots[-1])
        super().__init__(values.shape[1], depth, params, control, name=name)
        self.knots = knots
        self.values = values
        self._build_tree()

    def _build_tree(self):
        n_cells = len(self.knots) - 1
        size = 1
        while size < n_cells:
            size *= 2
        self._size = size
        leaves = segment_signature(np.diff(self.values, axis=0), self.depth)
        pad = identity(self.dim, self.depth, (size - n_cells,))
        levels = []
        for k in range(self.depth + 1):
            arr = np.empty((2 * size,) + (self.dim,) * k)
            arr[size:size + n_cells] = leaves.levels[k]
            arr[size + n_cells:] = pad.levels[k]
            levels.append(arr)
        lo = size
        while lo > 1:
            half = lo // 2
            left = TensorSeries([x[lo:2 * lo:2] for x in levels], dim=self.dim)
            right = TensorSeries([x[lo + 1:2 * lo:2] for x in levels], dim=self.dim)
            prod = tensor_product(left, right)
            for k in range(self.depth + 1):
                levels[k][half:lo] = prod.levels[k]
            lo = half
        self._tree = levels

    def _node(self, idx):
        return TensorSeries([x[idx] for x in self._tree], dim=self.dim)

    def _range_product(self, lo, hi):
        # product of cells lo..hi-1 (empty range -> identity), vectorised
        l = lo + self._size
        r = hi + self._size
        batch = lo.shape
        left = identity(self.dim, self.depth, batch)
        right = identity(self.dim, self.depth, batch)
        while np.any(l < r):
            m = (l < r) & (l % 2 == 1)
            if np.any(m):
                cand = tensor_product(left, self._node(np.where(m, l, 1)))
                left = _select(m, cand, left)
                l = l + m
            m = (l < r) & (r % 2 == 1)
            if np.any(m):
                r = r - m
                cand = tensor_product(self._node(np.where(m, r, 1)), right)
                right = _select(m, cand, right)
            l = l // 2
            r = r // 2
        return tensor_product(left, right)

    def path(self, t):
        """The interpolated path value at ``t``."""
        t = np.asarray(t, dtype=float)
        i = np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, len(self.knots) - 2)
        u0, u1 = self.knots[i], self.knots[i + 1]
        w = ((t - u0) / (u1 - u0))[..., None]
        return self.values[i] + w * (self.values[i + 1] - self.values[i])

    def _increment(self, s, t):
        shape = s.shape
        s = s.ravel()
        t = t.ravel()
        last = len(self.knots) - 2
        i = np.clip(np.searchsorted(self.knots, s, side="right") - 1, 0, last)
        j = np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, last)
        xs, xt = self.path(s), self.path(t)
        same = i == j
        whole = segment_signature(xt - xs, self.depth)
        if np.all(same):
            out = whole
        else:
            head = segment_signature(self.values[i + 1] - xs, self.depth)
            tail = segment_signature(xt - self.values[j], self.depth)
            mid = self._range_product(np.where(same, 0, i + 1), np.where(same, 0, j))
            out = _select(same, whole, tensor_product(tensor_product(head, mid), tail))
        return TensorSeries([x.reshape(shape + x.shape[1:]) for x in out.levels], dim=self.dim)


def _select(mask, a, b):
    out = []
    for k, (x, y) in enumerate(zip(a.levels, b.levels)):
        m = mask.reshape(mask.shape + (1,) * k)
        out.append(np.where(m, x, y))
    return TensorSeries(out, dim=a.dim)


def piecewise_linear_driver(times, points, depth=2, params=None, control=None):
    return PiecewiseLinearDriver(times, points, depth, params, control)


def _sample_path(path, times):
    try:
        vals = np.asarray(path(times), dtype=float)
        if vals.shape[0] != len(times):
            raise ValueError
    except Exception:
        vals = np.array([np.atleast_1d(np.asarray(path(u), dtype=float)) for u in times])
    if vals.ndim == 1:
        vals = vals[:, None]
    return vals


def lift_smooth(path, T=1.0, substeps=64, depth=2, params=None, control=None, name="smooth"):
    """Lift a continuous path ``t -> R^l`` to a rough driver.

    The path is sampled on a uniform grid with ``2^k >= substeps * T`` cells
    and the lift is the signature of the interpolating polyline, so level 2
    carries second-order quadrature error while Chen holds exactly.
    """
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    cells = 1
    while cells < substeps * T:
        cells *= 2
    knots = np.linspace(0.0, T, cells + 1)
    values = _sample_path(path, knots)
    if params is None:
        params = SewingParameters(T=T)
    return PiecewiseLinearDriver(knots, values, depth, params, control, name=name)


def _pairs(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2:
        raise ValueError("grid needs at least two points")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    idx = np.array(list(combinations(range(len(grid)), 2)))
    return grid[idx[:, 0]], grid[idx[:, 1]]


def _level_sup(x):
    return [np.max(np.abs(lv.reshape(lv.shape[0], -1)), axis=1) for lv in x.levels[1:]]


def p_norm_estimate(d: RoughDriver, grid) -> float:
    """``sup_k sup_{s<t} |x^(k)_{s,t}| / omega_{s,t}^{k/p}`` over grid pairs."""
    s, t = _pairs(grid)
    x = d(s, t)
    w = d.control(s, t)
    best = 0.0
    for k, mag in enumerate(_level_sup(x), start=1):
        ok = w > 0
        if np.any(ok):
            best = max(best, float(np.max(mag[ok] / w[ok] ** (k / d.params.p))))
    return best


def _triples(grid):
    grid = np.unique(np.asarray(grid, dtype=float))
    if len(grid) < 3:
        raise ValueError("grid needs at least three points")
    idx = np.array(list(combinations(range(len(grid)), 3)))
    return grid[idx]


def check_chen(d: RoughDriver, grid=None, tol=1e-10, triples=None) -> DefectReport:
    """Largest coordinate of ``x_{r,s} (x) x_{s,t} - x_{r,t}`` over triples."""
    triples = _triples(grid) if triples is None else np.sort(np.asarray(triples, dtype=float), axis=1)
    r, s, t = triples.T
    lhs = tensor_product(d(r, s), d(s, t))
    rhs = d(r, t)
    gaps = np.max(
        np.stack([np.abs(a - b).reshape(len(r), -1).max(axis=1) for a, b in zip(lhs.levels, rhs.levels)]),
        axis=0,
    )
    k = int(np.argmax(gaps))
    return DefectReport(
        "chen",
        float(gaps[k]),
        witness={"triple": triples[k]},
        samples={"triples": len(triples)},
        threshold=tol,
    )


def check_weak_geometric(d: RoughDriver, grid, tol=1e-10) -> DefectReport:
    """Largest ``|x^{ij} + x^{ji} - x^i x^j|`` over grid pairs."""
    s, t = _pairs(grid)
    x = d(s, t)
    x1, x2 = x.levels[1], x.levels[2]
    gap = np.abs(x2 + np.swapaxes(x2, -1, -2) - x1[:, :, None] * x1[:, None, :])
    per = gap.reshape(len(s), -1).max(axis=1)
    k = int(np.argmax(per))
    return DefectReport(
        "weak_geometric",
        float(per[k]),
        witness={"pair": (float(s[k]), float(t[k]))},
        samples={"pairs": len(s)},
        threshold=tol,
    )


def chen_defect(a, b, c):
    """``|a (x) b - c|`` coordinate-wise maximum for single elements."""
    return max_abs_difference(tensor_product(a, b), c)


# named paths available from configuration files
def _circle(radius=1.0, speed=1.0):
    def path(t):
        t = np.asarray(t, dtype=float)
        return radius * np.stack([np.cos(speed * t), np.sin(speed * t)], axis=-1)

    def velocity(t):
        t = np.asarray(t, dtype=float)
        return radius * speed * np.stack([-np.sin(speed * t), np.cos(speed * t)], axis=-1)

    return path, velocity


def _line(v):
    v = np.asarray(v, dtype=float)

    def path(t):
        return np.asarray(t, dtype=float)[..., None] * v

    def velocity(t):
        return np.broadcast_to(v, np.shape(t) + v.shape).copy()

    return path, velocity


NAMED_PATHS = {"circle": _circle, "line": _line}


def named_path(name, **kwargs):
    """``(path, velocity)`` pair for a built-in path."""
    try:
        factory = NAMED_PATHS[name]
    except KeyError:
        raise ValueError(f"unknown path {name!r}; choose from {sorted(NAMED_PATHS)}") from None
    return factory(**kwargs)


def driver_from_config(spec: dict) -> RoughDriver:
    """Build a driver from a JSON-style mapping.

    Keys: ``kind`` (``smooth`` | ``pure_area`` | ``piecewise_linear``),
    ``p``, ``gamma``, ``T``, ``control_c``, plus kind-specific fields:
    ``path``/``path_args``/``substeps``/``depth`` for smooth, ``area`` for
    pure_area, ``times``/``points``/``depth`` for piecewise_linear.
    """
    spec = dict(spec)
    kind = spec.get("kind")
    params = SewingParameters(
        p=spec.get("p", 2.0),
        gamma=spec.get("gamma", 1.0),
        T=spec.get("T", 1.0),
        delta_scale=spec.get("delta_scale", 1.0),
    )
    control = make_holder_control(spec.get("control_c", 1.0), params.T)
    if kind == "smooth":
        path, velocity = named_path(spec.get("path", "circle"), **spec.get("path_args", {}))
        d = lift_smooth(
            path,
            T=params.T,
            substeps=int(spec.get("substeps", 64)),
            depth=int(spec.get("depth", 2)),
            params=params,
            control=control,
            name=spec.get("path", "circle"),
        )
        d.velocity = velocity
        d.exact_path = path
        return d
    if kind == "pure_area":
        return PureAreaDriver(spec["area"], params, control)
    if kind == "piecewise_linear":
        return PiecewiseLinearDriver(
            spec["times"], spec["points"], int(spec.get("depth", 2)), params, control
        )
    raise ValueError(f"unknown driver kind {kind!r}")
