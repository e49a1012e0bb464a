"""Concrete almost flows: Davie, step-n Euler, Bailleul's log-ODE step and
the Friz-Victoir step along a chord-plus-loops path.

Each constructor returns an :class:`~roughflow.flows.IncrementFlow` whose
step reads the driver increment ``x_{s,t}`` and the current state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebra import antisymmetric_part
from .errors import CapabilityError, ConfigError, NonConvergence
from .fields import VectorFieldFamily, second_order_actions, third_order_actions
from .flows import IncrementFlow

DEFAULT_SUBSTEPS = 16


def _check_dims(v: VectorFieldFamily, d):
    if v.driver_dim != d.dim:
        raise CapabilityError(f"field expects {v.driver_dim} driver channels, driver has {d.dim}")


def _meta(v, **kw):
    return {"field": v.name, "fd_jacobian": v.fd_jacobian, "fd_hessian": v.fd_hessian, **kw}


def euler_increment(v: VectorFieldFamily, n, x, a):
    """``sum_{1 <= |I| <= n} f_I i(a) x^I`` added to ``a``."""
    fa = v(a)
    out = a + np.einsum("...mi,...i->...m", fa, x.levels[1])
    if n >= 2:
        J = v.jacobian(a)
        F2 = second_order_actions(v, a, fa, J)
        out = out + np.einsum("...mij,...ij->...m", F2, x.levels[2])
        if n >= 3:
            F3 = third_order_actions(v, a, fa, J)
            out = out + np.einsum("...mijk,...ijk->...m", F3, x.levels[3])
    return out


def step_n_euler(v: VectorFieldFamily, d, n: int) -> IncrementFlow:
    """Step-``n`` Euler almost flow, ``1 <= n <= 3``."""
    if not 1 <= n <= 3:
        raise ConfigError(f"step-n Euler supports 1 <= n <= 3, got {n}")
    if d.depth < n:
        raise CapabilityError(f"step-{n} Euler needs a depth-{n} driver; this one has depth {d.depth}")
    _check_dims(v, d)
    return IncrementFlow(d, lambda x, a: euler_increment(v, n, x, a),
                         name=f"euler_{n}", meta=_meta(v, n=n))


def davie_almost_flow(v: VectorFieldFamily, d) -> IncrementFlow:
    """``a + f(a) x^(1) + df(a) f(a) x^(2)``."""
    if d.depth < 2:
        raise CapabilityError("the Davie scheme needs a depth-2 driver")
    _check_dims(v, d)
    return IncrementFlow(d, lambda x, a: euler_increment(v, 2, x, a),
                         name="davie", meta=_meta(v, n=2))


def rk4(drift, y, substeps):
    """Classical fourth-order integration of ``y' = drift(y)`` over ``[0, 1]``."""
    h = 1.0 / substeps
    # overflow is detected below and reported as non-convergence
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(substeps):
            k1 = drift(y)
            k2 = drift(y + 0.5 * h * k1)
            k3 = drift(y + 0.5 * h * k2)
            k4 = drift(y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(y)):
        raise NonConvergence("ODE integrator produced non-finite values (drift blow-up)")
    return y


def bailleul_step(v, x, a, substeps=DEFAULT_SUBSTEPS):
    x1 = x.levels[1]
    # 1/2 sum_ij [f_i, f_j] x^{ij} = 1/2 sum_ij f_(i,j) (x^{ij} - x^{ji})
    skew = x.levels[2] - np.swapaxes(x.levels[2], -1, -2)

    def drift(y):
        fy = v(y)
        F2 = second_order_actions(v, y, fy)
        return (np.einsum("...mi,...i->...m", fy, x1)
                + 0.5 * np.einsum("...mij,...ij->...m", F2, skew))

    return rk4(drift, a, substeps)


def bailleul_almost_flow(v: VectorFieldFamily, d, substeps=DEFAULT_SUBSTEPS) -> IncrementFlow:
    """Time-one map of the log-ODE with drift
    ``f_i x^i + 1/2 [f_i, f_j] x^{ij}`` (frozen over the step)."""
    if substeps < 1:
        raise ConfigError("substeps must be >= 1")
    if d.depth < 2:
        raise CapabilityError("the Bailleul scheme needs a depth-2 driver")
    _check_dims(v, d)
    return IncrementFlow(d, lambda x, a: bailleul_step(v, x, a, substeps),
                         name="bailleul", meta=_meta(v, substeps=substeps))


def bailleul_remainder(v: VectorFieldFamily, d, substeps=DEFAULT_SUBSTEPS) -> IncrementFlow:
    """``eps_{t,s} = chi_{t,s} - phi_{t,s}`` (Bailleul minus Davie)."""
    _check_dims(v, d)

    def step(x, a):
        return bailleul_step(v, x, a, substeps) - euler_increment(v, 2, x, a)

    flow = IncrementFlow(d, step, name="bailleul_remainder", meta=_meta(v, substeps=substeps))
    flow.is_perturbation = True
    return flow


LOOP_SEGMENTS = 7


def loop_increments(increment, area):
    """Segment increments of the chord-plus-loops path, shape ``(..., n_seg, l)``.

    The chord comes first.  Each plane ``i < j`` then gets a square loop of
    signed area ``area[i, j]`` traversed from the midpoint of the square:
    a spur to the lower edge, the square, and the spur back.  The loop is
    point-symmetric about its base point, so its level-3 signature vanishes
    and the path adds no spurious third-order term.
    """
    v = np.asarray(increment, dtype=float)
    A = np.asarray(area, dtype=float)
    l = v.shape[-1]
    batch = v.shape[:-1]
    planes = [(i, j) for i in range(l) for j in range(i + 1, l)]
    segs = np.zeros(batch + (1 + LOOP_SEGMENTS * len(planes), l))
    segs[..., 0, :] = v
    pattern_i = np.array([0.0, 1.0, 0.0, -2.0, 0.0, 1.0, 0.0])
    pattern_j = np.array([-1.0, 0.0, 2.0, 0.0, -2.0, 0.0, 1.0])
    for p, (i, j) in enumerate(planes):
        aij = A[..., i, j]
        h = 0.5 * np.sqrt(np.abs(aij))
        sign = np.where(aij < 0, -1.0, 1.0)
        lo = 1 + LOOP_SEGMENTS * p
        segs[..., lo:lo + LOOP_SEGMENTS, i] = (sign * h)[..., None] * pattern_i
        segs[..., lo:lo + LOOP_SEGMENTS, j] = h[..., None] * pattern_j
    return segs


def axis_loop_path(increment, area, start=None):
    """Vertices of a path whose depth-2 signature is ``(v, v (x) v / 2 + area)``.

    ``area`` must be antisymmetric.  Zero-area planes are skipped.  The
    1-variation is at most ``|v| + sum_{i<j} 5 sqrt|area_ij|``.
    """
    v = np.asarray(increment, dtype=float)
    A = np.asarray(area, dtype=float)
    if A.shape != (v.size, v.size) or not np.allclose(A, -A.T, atol=1e-12, rtol=0):
        raise ValueError("area must be an antisymmetric l x l matrix")
    segs = loop_increments(v, A)
    keep = np.any(segs != 0.0, axis=-1)
    keep[0] = True
    segs = segs[keep]
    origin = np.zeros(v.size) if start is None else np.asarray(start, dtype=float)
    return np.vstack([origin, origin + np.cumsum(segs, axis=0)])


def loop_length_bound(increment, area):
    v = np.asarray(increment, dtype=float)
    A = np.asarray(area, dtype=float)
    iu = np.triu_indices(v.size, 1)
    return float(np.linalg.norm(v) + 5.0 * np.sum(np.sqrt(np.abs(A[iu]))))


def friz_victoir_step(v, x, a, substeps=DEFAULT_SUBSTEPS):
    segs = loop_increments(x.levels[1], antisymmetric_part(x.levels[2]))
    y = a
    for k in range(segs.shape[-2]):
        inc = segs[..., k, :]
        if not np.any(inc):
            continue
        y = rk4(lambda z, inc=inc: np.einsum("...mi,...i->...m", v(z), inc), y, substeps)
    return y


def friz_victoir_almost_flow(v: VectorFieldFamily, d, substeps=DEFAULT_SUBSTEPS) -> IncrementFlow:
    """Transport along the chord-plus-loops path matching ``x_{s,t}`` at depth 2.

    ``substeps`` RK4 steps are taken on every path segment.
    """
    if substeps < 1:
        raise ConfigError("substeps must be >= 1")
    if d.depth < 2:
        raise CapabilityError("the Friz-Victoir scheme needs a depth-2 driver")
    _check_dims(v, d)
    return IncrementFlow(d, lambda x, a: friz_victoir_step(v, x, a, substeps),
                         name="friz_victoir", meta=_meta(v, substeps=substeps))


@dataclass(frozen=True)
class SchemeSpec:
    kind: str
    n: int = 2
    ode_substeps: int = DEFAULT_SUBSTEPS

    def __post_init__(self):
        if self.kind not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.kind!r}; choose from {sorted(SCHEMES)}")
        if not 1 <= self.n <= 3:
            raise ConfigError(f"n must satisfy 1 <= n <= 3, got {self.n}")
        if self.ode_substeps < 1:
            raise ConfigError("ode_substeps must be >= 1")

    @classmethod
    def parse(cls, spec):
        if isinstance(spec, str):
            if spec.startswith("euler_"):
                return cls("euler_n", n=int(spec.split("_")[1]))
            return cls(spec)
        spec = dict(spec)
        try:
            return cls(spec.pop("kind"), **spec)
        except TypeError as exc:
            raise ConfigError(f"bad scheme spec: {exc}") from None

    @property
    def label(self):
        return f"euler_{self.n}" if self.kind == "euler_n" else self.kind

    def build(self, v, d):
        return SCHEMES[self.kind](v, d, self)


SCHEMES = {
    "davie": lambda v, d, sp: davie_almost_flow(v, d),
    "euler_n": lambda v, d, sp: step_n_euler(v, d, sp.n),
    "bailleul": lambda v, d, sp: bailleul_almost_flow(v, d, sp.ode_substeps),
    "friz_victoir": lambda v, d, sp: friz_victoir_almost_flow(v, d, sp.ode_substeps),
}
