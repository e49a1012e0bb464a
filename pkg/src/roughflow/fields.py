"""Vector fields with derivatives, composed actions and 4-points constants.

A field ``f: R^d -> L(R^l, R^d)`` evaluates to an array of shape
``(..., d, l)`` whose column ``i`` is ``f_i(a)``.  Derivatives are stored
per channel::

    jacobian(a)[..., i, m, p]    = d f_i^m / d a_p
    hessian(a)[..., i, m, p, q]  = d^2 f_i^m / d a_p d a_q

All callbacks broadcast over leading axes of ``a``.

The composed action ``f_I i`` pairs with the coordinate ``x^I`` of the
signature: ``f_(i) i = f_i``, ``f_(i,j) i = grad f_j . f_i`` and
``f_(i,j,k) i = D_i D_j f_k`` where ``D_i g = grad g . f_i``.  This is the
pairing under which the step-n expansion is the Taylor expansion of the
driven ODE.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .reports import DefectReport


def _fd_step(a):
    return 1e-5 * (1.0 + np.linalg.norm(a, axis=-1, keepdims=True))


class VectorFieldFamily:
    """Family of vector fields ``f_1, ..., f_l`` on ``R^d``.

    ``norms`` may hold ``sup_f``, ``sup_jac``, ``holder_jac`` (the
    ``gamma``-Hölder constant of the derivative) and ``gamma``; missing
    entries are estimated on demand by :func:`estimate_norms`.
    """

    def __init__(self, eval, state_dim, driver_dim, jacobian=None, hessian=None,
                 norms=None, name="field"):
        self._eval = eval
        self._jacobian = jacobian
        self._hessian = hessian
        self.state_dim = int(state_dim)
        self.driver_dim = int(driver_dim)
        self.norms = dict(norms or {})
        self.name = name

    @property
    def fd_jacobian(self):
        return self._jacobian is None

    @property
    def fd_hessian(self):
        return self._hessian is None

    def __call__(self, a):
        return self._eval(np.asarray(a, dtype=float))

    def jacobian(self, a):
        a = np.asarray(a, dtype=float)
        if self._jacobian is not None:
            return self._jacobian(a)
        return _fd_derivative(self._eval, a, lambda y: np.swapaxes(y, -3, -2))

    def hessian(self, a):
        a = np.asarray(a, dtype=float)
        if self._hessian is not None:
            return self._hessian(a)
        return _fd_derivative(self.jacobian, a, lambda y: y)

    def as_map(self):
        """``a -> f(a)`` flattened to ``R^{d l}``, for 4-points checks."""
        return lambda a: self(a).reshape(np.shape(a)[:-1] + (-1,))

    def __repr__(self):
        return f"VectorFieldFamily({self.name}, d={self.state_dim}, l={self.driver_dim})"


def _fd_derivative(fn, a, arrange):
    # central differences; the new derivative axis is appended last
    h = _fd_step(a)
    d = a.shape[-1]
    cols = []
    for p in range(d):
        step = np.zeros(d)
        step[p] = 1.0
        step = h * step
        diff = fn(a + step) - fn(a - step)
        hh = h.reshape(h.shape[:-1] + (1,) * (diff.ndim - a.ndim + 1))
        cols.append(diff / (2.0 * hh))
    return arrange(np.stack(cols, axis=-1))


def f_I_identity(v: VectorFieldFamily, I, a):
    """Composed action ``f_I i(a)`` for ``|I| <= 3`` (0-based channels)."""
    I = tuple(I)
    a = np.asarray(a, dtype=float)
    if len(I) == 0:
        return a
    if len(I) > 3:
        raise ValueError("composed actions are available up to |I| = 3")
    fa = v(a)
    if len(I) == 1:
        return fa[..., :, I[0]]
    J = v.jacobian(a)
    if len(I) == 2:
        i, j = I
        return np.einsum("...mp,...p->...m", J[..., j, :, :], fa[..., :, i])
    i, j, k = I
    H = v.hessian(a)
    hess_term = np.einsum("...mpq,...p,...q->...m", H[..., k, :, :, :], fa[..., :, j], fa[..., :, i])
    inner = np.einsum("...pq,...q->...p", J[..., j, :, :], fa[..., :, i])
    return hess_term + np.einsum("...mp,...p->...m", J[..., k, :, :], inner)


def second_order_actions(v, a, fa=None, J=None):
    """All ``f_(i,j) i(a)`` at once, shape ``(..., d, l, l)``."""
    fa = v(a) if fa is None else fa
    J = v.jacobian(a) if J is None else J
    return np.einsum("...jmp,...pi->...mij", J, fa)


def third_order_actions(v, a, fa=None, J=None, H=None):
    """All ``f_(i,j,k) i(a)``, shape ``(..., d, l, l, l)``."""
    fa = v(a) if fa is None else fa
    J = v.jacobian(a) if J is None else J
    H = v.hessian(a) if H is None else H
    hess_term = np.einsum("...kmpq,...pj,...qi->...mijk", H, fa, fa)
    inner = np.einsum("...jpq,...qi->...pij", J, fa)
    return hess_term + np.einsum("...kmp,...pij->...mijk", J, inner)


def lie_bracket(v: VectorFieldFamily, i, j, a):
    """``[f_i, f_j] i(a) = f_(i,j) i(a) - f_(j,i) i(a)``."""
    return f_I_identity(v, (i, j), a) - f_I_identity(v, (j, i), a)


# built-in fields

def linear_field(matrices, name="linear"):
    """``f_i(y) = B_i y``."""
    B = np.asarray(matrices, dtype=float)
    if B.ndim != 3 or B.shape[1] != B.shape[2]:
        raise ValueError("expected an array of shape (l, d, d)")
    l, d, _ = B.shape

    def ev(a):
        return np.einsum("imp,...p->...mi", B, a)

    def jac(a):
        return np.broadcast_to(B, a.shape[:-1] + B.shape).copy()

    def hess(a):
        return np.zeros(a.shape[:-1] + (l, d, d, d))

    stacked = B.reshape(l * d, d)
    norms = {
        "sup_f": np.inf,
        "sup_jac": float(np.linalg.norm(stacked, 2)),
        "holder_jac": 0.0,
        "gamma": 1.0,
    }
    return VectorFieldFamily(ev, d, l, jac, hess, norms=norms, name=name)


def trig_field(weights, phases=None, name="trig"):
    """``f_i(y)^m = sin(W_i[m] . y + c_i[m])``.

    ``weights`` has shape ``(l, d, d)`` and ``phases`` shape ``(l, d)``.
    With ``d = l = 1``, ``W = 1`` and ``c = 0`` this is ``f(y) = sin y``.
    """
    W = np.asarray(weights, dtype=float)
    if W.ndim != 3 or W.shape[1] != W.shape[2]:
        raise ValueError("expected weights of shape (l, d, d)")
    l, d, _ = W.shape
    c = np.zeros((l, d)) if phases is None else np.asarray(phases, dtype=float)

    def arg(a):
        return np.einsum("imp,...p->...im", W, a) + c

    def ev(a):
        return np.swapaxes(np.sin(arg(a)), -1, -2)

    def jac(a):
        return np.cos(arg(a))[..., None] * W

    def hess(a):
        return -np.sin(arg(a))[..., None, None] * W[..., :, None] * W[..., None, :]

    row_sq = np.sum(W ** 2, axis=-1)
    norms = {
        "sup_f": 1.0 if d * l == 1 else float(np.sqrt(d * l)),
        # Frobenius upper bounds of the stacked derivative and its Lipschitz constant
        "sup_jac": float(np.sqrt(np.sum(row_sq))),
        "holder_jac": float(np.sqrt(np.sum(row_sq ** 2))),
        "gamma": 1.0,
    }
    return VectorFieldFamily(ev, d, l, jac, hess, norms=norms, name=name)


def rotation_field(generators, name="rotation"):
    """``f_i(y) = J_i y / (1 + |y|^2)`` for matrices ``J_i`` (typically antisymmetric)."""
    G = np.asarray(generators, dtype=float)
    if G.ndim != 3 or G.shape[1] != G.shape[2]:
        raise ValueError("expected generators of shape (l, d, d)")
    l, d, _ = G.shape
    eye = np.eye(d)

    def ev(a):
        w = 1.0 / (1.0 + np.sum(a * a, axis=-1))
        return np.einsum("imp,...p->...mi", G, a) * w[..., None, None]

    def jac(a):
        w = 1.0 / (1.0 + np.sum(a * a, axis=-1))
        Ga = np.einsum("imp,...p->...im", G, a)
        return (G * w[..., None, None, None]
                - 2.0 * (w ** 2)[..., None, None, None] * Ga[..., :, :, None] * a[..., None, None, :])

    def hess(a):
        w = 1.0 / (1.0 + np.sum(a * a, axis=-1))
        Ga = np.einsum("imp,...p->...im", G, a)
        w2 = (w ** 2)[..., None, None, None, None]
        w3 = (w ** 3)[..., None, None, None, None]
        # d/dq of [G w - 2 w^2 (G a) a^T]
        t1 = -2.0 * w2 * G[..., :, :, None] * a[..., None, None, None, :]
        t2 = -2.0 * w2 * np.einsum("imq,...p->...impq", G, a)
        t3 = -2.0 * w2 * Ga[..., :, :, None, None] * eye
        t4 = 8.0 * w3 * Ga[..., :, :, None, None] * a[..., None, None, :, None] * a[..., None, None, None, :]
        return t1 + t2 + t3 + t4

    return VectorFieldFamily(ev, d, l, jac, hess, norms={"gamma": 1.0}, name=name)


def zero_field(state_dim, driver_dim):
    return linear_field(np.zeros((driver_dim, state_dim, state_dim)), name="zero")


NAMED_FIELDS = {"linear": linear_field, "trig": trig_field, "rotation": rotation_field}


def field_from_config(spec: dict) -> VectorFieldFamily:
    """Keys: ``kind`` (linear | trig | rotation) with ``matrices``,
    ``weights``/``phases`` or ``generators``."""
    kind = spec.get("kind")
    if kind == "linear":
        return linear_field(spec["matrices"])
    if kind == "trig":
        return trig_field(spec["weights"], spec.get("phases"))
    if kind == "rotation":
        return rotation_field(spec["generators"])
    raise ValueError(f"unknown field kind {kind!r}; choose from {sorted(NAMED_FIELDS)}")


def estimate_norms(v: VectorFieldFamily, box=1.0, samples=10_000, seed=0, gamma=1.0):
    """Sampled lower bounds on ``sup|f|``, ``sup|grad f|`` and the
    ``gamma``-Hölder constant of ``grad f`` over ``[-box, box]^d``.

    Operator norms are spectral norms of the stacked ``(d l) x d`` derivative.
    """
    rng = np.random.default_rng(seed)
    d = v.state_dim
    a = rng.uniform(-box, box, size=(samples, d))
    b = a + rng.normal(scale=0.05 * box, size=(samples, d))
    fa = v(a).reshape(samples, -1)
    Ja = np.moveaxis(v.jacobian(a), -3, -2).reshape(samples, -1, d)
    Jb = np.moveaxis(v.jacobian(b), -3, -2).reshape(samples, -1, d)
    dist = np.linalg.norm(a - b, axis=-1)
    ok = dist > 0
    hold = np.linalg.norm(Ja - Jb, ord=2, axis=(-2, -1))[ok] / dist[ok] ** gamma
    return {
        "sup_f": float(np.max(np.linalg.norm(fa, axis=-1))),
        "sup_jac": float(np.max(np.linalg.norm(Ja, ord=2, axis=(-2, -1)))),
        "holder_jac": float(np.max(hold)) if hold.size else 0.0,
        "gamma": gamma,
        "estimated": True,
    }


@dataclass
class FourPointConstants:
    """``hat`` (non-decreasing, ``R+ -> R+``) and ``check`` for the bound

    ``|g(a)-g(b)-g(c)+g(d)| <= hat(|a-b| v |c-d|)(|a-c| v |b-d|) + check |a-b-c+d|``.
    """

    hat: Callable
    check: float
    notes: list = field(default_factory=list)

    def scaled(self, factor):
        """Constants inflated by ``factor`` (slack for sampled norms)."""
        hat = self.hat
        return FourPointConstants(lambda x: factor * hat(x), factor * self.check, list(self.notes))


def analytic_four_point(v: VectorFieldFamily, gamma=None, box=1.0) -> FourPointConstants:
    """``hat(x) = 2 |grad f|_gamma x^gamma`` and ``check = sup |grad f|``."""
    norms = dict(v.norms)
    gamma = norms.get("gamma", 1.0) if gamma is None else gamma
    notes = []
    if "sup_jac" not in norms or "holder_jac" not in norms:
        est = estimate_norms(v, box=box, gamma=gamma)
        norms = {**est, **norms}
        notes.append("norms estimated by sampling (lower bounds)")
    H = norms["holder_jac"]
    check = norms["sup_jac"]
    if not np.isfinite(check) or not np.isfinite(H):
        raise ValueError("derivative norm data unavailable or infinite")
    return FourPointConstants(lambda x: 2.0 * H * np.asarray(x, dtype=float) ** gamma, check, notes)


def sum_four_point(cf, cg, lam, mu) -> FourPointConstants:
    """Constants for ``lam f + mu g``."""
    return FourPointConstants(
        lambda x: abs(lam) * cf.hat(x) + abs(mu) * cg.hat(x),
        abs(lam) * cf.check + abs(mu) * cg.check,
    )


def compose_four_point(cf, cg, lip_g) -> FourPointConstants:
    """Constants for ``f o g`` given a Lipschitz ``g``."""
    return FourPointConstants(
        lambda x: cf.hat(lip_g * np.asarray(x, dtype=float)) * lip_g + cf.check * cg.hat(x),
        cf.check * cg.check,
    )


def inverse_four_point(cg, lip_g) -> FourPointConstants:
    """Constants for ``k = (id + g)^{-1}`` when ``Lip(g) < 1``.

    Uses ``Lip(k) <= 1 / (1 - Lip(g))``; the ``hat`` part keeps the
    ``1 / (1 - check_g)`` factor that the derivation divides through by.
    Marked for empirical verification in reports.
    """
    if not lip_g < 1:
        raise ValueError("inverse constants need Lip(g) < 1")
    if not cg.check < 1:
        raise ValueError("inverse constants need check_g < 1")
    lk = 1.0 / (1.0 - lip_g)
    scale = 1.0 / (1.0 - cg.check)
    return FourPointConstants(
        lambda x: scale * cg.hat(lk * np.asarray(x, dtype=float)) * lk,
        scale,
        notes=["inverse-map constants: verify empirically"],
    )


def _quadruples(rng, n, d, radius):
    half = n // 2
    # generic quadruples
    q1 = rng.uniform(-radius, radius, size=(half, 4, d))
    # near-parallelograms: d ~ c + b - a, where the mixed difference is small
    a = rng.uniform(-radius, radius, size=(n - half, d))
    scale = radius * 10.0 ** rng.uniform(-4, 0, size=(n - half, 1))
    u = rng.normal(size=(n - half, d)) * scale
    w = rng.normal(size=(n - half, d)) * radius * 10.0 ** rng.uniform(-3, 0, size=(n - half, 1))
    e = rng.normal(size=(n - half, d)) * scale * 10.0 ** rng.uniform(-6, 0, size=(n - half, 1))
    q2 = np.stack([a, a + u, a + w, a + w + u + e], axis=1)
    return np.concatenate([q1, q2], axis=0)


def empirical_four_point_defect(g, c: FourPointConstants, samples=10_000, radius=1.0,
                                seed=0, dim=None) -> DefectReport:
    """Largest ``lhs - rhs`` of the 4-points bound over sampled quadruples.

    A value of 0 means no violation was found (``value`` is clipped at 0;
    the raw maximum is in the witness).
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    if dim is None:
        dim = getattr(g, "state_dim", None) or 1
    q = _quadruples(rng, samples, dim, radius)
    a, b, cc, d = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    ga, gb, gc, gd = (np.asarray(g(x), dtype=float).reshape(len(x), -1) for x in (a, b, cc, d))
    nrm = lambda x: np.linalg.norm(x, axis=-1)
    lhs = nrm(ga - gb - gc + gd)
    rhs = np.asarray(c.hat(np.maximum(nrm(a - b), nrm(cc - d))), dtype=float) \
        * np.maximum(nrm(a - cc), nrm(b - d)) + c.check * nrm(a - b - cc + d)
    gap = lhs - rhs
    k = int(np.argmax(gap))
    return DefectReport(
        "four_point",
        max(float(gap[k]), 0.0),
        witness={"quadruple": q[k], "raw": float(gap[k])},
        samples={"quadruples": samples, "radius": radius},
        seed=seed,
        threshold=0.0,
    )
