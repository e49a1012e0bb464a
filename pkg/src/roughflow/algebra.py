"""Truncated tensor algebra over R^l.

Coordinates of level ``k`` are stored as a dense array of shape
``batch + (l,) * k``; flattening it row-major gives the lexicographic
order over multi-indices ``(i_1, ..., i_k)``.

Iterated integrals use the "first index earliest" ordering::

    x^{(i, j)}_{s,t} = int_{s < u < v < t} dx^i_u dx^j_v

so that for a counterclockwise loop in the (1, 2)-plane ``x^{12} > 0``,
and the Chen product concatenates multi-indices left to right.

Every element may carry a leading batch shape; all operations broadcast
over it.
"""

from __future__ import annotations

from math import factorial

import numpy as np

MAX_DEPTH = 3

_LETTERS = "abcdefgh"


class TensorSeries:
    """Element of the truncated tensor algebra ``T_N(R^l)``."""

    __slots__ = ("dim", "depth", "levels")

    def __init__(self, levels, dim=None):
        levels = [np.asarray(x, dtype=float) for x in levels]
        if len(levels) < 2:
            raise ValueError("a tensor series needs levels 0..N with N >= 1")
        if dim is None:
            dim = levels[1].shape[-1]
        batch = levels[0].shape
        for k, x in enumerate(levels):
            want = batch + (dim,) * k
            if x.shape != want:
                try:
                    x = np.broadcast_to(x, want)
                except ValueError:
                    raise ValueError(
                        f"level {k} has shape {x.shape}, expected {want}"
                    ) from None
                levels[k] = x
        self.dim = int(dim)
        self.depth = len(levels) - 1
        self.levels = tuple(levels)

    @property
    def batch_shape(self):
        return self.levels[0].shape

    def __getitem__(self, k):
        return self.levels[k]

    def __repr__(self):
        return f"TensorSeries(dim={self.dim}, depth={self.depth}, batch={self.batch_shape})"

    def coordinate(self, index):
        """Coordinate ``x^I`` for a 0-based multi-index ``I``."""
        index = tuple(index)
        return self.levels[len(index)][(...,) + index]

    def flat(self, k):
        return self.levels[k].reshape(self.batch_shape + (-1,))

    def take(self, idx):
        """Select batch entries (numpy indexing on the batch axes)."""
        return TensorSeries([x[idx] for x in self.levels], dim=self.dim)

    def truncate(self, depth):
        if depth > self.depth:
            raise ValueError(f"cannot truncate depth {self.depth} to {depth}")
        return TensorSeries(self.levels[: depth + 1], dim=self.dim)

    def allclose(self, other, atol=1e-12):
        return max_abs_difference(self, other) <= atol


def identity(dim, depth, batch_shape=()):
    levels = [np.ones(batch_shape)]
    levels += [np.zeros(tuple(batch_shape) + (dim,) * k) for k in range(1, depth + 1)]
    return TensorSeries(levels, dim=dim)


def _check_compatible(a, b):
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} != {b.dim}")
    if a.depth != b.depth:
        raise ValueError(f"depth mismatch: {a.depth} != {b.depth}")


def _outer(x, y, kx, ky):
    # batched outer product of a level-kx and a level-ky tensor
    if kx == 0:
        return x[(...,) + (None,) * ky] * y
    if ky == 0:
        return x * y[(...,) + (None,) * kx]
    lx = _LETTERS[:kx]
    ly = _LETTERS[kx:kx + ky]
    return np.einsum(f"...{lx},...{ly}->...{lx}{ly}", x, y)


def tensor_product(a: TensorSeries, b: TensorSeries) -> TensorSeries:
    """Truncated product: ``c^I = sum over splittings I = (J, K) of a^J b^K``."""
    _check_compatible(a, b)
    out = []
    for n in range(a.depth + 1):
        acc = None
        for k in range(n + 1):
            term = _outer(a.levels[k], b.levels[n - k], k, n - k)
            acc = term if acc is None else acc + term
        out.append(acc)
    return TensorSeries(out, dim=a.dim)


def inverse(g: TensorSeries) -> TensorSeries:
    """Inverse of a group-like element (``level[0] == 1``)."""
    if g.depth > MAX_DEPTH:
        raise ValueError(f"group inverse only implemented up to depth {MAX_DEPTH}")
    one = identity(g.dim, g.depth, g.batch_shape)
    # g = 1 + u, g^{-1} = 1 - u + u^2 - u^3 (nilpotent up to depth)
    u = TensorSeries([np.zeros(g.batch_shape)] + list(g.levels[1:]), dim=g.dim)
    result = one
    power = one
    for n in range(1, g.depth + 1):
        power = tensor_product(power, u)
        sign = -1.0 if n % 2 else 1.0
        result = TensorSeries(
            [r + sign * p for r, p in zip(result.levels, power.levels)], dim=g.dim
        )
    return result


def segment_signature(increment, depth: int) -> TensorSeries:
    """Signature of a straight segment: ``level[k] = v^{(x) k} / k!``."""
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    v = np.asarray(increment, dtype=float)
    if v.ndim == 0:
        v = v[None]
    batch = v.shape[:-1]
    levels = [np.ones(batch), v]
    power = v
    for k in range(2, depth + 1):
        power = _outer(power, v, k - 1, 1)
        levels.append(power / factorial(k))
    return TensorSeries(levels, dim=v.shape[-1])


def piecewise_linear_signature(points, depth: int) -> TensorSeries:
    """Chen product of the segment signatures along an ordered vertex list."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim < 2 or pts.shape[-2] < 2:
        raise ValueError("need at least two vertices")
    incs = np.diff(pts, axis=-2)
    sig = segment_signature(incs[..., 0, :], depth)
    for j in range(1, incs.shape[-2]):
        sig = tensor_product(sig, segment_signature(incs[..., j, :], depth))
    return sig


def weak_geometric_defect(x: TensorSeries) -> float:
    """``max_{i,j} |x^{ij} + x^{ji} - x^i x^j|`` for a depth-2 element."""
    if x.depth != 2:
        raise ValueError(f"weak-geometric defect needs depth 2, got {x.depth}")
    x1, x2 = x.levels[1], x.levels[2]
    sym = x2 + np.swapaxes(x2, -1, -2)
    gap = sym - x1[..., :, None] * x1[..., None, :]
    return float(np.max(np.abs(gap))) if gap.size else 0.0


def max_abs_difference(a: TensorSeries, b: TensorSeries) -> float:
    _check_compatible(a, b)
    return max(float(np.max(np.abs(x - y))) if np.size(x) else 0.0
               for x, y in zip(a.levels, b.levels))


def symmetric_square(v):
    """``v (x) v / 2``, the level-2 part forced by weak geometricity."""
    v = np.asarray(v, dtype=float)
    return 0.5 * v[..., :, None] * v[..., None, :]


def antisymmetric_part(x2):
    x2 = np.asarray(x2, dtype=float)
    return 0.5 * (x2 - np.swapaxes(x2, -1, -2))
