"""Third-order forward-mode jets in the fiber variable.

A :class:`Jet3` carries the value of a scalar function of ``y`` together with
its first, second and third partial derivatives.  Second and third derivatives
are kept in packed symmetric storage (``j <= k`` and ``j <= k <= l`` in
lexicographic order), so reading any index permutation hits the same float.

Every array may carry leading batch dimensions: ``val`` has shape ``B``,
``d1`` shape ``B + (n,)``, ``d2`` shape ``B + (n(n+1)/2,)`` and ``d3`` shape
``B + (n(n+1)(n+2)/6,)``.  Arithmetic is elementwise over the batch.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionError, FiniteDifferenceError, FinslerError, SlitProximityError

SQRT_FLOOR = 1e-300


@dataclass(frozen=True)
class PackedIndex:
    """Index tables for packed symmetric storage in dimension ``n``."""

    n: int
    pairs: np.ndarray  # (P2, 2), j <= k
    triples: np.ndarray  # (P3, 3), j <= k <= l
    full2: np.ndarray  # (n, n) -> packed slot
    full3: np.ndarray  # (n, n, n) -> packed slot
    # for each triple (j, k, l): packed pair slots of (j,k), (j,l), (k,l)
    t_jk: np.ndarray
    t_jl: np.ndarray
    t_kl: np.ndarray


@lru_cache(maxsize=None)
def packed_index(n: int) -> PackedIndex:
    if n < 1:
        raise DimensionError(f"dimension must be positive, got {n}")
    pairs = np.array(list(itertools.combinations_with_replacement(range(n), 2)), dtype=np.intp)
    triples = np.array(list(itertools.combinations_with_replacement(range(n), 3)), dtype=np.intp)
    full2 = np.empty((n, n), dtype=np.intp)
    for slot, (j, k) in enumerate(pairs):
        full2[j, k] = full2[k, j] = slot
    full3 = np.empty((n, n, n), dtype=np.intp)
    for slot, t in enumerate(triples):
        for perm in itertools.permutations(t):
            full3[perm] = slot
    j, k, l = triples.T
    for arr in (pairs, triples, full2, full3):
        arr.setflags(write=False)
    return PackedIndex(n, pairs, triples, full2, full3, full2[j, k], full2[j, l], full2[k, l])


def n_pairs(n: int) -> int:
    return n * (n + 1) // 2


def n_triples(n: int) -> int:
    return n * (n + 1) * (n + 2) // 6


def pack2(mat) -> np.ndarray:
    """Read the canonical upper triangle of a (batched) symmetric matrix."""
    mat = np.asarray(mat, dtype=float)
    idx = packed_index(mat.shape[-1])
    return mat[..., idx.pairs[:, 0], idx.pairs[:, 1]]


def unpack2(packed) -> np.ndarray:
    packed = np.asarray(packed, dtype=float)
    n = _dim_from_packed2(packed.shape[-1])
    return packed[..., packed_index(n).full2]


def pack3(ten) -> np.ndarray:
    ten = np.asarray(ten, dtype=float)
    t = packed_index(ten.shape[-1]).triples
    return ten[..., t[:, 0], t[:, 1], t[:, 2]]


def unpack3(packed) -> np.ndarray:
    packed = np.asarray(packed, dtype=float)
    n = _dim_from_packed3(packed.shape[-1])
    return packed[..., packed_index(n).full3]


def _dim_from_packed2(size: int) -> int:
    n = int(round((np.sqrt(8 * size + 1) - 1) / 2))
    if n_pairs(n) != size:
        raise DimensionError(f"{size} is not a packed symmetric matrix size")
    return n


def _dim_from_packed3(size: int) -> int:
    n = 1
    while n_triples(n) < size:
        n += 1
    if n_triples(n) != size:
        raise DimensionError(f"{size} is not a packed symmetric 3-tensor size")
    return n


class Jet3:
    """Value and fiber derivatives through third order of a scalar function."""

    __slots__ = ("val", "d1", "d2", "d3")

    def __init__(self, val, d1, d2, d3):
        self.val = np.asarray(val, dtype=float)
        self.d1 = np.asarray(d1, dtype=float)
        self.d2 = np.asarray(d2, dtype=float)
        self.d3 = np.asarray(d3, dtype=float)
        n = self.d1.shape[-1] if self.d1.ndim else 0
        if n < 1:
            raise DimensionError("a jet needs at least one fiber dimension")
        if self.d2.shape[-1] != n_pairs(n) or self.d3.shape[-1] != n_triples(n):
            raise DimensionError("derivative slots do not match the jet dimension")

    @property
    def dim(self) -> int:
        return self.d1.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.val.shape

    @classmethod
    def constant(cls, value, n: int) -> "Jet3":
        value = np.asarray(value, dtype=float)
        shape = value.shape
        return cls(value, np.zeros(shape + (n,)), np.zeros(shape + (n_pairs(n),)),
                   np.zeros(shape + (n_triples(n),)))

    def hessian(self) -> np.ndarray:
        """Second derivatives as a full ``(..., n, n)`` array."""
        return unpack2(self.d2)

    def third(self) -> np.ndarray:
        """Third derivatives as a full ``(..., n, n, n)`` array."""
        return unpack3(self.d3)

    def __getitem__(self, item) -> "Jet3":
        """Index the batch dimensions."""
        return Jet3(self.val[item], self.d1[item], self.d2[item], self.d3[item])

    def __repr__(self):
        return f"Jet3(dim={self.dim}, batch={self.batch_shape}, val={self.val!r})"

    # arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(-self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return scale(reciprocal(self), other)

    def __neg__(self):
        return Jet3(-self.val, -self.d1, -self.d2, -self.d3)


def _check_dims(a: Jet3, b: Jet3) -> None:
    if a.dim != b.dim:
        raise DimensionError(f"jet dimensions differ: {a.dim} vs {b.dim}")


def add(a: Jet3, b) -> Jet3:
    if isinstance(b, Jet3):
        _check_dims(a, b)
        return Jet3(a.val + b.val, a.d1 + b.d1, a.d2 + b.d2, a.d3 + b.d3)
    b = np.asarray(b, dtype=float)
    shape = np.broadcast_shapes(a.val.shape, b.shape)
    return Jet3(a.val + b, *(np.broadcast_to(d, shape + d.shape[-1:]) for d in (a.d1, a.d2, a.d3)))


def sub(a: Jet3, b) -> Jet3:
    return add(a, -b)


def scale(a: Jet3, c) -> Jet3:
    c = np.asarray(c, dtype=float)
    cc = c[..., None]
    return Jet3(a.val * c, a.d1 * cc, a.d2 * cc, a.d3 * cc)


def mul(a: Jet3, b) -> Jet3:
    """Leibniz rule through third order."""
    if not isinstance(b, Jet3):
        return scale(a, b)
    _check_dims(a, b)
    idx = packed_index(a.dim)
    av, bv = a.val[..., None], b.val[..., None]
    pj, pk = idx.pairs[:, 0], idx.pairs[:, 1]
    tj, tk, tl = idx.triples[:, 0], idx.triples[:, 1], idx.triples[:, 2]

    d1 = a.d1 * bv + av * b.d1
    d2 = (a.d2 * bv + av * b.d2
          + a.d1[..., pj] * b.d1[..., pk] + a.d1[..., pk] * b.d1[..., pj])
    d3 = (a.d3 * bv + av * b.d3
          + a.d2[..., idx.t_jk] * b.d1[..., tl] + a.d2[..., idx.t_jl] * b.d1[..., tk]
          + a.d2[..., idx.t_kl] * b.d1[..., tj]
          + a.d1[..., tl] * b.d2[..., idx.t_jk] + a.d1[..., tk] * b.d2[..., idx.t_jl]
          + a.d1[..., tj] * b.d2[..., idx.t_kl])
    return Jet3(a.val * b.val, d1, d2, d3)


def compose(a: Jet3, f0, f1, f2, f3) -> Jet3:
    """Chain rule for ``phi(a)`` given ``phi`` and its first three derivatives at ``a.val``."""
    idx = packed_index(a.dim)
    f1, f2, f3 = (np.asarray(f)[..., None] for f in (f1, f2, f3))
    pj, pk = idx.pairs[:, 0], idx.pairs[:, 1]
    tj, tk, tl = idx.triples[:, 0], idx.triples[:, 1], idx.triples[:, 2]
    g1 = a.d1
    d2 = f1 * a.d2 + f2 * g1[..., pj] * g1[..., pk]
    d3 = (f1 * a.d3
          + f2 * (a.d2[..., idx.t_jk] * g1[..., tl] + a.d2[..., idx.t_jl] * g1[..., tk]
                  + a.d2[..., idx.t_kl] * g1[..., tj])
          + f3 * g1[..., tj] * g1[..., tk] * g1[..., tl])
    return Jet3(f0, f1 * g1, d2, d3)


def reciprocal(a: Jet3) -> Jet3:
    if np.any(a.val == 0):
        raise ZeroDivisionError("division by a jet with zero value")
    inv = 1.0 / a.val
    return compose(a, inv, -inv**2, 2 * inv**3, -6 * inv**4)


def div(a: Jet3, b) -> Jet3:
    if isinstance(b, Jet3):
        return mul(a, reciprocal(b))
    b = np.asarray(b, dtype=float)
    if np.any(b == 0):
        raise ZeroDivisionError("division by zero")
    return scale(a, 1.0 / b)


def sqrt_jet(a: Jet3) -> Jet3:
    low = np.min(a.val) if a.val.size else 1.0
    if not low > SQRT_FLOOR:
        raise SlitProximityError(f"sqrt of a jet with value {low!r} (slit proximity)", value=float(low))
    s = np.sqrt(a.val)
    inv = 1.0 / a.val
    return compose(a, s, 0.5 / s, -0.25 * s * inv**2, 0.375 * s * inv**3)


def abs_jet(a: Jet3) -> Jet3:
    """``|a|`` away from zero: the jet scaled by the sign of its value."""
    if np.any(a.val == 0):
        raise SlitProximityError("abs of a jet with zero value", value=0.0)
    return scale(a, np.sign(a.val))


def seed(y) -> tuple:
    """Coordinate jets ``y^1, ..., y^n`` at the (possibly batched) point ``y``."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 0 or y.shape[-1] == 0:
        raise DimensionError("cannot seed a zero-dimensional fiber vector")
    n = y.shape[-1]
    batch = y.shape[:-1]
    eye = np.eye(n)
    zeros2 = np.zeros(batch + (n_pairs(n),))
    zeros3 = np.zeros(batch + (n_triples(n),))
    return tuple(Jet3(y[..., j], np.broadcast_to(eye[j], batch + (n,)), zeros2, zeros3)
                 for j in range(n))


def linear(c, y) -> Jet3:
    """The linear functional ``c_j y^j`` as a jet."""
    c = np.asarray(c, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.shape[-1]
    batch = y.shape[:-1]
    return Jet3(np.einsum("...j,...j->...", c, y), np.broadcast_to(c, batch + (n,)),
                np.zeros(batch + (n_pairs(n),)), np.zeros(batch + (n_triples(n),)))


def quadratic(Q, y) -> Jet3:
    """The quadratic form ``Q_jk y^j y^k`` as a jet (``Q`` is symmetrised)."""
    Q = np.asarray(Q, dtype=float)
    Q = 0.5 * (Q + np.swapaxes(Q, -1, -2))
    y = np.asarray(y, dtype=float)
    n = y.shape[-1]
    batch = y.shape[:-1]
    Qy = np.einsum("...jk,...k->...j", Q, y)
    return Jet3(np.einsum("...j,...j->...", y, Qy), 2.0 * Qy,
                np.broadcast_to(2.0 * pack2(Q), batch + (n_pairs(n),)),
                np.zeros(batch + (n_triples(n),)))


# ---------------------------------------------------------------------------
# finite-difference validation

# (offsets, weights) of 1-D central stencils for the m-th derivative
_STENCIL4 = {
    1: ((-2, -1, 1, 2), (1 / 12, -8 / 12, 8 / 12, -1 / 12)),
    2: ((-2, -1, 0, 1, 2), (-1 / 12, 16 / 12, -30 / 12, 16 / 12, -1 / 12)),
}
_STENCIL2 = {
    1: ((-1, 1), (-0.5, 0.5)),
    2: ((-1, 0, 1), (1.0, -2.0, 1.0)),
    3: ((-2, -1, 1, 2), (-0.5, 1.0, -1.0, 0.5)),
}


def _product_stencil(counts: dict, table: dict):
    axes = sorted(counts)
    per_axis = [list(zip(*table[counts[a]])) for a in axes]
    for combo in itertools.product(*per_axis):
        offsets = dict(zip(axes, (o for o, _ in combo)))
        weight = float(np.prod([w for _, w in combo]))
        yield offsets, weight


@lru_cache(maxsize=64)
def _stencil_arrays(n: int, order: int, accurate: bool):
    """Offsets (points x n), weights and output slots of every product stencil."""
    table = _STENCIL4 if accurate else _STENCIL2
    multi = list(itertools.combinations_with_replacement(range(n), order))
    offsets, weights, slots = [], [], []
    for slot, mi in enumerate(multi):
        counts = {a: mi.count(a) for a in set(mi)}
        for off, weight in _product_stencil(counts, table):
            row = np.zeros(n)
            for a, o in off.items():
                row[a] = o
            offsets.append(row)
            weights.append(weight)
            slots.append(slot)
    return np.array(offsets), np.array(weights), np.array(slots), len(multi)


def _fd_derivatives(values_at, y, h, order, table):
    offsets, weights, slots, size = _stencil_arrays(y.shape[0], order, table is _STENCIL4)
    vals = values_at(y + h * offsets)
    return np.bincount(slots, weights=weights * vals, minlength=size) / h**order


def _fd_estimate(values_at, y, h, order):
    if order < 3:
        return _fd_derivatives(values_at, y, h, order, _STENCIL4)
    # one Richardson step cancels the h**2 term of the second-order stencil
    coarse = _fd_derivatives(values_at, y, h, order, _STENCIL2)
    return (4.0 * _fd_derivatives(values_at, y, 0.5 * h, order, _STENCIL2) - coarse) / 3.0


def finite_difference_errors(f, y, h: float, ladder: int = 0) -> dict:
    """Relative discrepancy per order between ``f(y)`` jets and central differences.

    ``f`` maps a ``(..., n)`` array of fiber vectors to a :class:`Jet3`.  First
    and second derivatives use fourth-order stencils; third derivatives use
    the second-order stencil at ``h`` and ``h/2`` combined by one Richardson
    step.  Each error is normalised by the larger of the jet's own max-norm
    and ``|f| / |y|**k``.

    With ``ladder > 0`` the estimates are formed at the steps
    ``h * 2**k`` for ``k = -ladder..ladder`` and, per order, the step whose
    estimate changes least when the step is halved is used.  The selection
    looks only at the finite differences, never at the jet under test.
    """
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    y = np.array(y, dtype=float)

    def values_at(pts):
        try:
            out = np.asarray(f(pts).val, dtype=float)
        except FinslerError as exc:
            raise FiniteDifferenceError(f"stencil evaluation failed near y={y.tolist()}: {exc}") from exc
        if not np.all(np.isfinite(out)):
            raise FiniteDifferenceError(f"non-finite value inside the stencil near y={y.tolist()}")
        return out

    jet = f(y)
    f0 = abs(float(jet.val))
    ynorm = float(np.linalg.norm(y))
    steps = [h * 2.0**k for k in range(ladder, -ladder - 1, -1)]
    errors = {}
    for order, analytic in ((1, jet.d1), (2, jet.d2), (3, jet.d3)):
        ests = [_fd_estimate(values_at, y, step, order) for step in steps]
        if len(ests) > 1:
            change = [np.max(np.abs(ests[i + 1] - ests[i])) for i in range(len(ests) - 1)]
            fd = ests[int(np.argmin(change)) + 1]
        else:
            fd = ests[0]
        scale_ = max(np.max(np.abs(analytic)), f0 / ynorm**order, np.finfo(float).tiny)
        errors[order] = float(np.max(np.abs(analytic - fd)) / scale_)
    return errors


def finite_difference_check(f, y, h: float = 1e-3, ladder: int = 0) -> float:
    """Worst relative error over d1, d2, d3; see :func:`finite_difference_errors`."""
    return max(finite_difference_errors(f, y, h, ladder).values())
