"""Norm families on a single chart and their evaluation as jets.

A :class:`NormSpec` is a declarative, immutable description of a family
(Euclidean, Randers, a space, b space, general bipartite) together with its
Riemannian metric and field data.  Calling :meth:`NormSpec.at` validates the
data at a chart point ``x`` and returns a :class:`FiberNorm`, which evaluates
``F = rho + Delta`` on (batches of) fiber vectors.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import jets
from .errors import DimensionError, SlitProximityError, SpecError
from .jets import Jet3

DEFAULT_DELTA_MIN = 1e-3
DEFAULT_EIG_MARGIN = 1e-6
SYMMETRY_TOL = 1e-14
# eigenvalues of s_x below this fraction of the largest are treated as exact zeros
KERNEL_RTOL = 1e-13


class Family(str, Enum):
    EUCLIDEAN = "euclidean"
    RANDERS = "randers"
    ASPACE = "aspace"
    BSPACE = "bspace"
    BIPARTITE = "bipartite"

    @property
    def is_bipartite(self) -> bool:
        return self in (Family.ASPACE, Family.BSPACE, Family.BIPARTITE)


@dataclass(frozen=True)
class Field:
    """A tensor-valued function of the chart point.

    Either ``constant`` is set, or ``terms`` holds ``(exponents, coefficient)``
    pairs of a multivariate polynomial ``sum_t c_t * prod_i x_i**e_ti``.
    """

    constant: np.ndarray | None = None
    terms: tuple = ()

    def __post_init__(self):
        if self.constant is None and not self.terms:
            raise SpecError("a field needs a constant value or polynomial terms")
        if self.constant is not None:
            c = np.array(self.constant, dtype=float)
            c.setflags(write=False)
            object.__setattr__(self, "constant", c)
        else:
            frozen = []
            for exps, coeff in self.terms:
                c = np.array(coeff, dtype=float)
                c.setflags(write=False)
                frozen.append((tuple(int(e) for e in exps), c))
            shapes = {c.shape for _, c in frozen}
            if len(shapes) != 1:
                raise SpecError("polynomial coefficients must share one shape")
            if any(e < 0 for exps, _ in frozen for e in exps):
                raise SpecError("polynomial exponents must be nonnegative")
            object.__setattr__(self, "terms", tuple(frozen))

    @classmethod
    def const(cls, value) -> "Field":
        return cls(constant=np.asarray(value, dtype=float))

    @classmethod
    def polynomial(cls, terms) -> "Field":
        return cls(terms=tuple(terms))

    @property
    def shape(self) -> tuple:
        return self.constant.shape if self.constant is not None else self.terms[0][1].shape

    @property
    def is_constant(self) -> bool:
        return self.constant is not None

    def __call__(self, x) -> np.ndarray:
        if self.constant is not None:
            return np.array(self.constant)
        x = np.asarray(x, dtype=float)
        out = np.zeros(self.shape)
        for exps, coeff in self.terms:
            if len(exps) != x.shape[-1]:
                raise DimensionError(f"monomial {exps} does not match chart dimension {x.shape[-1]}")
            out = out + coeff * float(np.prod(x ** np.array(exps)))
        return out


def _as_field(value) -> Field | None:
    if value is None or isinstance(value, Field):
        return value
    return Field.const(value)


@dataclass(frozen=True)
class NormSpec:
    """Declarative description of a norm family on one chart."""

    family: Family
    dim: int
    metric: Field
    field: Field | None = None
    sign: int = 1
    delta_min: float = DEFAULT_DELTA_MIN
    eig_margin: float = DEFAULT_EIG_MARGIN

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "metric", _as_field(self.metric))
        object.__setattr__(self, "field", _as_field(self.field))
        if self.dim < 2:
            raise SpecError("norm families need dimension >= 2")
        if self.sign not in (1, -1):
            raise SpecError(f"sign must be +1 or -1, got {self.sign}")
        if self.metric.shape != (self.dim, self.dim):
            raise SpecError(f"metric must be {self.dim}x{self.dim}, got {self.metric.shape}")
        fam = self.family
        if fam is Family.EUCLIDEAN:
            if self.field is not None:
                raise SpecError("the Euclidean family takes no field")
        elif fam is Family.BIPARTITE:
            if self.field is None or self.field.shape != (self.dim, self.dim):
                raise SpecError("the bipartite family needs an n x n form s")
        elif self.field is None or self.field.shape != (self.dim,):
            raise SpecError(f"the {fam.value} family needs a length-{self.dim} field vector")
        if not (0 < self.delta_min < 1):
            raise SpecError("delta_min must lie in (0, 1)")
        if not (0 < self.eig_margin < 1):
            raise SpecError("eig_margin must lie in (0, 1)")

    # convenience constructors ------------------------------------------
    @classmethod
    def euclidean(cls, metric, **kw) -> "NormSpec":
        metric = _as_field(metric)
        return cls(Family.EUCLIDEAN, metric.shape[0], metric, **kw)

    @classmethod
    def randers(cls, metric, a, sign=1, **kw) -> "NormSpec":
        metric = _as_field(metric)
        return cls(Family.RANDERS, metric.shape[0], metric, a, sign=sign, **kw)

    @classmethod
    def aspace(cls, metric, a, sign=1, **kw) -> "NormSpec":
        metric = _as_field(metric)
        return cls(Family.ASPACE, metric.shape[0], metric, a, sign=sign, **kw)

    @classmethod
    def bspace(cls, metric, b, sign=1, **kw) -> "NormSpec":
        metric = _as_field(metric)
        return cls(Family.BSPACE, metric.shape[0], metric, b, sign=sign, **kw)

    @classmethod
    def bipartite(cls, metric, s, sign=1, **kw) -> "NormSpec":
        metric = _as_field(metric)
        return cls(Family.BIPARTITE, metric.shape[0], metric, s, sign=sign, **kw)

    def with_sign(self, sign: int) -> "NormSpec":
        return NormSpec(self.family, self.dim, self.metric, self.field, sign,
                        self.delta_min, self.eig_margin)

    def at(self, x=None) -> "FiberNorm":
        """Validate the field data at ``x`` and return the norm on that fiber."""
        x = np.zeros(self.dim) if x is None else np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionError(f"chart point must have length {self.dim}")
        return FiberNorm(self, x)


@dataclass(frozen=True)
class EvalPoint:
    x: np.ndarray
    y: np.ndarray
    slit_distance: float


@dataclass(frozen=True)
class NormJets:
    """Jets of ``F``, ``rho`` and ``Delta = F - rho`` at a batch of fiber vectors."""

    F: Jet3
    rho: Jet3
    delta: Jet3


def riemann_metric_at(metric: Field, x) -> tuple[np.ndarray, np.ndarray]:
    """Validated metric matrix at ``x`` and its lower Cholesky factor."""
    r = metric(x)
    if np.max(np.abs(r - r.T)) > SYMMETRY_TOL:
        raise SpecError("metric matrix is not symmetric")
    r = 0.5 * (r + r.T)
    try:
        chol = np.linalg.cholesky(r)
    except np.linalg.LinAlgError as exc:
        raise SpecError("metric matrix is not positive definite") from exc
    return r, chol


def decompose(y, b, r):
    """Split ``y`` into parts r-parallel and r-perpendicular to ``b``."""
    y = np.asarray(y, dtype=float)
    b = np.asarray(b, dtype=float)
    r = np.asarray(r, dtype=float)
    rb = r @ b
    bb = float(b @ rb)
    if bb == 0.0:
        raise SpecError("cannot decompose along a zero vector")
    coeff = (y @ rb) / bb
    y_par = np.asarray(coeff)[..., None] * b
    return y_par, y - y_par


class FiberNorm:
    """A norm family evaluated at one chart point ``x``.

    Holds the validated metric ``r``, its Cholesky factor, the field vector
    (Randers, a, b families) and the bipartite form ``s`` as a matrix of
    covariant components.  Instances are immutable after construction.
    """

    def __init__(self, spec: NormSpec, x: np.ndarray):
        self.spec = spec
        self.x = np.array(x, dtype=float)
        self.n = spec.dim
        self.family = spec.family
        self.sign = spec.sign
        self.delta_min = spec.delta_min
        self.r, self.chol = riemann_metric_at(spec.metric, self.x)
        self.r_inv = np.linalg.inv(self.r)
        self.r_inv = 0.5 * (self.r_inv + self.r_inv.T)
        self.vec = None
        self.vec_lower = None
        self.vec_normsq = None
        self.s = None
        self.s_eigvals = np.zeros(self.n)
        self._spectral = None
        fam = self.family
        if fam is not Family.EUCLIDEAN and fam is not Family.BIPARTITE:
            v = spec.field(self.x)
            self.vec = v
            self.vec_lower = self.r @ v
            self.vec_normsq = float(v @ self.vec_lower)
            if self.vec_normsq >= 1.0 - spec.eig_margin:
                raise SpecError(f"field vector has rho = {np.sqrt(self.vec_normsq):.6g}; "
                                f"needs rho**2 <= 1 - {spec.eig_margin:g}")
            if fam is not Family.RANDERS and self.vec_normsq == 0.0:
                raise SpecError(f"the {fam.value} family needs a nonzero field vector")
        if fam.is_bipartite:
            if fam is Family.ASPACE:
                self.s = np.outer(self.vec_lower, self.vec_lower)
            elif fam is Family.BSPACE:
                self.s = self.vec_normsq * self.r - np.outer(self.vec_lower, self.vec_lower)
            else:
                s = spec.field(self.x)
                if np.max(np.abs(s - s.T)) > SYMMETRY_TOL * max(1.0, np.max(np.abs(s))):
                    raise SpecError("bipartite form is not symmetric")
                self.s = 0.5 * (s + s.T)
            self._setup_spectrum(spec.eig_margin)

    def _setup_spectrum(self, margin: float) -> None:
        # endomorphism s_x = r^-1 s in r-orthonormal coordinates z = L^T y
        Linv = np.linalg.inv(self.chol)
        s_white = Linv @ self.s @ Linv.T
        s_white = 0.5 * (s_white + s_white.T)
        lam, W = np.linalg.eigh(s_white)
        top = max(float(np.max(np.abs(lam))), 0.0)
        if lam[0] < -KERNEL_RTOL * max(top, 1.0):
            raise SpecError(f"bipartite form has a negative eigenvalue {lam[0]:.6g}")
        if lam[-1] > 1.0 - margin:
            raise SpecError(f"bipartite form has eigenvalue {lam[-1]:.6g}; "
                            f"eigenvalues must not exceed 1 - {margin:g}")
        lam = np.where(lam <= KERNEL_RTOL * max(top, 1.0), 0.0, lam)
        self.s_eigvals = lam
        # rows of `coords` map y to eigen-coordinates w_i . L^T y
        coords = W.T @ self.chol.T
        self._spectral = (lam, coords)

    # ------------------------------------------------------------------
    @property
    def degenerate(self) -> bool:
        """True when the bipartite form vanishes, so F is just rho."""
        return self.family.is_bipartite and not np.any(self.s_eigvals > 0)

    @property
    def kernel_dim(self) -> int:
        return int(np.sum(self.s_eigvals == 0)) if self.family.is_bipartite else 0

    def kernel_basis(self) -> np.ndarray:
        """r-orthonormal basis (rows) of ker s_x."""
        if not self.family.is_bipartite:
            return np.zeros((0, self.n))
        lam, coords = self._spectral
        # y = L^-T W e_i are the eigenvectors; rows of coords^-1.T
        vecs = np.linalg.solve(coords, np.eye(self.n)).T
        return vecs[lam == 0]

    def rho(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.sqrt(np.einsum("...j,jk,...k->...", y, self.r, y))

    def sigma(self, y) -> np.ndarray:
        """The bipartite factor sigma(y).  Zero for the Euclidean and Randers families."""
        y = np.asarray(y, dtype=float)
        fam = self.family
        if not fam.is_bipartite or self.degenerate:
            return np.zeros(y.shape[:-1])
        if fam is Family.ASPACE:
            return np.abs(y @ self.vec_lower)
        if fam is Family.BSPACE:
            _, y_perp = decompose(y, self.vec, self.r)
            return np.sqrt(self.vec_normsq) * self.rho(y_perp)
        lam, coords = self._spectral
        c = y @ coords.T
        return np.sqrt(np.sum(lam * c * c, axis=-1))

    def value(self, y) -> np.ndarray:
        """F(y) without derivatives; continuous everywhere including the slit."""
        y = np.asarray(y, dtype=float)
        rho = self.rho(y)
        if self.family is Family.RANDERS:
            return rho + self.sign * (y @ self.vec_lower)
        return rho + self.sign * self.sigma(y)

    def slit_distance(self, y) -> np.ndarray:
        """Scale-invariant distance of ``y`` from the slit, in [0, 1]."""
        y = np.asarray(y, dtype=float)
        rho = self.rho(y)
        if np.any(rho == 0):
            raise SlitProximityError("the zero vector lies on every slit", value=0.0)
        fam = self.family
        if not fam.is_bipartite or self.degenerate:
            return np.ones(y.shape[:-1])
        if fam is Family.ASPACE:
            return np.abs(y @ self.vec_lower) / (np.sqrt(self.vec_normsq) * rho)
        if fam is Family.BSPACE:
            _, y_perp = decompose(y, self.vec, self.r)
            return self.rho(y_perp) / rho
        return self.sigma(y) / rho

    def eval_point(self, y) -> EvalPoint:
        y = np.array(y, dtype=float)
        return EvalPoint(self.x.copy(), y, float(self.slit_distance(y)))

    # jets ---------------------------------------------------------------
    def _sigma_squared_jet(self, y) -> Jet3:
        n = self.n
        batch = y.shape[:-1]
        if self.family is Family.BSPACE:
            _, y_perp = decompose(y, self.vec, self.r)
            r_yp = y_perp @ self.r
            val = self.vec_normsq * np.einsum("...j,...j->...", y_perp, r_yp)
            d1 = 2.0 * self.vec_normsq * r_yp
        else:
            lam, coords = self._spectral
            c = y @ coords.T
            val = np.sum(lam * c * c, axis=-1)
            d1 = 2.0 * (lam * c) @ coords
        d2 = np.broadcast_to(2.0 * jets.pack2(self.s), batch + (jets.n_pairs(n),))
        return Jet3(val, d1, d2, np.zeros(batch + (jets.n_triples(n),)))

    def delta_jet(self, y) -> Jet3:
        y = np.asarray(y, dtype=float)
        fam = self.family
        if fam is Family.EUCLIDEAN or self.degenerate:
            return Jet3.constant(np.zeros(y.shape[:-1]), self.n)
        if fam is Family.RANDERS:
            return jets.scale(jets.linear(self.vec_lower, y), float(self.sign))
        if fam is Family.ASPACE:
            sigma = jets.abs_jet(jets.linear(self.vec_lower, y))
        elif np.count_nonzero(self.s_eigvals) == 1:
            # rank-one forms (e.g. every b space with n = 2): sigma is |linear|,
            # and the sqrt chain would only reproduce the zero curvature by cancellation
            lam, coords = self._spectral
            i = int(np.argmax(lam))
            sigma = jets.abs_jet(jets.linear(np.sqrt(lam[i]) * coords[i], y))
        else:
            sigma = jets.sqrt_jet(self._sigma_squared_jet(y))
        return jets.scale(sigma, float(self.sign))

    def evaluate(self, y, check: bool = True) -> NormJets:
        """Jets of F, rho and Delta at ``y`` (shape ``(n,)`` or ``(..., n)``)."""
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != self.n:
            raise DimensionError(f"fiber vectors must have length {self.n}")
        if check:
            d = self.slit_distance(y)
            if np.any(d < self.delta_min):
                worst = float(np.min(d))
                raise SlitProximityError(
                    f"slit distance {worst:.3g} below delta_min={self.delta_min:g}", value=worst)
        rho = jets.sqrt_jet(jets.quadratic(self.r, y))
        delta = self.delta_jet(y)
        F = rho + delta
        if np.any(F.val <= 0):
            raise SpecError("norm evaluated to a nonpositive value")
        return NormJets(F, rho, delta)


def canonical_bipartite_form(spec: NormSpec, x=None) -> np.ndarray:
    """Covariant components of the bipartite form realising ``spec`` at ``x``."""
    if not spec.family.is_bipartite:
        raise SpecError(f"the {spec.family.value} family has no bipartite form")
    return spec.at(x).s.copy()


def slit_distance(spec: NormSpec, x, y) -> np.ndarray:
    return spec.at(x).slit_distance(y)


def eval_norm(spec: NormSpec, x, y) -> NormJets:
    return spec.at(x).evaluate(y)


def random_directions(fiber: FiberNorm, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples of the r-unit sphere at the fiber's chart point."""
    z = rng.standard_normal((count, fiber.n))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    # y = L^-T z has rho(y) = |z| = 1
    return np.linalg.solve(fiber.chol.T, z.T).T


def off_slit_directions(fiber: FiberNorm, count: int, rng: np.random.Generator,
                        min_distance: float | None = None) -> np.ndarray:
    """Draw ``count`` r-unit directions whose slit distance is at least ``min_distance``."""
    band = fiber.delta_min if min_distance is None else min_distance
    out = []
    have = 0
    for _ in range(1000):
        cand = random_directions(fiber, max(count, 16), rng)
        keep = cand[fiber.slit_distance(cand) >= band]
        out.append(keep)
        have += len(keep)
        if have >= count:
            return np.concatenate(out)[:count]
    raise SlitProximityError(f"could not draw {count} directions with slit distance >= {band:g}")
