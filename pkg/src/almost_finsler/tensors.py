"""Characteristic tensors assembled from norm jets.

All functions accept batched inputs (leading dimensions in front of the tensor
indices).  Three-index tensors are returned in packed symmetric storage; use
:func:`almost_finsler.jets.unpack3` for the full ``(..., n, n, n)`` array.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import closedforms, jets
from .errors import SingularKappaError, SlitProximityError, SpecError
from .geometry import Family, FiberNorm, NormJets
from .jets import Jet3

log = logging.getLogger(__name__)

KAPPA_FLOOR = 1e-8
KAPPA_WATCH = 1e-4
DELTA_FLOOR = 1e-12
RANDERS_LIMIT_TOL = 1e-12

RIEMANN, RANDERS_LIMIT, GENERAL = "riemann", "randers-limit", "general"


# ---------------------------------------------------------------------------
# elementary pieces

def hilbert_form(F: Jet3) -> np.ndarray:
    return np.array(F.d1)


def angular_metric(F: Jet3) -> np.ndarray:
    return F.val[..., None, None] * F.hessian()


def fundamental_tensor(F: Jet3) -> np.ndarray:
    """``g_jk = F F_jk + F_j F_k``, the Hessian of ``F**2 / 2``."""
    p = F.d1
    return angular_metric(F) + p[..., :, None] * p[..., None, :]


def cartan(F: Jet3) -> np.ndarray:
    """Packed ``C_jkl = (F**2)_jkl / 4``."""
    return 0.25 * jets.mul(F, F).d3


def inverse_metric(g) -> tuple[np.ndarray, np.ndarray]:
    """Inverse via symmetric eigendecomposition; also returns the smallest eigenvalue."""
    w, V = np.linalg.eigh(g)
    g_inv = np.einsum("...ji,...i,...ki->...jk", V, 1.0 / w, V)
    return 0.5 * (g_inv + np.swapaxes(g_inv, -1, -2)), w[..., 0]


def mean_cartan(C, g_inv) -> np.ndarray:
    """``I_j = g^kl C_jkl``."""
    return np.einsum("...kl,...jkl->...j", g_inv, jets.unpack3(C))


def delta_cross_term(delta: Jet3, g_inv) -> np.ndarray:
    """``g^kl Delta_k Delta_lj``."""
    return np.einsum("...kl,...k,...lj->...j", g_inv, delta.d1, delta.hessian())


def kappa(F: Jet3, delta: Jet3, g_inv) -> np.ndarray:
    """``n + 1 - (F**2 / Delta) g^kl Delta_kl``."""
    if np.any(delta.val == 0):
        raise SlitProximityError("kappa is undefined where Delta vanishes", value=0.0)
    n = F.dim
    trace = np.einsum("...kl,...kl->...", g_inv, delta.hessian())
    return n + 1 - F.val**2 / delta.val * trace


def cyclic(u, A) -> np.ndarray:
    """Full ``u_j A_kl + u_k A_lj + u_l A_jk`` for a covector ``u`` and symmetric ``A``."""
    return (u[..., :, None, None] * A[..., None, :, :]
            + u[..., None, :, None] * np.swapaxes(A, -1, -2)[..., :, None, :]
            + u[..., None, None, :] * A[..., :, :, None])


def symmetry_defect(T) -> np.ndarray:
    """Largest difference between a full 3-tensor and its index transpositions."""
    return np.max(np.abs(np.stack([
        T - np.swapaxes(T, -1, -2),
        T - np.swapaxes(T, -2, -3),
        T - np.swapaxes(T, -1, -3),
    ])), axis=(0, -1, -2, -3))


def matsumoto(C, I, h) -> np.ndarray:
    """Packed ``M = C - (1/(n+1)) sum_cyc I (x) h``."""
    n = I.shape[-1]
    return C - jets.pack3(cyclic(I, h)) / (n + 1)


def shifted_angular_metric(F: Jet3, delta: Jet3, h) -> np.ndarray:
    """``h_kl - (F**2 / Delta) Delta_kl``."""
    return h - (F.val**2 / delta.val)[..., None, None] * delta.hessian()


def bipartite_tensor_S(C, I, h, F: Jet3, delta: Jet3, g_inv, kappa_value=None) -> np.ndarray:
    """Packed bipartite tensor in the general branch (``Delta`` and ``Delta_jk`` nonzero).

    ``S = C - (1/kappa) sum_cyc (I_j + F^2/((F-Delta)Delta) g^ab Delta_a Delta_bj)
    (h_kl - (F^2/Delta) Delta_kl)``; the contraction indices ``a, b`` are bound
    and independent of the cyclic free indices.
    """
    k = kappa(F, delta, g_inv) if kappa_value is None else np.asarray(kappa_value)
    if np.any(np.abs(k) < KAPPA_FLOOR):
        raise SingularKappaError(f"|kappa| below {KAPPA_FLOOR:g}", kappa=float(np.min(np.abs(k))))
    coeff = F.val**2 / ((F.val - delta.val) * delta.val)
    u = I + coeff[..., None] * delta_cross_term(delta, g_inv)
    A = shifted_angular_metric(F, delta, h)
    return C - jets.pack3(cyclic(u, A)) / k[..., None]


def b_tensor_B(C, I, h, F: Jet3, delta: Jet3, kappa_b) -> np.ndarray:
    """Packed ``B = C - (1/kappa_b) sum_cyc I_j (h_kl - (F^2/Delta) Delta_kl)``."""
    kappa_b = np.asarray(kappa_b)
    if np.any(np.abs(kappa_b) < KAPPA_FLOOR):
        raise SingularKappaError(f"|kappa_b| below {KAPPA_FLOOR:g}",
                                 kappa=float(np.min(np.abs(kappa_b))))
    A = shifted_angular_metric(F, delta, h)
    return C - jets.pack3(cyclic(I, A)) / kappa_b[..., None]


# ---------------------------------------------------------------------------
# identities used as residual checks

def _ratio(num, den):
    return np.abs(num) / np.maximum(den, np.finfo(float).tiny)


def _root_scales(X: Jet3):
    """Pre-cancellation magnitudes of ``X''`` and ``X'''`` for ``X = +-sqrt(quadratic)``.

    ``X X_jk = (X^2)_jk / 2 - X_j X_k`` and
    ``X X_jkl = (X^2)_jkl / 2 - sum_cyc X_j X_kl``; when the two sides nearly
    cancel (X almost linear in some direction) the rounding error follows the
    size of the individual terms, not of the result.  Used for ``rho`` and ``Delta``.
    """
    D2, D3 = X.hessian(), X.third()
    aD1 = np.abs(X.d1)
    sq = jets.mul(X, X)
    nz = X.val != 0
    inv = np.where(nz, 1.0 / np.where(nz, np.abs(X.val), 1.0), 0.0)
    outer = aD1[..., :, None] * aD1[..., None, :]
    aD2 = np.maximum(np.abs(D2), inv[..., None, None] * (0.5 * np.abs(sq.hessian()) + outer))
    aD3 = np.maximum(np.abs(D3), inv[..., None, None, None]
                     * (0.5 * np.abs(sq.third()) + cyclic(aD1, aD2)))
    return aD2, aD3


def _split_abs(F: Jet3, delta: Jet3):
    """Magnitude bounds for ``F''``, ``F'''``, ``Delta''`` and ``Delta'''``.

    Near inflections of a non-convex indicatrix ``rho''`` and ``Delta''``
    nearly cancel, so ``|F''|`` itself is no measure of the rounding error.
    """
    aR2, aR3 = _root_scales(F - delta)
    aD2, aD3 = _root_scales(delta)
    return aR2 + aD2, aR3 + aD3, aD2, aD3


def cyclic_diffeq_residual(F: Jet3, delta: Jet3) -> dict:
    """Scaled residuals of the third-order identities satisfied by ``F = rho + Delta``.

    Returns the cancellation-relative max residual (per sample) of

    * ``diffeq``: ``(F^2)_jkl - 2 Delta F_jkl - 2 F Delta_jkl
      - 2 sum_cyc(Delta_j F_kl + Delta_jk F_l)``,
    * ``geometric``: ``2(F-Delta) C_jkl + sum_cyc (Delta p_j/F - Delta_j)(h_kl - F^2/Delta Delta_kl)``
      (only where ``Delta`` is nonzero),
    * ``delta_third``: ``Delta_jkl + (1/Delta) sum_cyc Delta_j Delta_kl`` (same restriction).
    """
    F2 = jets.mul(F, F).third()
    Fv, Dv = F.val[..., None, None, None], delta.val[..., None, None, None]
    F3, D3 = F.third(), delta.third()
    Fh, Dh = F.hessian(), delta.hessian()
    aFh, aF3, aDh, aD3 = _split_abs(F, delta)
    aF2 = 2 * np.abs(Fv) * aF3 + 2 * cyclic(np.abs(F.d1), aFh)
    terms = [F2, -2 * Dv * F3, -2 * Fv * D3, -2 * cyclic(delta.d1, Fh), -2 * cyclic(F.d1, Dh)]
    abs_terms = [aF2, 2 * np.abs(Dv) * aF3, 2 * np.abs(Fv) * aD3,
                 2 * cyclic(np.abs(delta.d1), aFh), 2 * cyclic(np.abs(F.d1), aDh)]
    out = {"diffeq": np.max(_ratio(sum(terms), sum(abs_terms)), axis=(-1, -2, -3))}

    nonzero = delta.val != 0
    geo = np.zeros(F.val.shape)
    third = np.zeros(F.val.shape)
    if np.any(nonzero):
        Fs, Ds = F[nonzero], delta[nonzero]
        aFh_s, aF2_s, aDh_s, aD3_s = aFh[nonzero], aF2[nonzero], aDh[nonzero], aD3[nonzero]
        C = 0.25 * jets.mul(Fs, Fs).third()
        h = angular_metric(Fs)
        u = Ds.val[..., None] * Fs.d1 / Fs.val[..., None] - Ds.d1
        A = shifted_angular_metric(Fs, Ds, h)
        lhs = 2 * (Fs.val - Ds.val)[..., None, None, None] * C
        abs_lhs = 0.5 * np.abs(Fs.val - Ds.val)[..., None, None, None] * aF2_s
        absA = (np.abs(Fs.val)[..., None, None] * aFh_s
                + np.abs(Fs.val**2 / Ds.val)[..., None, None] * aDh_s)
        absu = np.abs(Ds.val[..., None] * Fs.d1 / Fs.val[..., None]) + np.abs(Ds.d1)
        geo[nonzero] = np.max(_ratio(lhs + cyclic(u, A), abs_lhs + cyclic(absu, absA)),
                              axis=(-1, -2, -3))
        corr = cyclic(Ds.d1, Ds.hessian()) / Ds.val[..., None, None, None]
        abs_corr = cyclic(np.abs(Ds.d1), aDh_s) / np.abs(Ds.val)[..., None, None, None]
        third[nonzero] = np.max(_ratio(Ds.third() + corr, aD3_s + abs_corr),
                                axis=(-1, -2, -3))
    out["geometric"] = geo
    out["delta_third"] = third
    return out


def euler_residuals(F: Jet3, delta: Jet3, g_inv, y) -> dict:
    """Cancellation-relative residuals of the seven homogeneity identities.

    Keys: ``y_h`` (y^j h_jk = 0), ``y_gp`` (y^j = F g^jk p_k), ``gpp``
    (g^jk p_j p_k = 1), ``gh`` (g^jk h_kj = n - 1), ``gp_ddelta``
    (g^jk p_j Delta_kl = 0), ``gp_delta`` (g^jk p_j Delta_k = Delta/F) and
    ``gh_delta`` (g^jk h_kl Delta_j = Delta_l - Delta p_l/F).
    """
    y = np.asarray(y, dtype=float)
    n = F.dim
    p = F.d1
    h = angular_metric(F)
    Fv = F.val
    aFh, _, aD2, _ = _split_abs(F, delta)
    ag, ap, ay = np.abs(g_inv), np.abs(p), np.abs(y)
    ah = np.abs(Fv)[..., None, None] * aFh
    D1, D2 = delta.d1, delta.hessian()
    aD1 = np.abs(D1)
    gp = np.einsum("...jk,...k->...j", g_inv, p)
    agp = np.einsum("...jk,...k->...j", ag, ap)
    mx = lambda a: np.max(a, axis=-1)  # noqa: E731
    out = {}
    out["y_h"] = mx(_ratio(np.einsum("...j,...jk->...k", y, h), np.einsum("...j,...jk->...k", ay, ah)))
    out["y_gp"] = mx(_ratio(y - Fv[..., None] * gp, ay + np.abs(Fv)[..., None] * agp))
    out["gpp"] = _ratio(np.einsum("...j,...j->...", gp, p) - 1.0,
                        np.maximum(np.einsum("...j,...j->...", agp, ap), 1.0))
    out["gh"] = _ratio(np.einsum("...jk,...kj->...", g_inv, h) - (n - 1),
                       np.maximum(np.einsum("...jk,...kj->...", ag, ah), n - 1))
    out["gp_ddelta"] = mx(_ratio(np.einsum("...k,...kl->...l", gp, D2),
                                 np.einsum("...k,...kl->...l", agp, aD2)))
    rhs6 = delta.val / Fv
    out["gp_delta"] = _ratio(np.einsum("...k,...k->...", gp, D1) - rhs6,
                             np.einsum("...k,...k->...", agp, aD1) + np.abs(rhs6))
    lhs7 = np.einsum("...jk,...kl,...j->...l", g_inv, h, D1)
    rhs7 = D1 - (delta.val / Fv)[..., None] * p
    abs7 = (np.einsum("...jk,...kl,...j->...l", ag, ah, aD1) + aD1
            + np.abs(delta.val / Fv)[..., None] * ap)
    out["gh_delta"] = mx(_ratio(lhs7 - rhs7, abs7))
    return out


# ---------------------------------------------------------------------------
# assembly

@dataclass
class TensorSet:
    """Every derived tensor at a batch of evaluation points.

    Three-index tensors (``C``, ``M``, ``S``, ``B``) are packed; ``B`` and
    ``kappa_b`` are NaN unless the family is a b space.  ``branch`` records,
    per sample, which form of ``S`` was used: ``riemann`` (Delta identically
    zero, S = C), ``randers-limit`` (Delta_jk vanishes, S = M with kappa = n+1)
    or ``general``.
    """

    n: int
    y: np.ndarray
    F: np.ndarray
    p: np.ndarray
    h: np.ndarray
    g: np.ndarray
    g_inv: np.ndarray
    eig_min_g: np.ndarray
    C: np.ndarray
    I: np.ndarray
    kappa: np.ndarray
    M: np.ndarray
    S: np.ndarray
    B: np.ndarray
    kappa_b: np.ndarray
    cross: np.ndarray
    branch: np.ndarray
    jets: NormJets

    def full(self, name: str) -> np.ndarray:
        value = getattr(self, name)
        return jets.unpack3(value) if name in ("C", "M", "S", "B") else value

    def relative(self, name: str) -> np.ndarray:
        """Max-norm of a 3-tensor over ``max(|C|_inf, 1/F)``, per sample."""
        T = getattr(self, name)
        return np.max(np.abs(T), axis=-1) / tensor_scale(self.C, self.F)

    def __getitem__(self, item) -> "TensorSet":
        fields = {k: getattr(self, k)[item] for k in (
            "y", "F", "p", "h", "g", "g_inv", "eig_min_g", "C", "I", "kappa", "M", "S", "B",
            "kappa_b", "cross", "branch")}
        nj = self.jets
        return TensorSet(n=self.n, jets=NormJets(nj.F[item], nj.rho[item], nj.delta[item]), **fields)

    def __len__(self):
        return len(self.F)


def tensor_scale(C, F) -> np.ndarray:
    return np.maximum(np.max(np.abs(C), axis=-1), 1.0 / np.asarray(F))


def classify_branch(nj: NormJets) -> np.ndarray:
    delta = nj.delta
    d2 = np.max(np.abs(delta.d2), axis=-1)
    rho2 = np.max(np.abs(nj.rho.d2), axis=-1)
    zero = (delta.val == 0) & np.all(delta.d1 == 0, axis=-1) & (d2 == 0)
    flat = d2 <= RANDERS_LIMIT_TOL * rho2
    return np.where(zero, RIEMANN, np.where(flat, RANDERS_LIMIT, GENERAL))


def compute_tensors(fiber: FiberNorm, y, strict: bool = True,
                    kappa_floor: float = KAPPA_FLOOR) -> TensorSet:
    """Assemble a :class:`TensorSet` at a fiber vector or a batch of them.

    With ``strict`` set, slit proximity and singular kappa raise; otherwise
    the affected samples carry NaN in ``S``/``B`` so batch callers can filter.
    """
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    Y = y[None] if single else y
    nj = fiber.evaluate(Y, check=strict)
    F, delta = nj.F, nj.delta
    n = fiber.n
    p = hilbert_form(F)
    h = angular_metric(F)
    g = fundamental_tensor(F)
    g_inv, eig_min = inverse_metric(g)
    C = cartan(F)
    I = mean_cartan(C, g_inv)
    M = matsumoto(C, I, h)
    branch = classify_branch(nj)
    batch = F.val.shape

    kap = np.full(batch, float(n + 1))
    cross = np.zeros(batch + (n,))
    S = np.where((branch == RIEMANN)[..., None], C, M)
    gen = branch == GENERAL
    if np.any(gen):
        Fg, Dg = F[gen], delta[gen]
        if np.any(np.abs(Dg.val) / Fg.val < DELTA_FLOOR):
            if strict:
                raise SlitProximityError("Delta/F below floor in the general branch")
        with np.errstate(divide="ignore", invalid="ignore"):
            safe = np.where(Dg.val != 0, Dg.val, np.nan)
            trace = np.einsum("...kl,...kl->...", g_inv[gen], Dg.hessian())
            k = n + 1 - Fg.val**2 / safe * trace
        kap[gen] = k
        cross[gen] = delta_cross_term(Dg, g_inv[gen])
        watch = np.abs(k) < KAPPA_WATCH
        if np.any(watch):
            log.warning("kappa close to zero (|kappa| < %g) at %d sample(s): %s",
                        KAPPA_WATCH, int(np.sum(watch)), Y[gen][watch][:5].tolist())
        bad = ~(np.abs(k) >= kappa_floor)
        if np.any(bad) and strict:
            raise SingularKappaError(f"|kappa| below {kappa_floor:g}", kappa=float(np.nanmin(np.abs(k))))
        with np.errstate(divide="ignore", invalid="ignore"):
            coeff = Fg.val**2 / ((Fg.val - Dg.val) * Dg.val)
            u = I[gen] + coeff[..., None] * cross[gen]
            A = shifted_angular_metric(Fg, Dg, h[gen])
            Sg = C[gen] - jets.pack3(cyclic(u, A)) / k[..., None]
        Sg[bad] = np.nan
        S[gen] = Sg

    B = np.full(C.shape, np.nan)
    kappa_b = np.full(batch, np.nan)
    if fiber.family is Family.BSPACE:
        normsq = np.einsum("...j,jk,...k->...", delta.d1, fiber.r_inv, delta.d1)
        kappa_b = closedforms.kappa_b_closed_form(F.val, delta.val, normsq, n, strict=strict)
        bad = ~(np.abs(kappa_b) >= kappa_floor)
        if np.any(bad) and strict:
            raise SingularKappaError(f"|kappa_b| below {kappa_floor:g}")
        with np.errstate(divide="ignore", invalid="ignore"):
            B = C - jets.pack3(cyclic(I, shifted_angular_metric(F, delta, h))) / kappa_b[..., None]
        B[bad] = np.nan

    ts = TensorSet(n=n, y=Y, F=F.val, p=p, h=h, g=g, g_inv=g_inv, eig_min_g=eig_min, C=C, I=I,
                   kappa=kap, M=M, S=S, B=B, kappa_b=kappa_b, cross=cross, branch=branch, jets=nj)
    return ts[0] if single else ts


def tensors_at(spec, x, y, **kw) -> TensorSet:
    """Convenience wrapper: ``compute_tensors(spec.at(x), y)``."""
    return compute_tensors(spec.at(x), y, **kw)


def require_bspace(fiber: FiberNorm) -> None:
    if fiber.family is not Family.BSPACE:
        raise SpecError(f"expected a b space, got the {fiber.family.value} family")
