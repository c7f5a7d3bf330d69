"""Explicit closed forms for bipartite and b spaces.

These are written directly in terms of ``rho``, ``sigma`` and their analytic
first derivatives and never touch the jet engine, so they serve as
independent oracles for the jet-based tensors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularKappaError, SlitProximityError, SpecError
from .geometry import Family, FiberNorm, decompose

SINGULAR_TOL = 1e-12


def _require(fiber: FiberNorm, *families) -> None:
    if fiber.family not in families:
        names = ", ".join(f.value for f in families)
        raise SpecError(f"expected family in ({names}), got {fiber.family.value}")


def g_closed_form_bipartite(rho, sigma, d_rho, d_sigma, s, sign: int = -1) -> np.ndarray:
    """Fundamental tensor of ``F = rho + sign*sigma`` in coordinates where ``r = I``.

    For ``sign = -1`` this is
    ``(F/rho) I + rho sigma v v^T - (F/sigma) s`` with
    ``v = rho'/rho - sigma'/sigma``; the ``F+`` branch flips the sign of the
    last two terms.
    """
    rho = np.asarray(rho, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma == 0):
        raise SlitProximityError("closed-form metric needs sigma > 0", value=0.0)
    n = np.shape(d_rho)[-1]
    F = rho + sign * sigma
    v = d_rho / rho[..., None] - d_sigma / sigma[..., None]
    vv = v[..., :, None] * v[..., None, :]
    return ((F / rho)[..., None, None] * np.eye(n)
            - sign * (rho * sigma)[..., None, None] * vv
            + sign * (F / sigma)[..., None, None] * np.asarray(s))


def _s_times_y(fiber: FiberNorm, y) -> np.ndarray:
    if fiber.family is Family.BSPACE:
        _, y_perp = decompose(y, fiber.vec, fiber.r)
        return fiber.vec_normsq * (y_perp @ fiber.r)
    return y @ fiber.s


def kr_metric(fiber: FiberNorm, y) -> np.ndarray:
    """Closed-form ``g_jk`` in the original coordinates of ``fiber``.

    Whitens ``r = L L^T`` with ``z = L^T y``, evaluates the closed form there
    and maps back with ``g_y = L g_z L^T``.
    """
    _require(fiber, Family.ASPACE, Family.BSPACE, Family.BIPARTITE)
    y = np.asarray(y, dtype=float)
    L = fiber.chol
    Linv = np.linalg.inv(L)
    z = y @ L
    rho = np.linalg.norm(z, axis=-1)
    sigma = fiber.sigma(y)
    if np.any(sigma == 0):
        raise SlitProximityError("closed-form metric needs sigma > 0", value=0.0)
    sy = _s_times_y(fiber, y)
    d_rho = z / rho[..., None]
    d_sigma = (sy @ Linv.T) / sigma[..., None]
    s_white = Linv @ fiber.s @ Linv.T
    g_z = g_closed_form_bipartite(rho, sigma, d_rho, d_sigma, s_white, fiber.sign)
    return np.einsum("ja,...ab,kb->...jk", L, g_z, L)


def ginv_closed_form_bspace(fiber: FiberNorm, y) -> np.ndarray:
    """Inverse fundamental tensor of a b space.

    ``g^jk = (rho/F) (r^jk + (b.y)^2 rho / (Delta^2 (Delta + |b|^2 rho)) lam^j lam^k
    - |b|^2 rho / (Delta + |b|^2 rho) P^jk)`` with
    ``lam_j = (b.y / F) rho_j - b_j``; ``b.y`` is the r-inner product.
    """
    _require(fiber, Family.BSPACE)
    y = np.asarray(y, dtype=float)
    r_inv = fiber.r_inv
    b, b_low, bb = fiber.vec, fiber.vec_lower, fiber.vec_normsq
    rho = fiber.rho(y)
    delta = fiber.sign * fiber.sigma(y)
    if np.any(delta == 0):
        raise SlitProximityError("y lies on the slit of the b space", value=0.0)
    F = rho + delta
    by = y @ b_low
    rho_low = (y @ fiber.r) / rho[..., None]
    lam = (by / F)[..., None] * rho_low - b_low
    lam_up = lam @ r_inv
    P_up = r_inv - np.outer(b, b) / bb
    denom = delta + bb * rho
    if np.any(np.abs(denom) < SINGULAR_TOL * rho):
        raise SingularKappaError("Delta + |b|^2 rho vanishes")
    c1 = by**2 * rho / (delta**2 * denom)
    c2 = bb * rho / denom
    inner = (r_inv + c1[..., None, None] * lam_up[..., :, None] * lam_up[..., None, :]
             - c2[..., None, None] * P_up)
    return (rho / F)[..., None, None] * inner


@dataclass(frozen=True)
class ProjectorPair:
    """Mixed-index projectors of a b space at one fiber vector.

    ``P_perp[j, k] = P^j_k`` projects r-perpendicular to ``b``;
    ``Delta_tilde[j, k] = (Delta / |b|^2) r^jl Delta_lk``.
    """

    P_perp: np.ndarray
    Delta_tilde: np.ndarray
    residuals: dict


def projectors_bspace(fiber: FiberNorm, y, delta_d1=None, delta_d2=None) -> ProjectorPair:
    """Perpendicular projector, the Delta-tilde projector, and their identities.

    ``delta_d1``/``delta_d2`` are the first and second fiber derivatives of
    ``Delta`` (e.g. from a jet); when omitted they are built from the closed
    forms ``Delta Delta_j = |b|^2 (Py)_j`` and
    ``Delta Delta_jk = |b|^2 P_jk - |b|^4 (Py)_j (Py)_k / Delta^2``.
    Every residual in ``residuals`` is normalised to be dimensionless.
    """
    _require(fiber, Family.BSPACE)
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise ValueError("projectors_bspace works on one fiber vector at a time")
    n = fiber.n
    r, r_inv = fiber.r, fiber.r_inv
    b, b_low, bb = fiber.vec, fiber.vec_lower, fiber.vec_normsq
    rho = float(fiber.rho(y))
    delta = float(fiber.sign * fiber.sigma(y))
    if delta == 0:
        raise SlitProximityError("y lies on the slit of the b space", value=0.0)
    P = np.eye(n) - np.outer(b, b_low) / bb
    P_low = r @ P
    Py = P_low @ y
    if delta_d1 is None:
        delta_d1 = bb * Py / delta
    if delta_d2 is None:
        delta_d2 = (bb * P_low - bb**2 / delta**2 * np.outer(Py, Py)) / delta
    D_up = r_inv @ delta_d1
    D_mixed = r_inv @ delta_d2
    Dt = delta / bb * D_mixed
    rho_up = y / rho
    F_up = rho_up + D_up

    scale_b = np.sqrt(bb)
    unit = np.linalg.norm

    def rel(num, den):
        # Delta'' vanishes identically when n = 2, so allow a zero scale
        return num / den if den > 0 else num
    res = {
        "P_idempotent": np.max(np.abs(P @ P - P)),
        "P_trace": abs(np.trace(P) - (n - 1)),
        "P_annihilates_b": unit(P @ b) / unit(b),
        "Dt_idempotent": np.max(np.abs(Dt @ Dt - Dt)),
        "Dt_trace": abs(np.trace(Dt) - (n - 2)),
        "Dt_annihilates_b": unit(Dt @ b) / unit(b),
        "Dt_annihilates_Delta": unit(Dt @ D_up) / unit(D_up),
        "Dt_annihilates_rho": unit(Dt @ rho_up) / unit(rho_up),
        "Dt_annihilates_F": unit(Dt @ F_up) / unit(F_up),
        "P_fixes_Delta": unit(P @ D_up - D_up) / unit(D_up),
        "P_fixes_Delta_mixed": rel(np.max(np.abs(P @ D_mixed - D_mixed)), np.max(np.abs(D_mixed))),
        "Delta_gradient": unit(delta * delta_d1 - bb * Py) / (bb * unit(Py)),
        "Delta_norm": abs(delta_d1 @ r_inv @ delta_d1 - bb) / bb,
        "Delta_annihilates_b": abs(delta_d1 @ b) / (scale_b * unit(b)),
    }
    return ProjectorPair(P, Dt, {k: float(v) for k, v in res.items()})


def kappa_b_closed_form(F, delta, delta_normsq, n: int, strict: bool = True):
    """``n + 1 - (n-2) F (F-Delta) |Delta'|^2 / (Delta (Delta + (F-Delta) |Delta'|^2))``.

    ``delta_normsq`` is the r-norm squared of the gradient of ``Delta`` (equal
    to ``|b|^2`` on b spaces).  With ``strict`` unset, singular samples give NaN.
    """
    F = np.asarray(F, dtype=float)
    delta = np.asarray(delta, dtype=float)
    q = np.asarray(delta_normsq, dtype=float)
    denom = delta * (delta + (F - delta) * q)
    singular = np.abs(denom) < SINGULAR_TOL * F**2
    if np.any(singular) and strict:
        raise SingularKappaError("kappa_b denominator vanishes")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = n + 1 - (n - 2) * F * (F - delta) * q / np.where(singular, np.nan, denom)
    return out if out.ndim else float(out)
