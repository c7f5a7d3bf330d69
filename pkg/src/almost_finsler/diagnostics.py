"""Positive-definiteness scans and the invariant suite.

Everything here is deterministic for a fixed seed: random draws happen up
front in a single generator and the work is split into fixed-size chunks whose
results are merged in sample order, so the thread count never changes a report.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import closedforms, geometry, jets
from . import tensors as T
from .errors import FinslerError
from .geometry import Family, FiberNorm, NormSpec, off_slit_directions, random_directions


CHUNK = 256
ALL_PD = "all-positive-definite"
NEGATIVE = "negative-found"
PASS, FAIL, EVIDENCE, SKIPPED = "pass", "fail", "evidence-only", "skipped"

NEG_RTOL = 1e-12
FD_BAND = 0.05
FD_STEP = 5e-3
FD_SAMPLES = 100
FD_LADDER = 2

TOLERANCES = {
    "finite_difference": 1e-5,
    "homogeneity_norm": 1e-12,
    "reversibility": 1e-12,
    "randers_correspondence": 1e-12,
    "eigen_bound": 1e-12,
    "self_adjoint": 1e-12,
    "g_decomposition": 1e-12,
    "g_inverse": 1e-10,
    "radial_cartan": 1e-10,
    "cyclic_symmetry": 1e-12,
    "euler": 1e-9,
    "deicke": 1e-12,
    "matsumoto": 1e-9,
    "bipartite_S": 1e-8,
    "homogeneity_tensors": 1e-10,
    "cyclic_diffeq": 1e-9,
    "b_tensor": 1e-8,
    "b_minus_s": 1e-9,
    "kr_metric": 1e-9,
    "ginv_closed_form": 1e-9,
    "delta_cross_term": 1e-10,
    "kappa_b": 1e-10,
    "kappa_b_n2": 1e-12,
    "projectors": 1e-11,
    "radial_exactness": 1e-12,
}


def _chunks(count: int, size: int = CHUNK):
    return [slice(i, min(i + size, count)) for i in range(0, count, size)]


def _parallel_map(func, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [func(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, items))


def _r_normalize(fiber: FiberNorm, Y) -> np.ndarray:
    return Y / fiber.rho(Y)[..., None]


# ---------------------------------------------------------------------------
# positive-definiteness scanning

@dataclass
class SlitProbeReport:
    """Outcome of a positive-definiteness scan of one bipartite norm.

    ``samples`` holds every evaluated fiber vector with its smallest
    eigenvalue of ``g`` and its slit distance; ``skipped`` counts samples
    closer to the slit than ``delta_min``.  ``witness`` is present exactly when
    a negative eigenvalue was found.
    """

    spec: dict
    ys: np.ndarray
    eig_min: np.ndarray
    slit: np.ndarray
    skipped: int
    verdict: str
    witness: dict | None
    expected: str | None

    @property
    def samples(self):
        return list(zip(self.ys, self.eig_min, self.slit))

    @property
    def asserted(self) -> bool:
        return self.expected is not None

    @property
    def consistent(self) -> bool | None:
        return None if self.expected is None else self.verdict == self.expected

    def to_dict(self) -> dict:
        return {
            "spec": self.spec,
            "evaluated": int(len(self.eig_min)),
            "skipped_near_slit": int(self.skipped),
            "eig_min_g": float(np.min(self.eig_min)) if len(self.eig_min) else None,
            "negative_count": int(np.sum(self.eig_min < 0)),
            "verdict": self.verdict,
            "expected": self.expected,
            "witness": self.witness,
        }


def expected_pd_verdict(fiber: FiberNorm) -> str | None:
    """Verdict that is proved for this norm, or ``None`` when the question is open.

    ``F-``: negative eigenvalues exist iff ``1 <= dim ker s <= n-2``; kernels of
    dimension ``n-1`` (a spaces) or ``n`` (Euclidean) are positive definite;
    an empty kernel is open.  ``F+``: proved positive definite when ``s`` has a
    single distinct positive eigenvalue (this covers a and b spaces).
    """
    if not fiber.family.is_bipartite:
        return ALL_PD if fiber.family is Family.EUCLIDEAN else None
    n, k = fiber.n, fiber.kernel_dim
    if fiber.sign < 0:
        if 1 <= k <= n - 2:
            return NEGATIVE
        if k >= n - 1:
            return ALL_PD
        return None
    positive = fiber.s_eigvals[fiber.s_eigvals > 0]
    if len(positive) == 0 or np.ptp(positive) <= 1e-12 * np.max(positive):
        return ALL_PD
    return None


def _eig_min_chunk(fiber: FiberNorm, Y: np.ndarray):
    d = fiber.slit_distance(Y)
    ok = d >= fiber.delta_min
    eig = np.full(len(Y), np.nan)
    if np.any(ok):
        nj = fiber.evaluate(Y[ok], check=False)
        g = T.fundamental_tensor(nj.F)
        w = np.linalg.eigvalsh(g)
        scale = np.max(np.abs(w), axis=-1)
        eig[ok] = w[..., 0] / scale
    return eig, d


def _spec_summary(spec: NormSpec, x) -> dict:
    return {"family": spec.family.value, "dim": spec.dim, "sign": spec.sign,
            "x": None if x is None else np.asarray(x, dtype=float).tolist()}


def scan_positive_definiteness(spec: NormSpec, x=None, samples: int = 10_000, seed: int = 0,
                               rounds: int = 3, fraction: float = 0.01, children: int = 32,
                               jobs: int = 1) -> SlitProbeReport:
    """Sample r-unit fiber directions and record the smallest eigenvalue of ``g``.

    The eigenvalue is normalised by the largest one, so the verdict does not
    depend on the overall scale.  After the uniform pass, the ``fraction`` of
    samples with the smallest eigenvalue spawn ``children`` perturbed copies
    each, for ``rounds`` rounds; perturbations shrink with the parent's slit
    distance so that the search can follow witnesses toward the slit.
    """
    fiber = spec.at(x)
    if not fiber.family.is_bipartite:
        raise FinslerError(f"positive-definiteness scans need a bipartite family, "
                           f"got {fiber.family.value}")
    rng = np.random.default_rng(seed)
    Y = random_directions(fiber, samples, rng)

    def run(Yb):
        parts = _parallel_map(lambda sl: _eig_min_chunk(fiber, Yb[sl]), _chunks(len(Yb)), jobs)
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    eig, dist = run(Y)
    all_y, all_e, all_d = [Y], [eig], [dist]
    for _ in range(rounds):
        ys, es, ds = (np.concatenate(a) for a in (all_y, all_e, all_d))
        valid = np.flatnonzero(~np.isnan(es))
        if len(valid) == 0:
            break
        m = max(1, int(round(fraction * len(valid))))
        parents = valid[np.argsort(es[valid], kind="stable")[:m]]
        noise = rng.standard_normal((len(parents), children, fiber.n))
        width = 0.5 * np.maximum(ds[parents], fiber.delta_min)
        kids = ys[parents][:, None, :] + width[:, None, None] * noise / np.sqrt(fiber.n) \
            @ np.linalg.inv(fiber.chol)
        kids = _r_normalize(fiber, kids.reshape(-1, fiber.n))
        e, d = run(kids)
        all_y.append(kids)
        all_e.append(e)
        all_d.append(d)

    ys, es, ds = (np.concatenate(a) for a in (all_y, all_e, all_d))
    ok = ~np.isnan(es)
    ys, es, ds = ys[ok], es[ok], ds[ok]
    skipped = int(np.sum(~ok))
    negative = es < -NEG_RTOL
    witness = None
    if np.any(negative):
        i = int(np.argmin(es))
        witness = {"y": ys[i].tolist(), "eig_min_g": float(es[i]), "slit_distance": float(ds[i])}
    verdict = NEGATIVE if witness else ALL_PD
    return SlitProbeReport(_spec_summary(spec, x), ys, es, ds, skipped, verdict, witness,
                           expected_pd_verdict(fiber))


def corollary_fminus_check(n: int, beta: float = 0.5, samples: int = 10_000, seed: int = 0,
                           jobs: int = 1) -> dict:
    """Scan the ``F-`` b space with ``b = beta e_n`` and ``r = I``."""
    if n < 2:
        raise ValueError("the b space needs n >= 2")
    b = np.zeros(n)
    b[-1] = beta
    rep = scan_positive_definiteness(NormSpec.bspace(np.eye(n), b, sign=-1), samples=samples,
                                     seed=seed, jobs=jobs)
    return {"n": n, "verdict": rep.verdict, "expected": ALL_PD if n == 2 else NEGATIVE,
            "witness": rep.witness}


def dichotomy_spec(n: int, kernel_dim: int, sign: int = -1) -> NormSpec:
    """Constant bipartite form with ``r = I`` and a kernel of the given dimension.

    The nonzero eigenvalues are spread evenly over ``[0.3, 0.8]``.
    """
    if not 0 <= kernel_dim <= n:
        raise ValueError("kernel dimension must lie in [0, n]")
    m = n - kernel_dim
    lam = np.zeros(n)
    lam[:m] = np.linspace(0.3, 0.8, m) if m > 1 else 0.5
    return NormSpec.bipartite(np.eye(n), np.diag(lam), sign=sign)


def dichotomy_matrix(dims=(2, 3, 4, 5), samples: int = 10_000, seed: int = 0,
                     jobs: int = 1) -> list[dict]:
    """Scan every ``(n, dim ker s)`` cell for ``F-``."""
    cells = []
    for n in dims:
        for k in range(n + 1):
            rep = scan_positive_definiteness(dichotomy_spec(n, k), samples=samples, seed=seed,
                                             jobs=jobs)
            cells.append({"n": n, "kernel_dim": k, "verdict": rep.verdict,
                          "expected": rep.expected, "witness": rep.witness})
    return cells


def bipminus_witness(eps: float, lam=(0.5, 0.5, 0.0)) -> dict:
    """``g_22`` of ``F-`` at the indicatrix point ``(eps, 0, ..., 0, 1 + eta)``.

    Returns the jet value, the closed-form value ``F (1/rho - lam_2/sigma)``
    and the leading asymptotic term ``-lam_2 / (sqrt(lam_1) eps)``.
    """
    lam = np.asarray(lam, dtype=float)
    n = len(lam)
    # the witness sits at slit distance ~ sqrt(lam_1) eps by design
    delta_min = min(geometry.DEFAULT_DELTA_MIN, 0.1 * eps)
    fiber = NormSpec.bipartite(np.eye(n), np.diag(lam), sign=-1, delta_min=delta_min).at()
    eta = np.sqrt(1 + 2 * np.sqrt(lam[0]) * eps + (lam[0] - 1) * eps**2) - 1
    y = np.zeros(n)
    y[0], y[-1] = eps, 1 + eta
    ts = T.compute_tensors(fiber, y)
    rho, sigma = float(fiber.rho(y)), float(fiber.sigma(y))
    return {
        "eps": eps, "eta": float(eta), "y": y.tolist(), "F": float(ts.F),
        "g22": float(ts.g[1, 1]),
        "g22_closed_form": float(ts.F * (1 / rho - lam[1] / sigma)),
        "leading_term": float(-lam[1] / (np.sqrt(lam[0]) * eps)),
    }


# ---------------------------------------------------------------------------
# finite differences

def fd_step(fiber: FiberNorm, y, c: float = FD_STEP) -> float:
    """Step for :func:`jets.finite_difference_check` adapted to the local curvature.

    Where ``Delta`` is curved (a bipartite form of rank two or more) the
    curvature radius shrinks like the slit distance; the stencil must also
    stay on one side of the slit.
    """
    y = np.asarray(y, dtype=float)
    rho = float(fiber.rho(y))
    d = float(fiber.slit_distance(y))
    curved = fiber.family.is_bipartite and np.count_nonzero(fiber.s_eigvals) >= 2
    h = c * rho * (min(1.0, d) if curved else 1.0)
    if fiber.family.is_bipartite and not fiber.degenerate:
        h = min(h, 0.1 * d * rho / np.sqrt(fiber.n))
    return h


def fd_errors(fiber: FiberNorm, Y) -> np.ndarray:
    """Worst finite-difference discrepancy of the ``F`` jet at each row of ``Y``."""
    f = lambda P: fiber.evaluate(P, check=False).F  # noqa: E731
    return np.array([jets.finite_difference_check(f, y, fd_step(fiber, y), FD_LADDER) for y in Y])


# ---------------------------------------------------------------------------
# the invariant suite

def _rel_max(A, B, axes=(-1, -2)):
    den = np.max(np.abs(B), axis=axes)
    return np.max(np.abs(A - B), axis=axes) / np.maximum(den, np.finfo(float).tiny)


def _safe_ratio(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, np.abs(num) / np.where(den > 0, den, 1.0), 0.0)


def _value_metrics(fiber: FiberNorm, Y, lam) -> dict:
    """Per-sample checks that only need values of F, rho and sigma."""
    F, rho, sig = fiber.value(Y), fiber.rho(Y), fiber.sigma(Y)
    Yl = lam[:, None] * Y
    out = {
        "homogeneity_norm": np.maximum.reduce([
            np.abs(fiber.value(Yl) - lam * F) / np.abs(fiber.value(Yl)),
            np.abs(fiber.rho(Yl) - lam * rho) / fiber.rho(Yl),
            _safe_ratio(fiber.sigma(Yl) - lam * sig, fiber.sigma(Yl)),
        ]),
        "positivity": F,
    }
    if fiber.family in (Family.ASPACE, Family.BSPACE):
        out["reversibility"] = np.abs(fiber.value(-Y) - F) / F
    if fiber.family is Family.ASPACE:
        ay = Y @ fiber.vec_lower
        randers = rho + fiber.sign * np.abs(ay)
        out["randers_correspondence"] = np.abs(F - randers) / F
    if fiber.family.is_bipartite:
        top = float(np.max(fiber.s_eigvals))
        out["eigen_bound"] = np.maximum(sig - np.sqrt(top) * rho, 0.0) / rho
        Z = Y[::-1]
        sx = np.linalg.solve(fiber.r, fiber.s)
        lhs = np.einsum("...j,jk,...k->...", Y @ sx.T, fiber.r, Z)
        rhs = np.einsum("...j,jk,...k->...", Y, fiber.r, Z @ sx.T)
        out["self_adjoint"] = np.abs(lhs - rhs) / (rho * fiber.rho(Z))
    return out


def _tensor_metrics(fiber: FiberNorm, Y, lam, kappa_floor: float = T.KAPPA_FLOOR) -> dict:
    """Per-sample residuals of every tensor identity at the rows of ``Y``."""
    n = fiber.n
    ts = T.compute_tensors(fiber, Y, strict=False, kappa_floor=kappa_floor)
    F, delta = ts.jets.F, ts.jets.delta
    scale = T.tensor_scale(ts.C, ts.F)
    eye = np.eye(n)
    w = np.linalg.eigvalsh(ts.g)
    out = {
        "eig_min_g": w[..., 0] / np.max(np.abs(w), axis=-1),
        "kappa": ts.kappa,
        "branch": ts.branch,
        "g_decomposition": _rel_max(ts.h + ts.p[..., :, None] * ts.p[..., None, :], ts.g),
        "g_inverse": np.max(np.abs(np.einsum("...jk,...kl->...jl", ts.g, ts.g_inv) - eye),
                            axis=(-1, -2)),
        "radial_cartan": np.max(np.abs(np.einsum("...j,...jkl->...kl", Y, ts.full("C"))),
                                axis=(-1, -2)) / (np.max(np.abs(Y), axis=-1) * scale),
        "deicke": ts.relative("C"),
        "matsumoto": ts.relative("M"),
        "bipartite_S": ts.relative("S"),
    }
    for k, v in T.euler_residuals(F, delta, ts.g_inv, Y).items():
        out["euler." + k] = v
    for k, v in T.cyclic_diffeq_residual(F, delta).items():
        out["cyclic_diffeq." + k] = v

    # the cyclic sum inside S is symmetric by construction; check it is
    gen = ts.branch == T.GENERAL
    sym = np.zeros(len(Y))
    if np.any(gen):
        Fg, Dg = F[gen], delta[gen]
        with np.errstate(divide="ignore", invalid="ignore"):
            coeff = Fg.val**2 / ((Fg.val - Dg.val) * Dg.val)
            u = ts.I[gen] + coeff[..., None] * ts.cross[gen]
            A = T.shifted_angular_metric(Fg, Dg, ts.h[gen])
            cyc = T.cyclic(u, A)
            sym[gen] = T.symmetry_defect(cyc) / np.maximum(np.max(np.abs(cyc), axis=(-1, -2, -3)),
                                                           np.finfo(float).tiny)
    out["cyclic_symmetry"] = sym

    tl = T.compute_tensors(fiber, lam[:, None] * Y, strict=False, kappa_floor=kappa_floor)
    lam3 = lam[:, None]
    # S inherits the conditioning of kappa, a difference of O(kscale) terms
    with np.errstate(divide="ignore", invalid="ignore"):
        atr = np.einsum("...kl,...kl->...", np.abs(ts.g_inv), np.abs(delta.hessian()))
        kscale = (n + 1) + np.nan_to_num(np.abs(F.val**2 / delta.val) * atr)
        kcond = np.maximum(1.0, kscale / np.abs(ts.kappa))
        s_hom = np.nan_to_num(np.max(np.abs(lam3 * tl.S - ts.S), axis=-1) / (scale * kcond),
                              nan=0.0)
    out["homogeneity_tensors"] = np.maximum.reduce([
        _rel_max(tl.g, ts.g), _rel_max(tl.h, ts.h),
        np.max(np.abs(lam3 * tl.C - ts.C), axis=-1) / scale, s_hom,
    ])

    if fiber.family.is_bipartite and not fiber.degenerate:
        with np.errstate(invalid="ignore"):
            pos = fiber.sigma(Y) > 0
        kr = np.zeros(len(Y))
        if np.any(pos):
            kr[pos] = _rel_max(closedforms.kr_metric(fiber, Y[pos]), ts.g[pos])
        out["kr_metric"] = kr

    if fiber.family is Family.BSPACE:
        gi = closedforms.ginv_closed_form_bspace(fiber, Y)
        out["ginv_closed_form"] = np.maximum(
            _rel_max(gi, ts.g_inv),
            np.max(np.abs(np.einsum("...jk,...kl->...jl", ts.g, gi) - eye), axis=(-1, -2)))
        D1, D2 = delta.d1, delta.hessian()
        across = np.einsum("...kl,...k,...lj->...j", np.abs(ts.g_inv), np.abs(D1), np.abs(D2))
        across_cf = np.einsum("...kl,...k,...lj->...j", np.abs(gi), np.abs(D1), np.abs(D2))
        cross_cf = np.einsum("...kl,...k,...lj->...j", gi, D1, D2)
        out["delta_cross_term"] = np.maximum(
            _safe_ratio(np.max(np.abs(ts.cross), axis=-1), np.max(across, axis=-1)),
            _safe_ratio(np.max(np.abs(cross_cf), axis=-1), np.max(across_cf, axis=-1)))
        atr = np.einsum("...kl,...kl->...", np.abs(ts.g_inv), np.abs(D2))
        kscale = (n + 1) + np.abs(F.val**2 / delta.val) * atr
        # the closed form divides by Delta + rho |b|^2, which cancels where g turns singular
        rq = (F.val - delta.val) * fiber.vec_normsq
        kscale_cf = (n + 1) + np.abs(ts.kappa_b - (n + 1)) * (rq + np.abs(delta.val)) \
            / np.abs(delta.val + rq)
        out["kappa_b"] = np.abs(ts.kappa - ts.kappa_b) / np.maximum(kscale, kscale_cf)
        if n == 2:
            out["kappa_b_n2"] = np.abs(ts.kappa_b - 3.0) / 3.0
        out["b_tensor"] = ts.relative("B")
        out["b_minus_s"] = np.max(np.abs(ts.B - ts.S), axis=-1) / scale
        proj = np.zeros(len(Y))
        for i, y in enumerate(Y):
            res = closedforms.projectors_bspace(fiber, y, D1[i], D2[i]).residuals
            proj[i] = max(res.values())
        out["projectors"] = proj
    return out


def _merge(parts: list[dict]) -> dict:
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


@dataclass
class Block:
    name: str
    status: str
    metric: float | None
    tol: float | None
    count: int
    note: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "status": self.status, "max": self.metric,
                "tol": self.tol, "count": self.count, "note": self.note}


@dataclass
class SuiteReport:
    spec: dict
    seed: int
    samples: int
    blocks: list = field(default_factory=list)
    error: str | None = None

    @property
    def failed(self) -> list:
        return [b for b in self.blocks if b.status == FAIL]

    @property
    def exit_status(self) -> int:
        if self.error is not None:
            return 2
        return 1 if self.failed else 0

    def to_dict(self) -> dict:
        counts = {s: sum(b.status == s for b in self.blocks) for s in (PASS, FAIL, EVIDENCE, SKIPPED)}
        return {"spec": self.spec, "seed": self.seed, "samples": self.samples,
                "error": self.error, "blocks": [b.to_dict() for b in self.blocks],
                "summary": counts, "exit_status": self.exit_status}


def _block(name, values, tol, mask=None, note="", asserted=True) -> Block:
    v = np.asarray(values, dtype=float)
    if mask is not None:
        v = v[mask]
    v = v[~np.isnan(v)]
    if v.size == 0:
        return Block(name, SKIPPED, None, tol, 0, note or "no accepted samples")
    worst = float(np.max(v))
    status = (PASS if worst < tol else FAIL) if asserted else EVIDENCE
    return Block(name, status, worst, tol, int(v.size), note)


def run_invariant_suite(spec: NormSpec, x=None, samples: int = 10_000, seed: int = 0,
                        jobs: int = 1, tolerances: dict | None = None,
                        scan_samples: int | None = None,
                        kappa_floor: float = T.KAPPA_FLOOR) -> SuiteReport:
    """Evaluate every applicable identity at random off-slit samples.

    ``tolerances`` overrides entries of :data:`TOLERANCES`.  A sample is
    *accepted* for the tensor identities when it is at least ``delta_min``
    from the slit, ``g`` is positive definite there, and ``kappa`` (where it
    enters) clears the singular floor.
    """
    tol = dict(TOLERANCES)
    tol.update(tolerances or {})
    report = SuiteReport(_spec_summary(spec, x), seed, samples)
    try:
        fiber = spec.at(x)
    except FinslerError as exc:
        report.error = f"{type(exc).__name__}: {exc}"
        report.blocks.append(Block("construction", FAIL, None, None, 0, report.error))
        return report

    rng = np.random.default_rng(seed)
    Y = off_slit_directions(fiber, samples, rng)
    lam = rng.uniform(0.05, 2.0, samples)
    Yfd = off_slit_directions(fiber, min(samples, FD_SAMPLES), rng, min_distance=max(FD_BAND, fiber.delta_min))
    chunks = _chunks(samples)
    values = _merge(_parallel_map(lambda sl: _value_metrics(fiber, Y[sl], lam[sl]), chunks, jobs))
    tm = _merge(_parallel_map(lambda sl: _tensor_metrics(fiber, Y[sl], lam[sl], kappa_floor), chunks, jobs))
    fd = np.concatenate(_parallel_map(lambda sl: fd_errors(fiber, Yfd[sl]),
                                      _chunks(len(Yfd), 16), jobs))

    B = report.blocks
    fam = fiber.family
    B.append(_block("jets.finite_difference", fd, tol["finite_difference"],
                    note=f"slit distance >= {max(FD_BAND, fiber.delta_min):g}"))
    B.append(_block("geometry.homogeneity", values["homogeneity_norm"], tol["homogeneity_norm"]))
    B.append(Block("geometry.positivity", PASS if np.all(values["positivity"] > 0) else FAIL,
                   float(np.min(values["positivity"])), 0.0, samples, "min F over samples"))
    for key in ("reversibility", "randers_correspondence", "eigen_bound", "self_adjoint"):
        if key in values:
            B.append(_block("geometry." + key, values[key], tol[key]))

    pd = tm["eig_min_g"] > 0
    kappa_ok = ~(np.abs(tm["kappa"]) < kappa_floor)
    acc = pd & kappa_ok
    n_rejected = int(np.sum(~pd))
    note = f"{n_rejected} sample(s) with indefinite g excluded" if n_rejected else ""
    watch = int(np.sum(np.abs(tm["kappa"]) < T.KAPPA_WATCH))
    if watch:
        note = (note + "; " if note else "") + f"{watch} sample(s) with |kappa| < {T.KAPPA_WATCH:g}"

    B.append(_block("tensors.g_decomposition", tm["g_decomposition"], tol["g_decomposition"], pd))
    B.append(_block("tensors.g_inverse", tm["g_inverse"], tol["g_inverse"], pd))
    B.append(_block("tensors.radial_cartan", tm["radial_cartan"], tol["radial_cartan"], pd))
    euler = np.maximum.reduce([v for k, v in tm.items() if k.startswith("euler.")])
    B.append(_block("tensors.euler_identities", euler, tol["euler"], pd, note))
    B.append(_block("tensors.homogeneity", tm["homogeneity_tensors"], tol["homogeneity_tensors"], acc))
    if fam is Family.EUCLIDEAN or fiber.degenerate:
        B.append(_block("tensors.deicke", tm["deicke"], tol["deicke"]))
    if fam in (Family.RANDERS, Family.ASPACE) or (fam.is_bipartite and fiber.kernel_dim == fiber.n - 1):
        B.append(_block("tensors.matsumoto", tm["matsumoto"], tol["matsumoto"], pd))
    branches = sorted(set(tm["branch"].tolist()))
    B.append(_block("tensors.bipartite_S", tm["bipartite_S"], tol["bipartite_S"], acc,
                    (note + "; " if note else "") + "branches: " + ",".join(branches)))
    B.append(_block("tensors.cyclic_symmetry", tm["cyclic_symmetry"], tol["cyclic_symmetry"], acc))
    cyc = np.maximum.reduce([v for k, v in tm.items() if k.startswith("cyclic_diffeq.")])
    B.append(_block("tensors.cyclic_diffeq", cyc, tol["cyclic_diffeq"]))

    if "kr_metric" in tm:
        B.append(_block("closedforms.kr_metric", tm["kr_metric"], tol["kr_metric"]))
    if fam is Family.BSPACE:
        for key in ("ginv_closed_form", "delta_cross_term", "kappa_b", "kappa_b_n2", "projectors"):
            if key in tm:
                B.append(_block("closedforms." + key, tm[key], tol[key], pd))
        B.append(_block("tensors.b_tensor", tm["b_tensor"], tol["b_tensor"], acc, note))
        B.append(_block("tensors.b_minus_s", tm["b_minus_s"], tol["b_minus_s"], acc, note))

    if fam.is_bipartite:
        rep = scan_positive_definiteness(spec, x, samples=scan_samples or samples, seed=seed, jobs=jobs)
        if rep.expected is None:
            status = EVIDENCE
        else:
            status = PASS if rep.verdict == rep.expected else FAIL
        B.append(Block("diagnostics.positive_definiteness", status, float(np.min(rep.eig_min)),
                       None, len(rep.eig_min),
                       f"verdict {rep.verdict}; expected {rep.expected or 'open'}"))

    from . import indicatrix  # local import: indicatrix depends on this module's helpers
    B.extend(indicatrix.suite_blocks(spec, x, tol, seed=seed))
    return report
