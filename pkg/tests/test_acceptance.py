"""Acceptance criteria, one test per criterion.

Every test records a ``criterion N: PASS|FAIL`` line (see ``conftest.py``)
before asserting, so the verdicts appear in the pytest summary even when a
criterion fails.
"""
import time
from pathlib import Path

import numpy as np
import sympy as sp

from almost_finsler import cli, closedforms, config, jets
from almost_finsler import diagnostics as D
from almost_finsler import indicatrix as IX
from almost_finsler import tensors as T
from almost_finsler.geometry import NormSpec, off_slit_directions

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _spd(rng, n):
    A = rng.normal(size=(n, n))
    return A @ A.T / n + np.eye(n)


def _unit_field(rng, r, norm):
    v = rng.normal(size=len(r))
    return norm * v / np.sqrt(v @ r @ v)


def _bipartite(rng, n, lam, sign):
    """Bipartite norm whose form has r-relative eigenvalues ``lam``."""
    r = _spd(rng, n)
    L = np.linalg.cholesky(r)
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return NormSpec.bipartite(r, L @ Q @ np.diag(lam) @ Q.T @ L.T, sign=sign)


def _family_specs(rng, n):
    r = _spd(rng, n)
    v = _unit_field(rng, r, 0.6)
    lam = np.sort(rng.uniform(0.05, 0.9, n))[::-1]
    specs = [NormSpec.euclidean(r)]
    for sign in (1, -1):
        specs += [NormSpec.randers(r, v, sign=sign), NormSpec.aspace(r, v, sign=sign),
                  NormSpec.bspace(r, v, sign=sign), _bipartite(rng, n, lam, sign)]
    return specs


def _accepted(fiber, count, rng, batch=2000):
    """``count`` off-slit samples with positive definite ``g`` and nonsingular kappa."""
    kept, total = [], 0
    for _ in range(200):
        Y = off_slit_directions(fiber, batch, rng)
        ts = T.compute_tensors(fiber, Y, strict=False)
        ok = (ts.eig_min_g > 0) & ~(np.abs(ts.kappa) < T.KAPPA_FLOOR)
        kept.append(Y[ok])
        total += int(ok.sum())
        if total >= count:
            break
    Y = np.concatenate(kept)[:count]
    return T.compute_tensors(fiber, Y, strict=False)


def _rel(A, B):
    return np.max(np.abs(A - B), axis=(-1, -2)) / np.max(np.abs(B), axis=(-1, -2))


# 1 -------------------------------------------------------------------------

def _poly_jet(coeffs, y):
    ys = jets.seed(y)
    out = None
    for c, (i, j, k) in coeffs:
        term = c * ys[i] * ys[j] * ys[k] + 0.5 * c * ys[i] * ys[j] - c * ys[k]
        out = term if out is None else out + term
    return out


def test_criterion_1_jet_soundness(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst, count = 0.0, 0
    for spec in _family_specs(rng, 3):
        fiber = spec.at()
        Y = off_slit_directions(fiber, 100, rng, min_distance=max(D.FD_BAND, fiber.delta_min))
        worst = max(worst, float(np.max(D.fd_errors(fiber, Y))))
        count += len(Y)

    # polynomials: jets against a symbolic oracle, stencils with a large step
    poly_worst = 0.0
    s = sp.symbols("y0:4")
    for n in (2, 3, 4):
        coeffs = [(float(c), tuple(int(v) for v in rng.integers(0, n, 3)))
                  for c in rng.normal(size=4)]
        expr = sum(sp.Float(c) * (s[i] * s[j] * s[k] + sp.Rational(1, 2) * s[i] * s[j] - s[k])
                   for c, (i, j, k) in coeffs)
        sym = s[:n]
        for y in rng.normal(size=(5, n)):
            sub = dict(zip(sym, y))
            jet = _poly_jet(coeffs, y)
            d1 = np.array([float(sp.diff(expr, a).subs(sub)) for a in sym])
            d2 = np.array([[float(sp.diff(expr, a, b).subs(sub)) for b in sym] for a in sym])
            d3 = np.array([[[float(sp.diff(expr, a, b, c)) for c in sym] for b in sym] for a in sym])
            poly_worst = max(poly_worst, np.max(np.abs(jet.d1 - d1)),
                             np.max(np.abs(jet.hessian() - d2)), np.max(np.abs(jet.third() - d3)))
            poly_worst = max(poly_worst, jets.finite_difference_check(
                lambda P: _poly_jet(coeffs, P), y, h=0.25))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-5 and poly_worst < 1e-12 and elapsed < 10
    criterion(1, ok, f"fd max rel err {worst:.2e} over {count} points; polynomial {poly_worst:.1e}; "
                     f"{elapsed:.1f} s")
    assert worst < 1e-5
    assert poly_worst < 1e-12
    assert elapsed < 10


# 2 -------------------------------------------------------------------------

def test_criterion_2_deicke(criterion):
    rng = np.random.default_rng(2)
    worst = 0.0
    for n in (2, 3, 4, 5):
        for r in (np.eye(n), _spd(rng, n)):
            fiber = NormSpec.euclidean(r).at()
            ts = T.compute_tensors(fiber, off_slit_directions(fiber, 1000, rng))
            worst = max(worst, float(np.max(np.abs(ts.C))))
    for name in ("euclidean",):
        cfg = config.load(CONFIGS / f"{name}.toml")
        fiber = cfg.spec.at(cfg.x)
        ts = T.compute_tensors(fiber, off_slit_directions(fiber, cfg.samples, rng))
        worst = max(worst, float(np.max(np.abs(ts.C))))
    criterion(2, worst < 1e-12, f"max |C| = {worst:.2e}")
    assert worst < 1e-12


# 3 -------------------------------------------------------------------------

def test_criterion_3_matsumoto(criterion):
    rng = np.random.default_rng(3)
    specs = [config.load(CONFIGS / "randers.toml").spec, config.load(CONFIGS / "aspace.toml").spec]
    for n in (2, 3, 4):
        r = _spd(rng, n)
        v = _unit_field(rng, r, 0.7)
        for sign in (1, -1):
            specs += [NormSpec.randers(r, v, sign=sign), NormSpec.aspace(r, v, sign=sign)]
    worst = 0.0
    for spec in specs:
        fiber = spec.at()
        ts = T.compute_tensors(fiber, off_slit_directions(fiber, 1000, rng))
        worst = max(worst, float(np.max(ts.relative("M"))))
    criterion(3, worst < 1e-9, f"max relative |M| = {worst:.2e} over {len(specs)} configs x 1000")
    assert worst < 1e-9


# 4 -------------------------------------------------------------------------

def test_criterion_4_bipartite_tensor(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    worst, runs = 0.0, 0
    for _ in range(20):
        n = int(rng.integers(2, 5))
        lam = rng.uniform(0.0, 0.9, n)
        lam[rng.random(n) < 0.25] = 0.0  # include kernels
        seed = int(rng.integers(1 << 31))
        for sign in (1, -1):
            fiber = _bipartite(np.random.default_rng(seed), n, lam, sign).at()
            ts = _accepted(fiber, 500, rng)
            assert len(ts) == 500
            worst = max(worst, float(np.max(ts.relative("S"))))
            runs += 1
    elapsed = time.perf_counter() - start
    ok = worst < 1e-8 and elapsed < 60
    criterion(4, ok, f"max relative |S| = {worst:.2e} over {runs} configs x 500; {elapsed:.1f} s")
    assert worst < 1e-8
    assert elapsed < 60


# 5 -------------------------------------------------------------------------

def test_criterion_5_b_tensor(criterion):
    rng = np.random.default_rng(5)
    worst_b, worst_bs = 0.0, 0.0
    for n in (2, 3, 4, 5):
        for norm in (0.1, 0.5, 0.9):
            for sign in (1, -1):
                r = _spd(rng, n)
                fiber = NormSpec.bspace(r, _unit_field(rng, r, norm), sign=sign).at()
                ts = _accepted(fiber, 500, rng)
                worst_b = max(worst_b, float(np.max(ts.relative("B"))))
                worst_bs = max(worst_bs, float(np.max(np.abs(ts.B - ts.S))))
    ok = worst_b < 1e-8 and worst_bs < 1e-9
    criterion(5, ok, f"max relative |B| = {worst_b:.2e}; max |B - S| = {worst_bs:.2e}")
    assert worst_b < 1e-8
    assert worst_bs < 1e-9


# 6 -------------------------------------------------------------------------

def test_criterion_6_closed_forms(criterion):
    rng = np.random.default_rng(6)
    kr = gi = cross = kap = kap2 = 0.0
    for n in (2, 3, 4, 5):
        for sign in (1, -1):
            r = _spd(rng, n)
            spec = NormSpec.bspace(r, _unit_field(rng, r, 0.5), sign=sign)
            fiber = spec.at()
            ts = _accepted(fiber, 500, rng)
            kr = max(kr, float(np.max(_rel(closedforms.kr_metric(fiber, ts.y), ts.g))))
            w, V = np.linalg.eigh(ts.g)
            eig_inv = np.einsum("...ij,...j,...kj->...ik", V, 1.0 / w, V)
            gi = max(gi, float(np.max(_rel(closedforms.ginv_closed_form_bspace(fiber, ts.y), eig_inv))))
            if n == 2:
                kap2 = max(kap2, float(np.max(np.abs(ts.kappa_b - 3.0))))
            # the suite normalises the cross term and kappa by their cancellation scales
            rep = D.run_invariant_suite(spec, samples=500, seed=n)
            blocks = {b.name: b for b in rep.blocks}
            cross = max(cross, blocks["closedforms.delta_cross_term"].metric)
            kap = max(kap, blocks["closedforms.kappa_b"].metric)
    ok = kr < 1e-9 and gi < 1e-9 and cross < 1e-10 and kap < 1e-10 and kap2 < 1e-12
    criterion(6, ok, f"KR {kr:.1e}, g_inv {gi:.1e}, cross term {cross:.1e}, "
                     f"kappa vs kappa_b {kap:.1e}, n=2 kappa_b - 3 {kap2:.1e}")
    assert kr < 1e-9 and gi < 1e-9
    assert cross < 1e-10
    assert kap < 1e-10
    assert kap2 < 1e-12


# 7 -------------------------------------------------------------------------

def test_criterion_7_euler_identities(criterion):
    rng = np.random.default_rng(7)
    worst, names, count = 0.0, set(), 0
    for n in (2, 3, 4):
        for spec in _family_specs(rng, n):
            fiber = spec.at()
            ts = _accepted(fiber, 1000, rng)
            res = T.euler_residuals(ts.jets.F, ts.jets.delta, ts.g_inv, ts.y)
            names |= set(res)
            worst = max(worst, max(float(np.max(v)) for v in res.values()))
            count += len(ts)
    ok = worst < 1e-9 and len(names) == 7
    criterion(7, ok, f"max residual {worst:.2e} over {len(names)} identities, {count} samples")
    assert len(names) == 7
    assert worst < 1e-9


# 8 -------------------------------------------------------------------------

def _witness_series(lam1, lam2):
    """Symbolic g_22 of F- at the witness point, expanded in eps."""
    eps = sp.symbols("eps", positive=True)
    y = sp.symbols("y1:4", real=True)
    F = sp.sqrt(sum(v**2 for v in y)) - sp.sqrt(lam1 * y[0]**2 + lam2 * y[1]**2)
    g22 = sp.diff(F**2 / 2, y[1], 2)
    eta = sp.sqrt(1 + 2 * sp.sqrt(lam1) * eps + (lam1 - 1) * eps**2) - 1
    expr = g22.subs({y[0]: eps, y[1]: 0, y[2]: 1 + eta})
    return eps, expr, sp.series(expr, eps, 0, 1).removeO()


def test_criterion_8_dichotomy(criterion):
    cells = D.dichotomy_matrix(samples=10_000)
    mismatched = [c for c in cells if c["expected"] is not None and c["verdict"] != c["expected"]]
    for c in cells:
        k, n = c["kernel_dim"], c["n"]
        if 1 <= k <= n - 2:
            assert c["expected"] == D.NEGATIVE
        elif k >= n - 1:
            assert c["expected"] == D.ALL_PD
    open_cells = [(c["n"], c["verdict"]) for c in cells if c["expected"] is None]

    lam1 = lam2 = sp.Rational(1, 2)
    eps, expr, series = _witness_series(lam1, lam2)
    w = D.bipminus_witness(0.01)
    exact = float(expr.subs(eps, sp.Rational(1, 100)))
    lead = float(-lam2 / sp.sqrt(lam1))
    constant = float(sp.limit(series - (-lam2 / (sp.sqrt(lam1) * eps)), eps, 0))
    scaled = [D.bipminus_witness(e)["eps"] * D.bipminus_witness(e)["g22"] for e in (1e-2, 1e-3, 1e-4)]
    ok = (not mismatched and w["g22"] < 0 and abs(w["g22"] - exact) < 1e-9 * abs(exact)
          and abs(scaled[-1] - lead) < 1e-3)
    criterion(8, ok, f"{len(cells)} cells, {len(mismatched)} mismatched; dim ker 0 (open): "
                     f"{open_cells}; g22(eps=0.01) = {w['g22']:.4f} (symbolic {exact:.4f}); "
                     f"eps*g22 -> {scaled[-1]:.5f} vs {lead:.5f}; constant term {constant:g} "
                     f"(1 - lam2 = {float(1 - lam2):g})")
    assert not mismatched, mismatched
    assert w["g22"] < 0
    assert abs(w["g22"] - exact) < 1e-9 * abs(exact)
    # leading asymptotic term -lam2/(sqrt(lam1) eps), approached linearly in eps
    errs = [abs(s - lead) for s in scaled]
    assert errs[0] > errs[1] > errs[2] and errs[2] < 1e-3


# 9 -------------------------------------------------------------------------

def test_criterion_9_fminus_bspace_dimensions(criterion):
    results = [D.corollary_fminus_check(n, samples=10_000) for n in (2, 3, 4)]
    verdicts = {r["n"]: r["verdict"] for r in results}
    ok = all(r["verdict"] == r["expected"] for r in results)
    criterion(9, ok, f"verdicts {verdicts}")
    assert verdicts == {2: D.ALL_PD, 3: D.NEGATIVE, 4: D.NEGATIVE}
    assert all(r["witness"] is not None for r in results[1:])


# 10 ------------------------------------------------------------------------

def test_criterion_10_indicatrix(criterion):
    spec = NormSpec.bspace(np.eye(3), [0.0, 0.0, 0.5])
    union = IX.sample_union(spec)
    toroid, B = 0.0, None
    for name in (IX.LEMON, IX.APPLE):
        tor = IX.toroid_residual(union[name], spec)
        toroid = max(toroid, float(np.max(tor["residual"])))
        B = tor["B"]
    chis = [union[IX.LEMON].euler_characteristic(), union[IX.APPLE].euler_characteristic()]

    a = np.array([0.0, 0.2, 0.5])
    aspec = NormSpec.aspace(np.eye(3), a)
    aunion = IX.sample_union(aspec)
    ell = max(float(np.max(IX.ellipsoid_residual(aunion[k], aspec)["residual"]))
              for k in (IX.LEMON, IX.APPLE))
    centers = IX.randers_centers(aspec.at())
    expected = a / (1 - a @ a)
    center_err = max(np.max(np.abs(centers[1] + expected)), np.max(np.abs(centers[-1] - expected)))

    coincide = IX.coincidence_n2([0.5, 0.0], [0.0, 0.5])
    ok = (abs(B - 4 / 3) < 1e-15 and toroid < 1e-9 and ell < 1e-9 and center_err < 1e-9
          and coincide < 1e-9 and chis == [2, 2])
    criterion(10, ok, f"B = {B:.12f}, toroid {toroid:.1e}; ellipsoids {ell:.1e} (centre err "
                      f"{center_err:.1e}); n=2 coincidence {coincide:.1e}; Euler characteristics {chis}")
    assert abs(B - 4 / 3) < 1e-15 and toroid < 1e-9
    assert ell < 1e-9 and center_err < 1e-9
    assert coincide < 1e-9
    assert chis == [2, 2]


# 11 ------------------------------------------------------------------------

def test_criterion_11_cyclic_equation(criterion):
    rng = np.random.default_rng(11)
    worst = {"diffeq": 0.0, "geometric": 0.0, "delta_third": 0.0}
    count = 0
    for n in (2, 3, 4, 5):
        r = _spd(rng, n)
        v = _unit_field(rng, r, 0.7)
        lam = rng.uniform(0.0, 0.9, n)
        for sign in (1, -1):
            for spec in (NormSpec.aspace(r, v, sign=sign), NormSpec.bspace(r, v, sign=sign),
                         _bipartite(rng, n, lam, sign)):
                fiber = spec.at()
                Y = off_slit_directions(fiber, 1000, rng)
                nj = fiber.evaluate(Y)
                for k, val in T.cyclic_diffeq_residual(nj.F, nj.delta).items():
                    worst[k] = max(worst[k], float(np.max(val)))
                count += len(Y)
    ok = max(worst.values()) < 1e-9
    criterion(11, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f" over {count} samples")
    assert max(worst.values()) < 1e-9


# 12 ------------------------------------------------------------------------

def test_criterion_12_determinism(criterion):
    names = sorted(p.stem for p in CONFIGS.glob("*.toml"))
    differing = []
    for name in names:
        cfg = config.load(CONFIGS / f"{name}.toml")
        outputs = set()
        for jobs in (1, 4, 1):
            status, report, summary = cli.cmd_verify(cfg.replace(jobs=jobs))
            assert status == 0, name
            outputs.add((cli.dump_json(report), summary))
        if len(outputs) != 1:
            differing.append(name)
    criterion(12, not differing, f"{len(names)} shipped configs, jobs 1/4/1; differing: {differing or 'none'}")
    assert not differing
