"""Indicatrix sampling, the spindle-toroid and ellipsoid checks, and mesh files.

A vertex is obtained from a grid direction ``u`` (on the unit sphere of
``rho``) as ``u / F(u)``; homogeneity makes this exact, so the only residual
is rounding.  Directions within ``delta_min`` of the slit are kept in the mesh
(so that the triangulation stays closed) but flagged ``slit_adjacent``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import ndtri
from scipy.stats import qmc

from .errors import AlignmentError, SpecError
from .geometry import Family, FiberNorm, NormSpec

LEMON, APPLE, FIXED, PLAIN = "lemon", "apple", "fixed-sphere", "indicatrix"
DEFAULT_LEVEL = 4
DEFAULT_CIRCLE = 512
DEFAULT_CLOUD = 2000
ALIGN_TOL = 1e-14


# ---------------------------------------------------------------------------
# direction grids

@lru_cache(maxsize=8)
def icosphere(level: int = DEFAULT_LEVEL) -> tuple[np.ndarray, np.ndarray]:
    """Vertices and faces of a subdivided icosahedron on the unit sphere."""
    t = (1 + 5**0.5) / 2
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    V = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(level):
        cache = {}

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = V[a] + V[b]
                V.append(m / np.linalg.norm(m))
                cache[key] = len(V) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.array(V), np.array(faces, dtype=np.int64)


def direction_grid(n: int, level: int = DEFAULT_LEVEL, count: int | None = None):
    """Deterministic unit directions and, for ``n = 3``, triangle faces.

    ``n = 2``: equally spaced angles; ``n = 3``: icosphere; ``n > 3``:
    Halton points pushed through the normal quantile function.
    """
    if n == 2:
        m = count or DEFAULT_CIRCLE
        th = 2 * np.pi * np.arange(m) / m
        return np.stack([np.cos(th), np.sin(th)], axis=1), None
    if n == 3:
        return icosphere(level)
    m = count or DEFAULT_CLOUD
    pts = qmc.Halton(d=n, scramble=False).random(m + 1)[1:]  # the first Halton point is 0
    z = ndtri(pts)
    return z / np.linalg.norm(z, axis=1, keepdims=True), None


# ---------------------------------------------------------------------------
# meshes

@dataclass
class IndicatrixMesh:
    """Vertices of one indicatrix branch.

    ``residual`` is ``|F(v) - 1|`` per vertex; ``faces`` (n = 3) index into
    ``vertices``; for ``n = 2`` the vertices form a closed polyline in order.
    """

    n: int
    branch: str
    vertices: np.ndarray
    directions: np.ndarray
    residual: np.ndarray
    slit_adjacent: np.ndarray
    faces: np.ndarray | None = None

    def __len__(self):
        return len(self.vertices)

    @property
    def accepted(self) -> np.ndarray:
        return ~self.slit_adjacent

    def euler_characteristic(self) -> int:
        if self.faces is None:
            raise SpecError("Euler characteristic needs a triangulated mesh")
        f = self.faces
        edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        n_edges = len(np.unique(edges, axis=0))
        return len(self.vertices) - n_edges + len(f)


def _branch_name(fiber: FiberNorm) -> str:
    if not fiber.family.is_bipartite:
        return PLAIN
    return LEMON if fiber.sign > 0 else APPLE


def sample_indicatrix(spec: NormSpec, x=None, level: int = DEFAULT_LEVEL,
                      count: int | None = None) -> IndicatrixMesh:
    """Sample ``F = 1`` along a deterministic direction grid."""
    fiber = spec.at(x)
    U, faces = direction_grid(fiber.n, level, count)
    # grid points are Euclidean-unit; y = L^-T u puts them on the unit sphere of rho
    Y = np.linalg.solve(fiber.chol.T, U.T).T
    F = fiber.value(Y)
    V = Y / F[:, None]
    residual = np.abs(fiber.value(V) - 1.0)
    adjacent = fiber.slit_distance(Y) < fiber.delta_min
    return IndicatrixMesh(fiber.n, _branch_name(fiber), V, Y, residual, adjacent, faces)


def sample_fixed_sphere(spec: NormSpec, x=None, count: int = 64) -> IndicatrixMesh:
    """Points of the unit sphere of ``rho`` inside ``ker s``."""
    fiber = spec.at(x)
    K = fiber.kernel_basis()
    k = len(K)
    if k == 0:
        return IndicatrixMesh(fiber.n, FIXED, np.zeros((0, fiber.n)), np.zeros((0, fiber.n)),
                              np.zeros(0), np.zeros(0, dtype=bool))
    if k == 1:
        coeff = np.array([[1.0], [-1.0]])
    elif k == 2:
        th = 2 * np.pi * np.arange(count) / count
        coeff = np.stack([np.cos(th), np.sin(th)], axis=1)
    else:
        coeff, _ = direction_grid(k, level=2, count=count)
    V = coeff @ K
    res = np.maximum(np.abs(fiber.rho(V) - 1.0),
                     np.linalg.norm(V @ fiber.s, axis=1) / max(np.abs(fiber.s).max(), 1e-300))
    return IndicatrixMesh(fiber.n, FIXED, V, V.copy(), res, np.zeros(len(V), dtype=bool))


def sample_union(spec: NormSpec, x=None, level: int = DEFAULT_LEVEL,
                 count: int | None = None) -> dict:
    """Lemon, apple and fixed sphere of a bipartite norm (whatever its sign)."""
    if not spec.family.is_bipartite:
        raise SpecError(f"the {spec.family.value} family has no bipartite indicatrix union")
    return {LEMON: sample_indicatrix(spec.with_sign(1), x, level, count),
            APPLE: sample_indicatrix(spec.with_sign(-1), x, level, count),
            FIXED: sample_fixed_sphere(spec, x)}


# ---------------------------------------------------------------------------
# algebraic descriptions

def toroid_parameter(beta: float) -> float:
    return 1.0 / (1.0 - beta**2)


def toroid_residual(mesh: IndicatrixMesh, spec: NormSpec, x=None) -> dict:
    """Residuals of the spindle-toroid equations ``(q +- beta B)^2/B^2 + t^2/B = 1``.

    ``q`` is the Euclidean norm of the first ``n-1`` coordinates and ``t`` the
    last one; the b space must have ``r = I`` and ``b`` on the last axis.
    Returns the per-vertex residual of the closer equation, which sign it is
    (+1 for the lemon form, -1 for the apple form) and ``B``.
    """
    fiber = spec.at(x)
    if fiber.family is not Family.BSPACE:
        raise AlignmentError(f"toroid equations need a b space, got {fiber.family.value}")
    if np.max(np.abs(fiber.r - np.eye(fiber.n))) > ALIGN_TOL:
        raise AlignmentError("toroid equations need the identity metric r = I")
    b = fiber.vec
    if np.max(np.abs(b[:-1])) > ALIGN_TOL * np.abs(b).max():
        raise AlignmentError("toroid equations need b along the last coordinate axis")
    beta = abs(float(b[-1]))
    Bv = toroid_parameter(beta)
    V = mesh.vertices
    q = np.linalg.norm(V[:, :-1], axis=1)
    t = V[:, -1]
    plus = np.abs((q + beta * Bv)**2 / Bv**2 + t**2 / Bv - 1.0)
    minus = np.abs((q - beta * Bv)**2 / Bv**2 + t**2 / Bv - 1.0)
    return {"residual": np.minimum(plus, minus), "branch": np.where(plus <= minus, 1, -1),
            "plus": plus, "minus": minus, "B": Bv}


def randers_quadric(fiber: FiberNorm, sign: int):
    """Quadric ``(v-c)^T A (v-c) = k`` of the Randers indicatrix ``rho + sign <a, v> = 1``."""
    alpha = fiber.vec_lower
    A = fiber.r - np.outer(alpha, alpha)
    c = -sign * np.linalg.solve(A, alpha)
    return A, c, 1.0 + c @ A @ c


def randers_centers(fiber: FiberNorm) -> dict:
    """Centres of the two Randers ellipsoids; ``-+ a/(1-|a|^2)`` when ``r = I``."""
    return {s: randers_quadric(fiber, s)[1] for s in (1, -1)}


def ellipsoid_residual(mesh: IndicatrixMesh, spec: NormSpec, x=None) -> dict:
    """Distance of each vertex from the nearer of the two Randers ellipsoids."""
    fiber = spec.at(x)
    if fiber.family not in (Family.ASPACE, Family.RANDERS):
        raise AlignmentError("Randers ellipsoids need an a space or a Randers norm")
    V = mesh.vertices
    res = {}
    for s in (1, -1):
        A, c, k = randers_quadric(fiber, s)
        D = V - c
        res[s] = np.abs(np.einsum("ij,jk,ik->i", D, A, D) - k) / k
    return {"residual": np.minimum(res[1], res[-1]), "branch": np.where(res[1] <= res[-1], 1, -1),
            "centers": randers_centers(fiber)}


def fit_quadric(points) -> dict:
    """Least-squares central quadric through ``points`` (rows).

    Solves for the null vector of the design matrix of all monomials of
    degree <= 2 and returns the fitted centre, the normalised shape matrix and
    the relative smallest singular value as a fit residual.
    """
    P = np.asarray(points, dtype=float)
    m, n = P.shape
    iu = np.triu_indices(n)
    quad = P[:, iu[0]] * P[:, iu[1]]
    design = np.hstack([quad, P, np.ones((m, 1))])
    _, sv, Vt = np.linalg.svd(design, full_matrices=False)
    coef = Vt[-1]
    Q = np.zeros((n, n))
    Q[iu] = coef[:len(iu[0])]
    Q = 0.5 * (Q + Q.T)
    lin = coef[len(iu[0]):len(iu[0]) + n]
    const = coef[-1]
    center = np.linalg.solve(-2 * Q, lin)
    k = center @ Q @ center - const
    return {"center": center, "A": Q / k, "residual": float(sv[-1] / sv[0])}


def point_set_distance(P, Q) -> float:
    """Symmetric Hausdorff distance between two finite point sets."""
    P, Q = np.asarray(P, dtype=float), np.asarray(Q, dtype=float)
    return float(max(cKDTree(Q).query(P)[0].max(), cKDTree(P).query(Q)[0].max()))


def coincidence_n2(a, b, r=None, level: int = DEFAULT_LEVEL, count: int | None = None) -> float:
    """Hausdorff distance between the a-space and b-space unions in dimension two."""
    r = np.eye(2) if r is None else np.asarray(r, dtype=float)
    ua = sample_union(NormSpec.aspace(r, a), level=level, count=count)
    ub = sample_union(NormSpec.bspace(r, b), level=level, count=count)
    pa = np.vstack([ua[LEMON].vertices, ua[APPLE].vertices, ua[FIXED].vertices])
    pb = np.vstack([ub[LEMON].vertices, ub[APPLE].vertices, ub[FIXED].vertices])
    return point_set_distance(pa, pb)


# ---------------------------------------------------------------------------
# export

def _fmt(v) -> str:
    return repr(float(v))


def export_mesh(mesh: IndicatrixMesh, path, fmt: str | None = None) -> Path:
    """Write ``mesh`` as Wavefront OBJ (``n = 3`` with faces) or CSV.

    OBJ files hold ``v`` and ``f`` records readable by ordinary mesh viewers,
    plus ``#@`` comment records carrying the direction, residual and slit
    flag of each vertex.  CSV files have one row per vertex.
    """
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt not in ("obj", "csv"):
        raise ValueError(f"unsupported mesh format {fmt!r} (use 'obj' or 'csv')")
    if fmt == "obj" and (mesh.n != 3 or mesh.faces is None):
        raise ValueError("OBJ export needs a triangulated n = 3 mesh; use csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "obj":
        with path.open("w") as fh:
            fh.write(f"# indicatrix mesh\n#@branch {mesh.branch}\n#@n {mesh.n}\n")
            for v, u, res, flag in zip(mesh.vertices, mesh.directions, mesh.residual,
                                       mesh.slit_adjacent):
                fh.write("v " + " ".join(_fmt(c) for c in v) + "\n")
                fh.write("#@ " + " ".join(_fmt(c) for c in u) + f" {_fmt(res)} {int(flag)}\n")
            for f in mesh.faces:
                fh.write("f " + " ".join(str(int(i) + 1) for i in f) + "\n")
        return path
    with path.open("w", newline="") as fh:
        fh.write(f"# branch={mesh.branch}\n")
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(mesh.n)] + [f"u{i}" for i in range(mesh.n)]
                   + ["residual", "slit_adjacent"])
        for v, u, res, flag in zip(mesh.vertices, mesh.directions, mesh.residual, mesh.slit_adjacent):
            w.writerow([_fmt(c) for c in v] + [_fmt(c) for c in u] + [_fmt(res), int(flag)])
    return path


def read_mesh(path) -> IndicatrixMesh:
    """Inverse of :func:`export_mesh`."""
    path = Path(path)
    if path.suffix.lower() == ".obj":
        verts, dirs, res, flags, faces = [], [], [], [], []
        branch, n = PLAIN, 3
        for line in path.read_text().splitlines():
            if line.startswith("#@branch"):
                branch = line.split()[1]
            elif line.startswith("#@n"):
                n = int(line.split()[1])
            elif line.startswith("#@ "):
                parts = line.split()[1:]
                dirs.append([float(c) for c in parts[:n]])
                res.append(float(parts[n]))
                flags.append(bool(int(parts[n + 1])))
            elif line.startswith("v "):
                verts.append([float(c) for c in line.split()[1:]])
            elif line.startswith("f "):
                faces.append([int(i) - 1 for i in line.split()[1:]])
        return IndicatrixMesh(n, branch, np.array(verts), np.array(dirs), np.array(res),
                              np.array(flags, dtype=bool), np.array(faces, dtype=np.int64))
    with path.open(newline="") as fh:
        first = fh.readline().strip()
        branch = first.split("=", 1)[1] if first.startswith("# branch=") else PLAIN
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n = sum(h.startswith("x") for h in header)
    data = np.array([[float(c) for c in row] for row in body]).reshape(-1, len(header))
    return IndicatrixMesh(n, branch, data[:, :n], data[:, n:2 * n], data[:, 2 * n],
                          data[:, 2 * n + 1].astype(bool))


# ---------------------------------------------------------------------------
# suite hook

def _suite_level(n: int) -> dict:
    return {"level": 3} if n == 3 else {"count": 256 if n == 2 else 500}


def suite_blocks(spec: NormSpec, x, tol: dict, seed: int = 0) -> list:
    """Indicatrix checks contributed to the invariant suite."""
    from .diagnostics import Block, PASS, FAIL, SKIPPED, _block

    fiber = spec.at(x)
    kw = _suite_level(fiber.n)
    blocks = []
    if fiber.family.is_bipartite:
        union = sample_union(spec, x, **kw)
        meshes = [union[LEMON], union[APPLE]]
    else:
        meshes = [sample_indicatrix(spec, x, **kw)]
    res = np.concatenate([m.residual[m.accepted] for m in meshes])
    blocks.append(_block("indicatrix.radial_exactness", res, tol["radial_exactness"]))
    if fiber.family.is_bipartite and fiber.kernel_dim:
        fixed = union[FIXED]
        blocks.append(_block("indicatrix.fixed_sphere", fixed.residual, 1e-10))
    if fiber.family.is_bipartite and fiber.n == 3:
        chis = [m.euler_characteristic() for m in meshes]
        ok = all(c == 2 for c in chis)
        blocks.append(Block("indicatrix.euler_characteristic", PASS if ok else FAIL,
                            float(max(abs(c - 2) for c in chis)), 0.0, len(chis),
                            "lemon, apple: " + ", ".join(map(str, chis))))
    if fiber.family is Family.BSPACE:
        try:
            worst = np.concatenate([toroid_residual(m, spec, x)["residual"] for m in meshes])
            blocks.append(_block("indicatrix.spindle_toroid", worst, 1e-9))
        except AlignmentError as exc:
            blocks.append(Block("indicatrix.spindle_toroid", SKIPPED, None, 1e-9, 0, str(exc)))
    if fiber.family in (Family.ASPACE, Family.RANDERS):
        worst = np.concatenate([ellipsoid_residual(m, spec, x)["residual"] for m in meshes])
        blocks.append(_block("indicatrix.randers_ellipsoids", worst, 1e-9))
    return blocks


def _side_points(meshes: dict, fiber: FiberNorm, sign: int) -> np.ndarray:
    """Vertices lying on the Randers ellipsoid ``rho + sign <a, v> = 1``."""
    pts = []
    for branch, mesh in meshes.items():
        if branch == FIXED:
            continue
        av = mesh.vertices @ fiber.vec_lower
        # on the lemon sign(<a,v>) picks the ellipsoid, on the apple it is reversed
        own = 1 if branch in (LEMON, PLAIN) else -1
        keep = (own * np.sign(av) == sign) if fiber.family is Family.ASPACE else \
            np.full(len(av), fiber.sign == sign)
        pts.append(mesh.vertices[keep & mesh.accepted])
    return np.vstack(pts)


def analyze(spec: NormSpec, x=None, level: int = DEFAULT_LEVEL, count: int | None = None,
            tol: float = 1e-9):
    """Meshes of every indicatrix branch plus a report of the geometric checks.

    Returns ``(meshes, report)``; ``report["checks"]`` lists dicts with
    ``name``, ``max``, ``tol`` and ``status`` ("pass", "fail" or "skipped").
    """
    fiber = spec.at(x)
    if fiber.family.is_bipartite:
        meshes = sample_union(spec, x, level, count)
    else:
        meshes = {PLAIN: sample_indicatrix(spec, x, level, count)}
    surfaces = {k: m for k, m in meshes.items() if k != FIXED}
    checks = []

    def check(name, value, limit, note=""):
        status = "pass" if value < limit else "fail"
        checks.append({"name": name, "max": float(value), "tol": limit, "status": status,
                       "note": note})

    res = max(float(np.max(m.residual[m.accepted], initial=0.0)) for m in surfaces.values())
    check("radial_exactness", res, 1e-12)
    if FIXED in meshes and len(meshes[FIXED]):
        check("fixed_sphere", float(np.max(meshes[FIXED].residual)), 1e-10)
    if fiber.n == 3:
        for k, m in surfaces.items():
            chi = m.euler_characteristic()
            check(f"euler_characteristic.{k}", abs(chi - 2), 0.5, f"V - E + F = {chi}")
    report = {"family": fiber.family.value, "dim": fiber.n,
              "meshes": {k: {"vertices": len(m), "slit_adjacent": int(m.slit_adjacent.sum()),
                             "max_residual": float(np.max(m.residual, initial=0.0))}
                         for k, m in meshes.items()}}
    if fiber.family is Family.BSPACE:
        try:
            tor = {k: toroid_residual(m, spec, x) for k, m in surfaces.items()}
        except AlignmentError as exc:
            checks.append({"name": "spindle_toroid", "max": None, "tol": tol, "status": "skipped",
                           "note": str(exc)})
        else:
            worst = max(float(np.max(t["residual"])) for t in tor.values())
            check("spindle_toroid", worst, tol)
            report["toroid"] = {
                "B": next(iter(tor.values()))["B"],
                "branch_counts": {k: {"plus": int(np.sum(t["branch"] > 0)),
                                      "minus": int(np.sum(t["branch"] < 0))}
                                  for k, t in tor.items()}}
    if fiber.family in (Family.ASPACE, Family.RANDERS):
        worst = max(float(np.max(ellipsoid_residual(m, spec, x)["residual"]))
                    for m in surfaces.values())
        check("randers_ellipsoids", worst, tol)
        centers = randers_centers(fiber)
        fits = {}
        for s in (1, -1):
            pts = _side_points(meshes, fiber, s)
            if len(pts) >= 3 * fiber.n + 3:
                fit = fit_quadric(pts)
                fits["plus" if s > 0 else "minus"] = {
                    "center": fit["center"].tolist(), "residual": fit["residual"],
                    "center_error": float(np.max(np.abs(fit["center"] - centers[s]))),
                    "predicted_center": centers[s].tolist()}
        report["ellipsoids"] = fits
    report["checks"] = checks
    return meshes, report
