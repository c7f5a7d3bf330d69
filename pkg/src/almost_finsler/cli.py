"""Command line interface: ``almost-finsler {tensors,verify,indicatrix,probe-slit}``.

Exit status: 0 when every asserted check passes, 1 when one fails, 2 for
configuration or usage errors (including fiber vectors on the slit).
Reports are written as sorted JSON plus a plain-text summary; they contain
no timings or thread counts, so reruns are byte-identical.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, config, diagnostics, indicatrix
from . import tensors as T
from .errors import ConfigError, FinslerError
from .geometry import Family

OUT_ENV = "ALMOST_FINSLER_OUT"
DEFAULT_OUT = "almost_finsler_out"

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

DEFINITIONS = {
    "F": "norm value at y",
    "p": "Hilbert form, first fiber derivative of F",
    "h": "angular metric F F''",
    "g": "fundamental tensor, Hessian of F^2/2 (= h + p p^T)",
    "g_inv": "inverse of g",
    "C": "Cartan torsion, third fiber derivative of F^2/4",
    "I": "mean Cartan torsion g^kl C_jkl",
    "kappa": "n + 1 - (F^2/Delta) g^kl Delta_kl",
    "M": "Matsumoto tensor C - cyc(I, h)/(n+1)",
    "S": "bipartite tensor C - cyc(I + F^2/((F-Delta) Delta) g^kl Delta_k Delta_lj, "
         "h - F^2/Delta Delta'')/kappa",
    "B": "b-tensor C - cyc(I, h - F^2/Delta Delta'')/kappa_b",
    "kappa_b": "closed form n + 1 - (n-2) F (F-Delta) |b|^2 / (Delta (Delta + (F-Delta) |b|^2))",
}


# ---------------------------------------------------------------------------
# output helpers

def _clean(obj):
    """Make ``obj`` JSON-safe: numpy to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, str):
        return v
    return f"{v:.3e}"


def _table(rows, header) -> str:
    rows = [header] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def resolve_out(args_out, cfg: config.RunConfig) -> Path:
    if args_out:
        return Path(args_out)
    if cfg.out:
        return Path(cfg.out)
    return Path(os.environ.get(OUT_ENV, DEFAULT_OUT)) / cfg.name


def _write(out: Path, stem: str, report: dict, summary: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.json").write_text(dump_json(report))
    (out / f"{stem}.txt").write_text(summary)


def _config_record(cfg: config.RunConfig) -> dict:
    """The reproducibility-relevant part of the config (no jobs, no paths)."""
    d = cfg.to_dict()
    d["sampling"].pop("jobs", None)
    d.pop("output", None)
    return d


# ---------------------------------------------------------------------------
# commands

def _applicable(fiber) -> list[tuple[str, str]]:
    """(metric key, tolerance key) pairs of the identities that hold for ``fiber``."""
    fam = fiber.family
    checks = [("g_decomposition", "g_decomposition"), ("g_inverse", "g_inverse"),
              ("radial_cartan", "radial_cartan"), ("euler", "euler"),
              ("cyclic_diffeq", "cyclic_diffeq"), ("cyclic_symmetry", "cyclic_symmetry"),
              ("homogeneity_tensors", "homogeneity_tensors"), ("bipartite_S", "bipartite_S")]
    if fam is Family.EUCLIDEAN or fiber.degenerate:
        checks.append(("deicke", "deicke"))
    if fam in (Family.RANDERS, Family.ASPACE) or (fam.is_bipartite and fiber.kernel_dim == fiber.n - 1):
        checks.append(("matsumoto", "matsumoto"))
    if fam.is_bipartite and not fiber.degenerate:
        checks.append(("kr_metric", "kr_metric"))
    if fam is Family.BSPACE:
        checks += [(k, k) for k in ("ginv_closed_form", "delta_cross_term", "kappa_b",
                                    "projectors", "b_tensor", "b_minus_s")]
        if fiber.n == 2:
            checks.append(("kappa_b_n2", "kappa_b_n2"))
    return checks


def cmd_tensors(cfg: config.RunConfig, points=None) -> tuple[int, dict, str]:
    """Every tensor at each evaluation point, with the residual of each identity."""
    fiber = cfg.spec.at(cfg.x)
    Y = np.atleast_2d(np.asarray(points if points is not None else cfg.points, dtype=float))
    if Y.size == 0:
        raise ConfigError("no evaluation points given", field="sampling.points")
    if Y.shape[-1] != fiber.n:
        raise ConfigError(f"points must have length {fiber.n}", field="sampling.points")
    ts = T.compute_tensors(fiber, Y, kappa_floor=cfg.kappa_floor)
    metrics = diagnostics._tensor_metrics(fiber, Y, np.full(len(Y), 2.0), cfg.kappa_floor)
    metrics["euler"] = np.maximum.reduce([v for k, v in metrics.items() if k.startswith("euler.")])
    metrics["cyclic_diffeq"] = np.maximum.reduce(
        [v for k, v in metrics.items() if k.startswith("cyclic_diffeq.")])
    tol = dict(diagnostics.TOLERANCES)
    tol.update(cfg.tolerances)
    is_b = fiber.family is Family.BSPACE
    entries, rows, status = [], [], EXIT_OK
    for i, y in enumerate(Y):
        t = ts[i]
        checks = {}
        for key, tkey in _applicable(fiber):
            value = float(metrics[key][i])
            ok = value < tol[tkey]
            status = max(status, EXIT_OK if ok else EXIT_FAIL)
            checks[key] = {"residual": value, "tol": tol[tkey], "status": "pass" if ok else "fail"}
            rows.append([i, key, _fmt(value), _fmt(tol[tkey]), "PASS" if ok else "FAIL"])
        values = {"F": t.F, "p": t.p, "h": t.h, "g": t.g, "g_inv": t.g_inv, "C": t.full("C"),
                  "I": t.I, "kappa": t.kappa, "M": t.full("M"), "S": t.full("S")}
        if is_b:
            values.update(B=t.full("B"), kappa_b=t.kappa_b)
        entries.append({"y": y, "branch": str(t.branch), "eig_min_g": t.eig_min_g,
                        "slit_distance": float(fiber.slit_distance(y)),
                        "values": values, "checks": checks})
    report = {"command": "tensors", "config": _config_record(cfg),
              "definitions": {k: v for k, v in DEFINITIONS.items() if is_b or k not in ("B", "kappa_b")},
              "points": entries, "exit_status": status}
    summary = (f"tensors: {cfg.name} ({fiber.family.value}, n={fiber.n}, sign={fiber.sign:+d})\n"
               + _table(rows, ["point", "identity", "residual", "tol", "status"]))
    return status, report, summary


def cmd_verify(cfg: config.RunConfig) -> tuple[int, dict, str]:
    """The full invariant suite."""
    rep = diagnostics.run_invariant_suite(
        cfg.spec, cfg.x, samples=cfg.samples, seed=cfg.seed, jobs=cfg.jobs,
        tolerances=cfg.tolerances, scan_samples=cfg.scan_samples, kappa_floor=cfg.kappa_floor)
    report = {"command": "verify", "config": _config_record(cfg), **rep.to_dict()}
    rows = [[b.name, b.status.upper(), _fmt(b.metric), _fmt(b.tol), b.count, b.note]
            for b in rep.blocks]
    counts = report["summary"]
    summary = (f"verify: {cfg.name} (seed {cfg.seed}, {cfg.samples} samples)\n"
               + _table(rows, ["block", "status", "max", "tol", "count", "note"])
               + "totals: " + ", ".join(f"{k} {v}" for k, v in sorted(counts.items()))
               + f"\nexit status {rep.exit_status}\n")
    return rep.exit_status, report, summary


def cmd_indicatrix(cfg: config.RunConfig, out: Path) -> tuple[int, dict, str]:
    """Mesh files for every indicatrix branch and the geometric checks."""
    meshes, rep = indicatrix.analyze(cfg.spec, cfg.x, cfg.level, cfg.count)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for branch, mesh in meshes.items():
        if len(mesh) == 0:
            continue
        fmt = "obj" if mesh.faces is not None else "csv"
        path = indicatrix.export_mesh(mesh, out / f"{branch}.{fmt}")
        files[branch] = path.name
    status = EXIT_FAIL if any(c["status"] == "fail" for c in rep["checks"]) else EXIT_OK
    report = {"command": "indicatrix", "config": _config_record(cfg), **rep, "files": files,
              "exit_status": status}
    rows = [[c["name"], c["status"].upper(), _fmt(c["max"]), _fmt(c["tol"]), c["note"]]
            for c in rep["checks"]]
    summary = (f"indicatrix: {cfg.name} ({rep['family']}, n={rep['dim']})\n"
               + _table(rows, ["check", "status", "max", "tol", "note"])
               + "files: " + ", ".join(f"{k}={v}" for k, v in sorted(files.items())) + "\n")
    if "toroid" in rep:
        summary += f"spindle toroid B = {rep['toroid']['B']:.12g}\n"
    for side, fit in sorted(rep.get("ellipsoids", {}).items()):
        summary += (f"ellipsoid {side}: fit residual {fit['residual']:.3e}, "
                    f"center error {fit['center_error']:.3e}\n")
    return status, report, summary


def cmd_probe_slit(cfg: config.RunConfig) -> tuple[int, dict, str]:
    """Positive-definiteness scan with adaptive refinement toward the slit."""
    if not cfg.spec.family.is_bipartite:
        raise ConfigError("probe-slit needs a bipartite family (aspace, bspace or bipartite)",
                          field="norm.family")
    rep = diagnostics.scan_positive_definiteness(cfg.spec, cfg.x, samples=cfg.samples,
                                                 seed=cfg.seed, jobs=cfg.jobs)
    status = EXIT_FAIL if rep.consistent is False else EXIT_OK
    body = rep.to_dict()
    report = {"command": "probe-slit", "config": _config_record(cfg), **body,
              "asserted": rep.asserted, "exit_status": status}
    expected = rep.expected or "open (evidence only)"
    summary = (f"probe-slit: {cfg.name}\n"
               f"evaluated {body['evaluated']} directions, skipped {body['skipped_near_slit']} "
               f"near the slit\nmin normalised eigenvalue of g: {_fmt(body['eig_min_g'])}\n"
               f"verdict: {rep.verdict}; expected: {expected}\n")
    if rep.witness:
        summary += f"witness y = {rep.witness['y']}\n"
    return status, report, summary


# ---------------------------------------------------------------------------
# argument handling

def _vector(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="almost-finsler", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML run configuration")
    common.add_argument("--seed", type=int, help="override sampling.seed")
    common.add_argument("--samples", type=int, help="override sampling.samples")
    common.add_argument("--delta-min", type=float, help="override norm.delta_min")
    common.add_argument("--jobs", type=int, help="worker threads (reports do not depend on it)")
    common.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/<name> "
                                      f"or ./{DEFAULT_OUT}/<name>)")
    sub = parser.add_subparsers(dest="command", required=True)
    t = sub.add_parser("tensors", parents=[common], help="tensors and identity residuals at points")
    t.add_argument("--y", type=_vector, action="append", help="fiber vector, e.g. 1,0,0 (repeatable)")
    t.add_argument("--x", type=_vector, help="chart point")
    sub.add_parser("verify", parents=[common], help="run the invariant suite")
    ind = sub.add_parser("indicatrix", parents=[common], help="indicatrix meshes and checks")
    ind.add_argument("--level", type=int, help="icosphere subdivision level (n = 3)")
    ind.add_argument("--count", type=int, help="direction count (n = 2 or n > 3)")
    sub.add_parser("probe-slit", parents=[common], help="positive-definiteness scan")
    return parser


def _apply_overrides(cfg: config.RunConfig, args) -> config.RunConfig:
    changes = {}
    for key in ("seed", "samples", "jobs"):
        value = getattr(args, key, None)
        if value is not None:
            changes[key] = value
    if getattr(args, "x", None) is not None:
        changes["x"] = args.x
    for key in ("level", "count"):
        if getattr(args, key, None) is not None:
            changes[key] = getattr(args, key)
    if args.delta_min is not None:
        s = cfg.spec
        try:
            changes["spec"] = type(s)(s.family, s.dim, s.metric, s.field, s.sign, args.delta_min,
                                      s.eig_margin)
        except FinslerError as exc:
            raise ConfigError(str(exc), field="--delta-min") from exc
    if changes.get("samples", 1) < 1 or changes.get("jobs", 1) < 1:
        raise ConfigError("--samples and --jobs must be positive", field="command line")
    return cfg.replace(**changes) if changes else cfg


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(config.load(args.config), args)
        out = resolve_out(args.out, cfg)
        if args.command == "tensors":
            status, report, summary = cmd_tensors(cfg, args.y)
            stem = "tensors"
        elif args.command == "verify":
            status, report, summary = cmd_verify(cfg)
            stem = "report"
        elif args.command == "indicatrix":
            status, report, summary = cmd_indicatrix(cfg, out)
            stem = "indicatrix"
        else:
            status, report, summary = cmd_probe_slit(cfg)
            stem = "probe"
    except FinslerError as exc:
        err = {"error": {"type": type(exc).__name__, "message": str(exc),
                         "field": getattr(exc, "field", None)}, "exit_status": EXIT_USAGE}
        sys.stderr.write(f"error: {exc}\n")
        if args.out:
            _write(Path(args.out), "error", err, f"error: {exc}\n")
        return EXIT_USAGE
    _write(out, stem, report, summary)
    sys.stdout.write(summary)
    sys.stdout.write(f"wrote {out / (stem + '.json')}\n")
    return status


if __name__ == "__main__":
    sys.exit(main())
