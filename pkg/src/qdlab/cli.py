"""Command-line front end: qdlab {solve,extract,check,schwarz,gamma,degree,spherebal,verify}."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from . import criteria, degree, schwarzgeom, sphbal, surface
from .balayage import (ConvergenceError, MeasureSpec, PotentialSolution, SolverConfig, StructuralError,
                       SupportError, extract_domain, residual_report, solve_partial_balayage)
from .fieldcore import FieldCorruptionError, FieldFormatError, Grid, read_field, read_header, write_field

log = logging.getLogger("qdlab")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK, EXIT_SCHWARZ, EXIT_DEGREE, EXIT_SUPPORT = 0, 1, 2, 3, 4, 5, 6, 7

_vec = {"type": "array", "items": {"type": "number"}, "minItems": 1, "maxItems": 3}
CONFIG_SCHEMA = {
    "type": "object",
    "required": ["n"],
    "additionalProperties": False,
    "properties": {
        "n": {"enum": [2, 3]},
        "grid": {
            "type": "object",
            "required": ["lo", "hi", "h"],
            "additionalProperties": False,
            "properties": {"lo": _vec, "hi": _vec, "h": {"type": "number", "exclusiveMinimum": 0}},
        },
        "measure": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "analytic": {"enum": ["ellipse_focal", "uniform_disk"]},
                "params": {"type": "object", "additionalProperties": {"type": "number"}},
                "points": {"type": "array", "items": {
                    "type": "object", "required": ["at", "mass"], "additionalProperties": False,
                    "properties": {"at": _vec, "mass": {"type": "number", "minimum": 0}}}},
                "density": {"type": "object", "required": ["axes", "samples"], "additionalProperties": False,
                            "properties": {"axes": {"type": "array", "items": _vec | {"maxItems": 100000}},
                                           "samples": {"type": "array"}}},
                "zero": {"type": "boolean"},
            },
            "oneOf": [{"required": ["analytic"]}, {"required": ["points"]}, {"required": ["density"]},
                      {"required": ["zero"]}],
        },
        "shape": {
            "type": "object",
            "required": ["name"],
            "additionalProperties": False,
            "properties": {"name": {"enum": ["hemisphere", "ellipse_arch", "tall_cap"]},
                           "params": {"type": "object", "additionalProperties": {"type": "number"}}},
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "number"} for k in
                           ("omega", "tol", "max_iter", "margin", "grow_factor", "max_grows", "coarse_levels",
                            "check_every")},
        },
        "origin": _vec | {"minItems": 1, "maxItems": 2},
        "seed": {"type": "integer", "minimum": 0},
        "checks": {"type": "object", "additionalProperties": False,
                   "properties": {"samples": {"type": "integer", "minimum": 8}}},
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"criteria": {"type": ["number", "null"]},
                           "schwarz_band": {"type": "number", "exclusiveMinimum": 0},
                           "schwarz_bar": {"type": ["number", "null"]},
                           "gamma_residual": {"type": "number", "exclusiveMinimum": 0}},
        },
        "degree": {"type": "object", "additionalProperties": False,
                   "properties": {"t": {"type": "array", "items": {"type": "number"}}}},
        "sphere": {
            "type": "object",
            "required": ["R"],
            "additionalProperties": False,
            "properties": {"center": _vec, "R": {"type": "number", "exclusiveMinimum": 0},
                           "n_theta": {"type": "integer", "minimum": 2},
                           "n_phi": {"type": "integer", "minimum": 4}},
        },
    },
}


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


# -- configuration -----------------------------------------------------------------


def load_config(path, tol: float | None = None) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"cannot read config {path}: {exc.strerror}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise CliError(EXIT_CONFIG, f"{path}: config.{where}: {exc.message}") from exc
    n = cfg["n"]
    for key in ("lo", "hi"):
        if "grid" in cfg and len(cfg["grid"][key]) != n:
            raise CliError(EXIT_CONFIG, f"{path}: config.grid.{key}: expected {n} entries")
    if "origin" in cfg and len(cfg["origin"]) != n - 1:
        raise CliError(EXIT_CONFIG, f"{path}: config.origin: expected {n - 1} entries")
    if tol is not None:
        cfg = {**cfg, "solver": {**cfg.get("solver", {}), "tol": tol}}
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]


def build_measure(cfg: dict) -> MeasureSpec:
    n = cfg["n"]
    m = cfg.get("measure")
    if m is None:
        raise CliError(EXIT_CONFIG, "config.measure: required for this command")
    if m.get("zero"):
        return MeasureSpec.zero(n)
    if "points" in m:
        try:
            return MeasureSpec.point_masses([(p["at"], p["mass"]) for p in m["points"]], n=n)
        except ValueError as exc:
            raise CliError(EXIT_CONFIG, f"config.measure.points: {exc}") from exc
    if "density" in m:
        d = m["density"]
        try:
            return MeasureSpec.from_samples([np.array(a) for a in d["axes"]], np.array(d["samples"], dtype=float))
        except ValueError as exc:
            raise CliError(EXIT_CONFIG, f"config.measure.density: {exc}") from exc
    p = m.get("params", {})
    if m["analytic"] == "ellipse_focal":
        if n != 2:
            raise CliError(EXIT_CONFIG, "config.measure.analytic: ellipse_focal needs n = 2")
        return MeasureSpec.ellipse_focal(**p)
    return MeasureSpec.uniform_disk(n=n, **p)


def build_grid(cfg: dict) -> Grid:
    if "grid" not in cfg:
        raise CliError(EXIT_CONFIG, "config.grid: required for this command")
    g = cfg["grid"]
    return Grid.box(g["lo"], g["hi"], g["h"])


def build_shape(cfg: dict):
    s = cfg["shape"]
    p = dict(s.get("params", {}))
    m = cfg["n"] - 1
    return getattr(surface, s["name"])(m=m, **p)


def _solver_config(cfg: dict) -> SolverConfig:
    kw = dict(cfg.get("solver", {}))
    for k in ("max_iter", "margin", "max_grows", "coarse_levels", "check_every"):
        if k in kw:
            kw[k] = int(kw[k])
    try:
        return SolverConfig(**kw)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"config.solver: {exc}") from exc


# -- output ------------------------------------------------------------------------


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, complex):
        return [x.real, x.imag]
    raise TypeError(f"not serializable: {type(x)}")


class Writer:
    def __init__(self, out: Path, chash: str, tolerances: dict | None = None):
        self.out = out
        self.hash = chash
        self.tolerances = tolerances or {}
        out.mkdir(parents=True, exist_ok=True)

    def json(self, name: str, payload: dict) -> Path:
        p = self.out / name
        head = {"config_hash": self.hash, "tolerances": self.tolerances}
        p.write_text(json.dumps({**head, **payload}, indent=2, sort_keys=True,
                                default=_jsonable) + "\n")
        return p

    def csv(self, name: str, text: str) -> Path:
        p = self.out / name
        p.write_text(f"# config_hash={self.hash}\n" + text)
        return p


def _solution_path(w: Writer) -> Path:
    return w.out / "u.qdf"


def load_solution(cfg: dict, w: Writer) -> PotentialSolution:
    path = _solution_path(w)
    if not path.exists():
        raise CliError(EXIT_CONFIG, f"missing solution artifact {path}; run `qdlab solve` first")
    try:
        head = read_header(path)
        u = read_field(path)
    except (FieldFormatError, FieldCorruptionError) as exc:
        raise CliError(EXIT_CONFIG, f"{path}: {exc}") from exc
    if head.get("config_hash") != w.hash:
        raise CliError(EXIT_CONFIG, f"{path} was produced by config {head.get('config_hash')}, not {w.hash}")
    measure = build_measure(cfg)
    diag = head.get("diagnostics", {})
    eps = float(diag.get("eps_h", max(u.grid.h) ** 2))
    mask = u.values > eps
    if not measure.is_zero:
        mask |= measure.layer_source(u.grid) > 0
    return PotentialSolution(u, measure, mask, eps, diag)


def _graph_csv(graph) -> str:
    m = graph.m
    rows = [",".join([f"x{i + 1}" for i in range(m)] + ["g", "f"])]
    X = graph.coords()[graph.mask]
    for x, g, f in zip(X, graph.g[graph.mask], graph.f[graph.mask]):
        rows.append(",".join(repr(float(v)) for v in (*x, g, f)))
    return "\n".join(rows) + "\n"


# -- commands ----------------------------------------------------------------------


def cmd_solve(cfg, w: Writer, args) -> int:
    measure = build_measure(cfg)
    grid = build_grid(cfg)
    try:
        sol = solve_partial_balayage(measure, grid, _solver_config(cfg))
    except ConvergenceError as exc:
        w.json("solve.json", {"status": "not converged", "reason": str(exc)})
        raise CliError(EXIT_SOLVER, f"solver did not converge: {exc}") from exc
    except SupportError as exc:
        raise CliError(EXIT_CONFIG, f"config.grid: {exc}") from exc
    diag = {k: v for k, v in sol.diagnostics.items()}
    diag["eps_h"] = sol.eps_h
    write_field(sol.u, _solution_path(w), extra={"config_hash": w.hash,
                                                 "diagnostics": json.loads(json.dumps(diag, default=_jsonable))})
    rep = residual_report(sol) if not measure.is_zero else {}
    w.json("solve.json", {"status": "converged", "diagnostics": diag, "residuals": rep,
                          "empty": not bool(sol.omega_mask.any())})
    return EXIT_OK


def cmd_extract(cfg, w: Writer, args) -> int:
    sol = load_solution(cfg, w)
    try:
        graph = extract_domain(sol)
    except StructuralError as exc:
        raise CliError(EXIT_SOLVER, f"structural check failed: {exc}") from exc
    w.csv("graph.csv", _graph_csv(graph))
    w.json("extract.json", {"connected": graph.connected, "empty": graph.is_empty,
                            "volume_upper": graph.volume_upper(), "residuals": residual_report(sol, graph)})
    return EXIT_OK


def cmd_check(cfg, w: Writer, args) -> int:
    tol = cfg.get("tolerances", {}).get("criteria")
    seed = cfg.get("seed", 0)
    k = cfg.get("checks", {}).get("samples", 256)
    if "shape" in cfg:
        shape = build_shape(cfg)
    else:
        sol = load_solution(cfg, w)
        shape = surface.GraphShape(extract_domain(sol))
    rep = criteria.equivalence_report(shape, seed=seed, n_samples=k, tol=tol)
    w.json("criteria.json", rep.to_dict())
    w.csv("criteria.csv", rep.to_csv())
    failing = [v.id for v in rep.verdicts if not v.passed]
    if failing:
        print("failing criteria: " + ", ".join(failing), file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def _origin(cfg):
    o = cfg.get("origin")
    return None if o is None else list(o) + [0.0]


def cmd_schwarz(cfg, w: Writer, args) -> int:
    sol = load_solution(cfg, w)
    graph = extract_domain(sol)
    state = schwarzgeom.build_schwarz_state(sol, _origin(cfg))
    tols = cfg.get("tolerances", {})
    band = tols.get("schwarz_band", 0.3)
    bar = tols.get("schwarz_bar") or 10 * state.h
    cr = schwarzgeom.cr_residual(state, band)
    tang = schwarzgeom.boundary_tangency_check(state, graph)
    tang = {k: v for k, v in tang.items() if k not in ("points", "xi")}
    hc = schwarzgeom.hessian_checks(sol, graph, state)
    out = {"band": band, "bar": bar, "cr": cr, "tangency": tang, "hessian": hc,
           "hessian_integrals": schwarzgeom.hessian_integrals(sol),
           "tube": schwarzgeom.tube_mass_check(sol, None, graph)}
    if state.n == 2:
        sf = degree.schwarz_function_2d(sol, state, graph, band=band)
        out["schwarz_function"] = {k: v for k, v in sf.items() if k != "S"}
    out["passed"] = cr["max"] <= bar
    w.json("schwarz.json", out)
    if not out["passed"]:
        print(f"Cauchy-Riemann residual {cr['max']:.3g} exceeds {bar:.3g}", file=sys.stderr)
        return EXIT_SCHWARZ
    return EXIT_OK


def cmd_gamma(cfg, w: Writer, args) -> int:
    sol = load_solution(cfg, w)
    graph = extract_domain(sol)
    state = schwarzgeom.build_schwarz_state(sol, _origin(cfg))
    res = cfg.get("tolerances", {}).get("gamma_residual", 1e-4)
    tr = schwarzgeom.trace_gamma(state, graph, residual_tol=res, seed=cfg.get("seed", 0))
    payload = tr.to_dict()
    payload["extras"] = tr.extras
    if state.n == 2 and not tr.is_empty:
        payload["nearest_point"] = degree.nearest_point_check_2d(state, graph, tr)
    w.json("gamma.json", payload)
    w.csv("gamma.csv", tr.to_csv())
    return EXIT_OK


def cmd_degree(cfg, w: Writer, args) -> int:
    sol = load_solution(cfg, w)
    graph = extract_domain(sol)
    state = schwarzgeom.build_schwarz_state(sol, _origin(cfg))
    ts = cfg.get("degree", {}).get("t")
    try:
        res = degree.degree_scan(state, graph, ts)
    except (degree.DegreeError, ValueError) as exc:
        w.json("degree.json", {"status": "inconclusive", "reason": str(exc)})
        raise CliError(EXIT_DEGREE, f"degree inconclusive: {exc}") from exc
    w.json("degree.json", res.to_dict())
    verts, faces = degree.build_boundary_mesh(state, graph).to_csv()
    w.csv("boundary_vertices.csv", verts)
    w.csv("boundary_faces.csv", faces)
    if not res.agree or any(r > 0.1 for r in res.residuals):
        return EXIT_DEGREE
    return EXIT_OK


def cmd_spherebal(cfg, w: Writer, args) -> int:
    measure = build_measure(cfg)
    sp = cfg.get("sphere")
    if sp is None:
        raise CliError(EXIT_CONFIG, "config.sphere: required for spherebal")
    n = cfg["n"]
    a = sp.get("center", [0.0] * (n - 1))
    try:
        dens = sphbal.poisson_balayage_density(measure, a, sp["R"], sp.get("n_theta", 64), sp.get("n_phi", 128))
        out = {"total": dens.total(), "mass": float(np.sum(sphbal.measure_quadrature(measure)[1])),
               "beta_min": float(dens.beta.min()), "beta_max": float(dens.beta.max())}
        if not measure.is_zero:
            out["beta_convexity"] = sphbal.beta_convexity(measure, a, sp["R"], seed=cfg.get("seed", 0))
            out["hemisphere_convexity"] = sphbal.hemisphere_potential_convexity(measure, a, sp["R"],
                                                                                seed=cfg.get("seed", 0))
    except SupportError as exc:
        raise CliError(EXIT_SUPPORT, f"balayage support violation: {exc}") from exc
    w.json("spherebal.json", out)
    w.csv("spherebal.csv", dens.to_csv())
    return EXIT_OK


def _file_hash(p: Path) -> str | None:
    if p.suffix == ".json":
        try:
            return json.loads(p.read_text()).get("config_hash")
        except (json.JSONDecodeError, AttributeError):
            return None
    if p.suffix == ".csv":
        first = p.read_text().split("\n", 1)[0]
        return first.split("=", 1)[1] if first.startswith("# config_hash=") else None
    if p.suffix == ".qdf":
        try:
            return read_header(p).get("config_hash")
        except (FieldFormatError, FieldCorruptionError):
            return None
    return None


def cmd_verify(cfg, w: Writer, args) -> int:
    files = sorted(p for p in w.out.iterdir() if p.suffix in (".json", ".csv", ".qdf"))
    bad = []
    for p in files:
        h = _file_hash(p)
        if h != w.hash:
            bad.append(f"{p.name}: {h}")
    if bad:
        print("config hash mismatch:\n  " + "\n  ".join(bad), file=sys.stderr)
        return EXIT_FAIL
    print(f"{len(files)} files carry config hash {w.hash}")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "extract": cmd_extract,
    "check": cmd_check,
    "schwarz": cmd_schwarz,
    "gamma": cmd_gamma,
    "degree": cmd_degree,
    "spherebal": cmd_spherebal,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qdlab", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument("--out", default=None, help="output directory (default: $QDLAB_OUT/<config hash>)")
        p.add_argument("--threads", type=int, default=None, help="BLAS threads (default: all cores)")
        p.add_argument("--tol", type=float, default=None, help="override the solver tolerance")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, args.tol)
        chash = config_hash(cfg)
        out = Path(args.out) if args.out else Path(os.environ.get("QDLAB_OUT", "qdlab_out")) / chash
        tols = {"solver": cfg.get("solver", {}).get("tol", SolverConfig().tol), **cfg.get("tolerances", {})}
        w = Writer(out, chash, tols)
        threads = args.threads or os.cpu_count() or 1
        with threadpool_limits(limits=threads):
            code = COMMANDS[args.command](cfg, w, args)
    except CliError as exc:
        print(f"qdlab: {exc}", file=sys.stderr)
        return exc.code
    return code


if __name__ == "__main__":
    sys.exit(main())
