"""Command-line driver: JSON experiment configs in, CSV/JSON reports out.

Exit codes: 0 success, 2 invalid config or input file, 3 solver did not
converge, 4 budget exceeded, 5 a verification invariant failed.
"""

from __future__ import annotations

import os
import sys

_threads = os.environ.get("PSEUDOHYP_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import hashlib
import json
import logging
import tempfile
from pathlib import Path

import jsonschema
import numpy as np

from .core import FormContext, Ideal, PseudoPoint
from .errors import BudgetExceeded, NonConvergence, PseudoHypError

log = logging.getLogger("pseudohyp")

EXIT_CONFIG, EXIT_NONCONV, EXIT_BUDGET, EXIT_VERIFY = 2, 3, 4, 5


class ConfigError(Exception):
    pass


# Schema --------------------------------------------------------------------------

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}

_boundary = {
    "type": "object", "additionalProperties": False, "required": ["kind"],
    "properties": {
        "kind": {"enum": ["constant", "curved", "samples"]},
        "amplitude": _num,
        "value": {"type": "array", "items": _num},
        "directions": {"type": "array", "items": {"type": "array", "items": _num}},
        "values": {"type": "array", "items": {"type": "array", "items": _num}},
        "samples": _posint,
    },
}

_representation = {
    "type": "object", "additionalProperties": False,
    "properties": {
        "builtin": {"enum": ["genus2", "schottky", "cyclic"]},
        "file": {"type": "string"},
        "p": _posint,
        "q": {"type": "integer", "minimum": 0},
        "length": _pos,
        "bend": {
            "type": "object", "additionalProperties": False, "required": ["t"],
            "properties": {"t": _num, "curve": {"type": "string"},
                           "side": {"type": "array", "items": {"type": "integer"}}},
        },
    },
}

SCHEMA = {
    "type": "object", "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer"},
        "output": {"type": "string"},
        "solver": {
            "type": "object", "additionalProperties": False, "required": ["p", "q", "mesh_scale", "boundary"],
            "properties": {
                "p": {"type": "integer", "minimum": 2, "maximum": 3},
                "q": {"type": "integer", "minimum": 1, "maximum": 2},
                "mesh_scale": _pos,
                "boundary": _boundary,
                "step": _pos,
                "tol_residual": _pos,
                "max_iter": _posint,
                "damping": _pos,
                "method": {"enum": ["flow", "newton", "hybrid"]},
                "flow_warmup": {"type": "integer", "minimum": 0},
                "newton_max_iter": {"type": "integer", "minimum": 0},
            },
        },
        "verify": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "p": {"type": "integer", "minimum": 2, "maximum": 3},
                "q": {"type": "integer", "minimum": 1, "maximum": 2},
                "core_radius": _pos,
                "pairs": _posint,
                "distance_budget": _pos,
                "gradient_tol": _pos,
                "laplacian_constant": _pos,
                "residual_tol": _pos,
            },
        },
        "enumeration": {
            "type": "object", "additionalProperties": False, "required": ["representation"],
            "properties": {
                "representation": _representation,
                "max_len": {"type": "integer", "minimum": 0},
                "max_dist": _pos,
                "cap": _posint,
            },
        },
        "entropy": {
            "type": "object", "additionalProperties": False,
            "properties": {"n_grid": _posint, "distances": {"enum": ["pseudo", "intrinsic"]}, "R_max": _pos},
        },
        "tube": {
            "type": "object", "additionalProperties": False,
            "properties": {"t_samples": _posint, "n_samples": _posint, "mc_samples": _posint,
                           "batches": {"type": "integer", "minimum": 2}, "patch_radius": _pos,
                           "mesh": {"type": "string"}, "profile_points": _posint},
        },
        "domain": {
            "type": "object", "additionalProperties": False,
            "properties": {"samples": _posint, "candidate_radius": _pos, "tilt": {"type": "number", "minimum": 0}},
        },
    },
}


def load_config(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(k) for k in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    return data


def config_hash(cfg: dict) -> str:
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _need(cfg: dict, block: str) -> dict:
    if block not in cfg:
        raise ConfigError(f"config error at <root>: missing required block {block!r}")
    return cfg[block]


# Output --------------------------------------------------------------------------

def write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialise {type(v).__name__}")


class Outputs:
    """Writes files into the output directory, stamping JSON with hash and seed."""

    def __init__(self, cfg: dict, default_dir: str = "."):
        self.dir = Path(cfg.get("output", default_dir))
        self.hash = config_hash(cfg)
        self.seed = int(cfg.get("seed", 0))
        self.files: list[str] = []

    def text(self, name: str, text: str):
        write_atomic(self.dir / name, text)
        self.files.append(name)

    def json(self, name: str, obj: dict):
        obj = dict(obj)
        obj["config_hash"] = self.hash
        obj["seed"] = self.seed
        self.text(name, _dump(obj))

    def manifest(self, command: str):
        write_atomic(self.dir / "manifest.json",
                     _dump({"command": command, "config_hash": self.hash, "seed": self.seed,
                            "files": sorted(self.files)}))


# Mesh files ----------------------------------------------------------------------

def mesh_to_json(graph, extra: dict | None = None) -> dict:
    out = {
        "p": graph.ctx.p, "q": graph.ctx.q, "mesh_scale": graph.h,
        "vertices": [{"x": x.tolist(), "u": u.tolist()} for x, u in zip(graph.xs, graph.us)],
        "simplices": graph.simplices.tolist(),
        "rim": np.flatnonzero(graph.rim).tolist(),
    }
    out.update(extra or {})
    return out


def mesh_from_json(data: dict, validate: bool = True):
    from .graph import SpacelikeGraph
    try:
        ctx = FormContext(int(data["p"]), int(data["q"]))
        xs = np.array([v["x"] for v in data["vertices"]], dtype=float)
        us = np.array([v["u"] for v in data["vertices"]], dtype=float)
        S = np.array(data["simplices"], dtype=np.int64)
        rim = np.zeros(len(xs), dtype=bool)
        rim[np.asarray(data.get("rim", []), dtype=np.int64)] = True
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed mesh file: {exc}") from None
    return SpacelikeGraph(ctx, xs, us, S, data.get("mesh_scale"), rim, validate=validate)


def load_mesh(path: str, validate: bool = True):
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read mesh {path}: {exc}") from None
    return mesh_from_json(data, validate), data


# Builders --------------------------------------------------------------------------

def build_boundary(block: dict):
    from .solver import BoundaryData, curved_example
    ctx = FormContext(block["p"], block["q"])
    b = block["boundary"]
    try:
        if b["kind"] == "constant":
            y0 = np.array(b.get("value", [0.0] * ctx.q + [1.0]), dtype=float)
            return BoundaryData.constant(ctx, y0)
        if b["kind"] == "curved":
            if ctx.p != 2:
                raise ConfigError("config error at solver/boundary/kind: curved boundary needs p = 2")
            return curved_example(ctx, b.get("amplitude", 0.4), b.get("samples", 512))
        if "directions" not in b or "values" not in b:
            raise ConfigError("config error at solver/boundary: samples need directions and values")
        return BoundaryData(ctx, np.array(b["directions"]), np.array(b["values"]))
    except PseudoHypError as exc:
        raise ConfigError(f"config error at solver/boundary: {exc}") from None


def build_solver_config(block: dict):
    from .solver import SolverConfig
    keys = ("step", "tol_residual", "max_iter", "damping", "method", "flow_warmup", "newton_max_iter")
    return SolverConfig(**{k: block[k] for k in keys if k in block})


def build_representation(block: dict):
    from . import groups
    spec = block["representation"]
    if "file" in spec:
        try:
            rep = groups.Representation.from_json(json.loads(Path(spec["file"]).read_text()))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise ConfigError(f"config error at enumeration/representation/file: {exc}") from None
    elif spec.get("builtin") == "genus2":
        rep = groups.block_embed_rep(groups.load_genus2(), spec.get("q", 1))
    elif spec.get("builtin") == "schottky":
        rep = groups.schottky_example(spec.get("q", 1), spec.get("length", 3.0))
    elif spec.get("builtin") == "cyclic":
        rep = groups.cyclic_example(FormContext(spec.get("p", 2), spec.get("q", 1)), spec.get("length", 0.8))
    else:
        raise ConfigError("config error at enumeration/representation: give builtin or file")
    bend = spec.get("bend")
    if bend and bend["t"] != 0:
        curve = rep.parse_word(bend.get("curve", "a1 b1 A1 B1"))
        K = groups.bending_generator(rep, curve)
        rep = groups.bend(rep, curve, K, bend["t"], bend.get("side", [0, 1]))
    return rep


def build_table(cfg: dict):
    from .groups import enumerate_orbit
    block = _need(cfg, "enumeration")
    rep = build_representation(block)
    kw = {"max_len": block.get("max_len", 8)}
    if "max_dist" in block:
        kw["max_dist"] = block["max_dist"]
    if "cap" in block:
        kw["cap"] = block["cap"]
    return rep, enumerate_orbit(rep, **kw)


# Commands ---------------------------------------------------------------------------

def cmd_solve(args) -> int:
    from .graph import curvature_report
    from .solver import ConvergenceLog, solve_maximal
    cfg = load_config(args.config)
    block = _need(cfg, "solver")
    boundary = build_boundary(block)
    out = Outputs(cfg)
    logbook = ConvergenceLog()
    try:
        graph = solve_maximal(boundary, block["mesh_scale"], build_solver_config(block), logbook=logbook)
    except NonConvergence:
        out.text("convergence.csv", logbook.to_csv())
        out.manifest("solve")
        raise
    res = logbook.rows[-1][1]
    out.json("mesh.json", mesh_to_json(graph, {"residual": res}))
    out.text("convergence.csv", logbook.to_csv())
    out.text("curvature.csv", curvature_csv(graph))
    out.manifest("solve")
    print(f"converged: residual {res:.3e}, {graph.n} vertices")
    return 0


def curvature_csv(graph) -> str:
    from .graph import curvature_report
    rep = curvature_report(graph)
    lines = ["vertex,II_norm,ric_slack,H_norm"]
    lines += [f"{v},{a:.10e},{b:.10e},{c:.10e}"
              for v, a, b, c in zip(rep.vertex, rep.II_norm, rep.ric_slack, rep.H_norm)]
    return "\n".join(lines) + "\n"


def verify_graph(graph, opts: dict, seed: int = 0) -> dict:
    """Pass/fail per invariant with measured slacks."""
    from . import graph as G
    from .solver import max_principle_scan, normal_projection_slack, residual, scan_targets
    ctx = graph.ctx
    p, q = ctx.p, ctx.q
    core_r = opts.get("core_radius", 0.8)
    checks: dict = {}
    bad = np.flatnonzero(np.abs(np.linalg.norm(graph.us, axis=1) - 1.0) > 1e-10)
    checks["unit_values"] = {"pass": not len(bad), "bad_vertices": bad[:20].tolist()}
    if len(bad):
        return checks
    f = graph.forms
    mev = float(np.linalg.eigvalsh(f.g).min())
    checks["spacelike"] = {"pass": mev > 0, "min_eig_g": mev}
    res = residual(graph)
    checks["maximal"] = {"pass": res <= opts.get("residual_tol", 1e-3), "residual": res}
    rep = G.curvature_report(graph)
    ric = float(rep.ric_slack.min())
    IIs = float(rep.II_norm.max())
    checks["ishihara"] = {"pass": ric >= -1e-2 and IIs <= p * q + 1e-2, "min_ric_slack": ric, "sup_II": IIs}
    # distance sandwich
    rng = np.random.default_rng(seed)
    core = graph.core(core_r)
    n_pairs = opts.get("pairs", 200)
    budget = opts.get("distance_budget", 0.05)
    oracle = G.DistanceOracle(graph)
    src = rng.choice(core, size=min(n_pairs, len(core)), replace=False)
    dst = rng.choice(core, size=len(src))
    keep = src != dst
    src, dst = src[keep], dst[keep]
    D = oracle.from_sources(src)
    dM = D[np.arange(len(src)), dst]
    dH = np.arccosh(np.maximum(-ctx.form(graph.points[src], graph.points[dst]), 1.0))
    lower = float(np.min(dH - (1 - budget) * dM))
    upper = float(np.min(np.sqrt(p) * dM * (1 + budget) - dH))
    checks["distance_sandwich"] = {"pass": lower >= 0 and upper >= 0, "lower_slack": lower,
                                   "upper_slack": upper, "pairs": int(len(src))}
    # gradient window
    targets = scan_targets(graph, seed=seed, core_radius=core_r)
    mp = max_principle_scan(graph, targets, core_r)
    tol = opts.get("gradient_tol", 1e-3)
    checks["gradient_window"] = {"pass": 1 - tol <= mp.L <= np.sqrt(p) + 0.02 and mp.lemma_slack <= 1e-3,
                                 "L": mp.L, "lemma_slack": mp.lemma_slack}
    # Laplacian identity for ideal targets
    rows = np.flatnonzero(np.linalg.norm(graph.xs[graph.interior], axis=1) <= core_r)
    worst = 0.0
    for t in targets:
        if isinstance(t, Ideal):
            _, _, r = G.busemann_hessian_arr(graph, t, rows)
            worst = max(worst, float(np.nanmax(r)))
    C = opts.get("laplacian_constant", 4.0)
    checks["laplacian"] = {"pass": worst <= C * graph.h, "residual": worst, "bound": C * graph.h}
    nps = normal_projection_slack(graph, targets, core_r)
    checks["normal_projection"] = {"pass": nps >= -1e-6, "slack": nps}
    return checks


def cmd_verify(args) -> int:
    cfg = load_config(args.config) if args.config else {}
    opts = cfg.get("verify", {})
    graph, data = load_mesh(args.mesh, validate=False)
    pq = (graph.ctx.p, graph.ctx.q)
    want = None
    if "p" in opts and "q" in opts:
        want = (opts["p"], opts["q"])
    elif "solver" in cfg:
        want = (cfg["solver"]["p"], cfg["solver"]["q"])
    if want is not None and want != pq:
        raise ConfigError(f"mesh has (p, q) = {pq} but the config expects {want}")
    out = Outputs(cfg, default_dir=str(Path(args.mesh).parent))
    checks = verify_graph(graph, opts, int(cfg.get("seed", 0)))
    ok = all(c["pass"] for c in checks.values())
    report = {"mesh": Path(args.mesh).name, "p": pq[0], "q": pq[1], "pass": ok, "checks": checks,
              "mesh_config_hash": data.get("config_hash")}
    out.json(args.report_name, report)
    out.manifest("verify")
    for name, c in checks.items():
        print(f"{name}: {'pass' if c['pass'] else 'FAIL'}")
    if not checks["unit_values"]["pass"]:
        print(f"non-unit value at vertex {checks['unit_values']['bad_vertices'][0]}", file=sys.stderr)
    return 0 if ok else EXIT_VERIFY


def cmd_entropy(args) -> int:
    from .groups import entropy_estimate, fermi_intrinsic_distances
    cfg = load_config(args.config)
    rep, table = build_table(cfg)
    opts = cfg.get("entropy", {})
    kind = opts.get("distances", "pseudo")
    if kind == "intrinsic":
        table.intrinsic = fermi_intrinsic_distances(table)
    grid = None
    if "R_max" in opts:
        grid = np.linspace(0.0, opts["R_max"], 2 * opts.get("n_grid", 81) - 1)
    est = entropy_estimate(table, grid, kind, opts.get("n_grid", 81))
    out = Outputs(cfg)
    out.text("entropy.csv", est.to_csv())
    out.text("orbit.csv", table.to_csv())
    summary = est.summary()
    summary.update({"p": rep.ctx.p, "q": rep.ctx.q, "label": rep.label, "entries": len(table),
                    "complete_radius": table.complete_radius})
    out.json("entropy.json", summary)
    out.manifest("entropy")
    print(f"slope {est.slope:.4f} ± {est.stderr:.4f} on [{est.window[0]:.3f}, {est.window[1]:.3f}]")
    return 0


def _tube_graph(cfg: dict):
    opts = cfg.get("tube", {})
    if "mesh" in opts:
        graph, _ = load_mesh(opts["mesh"])
        return graph
    from .solver import solve_maximal
    block = _need(cfg, "solver")
    return solve_maximal(build_boundary(block), block["mesh_scale"], build_solver_config(block))


def _tube_config(cfg: dict):
    from .tube import TubeConfig
    opts = cfg.get("tube", {})
    keys = ("t_samples", "n_samples", "mc_samples", "batches")
    return TubeConfig(seed=int(cfg.get("seed", 0)), **{k: opts[k] for k in keys if k in opts})


def cmd_tube(args) -> int:
    from . import tube
    cfg = load_config(args.config)
    graph = _tube_graph(cfg)
    tc = _tube_config(cfg)
    opts = cfg.get("tube", {})
    patch = graph.core(opts.get("patch_radius", 0.5))
    out = Outputs(cfg)
    if (graph.ctx.p, graph.ctx.q) == (2, 1):
        report = tube.volume_report(graph, patch, tc).to_json()
    else:
        r, t0 = tube.tube_radii(graph)
        _, w = tube.area_elements(graph, patch)
        mu = tube.mu_constant(graph.ctx.p, graph.ctx.q, t0)
        vol = tube.tube_volume(graph, t0, tc, patch)
        report = {"area_M": float(w.sum()), "tube_volume": vol, "r": r, "t0": t0, "mu": mu,
                  "mu_check_slack": vol - mu * float(w.sum())}
    probe = tube.tube_injectivity_probe(graph, 1000, seed=int(cfg.get("seed", 0)))
    report["probe_failures"] = probe.failures
    out.json("volume.json", report)
    ts = np.linspace(0.0, report["t0"], opts.get("profile_points", 33))[1:]
    prof = tube.density_profile(graph, ts, tc, patch)
    out.text("density_profile.csv",
             "t,density_min,density_max\n" + "".join(f"{a:.10e},{b:.10e},{c:.10e}\n" for a, b, c in prof))
    out.manifest("tube")
    print(f"tube volume {report['tube_volume']:.6f} over area {report['area_M']:.6f}")
    return 0


def cmd_volume(args) -> int:
    from . import tube
    cfg = load_config(args.config)
    rep, table = build_table(cfg)
    tc = _tube_config(cfg)
    res = tube.pseudo_volume_mc(rep, table=table, config=tc)
    out = Outputs(cfg)
    report = {"pseudo_volume": res.value, "stderr": res.stderr, "accepted": res.accepted,
              "samples": res.samples, "edge_fraction": res.edge_fraction, "label": rep.label}
    out.json("pseudo_volume.json", report)
    out.manifest("volume")
    print(f"pseudo-volume {res.value:.4f} ± {res.stderr:.4f}")
    return 0


def cmd_spectrum(args) -> int:
    from .groups import length_spectrum, systole
    cfg = load_config(args.config)
    rep, table = build_table(cfg)
    spec = _one_per_inverse_pair(table, length_spectrum(table)[1:])
    out = Outputs(cfg)
    lines = ["word,length,lam_max,proximal"]
    lines += [f"{rep.format_word(e.word)},{e.length:.12g},{e.lam_max:.12g},{int(e.proximal)}" for e in spec]
    out.text("spectrum.csv", "\n".join(lines) + "\n")
    w, ell = systole(rep, table.max_len, table)
    out.json("spectrum.json", {"entries": len(spec), "systole": ell,
                               "systole_word": rep.format_word(w) if w is not None else None})
    out.manifest("spectrum")
    print(f"{len(spec)} entries, systole {ell:.6f}")
    return 0


def _one_per_inverse_pair(table, entries) -> list:
    """Drop γ^{-1} when γ is already listed (they share a translation length)."""
    ctx = table.rep.ctx
    seen: set = set()
    out = []
    for e, M in zip(entries, table.mats[1:]):
        key = np.rint(M * 1e8).astype(np.int64).tobytes()
        if key in seen:
            continue
        out.append(e)
        seen.add(np.rint(ctx.J @ M.T @ ctx.J * 1e8).astype(np.int64).tobytes())
    return out


def cmd_domain(args) -> int:
    from .groups import fundamental_domain_membership, hull_samples, tiling_check
    cfg = load_config(args.config)
    rep, table = build_table(cfg)
    opts = cfg.get("domain", {})
    rng = np.random.default_rng(int(cfg.get("seed", 0)))
    Rc = rep.domain_radius or 2.0
    X = hull_samples(rep.ctx, opts.get("samples", 1000), Rc, rng, opts.get("tilt", 0.0))
    tiling = tiling_check(table, X, opts.get("candidate_radius", 2 * Rc))
    mem = fundamental_domain_membership(PseudoPoint.origin(rep.ctx), rep, table=table)
    out = Outputs(cfg)
    report = {"tiling": dict(tiling.__dict__), "origin_member": mem.member,
              "origin_minimiser": rep.format_word(mem.word), "pass": tiling.unique == tiling.samples and mem.member}
    out.json("domain.json", report)
    out.manifest("domain")
    print(f"tiling: {tiling.unique}/{tiling.samples} unique; origin member: {mem.member}")
    return 0


# Entry point ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pseudohyp", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in (("solve", cmd_solve), ("entropy", cmd_entropy), ("tube", cmd_tube),
                     ("volume", cmd_volume), ("spectrum", cmd_spectrum), ("domain", cmd_domain)):
        sp = sub.add_parser(name)
        sp.add_argument("config")
        sp.set_defaults(func=fn)
    sp = sub.add_parser("verify")
    sp.add_argument("mesh")
    sp.add_argument("--config")
    sp.add_argument("--report-name", default="verify.json")
    sp.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergence as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONV
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except PseudoHypError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
