"""Batch front end: mesh generation, eigen/semigroup/parabolic runs, the
matrix-semigroup oracle, and the verification suite.

All subcommands that take ``--config`` read a strict JSON file (unknown
keys are rejected, paths resolve relative to the config file) and write
deterministic outputs into the configured output directory: identical
config and seed reproduce identical bytes.
"""

from __future__ import annotations

import argparse
import json
import struct
import sys
from pathlib import Path

import numpy as np

from .assembly import AssemblyError, assemble, coefficients_from_dict
from .expressions import evaluate_field
from .lattice import MetzlerGenerator, is_irreducible, perron_report, \
    positivity_improving_equiv
from .mesh import MeshError, generate_structured, load_mesh, quality, \
    save_mesh
from .parabolic import BoundaryData, make_test_bank, solve_mild, \
    strong_positivity_check, very_weak_residual
from .semigroup import EvolutionConfig, MassKind, Scheme, evolve, kernel, \
    kernel_positivity_report
from .spectral import REGION_FOR_MODE, certify_positivity, principal_eig, \
    spectral_gap
from .svgplot import emit_heatmap, render_strip
from .verification import Problem, run_suite

KERNEL_MAGIC = b"KTMAT001"


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# config plumbing

def _check_keys(data: dict, allowed, context: str):
    unknown = set(data) - set(allowed)
    if unknown:
        raise CliError(f"{context}: unknown key(s) {sorted(unknown)}")


def _load_config(path: str) -> tuple[dict, Path]:
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise CliError(f"config {path}: top level must be an object")
    return data, p.parent


def _resolve_mesh(spec, base: Path):
    if isinstance(spec, str):
        spec = {"path": spec}
    if not isinstance(spec, dict):
        raise CliError("mesh: expected an object or a path string")
    if "path" in spec:
        _check_keys(spec, {"path"}, "mesh")
        return load_mesh((base / spec["path"]).read_text(encoding="utf-8"))
    _check_keys(spec, {"shape", "n", "tags", "width", "height"}, "mesh")
    try:
        return generate_structured(
            spec.get("shape", "unit_square"), int(spec.get("n", 8)),
            spec.get("tags", "flux"), width=float(spec.get("width", 1.0)),
            height=float(spec.get("height", 1.0)))
    except MeshError as exc:
        raise CliError(f"mesh: {exc}") from None


def _resolve_coefficients(spec, base: Path, mesh):
    if isinstance(spec, str):
        spec = json.loads((base / spec).read_text(encoding="utf-8"))
    if not isinstance(spec, dict):
        raise CliError("coefficients: expected an object or a path string")
    try:
        return coefficients_from_dict(spec, mesh)
    except (AssemblyError, ValueError) as exc:
        raise CliError(f"coefficients: {exc}") from None


def _resolve_evolution(spec, mesh) -> EvolutionConfig:
    spec = dict(spec or {})
    _check_keys(spec, {"scheme", "dt", "t_end", "mass"}, "evolution")
    dt = spec.get("dt")
    if dt is None:
        dt = mesh.h_max ** 2 / 4.0
    t_end = spec.get("t_end")
    if t_end is None:
        t_end = 80 * dt
    return EvolutionConfig(scheme=Scheme(spec.get("scheme", "implicit_euler")),
                           dt=float(dt), t_end=float(t_end),
                           mass=MassKind(spec.get("mass", "lumped")))


def _out_dir(cfg: dict, base: Path) -> Path:
    out = base / cfg.get("output_dir", ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _write_json(path: Path, obj) -> None:
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"
    path.write_text(text, encoding="utf-8", newline="\n")


def _write_trajectory_csv(path: Path, times, fields) -> None:
    n = fields.shape[1]
    lines = ["t," + ",".join(f"v{i}" for i in range(n))]
    for t, row in zip(times, fields):
        lines.append(",".join([repr(float(t))] +
                              [repr(float(v)) for v in row]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


# ---------------------------------------------------------------------------
# subcommands

def _cmd_mesh(args) -> int:
    tags = args.tags
    if "=" in tags:
        rule = {}
        for part in tags.split(","):
            seg, _, tag = part.partition("=")
            rule[seg.strip()] = tag.strip()
        tags = rule
    mesh = generate_structured(args.shape, args.n, tags,
                               width=args.width, height=args.height)
    Path(args.out).write_text(save_mesh(mesh), encoding="utf-8",
                              newline="\n")
    q = quality(mesh)
    print(f"wrote {args.out}: {mesh.n_vertices} vertices, "
          f"{mesh.n_triangles} triangles, "
          f"{len(mesh.boundary_edges)} boundary edges")
    print(f"quality: angles [{q.min_angle:.2f}, {q.max_angle:.2f}] deg, "
          f"nonobtuse={q.is_nonobtuse}, h_max={q.h_max:.6g}")
    return 0


_EIG_KEYS = {"mesh", "coefficients", "solver", "seed", "output_dir",
             "emit_csv", "emit_svg", "gap_count"}


def _cmd_eig(args) -> int:
    cfg, base = _load_config(args.config)
    _check_keys(cfg, _EIG_KEYS, "config")
    mesh = _resolve_mesh(cfg.get("mesh", {}), base)
    coeffs, mode = _resolve_coefficients(cfg.get("coefficients", {}), base,
                                         mesh)
    solver = dict(cfg.get("solver", {}))
    _check_keys(solver, {"tol"}, "solver")
    tol = float(solver.get("tol", 1e-10))
    out = _out_dir(cfg, base)

    op = assemble(mesh, coeffs, mode, corkscrew_checked=True)
    report = principal_eig(op, tol=tol)
    gaps = spectral_gap(op, k=min(int(cfg.get("gap_count", 2)), op.n_dof),
                        tol=tol)
    payload = {
        "mode": mode.value,
        "n_dof": op.n_dof,
        "lambda1": complex(report.lambda1),
        "residual": report.residual,
        "gap": report.gap,
        "multiplicity_flag": report.multiplicity_flag,
        "eigenvalues": [complex(v) for v in gaps.values],
    }
    full = op.expand(report.vector.real if np.iscomplexobj(report.vector)
                     else report.vector)
    if mode in REGION_FOR_MODE and not np.iscomplexobj(report.vector):
        cert = certify_positivity(report, op)
        payload["positivity"] = {
            "region": cert.region.value, "min_value": cert.min_value,
            "witness_node": cert.witness_node, "passed": cert.passed}
    _write_json(out / "eig_report.json", payload)
    if cfg.get("emit_csv", True):
        lines = ["vertex,x,y,value"]
        for i, ((x, y), v) in enumerate(zip(mesh.vertices, full)):
            lines.append(f"{i},{float(x)!r},{float(y)!r},{float(v)!r}")
        (out / "eigenvector.csv").write_text("\n".join(lines) + "\n",
                                             encoding="utf-8", newline="\n")
    if cfg.get("emit_svg", True):
        emit_heatmap(full, mesh, out / "eigenvector.svg")
    print(f"lambda1 = {report.lambda1:.10g} (residual {report.residual:.2e},"
          f" gap {report.gap:.6g})")
    return 0


_EVOLVE_KEYS = {"mesh", "coefficients", "evolution", "u0", "seed",
                "output_dir"}


def _cmd_evolve(args) -> int:
    cfg, base = _load_config(args.config)
    _check_keys(cfg, _EVOLVE_KEYS, "config")
    mesh = _resolve_mesh(cfg.get("mesh", {}), base)
    coeffs, mode = _resolve_coefficients(cfg.get("coefficients", {}), base,
                                         mesh)
    ecfg = _resolve_evolution(cfg.get("evolution"), mesh)
    out = _out_dir(cfg, base)

    op = assemble(mesh, coeffs, mode, corkscrew_checked=True)
    expr = cfg.get("u0", "1")
    u0_full = evaluate_field(expr, mesh.vertices[:, 0], mesh.vertices[:, 1])
    traj = evolve(op, op.restrict(u0_full), ecfg)
    fields = np.vstack([op.expand(s) for s in traj.states.real])
    _write_trajectory_csv(out / "trajectory.csv", traj.times, fields)
    emit_heatmap(fields[-1], mesh, out / "final_state.svg")
    print(f"evolved {len(traj.times) - 1} steps to t = {traj.times[-1]:.6g}; "
          f"final range [{fields[-1].min():.6g}, {fields[-1].max():.6g}]")
    return 0


_KERNEL_KEYS = {"mesh", "coefficients", "evolution", "seed", "output_dir"}


def _cmd_kernel(args) -> int:
    cfg, base = _load_config(args.config)
    _check_keys(cfg, _KERNEL_KEYS, "config")
    mesh = _resolve_mesh(cfg.get("mesh", {}), base)
    coeffs, mode = _resolve_coefficients(cfg.get("coefficients", {}), base,
                                         mesh)
    ecfg = _resolve_evolution(cfg.get("evolution"), mesh)
    t = args.t if args.t is not None else ecfg.t_end
    out = _out_dir(cfg, base)

    op = assemble(mesh, coeffs, mode, corkscrew_checked=True)
    K = kernel(op, t, ecfg)
    write_kernel_dump(out / "kernel.bin", K)
    rep = kernel_positivity_report(K)
    _write_json(out / "kernel_report.json", {
        "t": K.t, "n": K.entries.shape[0], "verdict": rep.verdict.value,
        "min_entry": rep.min_entry, "witness": list(rep.witness),
        "boundary_rows_zero": rep.boundary_rows_zero})
    emit_heatmap(np.diag(K.entries).real.copy(), mesh,
                 out / "kernel_diagonal.svg")
    print(f"kernel at t = {K.t:.6g}: min entry {rep.min_entry:.6g}, "
          f"verdict {rep.verdict.value}")
    return 0


def write_kernel_dump(path: Path, K) -> None:
    """Binary kernel dump: 8-byte magic KTMAT001, int64 n, float64 t, then
    n*n row-major little-endian float64 entries."""
    n = K.entries.shape[0]
    with open(path, "wb") as fh:
        fh.write(KERNEL_MAGIC)
        fh.write(struct.pack("<q", n))
        fh.write(struct.pack("<d", float(K.t)))
        fh.write(np.ascontiguousarray(K.entries.real,
                                      dtype="<f8").tobytes())


def read_kernel_dump(path) -> tuple[float, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:8] != KERNEL_MAGIC:
        raise CliError(f"{path}: not a kernel dump (bad magic)")
    n = struct.unpack("<q", raw[8:16])[0]
    t = struct.unpack("<d", raw[16:24])[0]
    entries = np.frombuffer(raw[24:], dtype="<f8").reshape(n, n).copy()
    return t, entries


_PARABOLIC_KEYS = {"mesh", "coefficients", "evolution", "u0", "phi",
                   "test_bank_size", "seed", "output_dir"}


def _resolve_phi(spec, mesh, t_end) -> BoundaryData:
    if spec is None:
        return BoundaryData.constant(mesh, 0.0, t_end)
    if isinstance(spec, (int, float)):
        return BoundaryData.constant(mesh, float(spec), t_end)
    _check_keys(spec, {"constant", "samples"}, "phi")
    if "constant" in spec:
        return BoundaryData.constant(mesh, float(spec["constant"]), t_end)
    bv = mesh.boundary_vertices()
    xy = mesh.vertices[bv]
    times, rows = [], []
    for sample in spec.get("samples", []):
        _check_keys(sample, {"t", "expr"}, "phi sample")
        times.append(float(sample["t"]))
        rows.append(evaluate_field(str(sample["expr"]), xy[:, 0], xy[:, 1]))
    if not times:
        raise CliError("phi: need 'constant' or nonempty 'samples'")
    return BoundaryData(times=np.array(times), values=np.array(rows),
                        boundary_vertices=bv)


def _cmd_parabolic(args) -> int:
    cfg, base = _load_config(args.config)
    _check_keys(cfg, _PARABOLIC_KEYS, "config")
    mesh = _resolve_mesh(cfg.get("mesh", {}), base)
    coeffs, _mode = _resolve_coefficients(cfg.get("coefficients", {}), base,
                                          mesh)
    ecfg = _resolve_evolution(cfg.get("evolution"), mesh)
    seed = int(cfg.get("seed", 0))
    out = _out_dir(cfg, base)

    u0 = evaluate_field(str(cfg.get("u0", "0")), mesh.vertices[:, 0],
                        mesh.vertices[:, 1])
    phi = _resolve_phi(cfg.get("phi"), mesh, ecfg.t_end)
    sol = solve_mild(mesh, coeffs, u0, phi, ecfg)

    _write_trajectory_csv(out / "trajectory.csv", sol.times, sol.fields)
    (out / "strip.svg").write_text(
        render_strip(sol.fields, sol.times, mesh), encoding="utf-8",
        newline="\n")

    positivity = strong_positivity_check(sol)
    bank = make_test_bank(mesh, sol.times,
                          size=int(cfg.get("test_bank_size", 20)), seed=seed)
    residual = very_weak_residual(sol, bank)
    _write_json(out / "verdict.json", {
        "strong_positivity": {
            "verdict": positivity.verdict.value,
            "threshold_step": positivity.threshold_step,
            "start_step": positivity.start_step,
            "first_violation": positivity.first_violation,
            "reason": positivity.reason,
        },
        "very_weak_residual": residual,
        "steps": len(sol.times) - 1,
    })
    print(f"parabolic run: {len(sol.times) - 1} steps, strong positivity "
          f"{positivity.verdict.value}, weak residual {residual:.3e}")
    return 0


def _cmd_oracle(args) -> int:
    data = json.loads(Path(args.matrix).read_text(encoding="utf-8"))
    if isinstance(data, dict):
        _check_keys(data, {"Q"}, "oracle input")
        data = data["Q"]
    g = MetzlerGenerator(np.asarray(data, dtype=float))
    irr = is_irreducible(g)
    improving = positivity_improving_equiv(g)
    rep = perron_report(g)
    verdict = {
        "n": g.n,
        "irreducible": irr,
        "positivity_improving": improving,
        "perron": {
            "lambda1": rep.lambda1,
            "simple": rep.simple,
            "gap": rep.gap,
            "vector": [float(v) for v in rep.vector],
            "strictly_positive": bool(np.all(rep.vector > 0)),
        },
    }
    text = json.dumps(_jsonable(verdict), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)
    return 0


_VERIFY_KEYS = {"mesh", "coefficients", "solver", "evolution",
                "corkscrew_delta", "oracle", "seed", "output_dir"}


def _cmd_verify(args) -> int:
    cfg, base = _load_config(args.config)
    _check_keys(cfg, _VERIFY_KEYS, "config")
    mesh = _resolve_mesh(cfg.get("mesh", {}), base)
    coeffs, mode = _resolve_coefficients(cfg.get("coefficients", {}), base,
                                         mesh)
    solver = dict(cfg.get("solver", {}))
    _check_keys(solver, {"tol"}, "solver")
    evolution = None
    if "evolution" in cfg:
        evolution = _resolve_evolution(cfg["evolution"], mesh)
    oracle_matrix = None
    expect_irr = None
    if "oracle" in cfg:
        ospec = dict(cfg["oracle"])
        _check_keys(ospec, {"matrix", "expect_irreducible"}, "oracle")
        oracle_matrix = np.asarray(ospec["matrix"], dtype=float)
        expect_irr = ospec.get("expect_irreducible")
    out = _out_dir(cfg, base)

    problem = Problem(
        mesh=mesh, coeffs=coeffs, mode=mode,
        solver_tol=float(solver.get("tol", 1e-10)),
        evolution=evolution,
        corkscrew_delta=float(cfg.get("corkscrew_delta", 0.1)),
        seed=int(cfg.get("seed", 0)),
        oracle_matrix=oracle_matrix, expect_irreducible=expect_irr)
    report = run_suite(problem, only=args.only)
    _write_json(out / "verification_report.json", report.to_jsonable())
    (out / "verification_report.txt").write_text(
        report.to_text(), encoding="utf-8", newline="\n")
    sys.stdout.write(report.to_text())
    return 1 if report.failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perronfem",
        description="positivity laboratory for elliptic operators, their "
                    "heat semigroups, and matrix semigroups")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="generate a structured mesh file")
    p.add_argument("--shape", default="unit_square",
                   choices=["unit_square", "rectangle", "l_shape"])
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--tags", default="N",
                   help="one tag (D/N) or segment list like "
                        "'bottom=D,right=N,top=N,left=N'")
    p.add_argument("--width", type=float, default=1.0)
    p.add_argument("--height", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_mesh)

    p = sub.add_parser("eig", help="principal eigenpair and certificates")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_eig)

    p = sub.add_parser("evolve", help="march the heat semigroup")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_evolve)

    p = sub.add_parser("kernel", help="extract the discrete heat kernel")
    p.add_argument("--config", required=True)
    p.add_argument("--t", type=float, default=None)
    p.set_defaults(func=_cmd_kernel)

    p = sub.add_parser("parabolic",
                       help="boundary-value parabolic run with verdicts")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_parabolic)

    p = sub.add_parser("oracle",
                       help="matrix-semigroup irreducibility verdicts")
    p.add_argument("--matrix", required=True,
                   help="JSON file with a dense generator matrix")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("verify", help="run the verification suite")
    p.add_argument("--config", required=True)
    p.add_argument("--only", default=None,
                   help="run a single registry label")
    p.set_defaults(func=_cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (MeshError, AssemblyError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
