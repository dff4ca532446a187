"""Command-line entry point: ``oscstrip <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import corrector, forms, geometry, harness, oracle, solve
from .errors import OscStripError


def _profile(text: str) -> geometry.BoundaryProfile:
    """``kind:p1,p2,...``, e.g. ``cosine:1`` or ``smoothed_custom:2.5,-0.5``."""
    kind, _, params = text.partition(":")
    values = [float(v) for v in params.split(",") if v.strip()] or [1.0]
    return geometry.make_profile(kind, values)


def _dump(obj, out=None):
    text = json.dumps(obj, indent=2) + "\n"
    (out or sys.stdout).write(text)


def cmd_profile(args):
    prof = _profile(args.profile)
    t = np.linspace(0, 1, args.samples + 1)
    _dump(
        {
            "kind": prof.kind,
            "params": list(prof.params),
            "b_max": prof.b_max,
            "b_min": prof.b_min,
            "samples": [[float(x), float(y)] for x, y in zip(t, prof.sample(t))],
        }
    )


def _mesh_from_args(args):
    strip = geometry.StripSpec(d=args.d, epsilon=args.epsilon, eta=args.eta, L=args.L)
    return geometry.build_mesh(
        _profile(args.profile), strip, args.n_per_period, args.n_vertical, args.grading, cell_periods=args.cell_periods
    )


def cmd_mesh(args):
    mesh = _mesh_from_args(args)
    q = geometry.mesh_quality(mesh)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(geometry.export_mesh(mesh))
    _dump({"nodes": mesh.n_nodes, **q.__dict__})


def cmd_solve(args):
    mesh = _mesh_from_args(args)
    coeffs = forms.coefficient_preset(args.coeff)
    if args.bc == "dirichlet":
        bc = bc0 = forms.BoundaryConditionSpec.dirichlet()
    elif args.bc == "neumann":
        bc = bc0 = forms.BoundaryConditionSpec.neumann()
    else:
        bc = forms.BoundaryConditionSpec.robin(args.a)
        a0 = forms.effective_robin_coefficient(args.a, mesh.profile, args.eta / args.epsilon)
        bc0 = forms.BoundaryConditionSpec.robin(a0)
    kappa = 2 * np.pi * args.mode / args.L
    g = harness.Forcing(args.d)
    system = forms.assemble_perturbed(
        mesh, coeffs, bc, lambda x1, x2: g(x2) * np.exp(1j * kappa * x1), bloch_phase=np.exp(1j * kappa * mesh.width)
    )
    system.metadata["mode"] = args.mode
    sol = solve.solve_system(system, tol=args.tol)
    if args.export:
        with open(args.export, "w", encoding="utf-8") as fh:
            fh.write(sol.export())
    ref = solve.modal_reference(args.mode, coeffs, bc0, g, n=2**14, d=args.d, L=args.L)
    sys.stdout.write(solve.error_h1_on_perturbed(sol, ref).to_json() + "\n")


def cmd_study(args):
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            spec, out = harness.spec_from_config(harness.parse_config(fh.read()))
    else:
        spec, out = harness.default_spec(args.theorem), {"format": "csv", "path": None}
    fmt = args.format or out["format"]
    path = args.out or out["path"]
    report = harness.run_convergence_study(spec)
    text = harness.emit_report(report, fmt, path)
    if path is None:
        sys.stdout.write(text)
    sys.stderr.write(
        f"{spec.theorem}: slope {report.fitted_slope:.4f} +- {report.slope_stderr:.4f}, "
        f"bound constant {report.bound_constant:.4g}\n"
    )


def cmd_corrector(args):
    cell = corrector.solve_cell_problem(_profile(args.profile), args.height, args.resolution)
    try:
        rate = corrector.decay_rate(cell)
    except OscStripError:
        rate = None
    if args.dump:
        with open(args.dump, "w", encoding="utf-8") as fh:
            fh.write("# xi1 xi2 Y\n")
            for (x, y), v in zip(cell.mesh.nodes, cell.values):
                fh.write(f"{x:.17g} {y:.17g} {v:.17g}\n")
    _dump({"grad_norm": cell.grad_norm(), "ell": cell.ell, "decay_rate": rate})


def cmd_oracle(args):
    prof = _profile(args.profile) if args.profile else None
    ex = oracle.analytic_example(args.eta, args.a, args.d, prof, args.alpha)
    pts = np.asarray(args.points if args.points else np.linspace(0, args.d, 11), dtype=float)
    U = ex.U(pts)
    _dump(
        {
            "eta": ex.eta,
            "d": ex.d,
            "a": ex.a_const,
            "a0": ex.a0,
            "checks": ex.checks,
            "U": [[float(x), float(u.real), float(u.imag)] for x, u in zip(pts, U)],
        }
    )


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oscstrip", description="Oscillating-boundary strip problems.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("profile", help="inspect a boundary profile")
    sp.add_argument("--profile", default="cosine:1")
    sp.add_argument("--samples", type=int, default=16)
    sp.set_defaults(func=cmd_profile)

    def mesh_args(sp):
        sp.add_argument("--profile", default="cosine:1")
        sp.add_argument("--epsilon", type=float, default=0.125)
        sp.add_argument("--eta", type=float, default=0.125)
        sp.add_argument("--d", type=float, default=1.0)
        sp.add_argument("--L", type=float, default=1.0)
        sp.add_argument("--n-per-period", type=int, default=16)
        sp.add_argument("--n-vertical", type=int, default=32)
        sp.add_argument("--grading", type=float, default=1.0)
        sp.add_argument("--cell-periods", type=int, default=None)

    sp = sub.add_parser("mesh", help="build and export a mesh")
    mesh_args(sp)
    sp.add_argument("--out", help="write the mesh tables here")
    sp.set_defaults(func=cmd_mesh)

    sp = sub.add_parser("solve", help="solve one perturbed problem and compare with the modal reference")
    mesh_args(sp)
    sp.add_argument("--bc", choices=("dirichlet", "neumann", "robin"), default="dirichlet")
    sp.add_argument("--a", type=float, default=1.0, help="constant Robin coefficient")
    sp.add_argument("--coeff", default="laplacian")
    sp.add_argument("--mode", type=int, default=1)
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--export", help="write the nodal solution table here")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("study", help="run a convergence study")
    sp.add_argument("--config", help="flat key = value configuration file")
    sp.add_argument("--theorem", choices=harness.THEOREMS, default="T2.1_dirichlet")
    sp.add_argument("--format", choices=("csv", "json"))
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_study)

    sp = sub.add_parser("corrector", help="solve the periodic corrector cell problem")
    sp.add_argument("--profile", default="cosine:1")
    sp.add_argument("--height", type=float, default=5.0)
    sp.add_argument("--resolution", type=int, default=64)
    sp.add_argument("--dump", help="write the nodal corrector table here")
    sp.set_defaults(func=cmd_corrector)

    sp = sub.add_parser("oracle", help="evaluate the closed-form Robin example")
    sp.add_argument("--eta", type=float, default=0.1)
    sp.add_argument("--a", type=float, default=1.0)
    sp.add_argument("--d", type=float, default=1.0)
    sp.add_argument("--profile", help="profile for the effective coefficient, e.g. cosine:1")
    sp.add_argument("--alpha", type=float, default=0.0)
    sp.add_argument("--points", type=float, nargs="*")
    sp.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except OscStripError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
