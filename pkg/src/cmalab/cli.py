"""Command line entry point: ``cmalab <subcommand> --config FILE --out DIR``.

Exit codes: 0 success, 2 rejected input (bad config, inadmissible data),
3 nonconvergence or a failed verification. A ``summary.json`` with the
resolved configuration is written in every case where the output directory
is known.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config, parse_config, resolutions
from .errors import CMAError

COMMANDS = ("verify-geometry", "solve-torus", "solve-dirichlet", "solve-geodesic",
            "sweep-epsilon", "oracle-check")
EXIT_OK, EXIT_REJECTED, EXIT_NONCONVERGED = 0, 2, 3
TWO_PI = 6.283185307179586


class Nonconvergence(Exception):
    """Raised by a command to request exit code 3 after outputs are written."""


def apply_thread_limit(env=None) -> int:
    """Honour CMA_THREADS (0 = leave the BLAS default). Must run before numpy loads."""
    env = os.environ if env is None else env
    raw = env.get("CMA_THREADS", "0")
    try:
        k = int(raw)
    except ValueError:
        raise ConfigError(f"CMA_THREADS must be a nonnegative integer, got {raw!r}") from None
    if k < 0:
        raise ConfigError("CMA_THREADS must be a nonnegative integer")
    if k > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            env[var] = str(k)
    return k


# --- output helpers -------------------------------------------------------------

class Output:
    def __init__(self, directory: Path, fmt: str):
        self.dir = Path(directory)
        self.fmt = fmt
        self.files: list[str] = []

    def field(self, name: str, field) -> None:
        from .grids import write_csv, write_field
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / f"{name}.{self.fmt}"
        if self.fmt == "bin":
            write_field(path, field)
        elif self.fmt == "csv":
            write_csv(path, field)
        else:
            from .solver import _jsonable
            path.write_text(json.dumps({"header": field.grid.header(),
                                        "values": _jsonable(field.values)}))
        self.files.append(path.name)

    def table(self, name: str, rows: list[dict]) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        if self.fmt == "csv" and rows:
            import csv
            path = self.dir / f"{name}.csv"
            with path.open("w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
                writer.writeheader()
                writer.writerows(rows)
        else:
            path = self.dir / f"{name}.json"
            path.write_text(json.dumps(rows, indent=1))
        self.files.append(path.name)


def _order(errors: list[float], h: list[float] | None = None) -> list[float]:
    """Observed orders between consecutive levels (halving h unless ``h`` is given)."""
    import numpy as np
    e = np.asarray(errors)
    if e.size < 2:
        return []
    ratio = 2.0 if h is None else np.asarray(h)[:-1] / np.asarray(h)[1:]
    return (np.log(e[:-1] / e[1:]) / np.log(ratio)).tolist()


def _schedule(cfg: RunConfig):
    from .solver import ContinuationSchedule, NewtonConfig
    sc = cfg.schedule
    newton = NewtonConfig(max_iter=sc.get("max_iter", 40), residual_tol=sc.get("residual_tol", 1e-10),
                          min_damping=sc.get("min_damping", 2.0 ** -20), sigma=sc.get("sigma", 0.1))
    steps = sc.get("s_steps", 11)
    if steps < 2:
        raise ConfigError("s_steps must be at least 2", "schedule", "s_steps")
    s = tuple(k / (steps - 1) for k in range(steps))
    kw = {"s_steps": s, "newton": newton}
    if "eps" in sc:
        kw["eps_steps"] = tuple(sc["eps"])
    try:
        return ContinuationSchedule(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc), "schedule") from None


def _u_star(cfg: RunConfig, n: int, torus: bool):
    from .oracles import sine_product
    name = cfg.problem.get("u_star", "sine_product")
    p = cfg.params("u_star")
    if name == "zero":
        return sine_product(0.0, 0.0, n)
    quad = p.get("quad", 0.0)
    if torus and quad != 0.0:
        raise ConfigError("quad term is not periodic; use it on boxes only", "problem", "u_star.quad")
    return sine_product(p.get("amplitude", 0.1), quad, n)


def _chi(cfg: RunConfig) -> str:
    return cfg.problem.get("chi", "omega")


# --- commands ---------------------------------------------------------------------

def cmd_verify_geometry(cfg: RunConfig, out: Output) -> dict:
    from .geometry import identity_report, metric_corpus, special_coordinate_report
    geo = cfg.geometry
    rows = [identity_report(m, p) for m, p in metric_corpus(2, geo.get("count", 20), geo.get("seed", 0))]
    special = special_coordinate_report(geo.get("jets", 50), 2, geo.get("seed", 0) + 1)
    out.table("geometry", rows)
    out.table("special_coordinates", special)
    worst = {
        "bianchi": max(r["bianchi"] for r in rows),
        "torsion_antisymmetry": max(r["torsion_antisymmetry"] for r in rows),
        "curvature_hermitian": max(r["curvature_hermitian"] for r in rows),
        "kahler_torsion": max((r["torsion_norm"] for r in rows if r["kahler"]), default=0.0),
        "special_primary": max(r["primary"] for r in special),
        "special_alternate": max(r["alternate"] for r in special),
    }
    passed = all(v <= 1e-10 for v in worst.values())
    res = {"metrics": len(rows), "jets": len(special), "worst": worst, "passed": passed}
    if not passed:
        raise Nonconvergence(res)
    return res


def cmd_solve_torus(cfg: RunConfig, out: Output) -> dict:
    import numpy as np

    from .grids import ScalarField, TorusGrid
    from .ma import flat_problem, rhs_constant, rhs_exp_u, rhs_values
    from .oracles import make_manufactured
    from .solver import continuation_solve, torus_calabi_solve

    n = cfg.problem.get("n", 2)
    period = cfg.problem.get("period", TWO_PI)
    psi_name = cfg.problem.get("psi", "manufactured")
    sched = _schedule(cfg)
    levels = resolutions(cfg, n, [16, 32])
    if psi_name in ("exp_u", "const", "zero"):
        grid = TorusGrid(n, period, levels[0])
        p = cfg.params("psi")
        if psi_name == "exp_u":
            prob = flat_problem(grid, rhs_exp_u(p.get("weight", 1.0)), _chi(cfg))
            u, rep = continuation_solve(prob, sched)
        elif psi_name == "const":
            prob = flat_problem(grid, rhs_constant(p.get("c", 1.0)), _chi(cfg))
            u, rep = torus_calabi_solve(prob, sched)
        else:
            raise ConfigError("psi = zero has no torus solution; use sweep-epsilon", "problem", "psi")
        out.field("u", u)
        res = {"psi": psi_name, "report": rep.to_dict()}
        if not rep.converged:
            raise Nonconvergence(res)
        return res
    tf = _u_star(cfg, n, torus=True)
    errors, reports, u = [], [], None
    for res_axes in levels:
        grid = TorusGrid(n, period, res_axes)
        us = ScalarField.from_function(grid, tf.value)
        tmpl = flat_problem(grid, rhs_constant(1.0), _chi(cfg))
        case = make_manufactured(us, tmpl, tf.complex_hessian(grid))
        prob = flat_problem(grid, rhs_values(case.psi_star, "psi*"), _chi(cfg))
        u, rep = torus_calabi_solve(prob, sched)
        w = prob.det_g * grid.cell_volume
        target = us.values - np.sum(us.values * w) / np.sum(w)
        errors.append(float(np.abs(u.values - target).max()))
        reports.append({"resolution": res_axes, "converged": rep.converged, "iterations": rep.iterations,
                        "rescale": rep.extra["rescale"], "log_shift": rep.extra["log_shift"],
                        "mean": rep.extra["mean"], "error": errors[-1]})
        if not rep.converged:
            break
    out.field("u", u)
    res = {"u_star": tf.name, "levels": reports, "errors": errors, "order": _order(errors)}
    if not all(r["converged"] for r in reports):
        raise Nonconvergence(res)
    return res


def _box_bounds(cfg: RunConfig, n: int, default) -> list[tuple[float, float]]:
    b = cfg.problem.get("bounds", default)
    if len(b) != 2 * n:
        raise ConfigError(f"need {2 * n} lo:hi pairs", "problem", "bounds")
    if any(hi <= lo for lo, hi in b):
        raise ConfigError("each interval needs lo < hi", "problem", "bounds")
    return b


def cmd_solve_dirichlet(cfg: RunConfig, out: Output) -> dict:
    import numpy as np

    from .grids import BoxGrid, ScalarField
    from .ma import MAProblem, flat_problem, rhs_constant
    from .oracles import make_manufactured, strict_subsolution
    from .solver import dirichlet_solve

    n = cfg.problem.get("n", 2)
    bounds = _box_bounds(cfg, n, [(0.0, 1.0)] * (2 * n))
    sched = _schedule(cfg)
    tf = _u_star(cfg, n, torus=False)
    errors, reports, u = [], [], None
    for res_axes in resolutions(cfg, n, [16, 32]):
        grid = BoxGrid(n, bounds, [r + 1 for r in res_axes])
        us = ScalarField(grid, tf.value(*grid.mesh))
        tmpl = flat_problem(grid, rhs_constant(1.0), _chi(cfg), boundary=us.values)
        case = make_manufactured(us, tmpl, tf.complex_hessian(grid))
        ubar = strict_subsolution(case, cfg.problem.get("subsolution_delta", 0.02))
        prob = MAProblem(grid, tmpl.g, tmpl.chi, case.problem.rhs, us.values, ubar)
        u, rep = dirichlet_solve(prob, sched)
        errors.append(float(np.abs(u.values - us.values).max()))
        reports.append({"resolution": res_axes, "converged": rep.converged, "iterations": rep.iterations,
                        "lower_margin": rep.extra["lower_margin"], "upper_margin": rep.extra["upper_margin"],
                        "error": errors[-1]})
        if not rep.converged:
            break
    out.field("u", u)
    res = {"u_star": tf.name, "levels": reports, "errors": errors, "order": _order(errors)}
    if not all(r["converged"] for r in reports):
        raise Nonconvergence(res)
    return res


def _endpoint(cfg: RunConfig, key: str, grid):
    import numpy as np

    from .grids import ScalarField
    name = cfg.problem.get(key, "zero")
    p = cfg.params(key)
    if name == "zero":
        return ScalarField.zeros(grid)
    X = grid.mesh
    vals = p.get("shift", 0.0) + p.get("amplitude", 0.0) * np.sin(X[0]) * np.cos(X[-1])
    return ScalarField(grid, vals)


def cmd_solve_geodesic(cfg: RunConfig, out: Output) -> dict:
    from .geodesic import GeodesicProblem, export_path, solve_geodesic
    from .grids import TorusGrid

    n = cfg.problem.get("n", 1)
    base = TorusGrid(n, cfg.problem.get("period", TWO_PI), resolutions(cfg, n, [16])[0])
    gp = GeodesicProblem(base, _endpoint(cfg, "phi0", base), _endpoint(cfg, "phi1", base),
                         cfg.problem.get("t_resolution", 16))
    sol = solve_geodesic(gp, _schedule(cfg))
    if out.fmt == "bin":
        export_path(out.dir / "path", sol.phi, gp, sol.summary)
        out.files.append("path/manifest.json")
        if sol.extrapolated is not None:
            export_path(out.dir / "path_extrapolated", sol.extrapolated, gp, sol.summary)
            out.files.append("path_extrapolated/manifest.json")
    else:
        out.field("phi", sol.phi)
        if sol.extrapolated is not None:
            out.field("phi_extrapolated", sol.extrapolated)
    res = dict(sol.summary, converged=sol.report.converged)
    if not sol.report.converged:
        raise Nonconvergence(res)
    return res


def _sweep_boundary(cfg: RunConfig, grid, n: int):
    import numpy as np
    name = cfg.problem.get("boundary", "harmonic_exp" if n == 1 else "u_star")
    if name == "harmonic_exp":
        if n != 1:
            raise ConfigError("harmonic_exp boundary data is defined for n = 1", "problem", "boundary")
        p = cfg.params("boundary")
        a, b = p.get("a", 1.0), p.get("b", 0.3)
        x, y = grid.mesh
        return np.exp(a * x) * np.cos(a * y) + b * x * y
    return _u_star(cfg, n, torus=False).value(*grid.mesh)


def cmd_sweep_epsilon(cfg: RunConfig, out: Output) -> dict:
    import numpy as np

    from .grids import BoxGrid
    from .ma import flat_problem, rhs_constant
    from .solver import barrier_subsolution, epsilon_sweep, harmonic_barrier, regularized_rhs

    n = cfg.problem.get("n", 1)
    bounds = _box_bounds(cfg, n, [(0.0, 1.0)] * (2 * n))
    res_axes = resolutions(cfg, n, [64])[0]
    grid = BoxGrid(n, bounds, [r + 1 for r in res_axes])
    psi_name = cfg.problem.get("psi", "zero")
    if psi_name not in ("zero", "const"):
        raise ConfigError("sweep-epsilon supports psi = zero or const", "problem", "psi")
    rhs = rhs_constant(cfg.params("psi").get("c", 0.0) if psi_name == "const" else 0.0)
    chi = cfg.problem.get("chi", "zero")
    phi = _sweep_boundary(cfg, grid, n)
    sched = _schedule(cfg)
    base = flat_problem(grid, rhs, chi, boundary=phi)
    ubar = barrier_subsolution(base, cfg.problem.get("subsolution_delta", 0.2),
                               regularized_rhs(rhs, sched.eps_steps[0], n))
    prob = flat_problem(grid, rhs, chi, boundary=phi, subsolution=ubar)
    stages = epsilon_sweep(prob, sched)
    h = harmonic_barrier(prob)
    rows = []
    for st in stages:
        r = st.report
        rows.append({"eps": st.eps, "converged": r.converged, "iterations": r.iterations[0],
                     "lower_margin": r.extra["lower_margin"], "monotone": r.extra.get("monotone", True),
                     "monotone_margin": r.extra.get("monotone_margin"),
                     "sup_grad": r.monitors[0]["sup_grad"],
                     "distance_to_barrier": float(np.abs(st.u.values - h).max())})
    if stages:
        out.field("u", stages[-1].u)
    # drift is measured over the small-eps window where the C^1 bound should be uniform
    window = [r for r in rows if r["eps"] <= 1e-2] or rows
    grads = [r["sup_grad"] for r in window]
    res = {"stages": rows, "monotone": all(r["monotone"] for r in rows),
           "gradient_drift": (max(grads) - min(grads)) / max(grads) if grads else None,
           "completed": len(stages) == len(sched.eps_steps)}
    if not res["completed"]:
        raise Nonconvergence(res)
    return res


def cmd_oracle_check(cfg: RunConfig, out: Output) -> dict:
    import numpy as np

    from .grids import BoxGrid
    from .oracles import RADIAL_PROFILES, im_abs_box, im_abs_check, quadric_pullback_check, radial_residual_check

    o = cfg.oracle
    N = o.get("im_abs_resolution", 32)
    im_abs = im_abs_check(im_abs_box(2, N), o.get("safety", 3))
    eta = np.linspace(0.2, 1.0, o.get("quadric_points", 81))
    quadric = quadric_pullback_check(eta)
    prof = RADIAL_PROFILES[cfg.oracle.get("profile", "quartic")]
    radial = []
    for M in (8, 16, 32) if "radial_resolution" not in o else (o["radial_resolution"],):
        rg = BoxGrid(2, [(-0.5, 0.5)] * 4, M + 1)
        radial.append(radial_residual_check(prof, rg))
    res = {"im_abs": im_abs, "quadric": quadric, "radial": radial,
           "radial_order": _order([r["max_defect"] for r in radial], [r["h"] for r in radial])}
    res["passed"] = bool(im_abs["max_det_defect"] <= 1e-8 and quadric["pullback_defect"] <= 1e-12
                         and quadric["harmonic_defect"] <= 1e-10
                         and max(r["identity_defect"] for r in radial) <= 1e-12)
    out.table("oracles", [{"check": "im_abs", "defect": im_abs["max_det_defect"]},
                          {"check": "quadric_pullback", "defect": quadric["pullback_defect"]},
                          {"check": "quadric_harmonic", "defect": quadric["harmonic_defect"]}]
              + [{"check": f"radial_h{r['h']:.4g}", "defect": r["max_defect"]} for r in radial])
    if not res["passed"]:
        raise Nonconvergence(res)
    return res


HANDLERS = {
    "verify-geometry": cmd_verify_geometry,
    "solve-torus": cmd_solve_torus,
    "solve-dirichlet": cmd_solve_dirichlet,
    "solve-geodesic": cmd_solve_geodesic,
    "sweep-epsilon": cmd_sweep_epsilon,
    "oracle-check": cmd_oracle_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmalab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI-style run configuration (optional)")
        p.add_argument("--out", help="output directory (overrides [output] dir)")
        p.add_argument("--format", choices=("json", "csv", "bin"), help="field dump format")
    return parser


def run(command: str, config_path=None, out_dir=None, fmt=None, config_text: str | None = None) -> int:
    """Run one subcommand; returns the exit code."""
    summary: dict = {"command": command}
    out = Output(Path(out_dir), fmt or "json") if out_dir is not None else None
    try:
        if command not in HANDLERS:
            raise ConfigError(f"unknown subcommand {command!r}")
        if config_text is not None:
            cfg = parse_config(config_text)
        elif config_path is not None:
            cfg = load_config(config_path)
        else:
            cfg = RunConfig()
        if out_dir is not None:
            cfg.output["dir"] = str(out_dir)
        if fmt is not None:
            cfg.output["format"] = fmt
        cfg.output.setdefault("dir", "cmalab-out")
        cfg.output.setdefault("format", "json")
        summary["config"] = cfg.resolved()
        out = Output(Path(cfg.output["dir"]), cfg.output["format"])
        summary["results"] = HANDLERS[command](cfg, out)
        summary["status"] = "ok"
        code = EXIT_OK
    except Nonconvergence as exc:
        summary["results"] = exc.args[0] if exc.args else {}
        summary["status"] = "nonconvergence"
        code = EXIT_NONCONVERGED
    except ConfigError as exc:
        summary["status"] = "rejected"
        summary["reason"] = exc.to_dict()
        code = EXIT_REJECTED
    except (CMAError, ValueError) as exc:
        summary["status"] = "rejected"
        summary["reason"] = {"error": type(exc).__name__, "message": str(exc)}
        code = EXIT_REJECTED
    except AssertionError as exc:
        # a solver invariant (comparison, monotonicity) failed at run time
        summary["status"] = "nonconvergence"
        summary["reason"] = {"error": "invariant", "message": str(exc)}
        code = EXIT_NONCONVERGED
    summary["exit_code"] = code
    from .solver import _jsonable
    text = json.dumps(_jsonable(summary), indent=2, sort_keys=True)
    if out is not None:
        out.dir.mkdir(parents=True, exist_ok=True)
        (out.dir / "summary.json").write_text(text)
    print(text)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        apply_thread_limit()
    except ConfigError as exc:
        print(json.dumps({"command": args.command, "status": "rejected", "reason": exc.to_dict(),
                          "exit_code": EXIT_REJECTED}))
        return EXIT_REJECTED
    return run(args.command, args.config, args.out, args.format)


if __name__ == "__main__":
    sys.exit(main())
