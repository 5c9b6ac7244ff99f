"""Command line entry point: ``swimfsi {check-deformation,simulate,verify,stokes}``."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from .errors import ConfigInvalid, SwimFSIError

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    common.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP threads for assembly and solves")
    common.add_argument("--seed", type=int, default=0, help="reserved; does not change results")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    p = argparse.ArgumentParser(prog="swimfsi", description="Self-propelled deformable body in a viscous fluid.")
    sub = p.add_subparsers(dest="command", required=True)
    c = sub.add_parser("check-deformation", parents=[common], help="constraint residuals before and after projection")
    c.add_argument("config")
    c.add_argument("--samples", type=int, default=20)
    s = sub.add_parser("simulate", parents=[common], help="full time-dependent run")
    s.add_argument("config")
    v = sub.add_parser("verify", parents=[common], help="built-in property suite")
    v.add_argument("--resolution", type=int, default=12)
    k = sub.add_parser("stokes", parents=[common], help="steady Stokes solve against a manufactured solution")
    k.add_argument("config")
    return p


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise ConfigInvalid("--threads must be at least 1", value=n)
    for var in THREAD_VARS:
        os.environ[var] = str(n)


def _read_config(path):
    from .config import parse_config

    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config: {exc}", path=str(path)) from exc
    return parse_config(text), text


def _out_dir(args, cfg) -> Path:
    return Path(args.out if args.out is not None else cfg.output.dir)


def _norms(res) -> list[float]:
    flux, lin, ang = res
    return [abs(float(flux)), float(sum(v * v for v in lin) ** 0.5), float(sum(v * v for v in ang) ** 0.5)]


def cmd_check_deformation(args, log) -> int:
    import numpy as np

    from .kinematics import RawDeformation, constraint_residuals, make_family, project_deformation
    from .stepper import build_meshes

    cfg, _ = _read_config(args.config)
    _, solid = build_meshes(cfg)
    d = cfg.deformation
    fam = make_family(d.family, d.amplitude, d.frequency, cfg.geometry.ball_radius, d.path or None)
    raw = RawDeformation(fam, solid, cfg.solid.rho_s)
    proj = project_deformation(raw)
    tol = 1e-10
    rows, ok = [], True
    log(f"{'t':>8s} {'H2 raw':>10s} {'H3 raw':>10s} {'H4 raw':>10s} {'H2 proj':>10s} {'H3 proj':>10s} {'H4 proj':>10s}")
    for t in np.linspace(0.0, cfg.time.t_end, args.samples):
        before = _norms(constraint_residuals(raw, solid, t))
        after = _norms(constraint_residuals(proj, solid, t))
        ok &= max(after) <= tol
        rows.append({"t": float(t), "raw": before, "projected": after})
        log(f"{t:8.4f} " + " ".join(f"{v:10.2e}" for v in before + after))
    log(f"post-projection residuals {'pass' if ok else 'FAIL'} (tol {tol:g})")
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "check_deformation.json").write_text(json.dumps({"tol": tol, "passed": bool(ok), "samples": rows}, indent=2) + "\n")
    return 0 if ok else 1


def cmd_simulate(args, log) -> int:
    from .stepper import run_simulation

    cfg, text = _read_config(args.config)
    out = _out_dir(args, cfg)
    t0 = time.perf_counter()
    result = run_simulation(cfg, out_dir=out, config_text=text, log=log)
    log(f"{result.reason} after {result.summary['steps']} steps, |h(T)| = {result.summary['displacement']:.6e}, {time.perf_counter() - t0:.1f} s")
    log(f"outputs in {out}")
    return 0 if result.reason in ("completed", "contact") else 2


def cmd_verify(args, log) -> int:
    from .checks import format_result, run_checks

    results = run_checks(args.resolution, seed=args.seed, log=log)
    n_fail = sum(not r.passed for r in results)
    log(f"{len(results) - n_fail}/{len(results)} checks passed")
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify.txt").write_text("\n".join(format_result(r) for r in results) + "\n")
    return 0 if n_fail == 0 else 1


def cmd_stokes(args, log) -> int:
    from .linsolve import manufactured_stokes
    from .stepper import build_meshes

    cfg, _ = _read_config(args.config)
    mesh, _ = build_meshes(cfg)
    report = manufactured_stokes(mesh, cfg.fluid.nu)
    report["resolution"] = cfg.geometry.resolution
    report["nu"] = cfg.fluid.nu
    for k, v in report.items():
        log(f"{k:>16s} = {v:.6e}" if isinstance(v, float) else f"{k:>16s} = {v}")
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "stokes.json").write_text(json.dumps(report, indent=2) + "\n")
    return 0


COMMANDS = {
    "check-deformation": cmd_check_deformation,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "stokes": cmd_stokes,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)

    def log(msg: str) -> None:
        if not args.quiet:
            print(msg, flush=True)

    try:
        _set_threads(args.threads)
        return COMMANDS[args.command](args, log)
    except SwimFSIError as exc:
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return 3
    except Exception as exc:  # unexpected failures are still reported as JSON
        print(json.dumps({"error": "internal", "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 4


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
