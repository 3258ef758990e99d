"""Command-line front end.

Exit codes: 0 ok, 1 verification failed, 2 usage or I/O error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import DEFAULTS, resolved
from .profile import ProfileError, VarianceProfile, load_profile, random_profile, uniform
from .qve import (SolverError, capacity, density, dumps_json, write_density_csv,
                  write_density_json)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


def parse_profile(text: str) -> VarianceProfile:
    """A file path, `uniform:P:N` or `random:P:N[:SEED]`."""
    parts = text.split(":")
    if parts[0] in ("uniform", "random") and not Path(text).exists():
        try:
            nums = [int(x) for x in parts[1:]]
        except ValueError as exc:
            raise UsageError(f"bad profile spec {text!r}") from exc
        if parts[0] == "uniform" and len(nums) == 2:
            return uniform(*nums)
        if parts[0] == "random" and len(nums) in (2, 3):
            return random_profile(nums[0], nums[1], nums[2] if len(nums) == 3 else 0)
        raise UsageError(f"bad profile spec {text!r}")
    path = Path(text)
    if not path.is_file():
        raise UsageError(f"profile file not found: {text}")
    return load_profile(path)


def parse_grid(text: str) -> np.ndarray:
    try:
        a, b, c = text.split(":")
        start, stop, count = float(a), float(b), int(c)
    except ValueError as exc:
        raise UsageError(f"grid must be start:stop:count, got {text!r}") from exc
    if count < 1 or not 0 < start <= stop:
        raise UsageError("grid needs 0 < start <= stop and count >= 1")
    return np.linspace(start, stop, count)


def parse_complex(text: str) -> complex:
    try:
        return complex(text.replace(" ", "").replace("i", "j"))
    except ValueError as exc:
        raise UsageError(f"complex number must look like a+bi, got {text!r}") from exc


def parse_ladder(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError as exc:
        raise UsageError(f"eta ladder must be comma separated, got {text!r}") from exc


def _complex_str(z: complex) -> str:
    return f"{z.real:.17g}{z.imag:+.17g}i"


def _out(args, name) -> Path:
    d = Path(args.output)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def write_manifest(args, cfg: dict, files: list) -> Path:
    """Resolved configuration, every default included, plus artifact version and outputs."""
    manifest = {
        "version": __version__,
        "subcommand": args.command,
        "profile": getattr(args, "profile", None),
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()},
        "outputs": [str(Path(f).name) for f in files],
    }
    manifest["config"] = {k: ([_complex_str(x) if isinstance(x, complex) else x for x in v]
                              if isinstance(v, list) else v)
                          for k, v in manifest["config"].items()}
    path = _out(args, f"{args.command}_manifest.json")
    path.write_text(dumps_json(manifest))
    return path


def _cfg(args) -> dict:
    return resolved(tol=args.tol, seed=getattr(args, "seed", None),
                    trials=getattr(args, "trials", None),
                    distribution=getattr(args, "distribution", None),
                    sigma2=getattr(args, "sigma2", None),
                    eta_ladder=getattr(args, "eta_ladder", None))


def _fmt_intervals(iv):
    return ", ".join(f"[{a:.6g}, {b:.6g}]" for a, b in iv) or "none"


def cmd_density(args) -> int:
    cfg = _cfg(args)
    prof = parse_profile(args.profile)
    grid = parse_grid(args.grid) if args.grid else None
    curve = density(prof, grid, eta_ladder=cfg["eta_ladder"], tol=cfg["tol"])
    if args.format == "csv":
        path = _out(args, "density.csv")
        write_density_csv(curve, path)
    else:
        path = _out(args, "density.json")
        write_density_json(curve, path)
    write_manifest(args, cfg, [path])
    print(f"point_mass {curve.point_mass:.12g}")
    print(f"support {_fmt_intervals(curve.support_intervals)}")
    print(f"total_mass {curve.total_mass():.12g}")
    if curve.flags.any():
        print(f"flagged_points {int(curve.flags.sum())}")
    return EXIT_OK


def cmd_zero(args) -> int:
    from .zero import analyze
    cfg = _cfg(args)
    prof = parse_profile(args.profile)
    grid = parse_grid(args.grid) if args.grid else None
    res = analyze(prof, with_gap=prof.p != prof.n, grid=grid, with_delta_star=args.delta_star)
    path = _out(args, "zero.json")
    path.write_text(dumps_json(res.to_json()))
    write_manifest(args, cfg, [path])
    obj = res.to_json()
    print(f"kind {obj['kind']}")
    print(f"point_mass {obj['point_mass']:.12g}")
    if obj["kind"] == "hard":
        print(f"singular_coefficient {obj['singular_coefficient']:.12g}")
    else:
        print(f"delta_pi {obj['delta_pi']:.6g}")
        if obj["delta_star"] is not None:
            print(f"delta_star {obj['delta_star']:.6g}")
    return EXIT_OK


def cmd_stability(args) -> int:
    from .stability import report_at
    cfg = _cfg(args)
    prof = parse_profile(args.profile)
    z = parse_complex(args.z)
    if z.imag <= 0:
        raise UsageError("z must have positive imaginary part")
    rep = report_at(prof, z, tol=cfg["tol"])
    path = _out(args, "stability.json")
    path.write_text(dumps_json(rep.to_json()))
    write_manifest(args, cfg, [path])
    print(f"norm_F {rep.norm_F:.12g}")
    print(f"gap_FFt {rep.gap_FFt:.12g}")
    print(f"norm_B_inv_2 {rep.norm_B_inv_2:.12g}")
    print(f"norm_B_inv_inf {rep.norm_B_inv_inf:.12g}")
    return EXIT_OK


def cmd_ri_sweep(args) -> int:
    from .stability import ri_sweep
    cfg = _cfg(args)
    rows, summary, counter = ri_sweep(args.count, args.max_dim, cfg["seed"])
    path = _out(args, "ri_sweep.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dim", "seed", "lhs", "rhs_core", "ratio"])
        for dim, k, lhs, rhs, ratio in rows:
            w.writerow([dim, k, f"{lhs:.17g}", f"{rhs:.17g}", f"{ratio:.17g}"])
    write_manifest(args, {**cfg, "count": args.count, "max_dim": args.max_dim}, [path])
    for dim in sorted(summary):
        print(f"max_ratio dim={dim} {summary[dim]:.6g}")
    print(f"counterexamples {counter}")
    return EXIT_OK if counter == 0 else EXIT_FAIL


def cmd_verify(args) -> int:
    from .harness import SampleSpec, verify
    cfg = _cfg(args)
    prof = parse_profile(args.profile)
    spec = SampleSpec(prof, cfg["distribution"], cfg["seed"], cfg["trials"])
    rep = verify(spec, cfg, threads=args.threads)
    jpath, cpath = _out(args, "verify.json"), _out(args, "verify.csv")
    rep.write(jpath, cpath)
    write_manifest(args, cfg, [jpath, cpath])
    for name, c in rep.checks.items():
        print(f"{'PASS' if c['pass'] else 'FAIL'} {name} value={c['value']:.6g} limit={c['limit']:.6g}")
    for note in rep.notes:
        print(f"note {note}")
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_capacity(args) -> int:
    cfg = _cfg(args)
    prof = parse_profile(args.profile)
    if not cfg["sigma2"] > 0:
        raise UsageError("sigma2 must be positive")
    grid = parse_grid(args.grid) if args.grid else None
    curve = density(prof, grid, eta_ladder=cfg["eta_ladder"], tol=cfg["tol"])
    print(f"capacity {capacity(curve, cfg['sigma2']):.12g}")
    if args.trials:
        from .harness import SampleSpec, verify_capacity
        spec = SampleSpec(prof, cfg["distribution"], cfg["seed"], args.trials)
        mc, _, rel = verify_capacity(spec, cfg["sigma2"], curve, threads=args.threads)
        print(f"capacity_mc {mc:.12g}")
        print(f"rel_err {rel:.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gramdyson", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, profile=True):
        if profile:
            p.add_argument("--profile", default="uniform:200:200",
                           help="profile file (.json or .csv) or uniform:P:N or random:P:N[:SEED]")
        p.add_argument("--output", default=".", help="output directory")
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker threads (default from ${DEFAULTS['threads_env']})")

    p = sub.add_parser("density", help="density of the limiting measure on a grid")
    common(p)
    p.add_argument("--grid", help="start:stop:count")
    p.add_argument("--eta-ladder", type=parse_ladder, dest="eta_ladder")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("zero", help="structure of the solution at the origin")
    common(p)
    p.add_argument("--grid", help="start:stop:count grid used for the gap estimate")
    p.add_argument("--delta-star", action="store_true", help="also estimate the ODE validity radius")
    p.set_defaults(func=cmd_zero)

    p = sub.add_parser("stability", help="stability operators at a spectral point")
    common(p)
    p.add_argument("--z", required=True, help="spectral point a+bi with b > 0")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("ri-sweep", help="random sweep of the rotation-inversion bound")
    common(p, profile=False)
    p.add_argument("--count", type=int, default=10_000)
    p.add_argument("--max-dim", type=int, default=32, dest="max_dim")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_ri_sweep)

    p = sub.add_parser("verify", help="Monte Carlo checks of local law, rigidity, kernel, gap, capacity")
    common(p)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--distribution", choices=("gaussian-real", "gaussian-complex", "rademacher"))
    p.add_argument("--sigma2", type=float, default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("capacity", help="deterministic channel capacity")
    common(p)
    p.add_argument("--sigma2", type=float, default=None)
    p.add_argument("--grid", help="start:stop:count")
    p.add_argument("--eta-ladder", type=parse_ladder, dest="eta_ladder")
    p.add_argument("--trials", type=int, default=0, help="also estimate by Monte Carlo")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--distribution", choices=("gaussian-real", "gaussian-complex", "rademacher"))
    p.set_defaults(func=cmd_capacity)
    return ap


def main(argv=None) -> int:
    from .stability import StabilityError
    from .zero import GuardError
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ProfileError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, GuardError, StabilityError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
