"""Command-line front end: ``solve``, ``orderings`` and ``scale``.

Every configuration key can come from a JSON file (``--config``) and be
overridden by the flag of the same name. Exit status is 0 when the run
converged, 2 on non-convergence and 1 on a configuration or runtime error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import (ConfigError, RunConfig, append_csv, compare_orderings, run,
                    scaling_sweep)

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2

# flag -> (config key, type)
_FLAGS = {
    "--mesh": ("mesh", str),
    "--lengths": ("lengths", str),
    "--re": ("re", float),
    "--lambda": ("lam", float),
    "--subdomains": ("subdomains", int),
    "--overlap": ("overlap", int),
    "--algorithm": ("algorithm", str),
    "--ordering": ("ordering", str),
    "--alpha-interior": ("alpha_interior", float),
    "--alpha-interface": ("alpha_interface", float),
    "--alpha-newton": ("alpha_newton", float),
    "--inner-tol": ("inner_tol", float),
    "--newton-tol": ("newton_tol", float),
    "--max-outer": ("max_outer", int),
    "--max-inner": ("max_inner", int),
    "--combine": ("combine", str),
    "--partition": ("partition", str),
    "--workers": ("workers", int),
    "--backend": ("backend", str),
    "--out": ("out", str),
    "--csv": ("csv", str),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddflow",
        description="Penalty Navier-Stokes channel flow with Newton/additive Schwarz solvers.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with flat configuration keys")
        for flag, (key, kind) in _FLAGS.items():
            p.add_argument(flag, dest=key, type=kind, default=None,
                           metavar=key.upper() if flag != "--mesh" else "NX,NY,NZ")
        return p

    common(sub.add_parser("solve", help="run one configuration"))
    common(sub.add_parser("orderings", help="fill and factor time under MD and ND"))
    sc = common(sub.add_parser("scale", help="sweep the number of subdomains"))
    sc.add_argument("--s-list", default="1,2,4,8",
                    help="comma-separated subdomain counts (default 1,2,4,8)")
    sc.add_argument("--algorithms", default="nas,mnas",
                    help="comma-separated algorithms (default nas,mnas)")
    return parser


def config_from_args(args) -> RunConfig:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read configuration {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{args.config}: configuration must be a JSON object")
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
    for key, _ in _FLAGS.values():
        v = getattr(args, key)
        if v is not None:
            data[key] = v
    return RunConfig.from_dict(data)


def _table(rows, columns) -> str:
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.4g}"
        return str(v)
    cells = [[fmt(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def _cmd_solve(cfg: RunConfig) -> int:
    report = run(cfg)
    print(_table(report.outer, ["k", "update_norm", "residual_norm", "inner_iterations",
                                "assemble_time", "factorize_time", "solve_time"]))
    print()
    print(_table([report.flat()], ["s", "algorithm", "status", "outer_iterations",
                                   "factorizations", "max_factor_bytes", "total_time",
                                   "divergence_norm", "centerline_exit_velocity"]))
    if report.error:
        print(f"\n{report.status}: {report.error}", file=sys.stderr)
    if report.status == "converged":
        return EXIT_OK
    return EXIT_NOT_CONVERGED if report.status == "not_converged" else EXIT_ERROR


def _cmd_orderings(cfg: RunConfig) -> int:
    rows = compare_orderings(cfg)
    print(_table(rows, ["ordering", "nnz_lu", "max_factor_bytes", "analyze_time",
                        "factorize_time"]))
    if cfg.out:
        Path(cfg.out).write_text(json.dumps({"config": cfg.to_dict(), "rows": rows}, indent=2))
    csv_path = cfg.csv if cfg.csv is not None else (
        str(Path(cfg.out).with_suffix(".csv")) if cfg.out else None)
    if csv_path:
        append_csv(csv_path, [{"nx": cfg.mesh[0], "ny": cfg.mesh[1], "nz": cfg.mesh[2],
                               "s": cfg.subdomains, **r} for r in rows])
    return EXIT_OK


def _cmd_scale(cfg: RunConfig, s_list: str, algorithms: str) -> int:
    try:
        s_values = [int(s) for s in s_list.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --s-list {s_list!r}") from exc
    algs = tuple(a.strip() for a in algorithms.split(",") if a.strip())
    for s in s_values:
        cfg.replace(subdomains=s)          # validate every point before any work
    for a in algs:
        cfg.replace(algorithm=a)
    rows = scaling_sweep(cfg, s_values, algs)
    print(_table(rows, ["s", "algorithm", "status", "outer_iterations", "inner_iterations",
                        "factorizations", "max_factor_bytes", "total_time", "speedup"]))
    if all(r["status"] == "converged" for r in rows):
        return EXIT_OK
    if any(r["status"] == "error" for r in rows):
        return EXIT_ERROR
    return EXIT_NOT_CONVERGED


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        if args.command == "solve":
            return _cmd_solve(cfg)
        if args.command == "orderings":
            return _cmd_orderings(cfg)
        return _cmd_scale(cfg, args.s_list, args.algorithms)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
