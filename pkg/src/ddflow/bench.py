"""Experiment configuration, orchestration and reporting.

A :class:`RunConfig` is validated completely before any work starts. A run
produces a :class:`RunReport` that is written as JSON and as one flat CSV
row; sweeps append one row per run to the same CSV so the rows can be
aggregated or plotted directly. Fields whose name ends in ``_time`` (and
``speedup``, which is derived from them) are wall-clock measurements and
the only values that may differ between repeated identical runs.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .direct_solver import analyze, factorize
from .fem import (Assembler, FlowParams, centerline_velocity, divergence_norm,
                  section_mean_velocity)
from .mesh import build_channel_mesh
from .partition import extend_overlap, partition_nodes
from .runtime import BACKENDS, WorkerPool
from .schwarz import (ALGORITHMS, ConvergenceError, SchwarzConfig, initial_guess,
                      newton_solve)
from .sparse import CsrMatrix

__all__ = [
    "ConfigError",
    "RunConfig",
    "RunReport",
    "run",
    "compare_orderings",
    "ordering_table",
    "scaling_sweep",
    "append_csv",
    "read_csv",
    "PHASES",
]

PHASES = ("assemble", "factorize", "solve", "communication", "residual")
ORDERINGS = ("md", "nd")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    mesh: tuple = (20, 4, 4)
    lengths: tuple = (10.0, 1.0, 1.0)
    re: float = 100.0
    lam: float = 1e7
    subdomains: int = 2
    overlap: int = 1
    algorithm: str = "nas"
    ordering: str = "nd"
    alpha_interior: float = 1.0
    alpha_interface: float = 0.6
    alpha_newton: float = 1.0
    inner_tol: float = 1e-8
    newton_tol: float = 1e-6
    max_outer: int = 50
    max_inner: int = 500
    combine: str = "restricted"
    partition: str = "rcb"
    workers: int = 1
    backend: str = "thread"
    out: str | None = None
    csv: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "mesh", _triple(self.mesh, int, "mesh"))
        object.__setattr__(self, "lengths", _triple(self.lengths, float, "lengths"))
        self.validate()

    def validate(self) -> None:
        nx, ny, nz = self.mesh
        if min(nx, ny, nz) < 1:
            raise ConfigError(f"mesh dimensions must be positive, got {self.mesh}")
        if min(self.lengths) <= 0:
            raise ConfigError(f"lengths must be positive, got {self.lengths}")
        for name in ("re", "lam", "alpha_interior", "alpha_interface", "alpha_newton",
                     "inner_tol", "newton_tol"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be a positive finite number, got {v!r}")
        for name in ("subdomains", "workers", "max_outer", "max_inner"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.overlap, (int, np.integer)) or self.overlap < 0:
            raise ConfigError(f"overlap must be a non-negative integer, got {self.overlap!r}")
        n_nodes = (nx + 1) * (ny + 1) * (nz + 1)
        if self.subdomains > n_nodes:
            raise ConfigError(f"{self.subdomains} subdomains exceed {n_nodes} mesh nodes")
        choices = {"algorithm": ALGORITHMS, "ordering": ORDERINGS,
                   "combine": ("restricted", "sum"), "partition": ("rcb", "bfs"),
                   "backend": BACKENDS}
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")

    # conversion -------------------------------------------------------------
    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["mesh"] = list(self.mesh)
        d["lengths"] = list(self.lengths)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        data = dict(data)
        if "lambda" in data:
            if "lam" in data:
                raise ConfigError("give the penalty as either 'lambda' or 'lam', not both")
            data["lam"] = data.pop("lambda")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> RunConfig:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: configuration must be a JSON object")
        return cls.from_dict(data)

    def replace(self, **changes) -> RunConfig:
        d = self.to_dict()
        if "lam" in changes:
            d.pop("lambda")
        return self.from_dict({**d, **changes})

    def schwarz(self) -> SchwarzConfig:
        return SchwarzConfig(self.alpha_interior, self.alpha_interface, self.inner_tol,
                             self.max_inner, self.combine)

    def flow(self) -> FlowParams:
        return FlowParams(self.re, self.lam)


def _triple(v, kind, name):
    if isinstance(v, str):
        v = v.split(",")
    try:
        out = tuple(kind(x) for x in v)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be three comma-separated numbers, got {v!r}") from exc
    if len(out) != 3:
        raise ConfigError(f"{name} must have three entries, got {v!r}")
    if kind is int and any(float(a) != b for a, b in zip(v, out)):
        raise ConfigError(f"{name} entries must be integers, got {v!r}")
    return out


@dataclass
class RunReport:
    config: dict
    status: str = "pending"           # converged | not_converged | error
    error: str | None = None
    outer: list = field(default_factory=list)
    totals: dict = field(default_factory=dict)
    subdomains: list = field(default_factory=list)
    max_factor_bytes: int = 0
    max_factor_nnz: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> RunReport:
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> RunReport:
        return cls.from_dict(json.loads(text))

    def flat(self) -> dict:
        """One CSV row: configuration, status, totals, memory and diagnostics."""
        c = self.config
        row = {
            "nx": c["mesh"][0], "ny": c["mesh"][1], "nz": c["mesh"][2],
            "lx": c["lengths"][0], "ly": c["lengths"][1], "lz": c["lengths"][2],
            "re": c["re"], "lambda": c["lambda"], "s": c["subdomains"],
            "overlap": c["overlap"], "algorithm": c["algorithm"], "ordering": c["ordering"],
            "workers": c["workers"], "backend": c["backend"],
            "status": self.status,
            "outer_iterations": self.totals.get("outer_iterations", 0),
            "inner_iterations": self.totals.get("inner_iterations", 0),
            "factorizations": self.totals.get("factorizations", 0),
            "final_update_norm": self.outer[-1]["update_norm"] if self.outer else float("nan"),
            "max_factor_nnz": self.max_factor_nnz,
            "max_factor_bytes": self.max_factor_bytes,
        }
        for key in ("analyze_time",) + tuple(f"{p}_time" for p in PHASES) + ("total_time",):
            row[key] = self.totals.get(key, 0.0)
        for key in ("divergence_norm", "centerline_exit_velocity", "exit_mean_velocity"):
            row[key] = self.diagnostics.get(key, float("nan"))
        return row


_CSV_INT = {"nx", "ny", "nz", "s", "overlap", "workers", "outer_iterations",
            "inner_iterations", "factorizations", "max_factor_nnz", "max_factor_bytes"}
_CSV_STR = {"algorithm", "ordering", "backend", "status"}


def _parse_cell(key, text):
    if key in _CSV_STR:
        return text
    if key in _CSV_INT:
        return int(text)
    return float(text)


def append_csv(path, rows) -> None:
    """Append flat rows to ``path``, writing the header when the file is new."""
    rows = list(rows)
    if not rows:
        return
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        if new:
            w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    rows = list(rows)
    w = csv.DictWriter(buf, fieldnames=list(rows[0]))
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def read_csv(source) -> list[dict]:
    """Rows written by :func:`append_csv` (a path or CSV text), with typed values."""
    text = Path(source).read_text() if isinstance(source, Path) or (
        isinstance(source, str) and "\n" not in source) else source
    return [{k: _parse_cell(k, v) for k, v in r.items()}
            for r in csv.DictReader(io.StringIO(text))]


def _persist(report: RunReport, cfg: RunConfig) -> None:
    if cfg.out:
        Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg.out).write_text(report.to_json())
    if cfg.csv is not None:
        csv_path = cfg.csv                      # "" disables the CSV row
    else:
        csv_path = str(Path(cfg.out).with_suffix(".csv")) if cfg.out else None
    if csv_path:
        append_csv(csv_path, [report.flat()])


def run(config: RunConfig, pool: WorkerPool | None = None) -> RunReport:
    """Build, decompose and solve one configuration; never raises for solver failures.

    The report's ``status`` is ``"not_converged"`` for Schwarz or Newton
    non-convergence and ``"error"`` for any other failure, with the message
    in ``error``. Iterations completed before a failure are kept.
    """
    cfg = config
    report = RunReport(cfg.to_dict())
    records = []
    own_pool = pool is None
    if own_pool:
        pool = WorkerPool(cfg.workers, cfg.backend)
    t_start = time.perf_counter()
    state = None
    try:
        mesh = build_channel_mesh(*cfg.mesh, *cfg.lengths)
        asm = Assembler(mesh)
        owner = partition_nodes(mesh, cfg.subdomains, cfg.partition)
        smap = extend_overlap(mesh, owner, cfg.overlap)
        state = newton_solve(mesh, cfg.flow(), smap, cfg.algorithm, cfg.schwarz(),
                             newton_tol=cfg.newton_tol, alpha_newton=cfg.alpha_newton,
                             max_outer=cfg.max_outer, pool=pool, ordering=cfg.ordering,
                             assembler=asm, callback=records.append)
        report.status = "converged"
        X = state.X
        report.diagnostics = {
            "divergence_norm": divergence_norm(mesh, X),
            "centerline_exit_velocity": centerline_velocity(mesh, X),
            "exit_mean_velocity": section_mean_velocity(mesh, X),
        }
    except ConvergenceError as exc:
        report.status, report.error = "not_converged", f"{type(exc).__name__}: {exc}"
    except Exception as exc:
        report.status, report.error = "error", f"{type(exc).__name__}: {exc}"
    finally:
        try:
            stats = pool.stats() if pool.smap is not None else []
        except Exception:
            stats = []
        if own_pool:
            pool.close()
    wall = time.perf_counter() - t_start

    report.outer = [{
        "k": r.k,
        "update_norm": r.update_norm,
        "residual_norm": r.residual_norm,
        "inner_iterations": r.inner_iterations,
        "refactored": r.factorized,
        **{f"{p}_time": r.times.get(p, 0.0) for p in PHASES},
    } for r in records]
    report.subdomains = [{
        "subdomain": st["subdomain"],
        "n_dofs": st["n_dofs"],
        "nnz_a": st["nnz_a"],
        "nnz_lu": st["nnz_lu"],
        "factor_bytes": st["factor_bytes"],
        "factorizations": st["n_factorizations"],
        "analyze_time": st["analyze_time"],
    } for st in stats]
    totals = {f"{p}_time": sum(o[f"{p}_time"] for o in report.outer) for p in PHASES}
    totals["analyze_time"] = sum(s["analyze_time"] for s in report.subdomains)
    totals["outer_iterations"] = len(report.outer)
    totals["inner_iterations"] = sum(o["inner_iterations"] for o in report.outer)
    totals["factorizations"] = sum(s["factorizations"] for s in report.subdomains)
    totals["total_time"] = wall
    report.totals = totals
    report.max_factor_bytes = max((s["factor_bytes"] for s in report.subdomains), default=0)
    report.max_factor_nnz = max((s["nnz_lu"] for s in report.subdomains), default=0)
    _persist(report, cfg)
    return report


def ordering_table(matrices: list[CsrMatrix], methods=ORDERINGS) -> list[dict]:
    """Analyze and factorize every matrix under each ordering; one row per ordering."""
    rows = []
    for method in methods:
        nnz, peak, t_an, t_fa = 0, 0, 0.0, 0.0
        for A in matrices:
            plan = analyze(A, method)
            f = factorize(plan, A)
            nnz += f.nnz
            peak = max(peak, f.memory_bytes)
            t_an += plan.analyze_time
            t_fa += f.factorize_time
        rows.append({"ordering": method, "nnz_lu": int(nnz), "max_factor_bytes": int(peak),
                     "analyze_time": t_an, "factorize_time": t_fa})
    return rows


def compare_orderings(config: RunConfig) -> list[dict]:
    """Fill and factorization time of MD and ND on the subdomain matrices of the first Jacobian."""
    cfg = config
    mesh = build_channel_mesh(*cfg.mesh, *cfg.lengths)
    asm = Assembler(mesh)
    J = asm.assemble(initial_guess(mesh), cfg.flow()).J
    smap = extend_overlap(mesh, partition_nodes(mesh, cfg.subdomains, cfg.partition),
                          cfg.overlap)
    mats = [J.submatrix(d) for d in smap.dofs]
    return ordering_table(mats)


def scaling_sweep(base: RunConfig, s_list, algorithms=ALGORITHMS) -> list[dict]:
    """Run every algorithm at every subdomain count; flat rows with speedup columns.

    ``speedup`` is the total time at the smallest ``s`` divided by the total
    time at this ``s``, per algorithm. Per-run JSON reports go next to
    ``base.out`` when it is set, and all rows are appended to the CSV.
    """
    s_list = sorted({int(s) for s in s_list})
    if not s_list:
        raise ConfigError("empty subdomain list")
    configs = []
    for alg in algorithms:
        for s in s_list:
            changes = {"subdomains": s, "algorithm": alg, "out": None, "csv": ""}
            if base.out:
                p = Path(base.out)
                changes["out"] = str(p.with_name(f"{p.stem}_s{s}_{alg}.json"))
            configs.append(base.replace(**changes))
    rows = [run(c).flat() for c in configs]
    for alg in algorithms:
        mine = [r for r in rows if r["algorithm"] == alg]
        t0 = mine[0]["total_time"]
        for r in mine:
            r["speedup"] = t0 / r["total_time"] if r["total_time"] > 0 else float("nan")
    csv_path = base.csv if base.csv is not None else (
        str(Path(base.out).with_suffix(".csv")) if base.out else None)
    if csv_path:
        append_csv(csv_path, rows)
    return rows
