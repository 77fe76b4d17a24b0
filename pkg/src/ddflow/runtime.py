"""Execution of independent subdomain factorizations and solves on a worker pool.

Subdomain ``i`` lives on worker ``i % n_workers`` for the lifetime of the
pool, so its symbolic plan and numeric factors never move. Results are
always gathered and returned in subdomain-id order, which makes any
reduction done by the caller independent of the number of workers and of
the backend.

Backends:

``"serial"``
    everything runs in the calling thread.
``"thread"``
    one thread per worker; the dense kernels release the GIL.
``"process"``
    one persistent process per worker, talking over pipes. Only residual
    slices, Jacobian value slices and local solutions cross the boundary.
"""
from __future__ import annotations

import multiprocessing as mp
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass

import numpy as np

from .direct_solver import analyze, factorize, solve
from .partition import SubdomainMap
from .sparse import CsrMatrix

__all__ = [
    "SubdomainSolver",
    "SubdomainError",
    "WorkerTimeoutError",
    "MemoryReport",
    "WorkerPool",
    "spawn",
]

BACKENDS = ("serial", "thread", "process")


class SubdomainError(RuntimeError):
    """A subdomain task failed; ``subdomain`` names it and ``cause`` is the original error."""

    def __init__(self, subdomain: int, phase: str, cause: BaseException | str):
        super().__init__(f"subdomain {subdomain} failed during {phase}: {cause}")
        self.subdomain = subdomain
        self.phase = phase
        self.cause = cause


class WorkerTimeoutError(TimeoutError):
    def __init__(self, worker: int, phase: str, timeout: float):
        super().__init__(f"worker {worker} did not answer within {timeout:g} s during {phase}")
        self.worker = worker


class SubdomainSolver:
    """Local matrix extraction, factorization and solve for one subdomain.

    ``selector`` picks the local matrix values out of the global value
    array, so a new Jacobian on the same pattern costs one gather.
    """

    def __init__(self, index: int, dofs: np.ndarray, local_pattern: CsrMatrix,
                 selector: np.ndarray, method: str = "nd", perturb: bool = False):
        self.index = index
        self.dofs = dofs
        self.selector = selector
        self.pattern = local_pattern
        self.perturb = perturb
        self.plan = analyze(local_pattern, method)
        self.factors = None
        self.n_factorizations = 0
        self.factorize_time = 0.0
        self.solve_time = 0.0

    @classmethod
    def from_global(cls, index: int, dofs: np.ndarray, pattern: CsrMatrix,
                    method: str = "nd", perturb: bool = False) -> SubdomainSolver:
        sel, _ = pattern.submatrix_selector(dofs)
        return cls(index, dofs, pattern.submatrix(dofs), sel, method, perturb)

    def refactor_values(self, local_values: np.ndarray) -> float:
        t0 = time.perf_counter()
        A = self.pattern.with_values(local_values)
        self.factors = factorize(self.plan, A, perturb=self.perturb)
        self.n_factorizations += 1
        dt = time.perf_counter() - t0
        self.factorize_time += dt
        return dt

    def refactor(self, J: CsrMatrix) -> float:
        return self.refactor_values(J.values[self.selector])

    def solve_local(self, r_local: np.ndarray) -> np.ndarray:
        if self.factors is None:
            raise RuntimeError(f"subdomain {self.index} has not been factorized")
        t0 = time.perf_counter()
        x = solve(self.factors, r_local)
        self.solve_time += time.perf_counter() - t0
        return x

    @property
    def is_factorized(self) -> bool:
        return self.factors is not None

    def stats(self) -> dict:
        return {
            "subdomain": self.index,
            "n_dofs": int(self.dofs.size),
            "nnz_a": int(self.pattern.nnz),
            "nnz_lu": int(self.plan.nnz_lu),
            "factor_bytes": int(self.factors.memory_bytes if self.factors is not None
                                else self.plan.memory_bytes),
            "n_factorizations": self.n_factorizations,
            "analyze_time": self.plan.analyze_time,
            "factorize_time": self.factorize_time,
            "solve_time": self.solve_time,
        }


@dataclass(frozen=True)
class MemoryReport:
    """Factor storage per subdomain; ``peak_bytes`` is the largest single subdomain."""

    per_subdomain: tuple
    per_worker: tuple

    @property
    def peak_bytes(self) -> int:
        return max(self.per_subdomain) if self.per_subdomain else 0

    @property
    def total_bytes(self) -> int:
        return sum(self.per_subdomain)

    @property
    def peak_worker_bytes(self) -> int:
        return max(self.per_worker) if self.per_worker else 0


def _worker_main(conn):
    solvers: dict[int, SubdomainSolver] = {}
    while True:
        msg = conn.recv()
        cmd, payload = msg
        if cmd == "stop":
            conn.send(("ok", None))
            return
        results, current = {}, -1
        try:
            for i, arg in payload.items():
                current = i
                if cmd == "setup":
                    dofs, ptr, col, sel, method, perturb = arg
                    n = dofs.size
                    pat = CsrMatrix(n, n, ptr, col, np.zeros(col.size))
                    solvers[i] = SubdomainSolver(i, dofs, pat, sel, method, perturb)
                    results[i] = None
                elif cmd == "factorize":
                    results[i] = solvers[i].refactor_values(arg)
                elif cmd == "solve":
                    results[i] = solvers[i].solve_local(arg)
                elif cmd == "stats":
                    results[i] = solvers[i].stats()
                else:
                    raise ValueError(f"unknown command {cmd!r}")
            conn.send(("ok", results))
        except BaseException as exc:  # reported to the coordinator with the subdomain id
            conn.send(("error", (current, f"{type(exc).__name__}: {exc}",
                                 traceback.format_exc())))


class WorkerPool:
    """Persistent workers owning the subdomain solvers of one decomposition."""

    def __init__(self, n_workers: int = 1, backend: str = "thread",
                 timeout: float | None = None):
        if int(n_workers) != n_workers or n_workers < 1:
            raise ValueError(f"worker count must be a positive integer, got {n_workers!r}")
        if backend not in BACKENDS:
            raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
        self.n_workers = int(n_workers)
        self.backend = backend
        self.timeout = timeout
        self.smap: SubdomainMap | None = None
        self._solvers: list[SubdomainSolver] = []
        self._executor = None
        self._procs = []
        self._conns = []

    # placement -------------------------------------------------------------
    def worker_of(self, i: int) -> int:
        return i % self.n_workers

    def _assignment(self, s: int):
        return [list(range(w, s, self.n_workers)) for w in range(self.n_workers)]

    # lifecycle -------------------------------------------------------------
    def setup(self, pattern: CsrMatrix, smap: SubdomainMap, method: str = "nd",
              perturb: bool = False) -> None:
        """Extract local patterns and run the symbolic analysis of every subdomain."""
        self.close()
        self.smap = smap
        self._pattern_nnz = pattern.nnz
        self._selectors = []
        locals_ = []
        for i in range(smap.s):
            sel, _ = pattern.submatrix_selector(smap.dofs[i])
            self._selectors.append(sel)
            locals_.append(pattern.submatrix(smap.dofs[i]))
        if self.backend == "process":
            ctx = mp.get_context()
            for w in range(self.n_workers):
                parent, child = ctx.Pipe()
                p = ctx.Process(target=_worker_main, args=(child,), daemon=True)
                p.start()
                self._procs.append(p)
                self._conns.append(parent)
            payloads = [{i: (smap.dofs[i], locals_[i].row_ptr, locals_[i].col_idx,
                             self._selectors[i], method, perturb) for i in ids}
                        for ids in self._assignment(smap.s)]
            self._exchange("setup", payloads)
        else:
            if self.backend == "thread":
                self._executor = ThreadPoolExecutor(max_workers=self.n_workers)

            def build(i):
                return SubdomainSolver(i, smap.dofs[i], locals_[i], self._selectors[i],
                                       method, perturb)

            self._solvers = self._run_local("setup", build, smap.s)

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None
        for conn, p in zip(self._conns, self._procs):
            try:
                conn.send(("stop", None))
                if conn.poll(5.0):
                    conn.recv()
            except (OSError, EOFError):
                pass
            p.join(timeout=5.0)
            if p.is_alive():
                p.terminate()
        self._conns, self._procs = [], []
        self._solvers = []

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # execution helpers -----------------------------------------------------
    def _run_local(self, phase: str, fn, s: int) -> list:
        """Run ``fn(i)`` for every subdomain, worker by worker, results in id order."""
        out = [None] * s

        def run_worker(ids):
            for i in ids:
                try:
                    out[i] = fn(i)
                except Exception as exc:
                    raise SubdomainError(i, phase, exc) from exc

        groups = self._assignment(s)
        if self._executor is None:
            for ids in groups:
                run_worker(ids)
        else:
            futures = [self._executor.submit(run_worker, ids) for ids in groups]
            errors = []
            for w, f in enumerate(futures):
                try:
                    f.result(timeout=self.timeout)
                except SubdomainError as exc:
                    errors.append(exc)
                except FutureTimeout as exc:         # not the builtin before 3.11
                    raise WorkerTimeoutError(w, phase, self.timeout) from exc
            if errors:
                raise min(errors, key=lambda e: e.subdomain)
        return out

    def _exchange(self, phase: str, payloads: list[dict]) -> dict:
        for conn, payload in zip(self._conns, payloads):
            conn.send((phase, payload))
        results, errors = {}, []
        for w, conn in enumerate(self._conns):
            if not conn.poll(self.timeout):
                raise WorkerTimeoutError(w, phase, self.timeout)
            status, data = conn.recv()
            if status == "ok":
                results.update(data)
            else:
                i, message, tb = data
                errors.append(SubdomainError(i, phase, message + "\n" + tb))
        if errors:
            raise min(errors, key=lambda e: e.subdomain)
        return results

    def _require_setup(self):
        if self.smap is None:
            raise RuntimeError("worker pool has not been set up")

    # public operations -----------------------------------------------------
    def factorize(self, J: CsrMatrix) -> list[float]:
        """Refactor every subdomain from the global matrix ``J``; returns per-subdomain times."""
        self._require_setup()
        if J.nnz != self._pattern_nnz:
            raise ValueError("matrix pattern differs from the analysed pattern")
        s = self.smap.s
        if self.backend == "process":
            payloads = [{i: J.values[self._selectors[i]] for i in ids}
                        for ids in self._assignment(s)]
            res = self._exchange("factorize", payloads)
            return [res[i] for i in range(s)]
        return self._run_local("factorize", lambda i: self._solvers[i].refactor(J), s)

    def scatter_solve_gather(self, r: np.ndarray) -> list[np.ndarray]:
        """Local solutions ``A_i^{-1} R_i r`` for every subdomain, in id order."""
        self._require_setup()
        s = self.smap.s
        if self.backend == "process":
            payloads = [{i: r[self.smap.dofs[i]] for i in ids} for ids in self._assignment(s)]
            res = self._exchange("solve", payloads)
            return [res[i] for i in range(s)]
        return self._run_local(
            "solve", lambda i: self._solvers[i].solve_local(r[self.smap.dofs[i]]), s)

    def stats(self) -> list[dict]:
        self._require_setup()
        s = self.smap.s
        if self.backend == "process":
            res = self._exchange("stats", [{i: None for i in ids}
                                           for ids in self._assignment(s)])
            return [res[i] for i in range(s)]
        return [sv.stats() for sv in self._solvers]

    def memory_report(self) -> MemoryReport:
        per = tuple(st["factor_bytes"] for st in self.stats())
        per_worker = tuple(sum(per[i] for i in ids) for ids in self._assignment(len(per)))
        return MemoryReport(per, per_worker)

    def n_factorizations(self) -> int:
        return sum(st["n_factorizations"] for st in self.stats())


def spawn(pattern: CsrMatrix, smap: SubdomainMap, workers: int | None = None,
          backend: str = "thread", method: str = "nd", timeout: float | None = None
          ) -> WorkerPool:
    """A pool with one worker per subdomain (or ``workers``, round-robin), set up for ``pattern``."""
    pool = WorkerPool(smap.s if workers is None else workers, backend, timeout)
    try:
        pool.setup(pattern, smap, method)
    except BaseException:
        pool.close()
        raise
    return pool
