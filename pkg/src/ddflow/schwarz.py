"""Overlapping additive Schwarz iteration and the Newton drivers built on it.

Each outer (Newton) step solves ``J dX = -F`` with the stationary iteration

    r   = b - J p
    p  += alpha * sum_i  (R_i^T  A_i^{-1} R_i r)    restricted to owned dofs

where ``A_i = R_i J R_i^T`` is the Jacobian restricted to the overlapping
subdomain i. In the default ``"restricted"`` combination each dof takes its
update only from the subdomain that owns it; ``"sum"`` adds the overlapping
contributions instead. ``alpha`` is 1 on dofs interior to their owner and a
smaller value on dofs of interface nodes.

``nas`` refactors every subdomain matrix at every outer step (Newton).
``mnas`` factors once from the first Jacobian and reuses those factors for
all later steps, while residuals and Schwarz residuals still use the
current Jacobian, so the inner solves converge to the same Newton
correction and the outer iteration stays quadratically convergent.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .fem import Assembler, FlowParams, dirichlet_values, uniform_inlet_guess
from .mesh import Mesh
from .partition import SubdomainMap
from .runtime import WorkerPool
from .sparse import CsrMatrix, inf_norm, matvec

__all__ = [
    "SchwarzConfig",
    "ConvergenceError",
    "SchwarzNonConvergence",
    "NewtonNonConvergence",
    "InnerResult",
    "OuterRecord",
    "NewtonState",
    "schwarz_iterate",
    "newton_solve",
    "nas_solve",
    "mnas_solve",
    "initial_guess",
]

ALGORITHMS = ("nas", "mnas")


@dataclass(frozen=True)
class SchwarzConfig:
    alpha_interior: float = 1.0
    alpha_interface: float = 0.6
    inner_tol: float = 1e-8
    max_inner: int = 500
    combine: str = "restricted"
    guard_window: int = 50          # iterations over which the update must shrink
    guard_factor: float = 10.0      # by at least this factor

    def __post_init__(self):
        if self.combine not in ("restricted", "sum"):
            raise ValueError(f"combine must be 'restricted' or 'sum', got {self.combine!r}")
        for name in ("alpha_interior", "alpha_interface"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {getattr(self, name)!r}")
        if not self.inner_tol > 0:
            raise ValueError(f"inner_tol must be positive, got {self.inner_tol!r}")
        if self.max_inner < 1 or self.guard_window < 1 or self.guard_factor <= 1:
            raise ValueError("max_inner and guard_window must be >= 1, guard_factor > 1")


class ConvergenceError(RuntimeError):
    """Base class of the non-convergence errors; ``history`` holds the norms seen."""

    def __init__(self, message: str, history):
        super().__init__(message)
        self.history = list(history)


class SchwarzNonConvergence(ConvergenceError):
    pass


class NewtonNonConvergence(ConvergenceError):
    pass


@dataclass
class InnerResult:
    p: np.ndarray = field(repr=False)
    history: list            # inf-norm of each update
    iterations: int
    solve_time: float = 0.0          # scatter, local solves and gather
    communication_time: float = 0.0  # combining local solutions at the coordinator
    residual_time: float = 0.0


def _combine(smap: SubdomainMap, locs, alpha, mode):
    upd = np.zeros(smap.n_dofs)
    if mode == "restricted":
        for i, x in enumerate(locs):
            upd[smap.owned_dofs[i]] = x[smap.owned_local[i]]
    else:
        for i, x in enumerate(locs):
            upd[smap.dofs[i]] += x
    return upd * alpha


def schwarz_iterate(A: CsrMatrix, b, p0, pool: WorkerPool, smap: SubdomainMap,
                    cfg: SchwarzConfig = SchwarzConfig(), factors_current: bool = True
                    ) -> InnerResult:
    """Run the additive Schwarz iteration on ``A p = b`` from ``p0``.

    ``pool`` must already hold factors, of ``A`` (``factors_current``) or of
    an earlier matrix on the same pattern. Stops when the inf-norm of the
    update drops to ``cfg.inner_tol``, or after one sweep when a single
    subdomain holds current factors; raises :class:`SchwarzNonConvergence` when
    ``max_inner`` is reached, the update stops shrinking by
    ``guard_factor`` per ``guard_window`` iterations, or turns non-finite.
    """
    b = np.asarray(b, dtype=np.float64)
    p = np.array(p0, dtype=np.float64)
    if b.shape != (A.n_rows,) or p.shape != (A.n_rows,):
        raise ValueError("right-hand side or initial guess does not match the matrix")
    alpha = smap.relaxation(cfg.alpha_interior, cfg.alpha_interface)
    direct = smap.s == 1 and factors_current
    hist: list[float] = []
    t_solve = t_comb = t_res = 0.0
    for k in range(cfg.max_inner):
        t0 = time.perf_counter()
        r = b - matvec(A, p)
        t_res += time.perf_counter() - t0
        t0 = time.perf_counter()
        locs = pool.scatter_solve_gather(r)
        t1 = time.perf_counter()
        upd = _combine(smap, locs, alpha, cfg.combine)
        p += upd
        t_comb += time.perf_counter() - t1
        t_solve += t1 - t0
        norm = inf_norm(upd)
        hist.append(norm)
        if not np.isfinite(norm):
            raise SchwarzNonConvergence(f"Schwarz update became non-finite at iteration {k + 1}",
                                        hist)
        # one subdomain: the sweep was a direct solve, further sweeps only see round-off
        if norm <= cfg.inner_tol or direct:
            return InnerResult(p, hist, k + 1, t_solve, t_comb, t_res)
        w = cfg.guard_window
        if k >= w and norm > hist[k - w] / cfg.guard_factor:
            raise SchwarzNonConvergence(
                f"Schwarz update stagnated: {norm:.3e} after {k + 1} iterations, "
                f"{hist[k - w]:.3e} {w} iterations earlier", hist)
    raise SchwarzNonConvergence(
        f"Schwarz iteration reached {cfg.max_inner} iterations with update {hist[-1]:.3e}",
        hist)


@dataclass
class OuterRecord:
    k: int
    update_norm: float          # inf-norm of the Newton correction
    residual_norm: float        # inf-norm of F before the correction
    inner_iterations: int
    inner_history: list = field(repr=False)
    factorized: bool
    times: dict = field(default_factory=dict)


@dataclass
class NewtonState:
    X: np.ndarray = field(repr=False)
    algorithm: str
    converged: bool
    history: list               # OuterRecord per outer iteration
    n_factorizations: int
    setup_time: float = 0.0
    total_time: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.history)

    @property
    def k(self) -> int:
        """Index of the last outer iteration."""
        return len(self.history) - 1

    @property
    def update_norms(self) -> list[float]:
        return [h.update_norm for h in self.history]

    @property
    def residual_norms(self) -> list[float]:
        return [h.residual_norm for h in self.history]

    @property
    def inner_iterations(self) -> list[int]:
        return [h.inner_iterations for h in self.history]

    def timing_totals(self) -> dict:
        out: dict[str, float] = {}
        for h in self.history:
            for key, v in h.times.items():
                out[key] = out.get(key, 0.0) + v
        return out


def initial_guess(mesh: Mesh) -> np.ndarray:
    """Plug flow with the inlet and wall values imposed."""
    X = uniform_inlet_guess(mesh)
    dofs, g = dirichlet_values(mesh)
    X[dofs] = g
    return X


def newton_solve(mesh: Mesh, params: FlowParams, smap: SubdomainMap,
                 algorithm: str = "nas", cfg: SchwarzConfig = SchwarzConfig(),
                 newton_tol: float = 1e-6, alpha_newton: float = 1.0, max_outer: int = 50,
                 X0=None, pool: WorkerPool | None = None, n_workers: int = 1,
                 backend: str = "thread", ordering: str = "nd", perturb: bool = False,
                 assembler: Assembler | None = None, callback=None) -> NewtonState:
    """Newton (``"nas"``) or modified Newton (``"mnas"``) with Schwarz inner solves.

    Stops when the inf-norm of the correction is below ``newton_tol``. A pool
    passed in is set up here and left open; otherwise a temporary one is
    created and closed.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {algorithm!r}")
    if not newton_tol > 0 or not alpha_newton > 0 or max_outer < 1:
        raise ValueError("newton_tol and alpha_newton must be positive, max_outer >= 1")
    if smap.n_dofs != mesh.n_dofs:
        raise ValueError("subdomain map does not match the mesh")
    t_start = time.perf_counter()
    asm = assembler or Assembler(mesh)
    X = initial_guess(mesh) if X0 is None else np.array(X0, dtype=np.float64)
    own_pool = pool is None
    if own_pool:
        pool = WorkerPool(n_workers, backend)
    try:
        t0 = time.perf_counter()
        pool.setup(asm.pattern, smap, ordering, perturb)
        setup_time = time.perf_counter() - t0
        history: list[OuterRecord] = []
        n_fact = 0
        for k in range(max_outer):
            times = {}
            t0 = time.perf_counter()
            out = asm.assemble(X, params)
            times["assemble"] = time.perf_counter() - t0
            refactor = algorithm == "nas" or k == 0
            if refactor:
                t0 = time.perf_counter()
                pool.factorize(out.J)
                times["factorize"] = time.perf_counter() - t0
                n_fact += smap.s
            try:
                inner = schwarz_iterate(out.J, -out.F, np.zeros_like(X), pool, smap, cfg,
                                        factors_current=refactor)
            except SchwarzNonConvergence as exc:
                raise SchwarzNonConvergence(f"outer iteration {k}: {exc}", exc.history) from exc
            times["solve"] = inner.solve_time
            times["communication"] = inner.communication_time
            times["residual"] = inner.residual_time
            dX = inner.p
            X = X + alpha_newton * dX
            rec = OuterRecord(k, inf_norm(dX), inf_norm(out.F), inner.iterations,
                              inner.history, refactor, times)
            history.append(rec)
            if callback is not None:
                callback(rec)
            if not np.isfinite(rec.update_norm):
                raise NewtonNonConvergence(f"Newton correction became non-finite at step {k}",
                                           [h.update_norm for h in history])
            if rec.update_norm < newton_tol:
                return NewtonState(X, algorithm, True, history, n_fact, setup_time,
                                   time.perf_counter() - t_start)
        raise NewtonNonConvergence(
            f"{algorithm} did not converge in {max_outer} outer iterations "
            f"(last correction {history[-1].update_norm:.3e})",
            [h.update_norm for h in history])
    finally:
        if own_pool:
            pool.close()


def nas_solve(mesh, params, smap, **kw) -> NewtonState:
    return newton_solve(mesh, params, smap, "nas", **kw)


def mnas_solve(mesh, params, smap, **kw) -> NewtonState:
    return newton_solve(mesh, params, smap, "mnas", **kw)
