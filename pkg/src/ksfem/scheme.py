"""Semi-implicit, decoupled time stepping for the Keller-Segel system.

One step from ``(u^n, v^n)`` solves

    (M/k + A - C(v^n)) u^{n+1} = (M/k) u^n              (nonsymmetric)
    ((1/k + 1) M + A) v^{n+1} = (M/k) v^n + M u^{n+1}  (SPD)

with ``M`` the lumped mass, ``A`` the stiffness matrix and ``C`` the
barycentric chemotaxis operator. Negative values of ``u`` are never clipped.
"""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import (
    FeFunction,
    LumpedMass,
    SparseOperator,
    assemble_chemotaxis,
    assemble_lumped_mass,
    assemble_stiffness,
)
from .mesh import Mesh

__all__ = [
    "SolverKind",
    "SchemeConfig",
    "SchemeState",
    "LinearSolveError",
    "Stepper",
    "u_step",
    "v_step",
    "run",
]

log = logging.getLogger(__name__)


class SolverKind(enum.Enum):
    DIRECT = "Direct"
    ITERATIVE = "Iterative"

    @classmethod
    def parse(cls, value) -> "SolverKind":
        if isinstance(value, cls):
            return value
        for kind in cls:
            if kind.value.lower() == str(value).strip().lower():
                return kind
        raise ValueError(f"unknown solver kind {value!r}")


class LinearSolveError(RuntimeError):
    """A linear solve missed its residual target.

    Attributes
    ----------
    residuals : list of float
        Relative residual after each attempt (direct solve, then refinements,
        or the Krylov iteration history).
    step : int or None
        Time step index being computed, when known.
    """

    def __init__(self, message: str, residuals=(), step: Optional[int] = None):
        self.residuals = list(residuals)
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class SchemeConfig:
    k: float
    n_steps: int
    linear_tol: float = 1e-12
    solver_kind: SolverKind = SolverKind.DIRECT

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError(f"time step must be positive, got {self.k}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 0:
            raise ValueError(f"n_steps must be a non-negative integer, got {self.n_steps}")
        if not (0 < self.linear_tol <= 1e-6):
            raise ValueError(f"linear_tol must lie in (0, 1e-6], got {self.linear_tol}")
        object.__setattr__(self, "solver_kind", SolverKind.parse(self.solver_kind))

    @property
    def final_time(self) -> float:
        return self.n_steps * self.k


@dataclass(frozen=True)
class SchemeState:
    n: int
    k: float
    u: FeFunction
    v: FeFunction

    def __post_init__(self):
        if self.u.mesh is not self.v.mesh and self.u.mesh != self.v.mesh:
            raise ValueError("u and v must live on the same mesh")

    @property
    def t(self) -> float:
        return self.n * self.k

    @property
    def mesh(self) -> Mesh:
        return self.u.mesh


def _relres(matrix, x, rhs) -> float:
    r = rhs - matrix @ x
    nb = np.linalg.norm(rhs)
    return float(np.linalg.norm(r) / nb) if nb > 0 else float(np.linalg.norm(r))


@dataclass
class _Factorized:
    """LU factors reused for repeated solves with one matrix."""

    matrix: sp.csc_matrix
    lu: object = field(repr=False)

    @classmethod
    def of(cls, matrix) -> "_Factorized":
        m = sp.csc_matrix(matrix)
        # The pattern is structurally symmetric (mesh adjacency): a minimum
        # degree ordering on A^T + A with diagonal pivoting preferred keeps
        # fill a third of COLAMD's.
        return cls(m, spla.splu(m, permc_spec="MMD_AT_PLUS_A",
                                options=dict(SymmetricMode=True)))

    def solve(self, rhs: np.ndarray, tol: float, max_refine: int = 3) -> np.ndarray:
        x = self.lu.solve(rhs)
        history = [_relres(self.matrix, x, rhs)]
        while history[-1] > tol and len(history) <= max_refine:
            x = x + self.lu.solve(rhs - self.matrix @ x)
            history.append(_relres(self.matrix, x, rhs))
        if not np.all(np.isfinite(x)) or history[-1] > tol:
            raise LinearSolveError(
                f"direct solve residual {history[-1]:.3e} above tolerance {tol:.1e}", history
            )
        return x


def _solve_direct(matrix, rhs: np.ndarray, tol: float) -> np.ndarray:
    try:
        fact = _Factorized.of(matrix)
    except RuntimeError as exc:  # SuperLU reports singular factors this way
        raise LinearSolveError(f"factorization failed: {exc}") from exc
    return fact.solve(rhs, tol)


def _solve_iterative(matrix, rhs: np.ndarray, tol: float, symmetric: bool,
                     x0: Optional[np.ndarray] = None) -> np.ndarray:
    m = sp.csc_matrix(matrix)
    history: list[float] = []
    nb = np.linalg.norm(rhs) or 1.0

    def record(xk):
        history.append(_relres(m, xk, rhs))

    if symmetric:
        diag = m.diagonal()
        precond = spla.LinearOperator(m.shape, matvec=lambda r: r / diag)
        x, info = spla.cg(m, rhs, x0=x0, rtol=tol, atol=0.0, M=precond,
                          maxiter=10 * m.shape[0], callback=record)
    else:
        ilu = spla.spilu(m, drop_tol=1e-5, fill_factor=10)
        precond = spla.LinearOperator(m.shape, matvec=ilu.solve)
        x, info = spla.gmres(m, rhs, x0=x0, rtol=tol, atol=0.0, M=precond, restart=50,
                             maxiter=200, callback=lambda rk: history.append(float(rk)),
                             callback_type="pr_norm")
    final = float(np.linalg.norm(rhs - m @ x) / nb)
    history.append(final)
    if info != 0 or final > tol:
        raise LinearSolveError(
            f"iterative solve stopped at relative residual {final:.3e} (info={info})", history
        )
    return x


def _solve(matrix, rhs, cfg: SchemeConfig, symmetric: bool, x0=None) -> np.ndarray:
    if cfg.solver_kind is SolverKind.DIRECT:
        return _solve_direct(matrix, rhs, cfg.linear_tol)
    return _solve_iterative(matrix, rhs, cfg.linear_tol, symmetric, x0)


def _u_matrix(mesh: Mesh, v: FeFunction, M: LumpedMass, A: SparseOperator, k: float):
    C = assemble_chemotaxis(mesh, v)
    return (M.matrix * (1.0 / k) + A.matrix - C.matrix).tocsc()


def _v_matrix(M: LumpedMass, A: SparseOperator, k: float):
    return (M.matrix * (1.0 / k + 1.0) + A.matrix).tocsc()


def u_step(state: SchemeState, M: LumpedMass, A: SparseOperator, cfg: SchemeConfig) -> FeFunction:
    """Cell density at the next step: ``(M/k + A - C(v^n)) u = (M/k) u^n``."""
    mesh = state.mesh
    k = cfg.k
    rhs = M @ state.u.values / k
    x = _solve(_u_matrix(mesh, state.v, M, A, k), rhs, cfg, symmetric=False,
               x0=state.u.values)
    return FeFunction(mesh, x)


def v_step(state: SchemeState, u_next: FeFunction, M: LumpedMass, A: SparseOperator,
           cfg: SchemeConfig) -> FeFunction:
    """Chemoattractant at the next step, given the already updated ``u_next``."""
    mesh = state.mesh
    k = cfg.k
    rhs = M @ (state.v.values / k + u_next.values)
    x = _solve(_v_matrix(M, A, k), rhs, cfg, symmetric=True, x0=state.v.values)
    return FeFunction(mesh, x)


class Stepper:
    """Advance ``(u, v)`` on a fixed mesh, reusing ``M``, ``A`` and the v-solver.

    ``M`` and ``A`` are assembled once; ``C(v^n)`` is re-assembled every
    step. With the direct solver the constant SPD v-matrix is factorized
    once.
    """

    def __init__(self, mesh: Mesh, cfg: SchemeConfig, M: Optional[LumpedMass] = None,
                 A: Optional[SparseOperator] = None):
        self.mesh = mesh
        self.cfg = cfg
        self.M = M if M is not None else assemble_lumped_mass(mesh)
        self.A = A if A is not None else assemble_stiffness(mesh)
        self._v_matrix = _v_matrix(self.M, self.A, cfg.k)
        self._v_fact = (_Factorized.of(self._v_matrix)
                        if cfg.solver_kind is SolverKind.DIRECT else None)

    def u_step(self, state: SchemeState) -> FeFunction:
        try:
            return u_step(state, self.M, self.A, self.cfg)
        except LinearSolveError as exc:
            raise LinearSolveError(f"u-system: {exc}", exc.residuals, state.n + 1) from exc

    def v_step(self, state: SchemeState, u_next: FeFunction) -> FeFunction:
        k = self.cfg.k
        rhs = self.M @ (state.v.values / k + u_next.values)
        try:
            if self._v_fact is not None:
                x = self._v_fact.solve(rhs, self.cfg.linear_tol)
            else:
                x = _solve_iterative(self._v_matrix, rhs, self.cfg.linear_tol, True,
                                     state.v.values)
        except LinearSolveError as exc:
            raise LinearSolveError(f"v-system: {exc}", exc.residuals, state.n + 1) from exc
        return FeFunction(self.mesh, x)

    def step(self, state: SchemeState) -> SchemeState:
        u_next = self.u_step(state)
        v_next = self.v_step(state, u_next)
        return SchemeState(state.n + 1, state.k, u_next, v_next)


def run(mesh: Mesh, u0: FeFunction, v0: FeFunction, cfg: SchemeConfig,
        on_step: Optional[Callable[[SchemeState], None]] = None):
    """Run ``cfg.n_steps`` steps from ``(u0, v0)`` and record diagnostics.

    Parameters
    ----------
    mesh : Mesh
    u0, v0 : FeFunction
        Initial data; ``u0 > 0`` and ``v0 >= 0`` are expected (a warning is
        issued otherwise, the run proceeds).
    cfg : SchemeConfig
    on_step : callable, optional
        Called with every state, including the initial one.

    Returns
    -------
    records : list of StepRecord
        One per state, ``n = 0 .. n_steps``.
    state : SchemeState
        Final state.

    Raises
    ------
    LinearSolveError
        With ``.step`` set to the step that failed and ``.records`` holding
        the diagnostics computed before it.
    """
    from .diagnostics import step_record

    if u0.values.min() <= 0:
        warnings.warn("initial cell density is not strictly positive", stacklevel=2)
    if v0.values.min() < 0:
        warnings.warn("initial chemoattractant has negative values", stacklevel=2)
    stepper = Stepper(mesh, cfg)
    state = SchemeState(0, cfg.k, u0, v0)
    records = [step_record(state, stepper.M, stepper.A)]
    if on_step is not None:
        on_step(state)
    for _ in range(cfg.n_steps):
        try:
            new = stepper.step(state)
        except LinearSolveError as exc:
            exc.records = records
            raise
        records.append(step_record(new, stepper.M, stepper.A, previous=records[-1]))
        state = new
        if on_step is not None:
            on_step(state)
        log.debug("step %d  min_u=%.6g  max_u=%.6g", state.n, records[-1].min_u,
                  records[-1].max_u)
    return records, state
