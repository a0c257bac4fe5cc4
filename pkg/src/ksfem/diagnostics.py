"""Discrete invariants and indicators tracked along a run.

Everything here is a pure function of nodal values and the assembled
``M`` (lumped mass) and ``A`` (stiffness). The constants that only appear
symbolically in the convergence theory are gathered in
:class:`IndicatorConfig` and default to 1; the boolean restriction flags are
indicators, not statements of truth.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .fem import LumpedMass, SparseOperator, discrete_laplacian
from .mesh import Mesh, mesh_size

__all__ = [
    "CSV_COLUMNS",
    "StepRecord",
    "IndicatorConfig",
    "MoserTrudinger",
    "Indicators",
    "energy_E0",
    "energy_E1",
    "moser_trudinger_pair",
    "restriction_indicators",
    "b2_scan",
    "step_record",
    "emit_records",
    "read_records",
]

CSV_COLUMNS = (
    "n", "t", "mass_u", "mass_v", "min_u", "max_u", "min_v", "max_v", "E0", "E1",
    "grad_u_sq", "grad_v_sq", "lap_v_lumped_sq", "v_mass_residual", "e0_decrement",
    "positivity_u", "positivity_v",
)


def _arr(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def entropy(u, M: LumpedMass) -> float:
    """``(u log u, 1)_h``; ``nan`` if any nodal value is negative, ``0 log 0 = 0``."""
    uu = _arr(u)
    if np.any(uu < 0):
        return float("nan")
    pos = uu > 0
    return float(np.dot(M.diagonal[pos], uu[pos] * np.log(uu[pos])))


def energy_E0(u, v, M: LumpedMass, A: SparseOperator) -> float:
    """Lyapunov energy ``1/2 |v|_h^2 + 1/2 |grad v|^2 - (u, v)_h + (u log u, 1)_h``.

    Returns ``nan`` when ``u`` has a negative nodal value (entropy undefined).
    """
    uu, vv = _arr(u), _arr(v)
    ent = entropy(uu, M)
    if math.isnan(ent):
        return ent
    return 0.5 * M.inner(vv, vv) + 0.5 * float(vv @ (A @ vv)) - M.inner(uu, vv) + ent


def energy_E1(u, v, M: LumpedMass, A: SparseOperator) -> float:
    """``|u|_h^2 + |lap_h v|_h^2`` with the lumped discrete Laplacian."""
    uu = _arr(u)
    w = discrete_laplacian(v, M, A)
    return M.inner(uu, uu) + M.inner(w, w)


@dataclass(frozen=True)
class IndicatorConfig:
    """Parameters of the restriction indicators.

    ``generic_C`` stands in for every unspecified constant (``C``,
    ``C_Omega``, ``C_MT``); ``theta_omega`` is the smallest interior angle of
    the domain boundary.
    """

    delta: float = 0.5
    epsilon: float = 0.5
    theta_omega: float = math.pi / 2
    generic_C: float = 1.0

    def __post_init__(self):
        if not (0 < self.delta < 1 and 0 < self.epsilon < 1):
            raise ValueError("delta and epsilon must lie in (0, 1)")
        if not (self.theta_omega > 0 and self.generic_C > 0):
            raise ValueError("theta_omega and generic_C must be positive")

    def smallness_holds(self, u0_l1: float) -> bool:
        """``(1+d)^2 [8 theta C eps + 1] |u0|_1 / (8 theta) <= 1/2``."""
        th, c = self.theta_omega, self.generic_C
        lhs = (1 + self.delta) ** 2 * (8 * th * c * self.epsilon + 1) * u0_l1 / (8 * th)
        return bool(lhs <= 0.5)


@dataclass(frozen=True)
class MoserTrudinger:
    lhs: float
    rhs: float
    overflow: bool
    positive: bool

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if math.isfinite(self.rhs) else 0.0


def moser_trudinger_pair(u, M: LumpedMass, A: SparseOperator,
                         cfg: IndicatorConfig = IndicatorConfig()) -> MoserTrudinger:
    """Both sides of the lumped Moser-Trudinger bound.

    ``lhs = sum_i M_i exp(u_i)``;
    ``rhs = C (1 + C |grad u|^2) exp(|grad u|^2 / (8 theta) + |u|_1 / |Omega|)``.
    The inequality is reported, never asserted: it involves unknown constants.
    """
    uu = _arr(u)
    grad_sq = max(float(uu @ (A @ uu)), 0.0)
    measure = float(M.diagonal.sum())
    l1 = float(np.dot(M.diagonal, np.abs(uu)))
    c = cfg.generic_C
    with np.errstate(over="ignore"):
        lhs = float(np.dot(M.diagonal, np.exp(uu)))
        expo = np.exp(grad_sq / (8.0 * cfg.theta_omega) + l1 / measure)
        rhs = float(c * (1.0 + c * grad_sq) * expo)
    overflow = not (math.isfinite(lhs) and math.isfinite(rhs))
    return MoserTrudinger(lhs, rhs, overflow, bool(np.all(uu > 0)))


@dataclass(frozen=True)
class Indicators:
    """Initial-data quantities and the three restriction indicators.

    ``F`` overflows double precision for most data of interest, so ``log_F``
    is kept alongside; the ``cond_*`` flags are evaluated in log space.
    """

    R0: float
    B0: float
    B1: float
    B2: float
    F: float
    log_F: float
    cond_hk: bool
    cond_h: bool
    cond_hII: bool
    smallness: bool
    valid: bool
    E0: float
    E1: float
    c_neg: float
    h: float


def _r0(u0_l1: float, v0_l1: float, measure: float, cfg: IndicatorConfig) -> float:
    d, e, c = cfg.delta, cfg.epsilon, cfg.generic_C
    return 1.0 / (d * math.e) + u0_l1 / d * (
        c / e + e + (1.0 + d) / measure * (v0_l1 + u0_l1)
    )


def _bounds(E0: float, R0: float, delta: float, measure: float) -> tuple[float, float, float]:
    B0 = E0 / delta + R0
    B1 = (1.0 + 1.0 / delta) * E0 + R0 + 2.0 * measure / math.e
    B2 = E0 + B0 + B1
    return B0, B1, B2


def restriction_indicators(u0, v0, M: LumpedMass, A: SparseOperator, mesh: Mesh, k: float,
                           cfg: IndicatorConfig = IndicatorConfig(),
                           final_time: float = 1.0) -> Indicators:
    """Evaluate ``R0, B0, B1, B2, F`` and the time/mesh-step restrictions.

    Parameters
    ----------
    u0, v0 : array_like
        Discrete initial data.
    M, A : assembled operators on ``mesh``
    mesh : Mesh
        Used for the mesh size ``h`` and the measured ``C_neg``, taken as
        the smallest ``-A_ij`` over mesh edges (non-positive on non-acute
        meshes, which makes ``cond_h`` fail).
    k : float
        Time step.
    cfg : IndicatorConfig
    final_time : float
        Horizon ``T`` entering ``F``.

    Notes
    -----
    ``cond_h`` uses ``p = infinity`` so that ``h^(1 - 2/p) = h``. With
    negative ``u0`` the energy is undefined and ``valid`` is False; all
    conditions are then reported False.
    """
    uu, vv = _arr(u0), _arr(v0)
    measure = float(M.diagonal.sum())
    u_l1 = float(np.dot(M.diagonal, np.abs(uu)))
    v_l1 = float(np.dot(M.diagonal, np.abs(vv)))
    E0 = energy_E0(uu, vv, M, A)
    E1 = energy_E1(uu, vv, M, A)
    h = mesh_size(mesh)
    c_neg = float(np.min(-A.edge_values(mesh.edges)))
    C = cfg.generic_C
    R0 = _r0(u_l1, v_l1, measure, cfg)
    smallness = cfg.smallness_holds(u_l1)
    valid = math.isfinite(E0)
    cond_hII = bool(C * h * E1 <= 5.0 / 12.0)
    if not valid:
        nan = float("nan")
        return Indicators(R0, nan, nan, nan, nan, nan, False, False, cond_hII, smallness,
                          False, E0, E1, c_neg, h)
    B0, B1, B2 = _bounds(E0, R0, cfg.delta, measure)
    T = float(final_time)
    factor = E0 + C * T * B1 ** 3 + C * T * u_l1
    if B2 >= 0 and factor > 0:
        log_F = B2 + math.sqrt(T * B2) + math.log(factor)
        F = math.exp(log_F) if log_F < 709.0 else math.inf
    else:
        F = math.exp(B2 + math.sqrt(max(T * B2, 0.0))) * factor
        log_F = math.log(F) if F > 0 else -math.inf
    cond_hk = bool(math.log(C * k / h ** 2) + log_F < math.log(0.5))
    cond_h = bool(c_neg > 0 and math.log(C * h) + 0.5 * log_F < math.log(c_neg))
    return Indicators(R0, B0, B1, B2, F, log_F, cond_hk, cond_h, cond_hII, smallness,
                      True, E0, E1, c_neg, h)


def b2_scan(u0, v0, M: LumpedMass, A: SparseOperator, target: float,
            deltas: Optional[Sequence[float]] = None,
            epsilons: Optional[Sequence[float]] = None,
            generic_C: float = 1.0) -> tuple[float, float, float]:
    """Grid search for the ``(delta, epsilon)`` whose ``B2`` is closest to ``target``.

    Returns ``(delta, epsilon, B2)``.
    """
    deltas = np.linspace(0.05, 0.95, 91) if deltas is None else deltas
    epsilons = np.linspace(0.05, 0.95, 91) if epsilons is None else epsilons
    uu, vv = _arr(u0), _arr(v0)
    measure = float(M.diagonal.sum())
    u_l1 = float(np.dot(M.diagonal, np.abs(uu)))
    v_l1 = float(np.dot(M.diagonal, np.abs(vv)))
    E0 = energy_E0(uu, vv, M, A)
    best = None
    for d in deltas:
        for e in epsilons:
            cfg = IndicatorConfig(delta=float(d), epsilon=float(e), generic_C=generic_C)
            B2 = _bounds(E0, _r0(u_l1, v_l1, measure, cfg), cfg.delta, measure)[2]
            if best is None or abs(B2 - target) < abs(best[2] - target):
                best = (float(d), float(e), B2)
    return best


@dataclass(frozen=True)
class StepRecord:
    n: int
    t: float
    mass_u: float
    mass_v: float
    min_u: float
    max_u: float
    min_v: float
    max_v: float
    E0: float
    E1: float
    grad_u_sq: float
    grad_v_sq: float
    lap_v_lumped_sq: float
    v_mass_residual: Optional[float]
    e0_decrement: Optional[float]
    positivity_u: bool
    positivity_v: bool

    @property
    def e0_valid(self) -> bool:
        return math.isfinite(self.E0)


def step_record(state, M: LumpedMass, A: SparseOperator,
                previous: Optional[StepRecord] = None) -> StepRecord:
    """Diagnostics of one :class:`~ksfem.scheme.SchemeState`.

    ``previous`` (the record of step ``n - 1``) enables the v-mass
    recursion residual and the energy decrement.
    """
    u, v = state.u.values, state.v.values
    k = state.k
    mass_u = float(np.dot(M.diagonal, u))
    mass_v = float(np.dot(M.diagonal, v))
    w = discrete_laplacian(v, M, A)
    lap_sq = M.inner(w, w)
    E0 = energy_E0(u, v, M, A)
    if previous is None:
        residual = decrement = None
    else:
        residual = (1.0 + k) * mass_v - previous.mass_v - k * mass_u
        decrement = E0 - previous.E0
    return StepRecord(
        n=int(state.n),
        t=float(state.t),
        mass_u=mass_u,
        mass_v=mass_v,
        min_u=float(u.min()),
        max_u=float(u.max()),
        min_v=float(v.min()),
        max_v=float(v.max()),
        E0=E0,
        E1=M.inner(u, u) + lap_sq,
        grad_u_sq=float(u @ (A @ u)),
        grad_v_sq=float(v @ (A @ v)),
        lap_v_lumped_sq=lap_sq,
        v_mass_residual=residual,
        e0_decrement=decrement,
        positivity_u=bool(u.min() > 0),
        positivity_v=bool(v.min() >= 0),
    )


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    return f"{value:.17g}"


def emit_records(records: Sequence[StepRecord], path: Union[str, Path]) -> None:
    """Write records as CSV with the fixed column order of :data:`CSV_COLUMNS`."""
    if not records:
        raise ValueError("no records to write")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            row = asdict(rec)
            writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])


def _parse(name: str, text: str):
    if name == "n":
        return int(text)
    if name.startswith("positivity"):
        return text == "true"
    if text == "":
        return None
    return float(text)


def read_records(path: Union[str, Path]) -> list[StepRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected diagnostics header {header}")
        return [StepRecord(**{c: _parse(c, x) for c, x in zip(header, row)}) for row in reader]


def records_as_arrays(records: Iterable[StepRecord]) -> dict[str, np.ndarray]:
    """Column-wise view of records; ``None`` becomes ``nan``."""
    records = list(records)
    out = {}
    for f in fields(StepRecord):
        col = [getattr(r, f.name) for r in records]
        out[f.name] = np.array([np.nan if x is None else x for x in col])
    return out
