"""Experiment runner: scenario presets, parameter sweeps, CSV/VTK output.

Usage::

    ksfem run   [--config FILE] [--scenario NonBlowup|Blowup|Custom] [--nsquare N]
                [--macro Acute|NonAcute] [--k K] [--steps N] [--c0 C] [--cu C] [--cv C]
                [--u0 EXPR] [--v0 EXPR] [--out DIR] [--snapshots 0,25,50]
                [--solver Direct|Iterative] [--run-id NAME]
    ksfem sweep --values 70,80,90,100 [same options] [--jobs N]

A config file holds ``key = value`` lines using the option names above
(``#`` starts a comment); command-line flags override it. Each run writes
``<out>/<run-id>/{config.echo, mesh.ksmesh, diagnostics.csv, u_<n>.vtk,
v_<n>.vtk}``. Exit codes: 0 success, 2 configuration or I/O error,
3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import enum
import logging
import math
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .diagnostics import emit_records
from .fem import nodal_interpolate
from .mesh import MacroKind, build_macro_mesh, save_mesh
from .scheme import LinearSolveError, SchemeConfig, SolverKind, run
from .vtkio import read_vtk, write_vtk

__all__ = [
    "ScenarioKind",
    "Scenario",
    "ConfigError",
    "RunResult",
    "nonblowup_data",
    "blowup_data",
    "run_scenario",
    "sweep",
    "main",
]

log = logging.getLogger("ksfem")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


class ConfigError(ValueError):
    pass


class ScenarioKind(enum.Enum):
    NON_BLOWUP = "NonBlowup"
    BLOWUP = "Blowup"
    CUSTOM = "Custom"

    @classmethod
    def parse(cls, value) -> "ScenarioKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        for kind in cls:
            if kind.value.lower() == key:
                return kind
        raise ConfigError(f"unknown scenario {value!r}")


_PRESETS = {
    ScenarioKind.NON_BLOWUP: dict(nsquare=50, k=1e-4, n_steps=50, snapshot_steps=(0, 25, 50)),
    ScenarioKind.BLOWUP: dict(nsquare=100, k=1e-6, n_steps=100,
                              snapshot_steps=(0, 30, 60, 88)),
    ScenarioKind.CUSTOM: dict(nsquare=10, k=1e-4, n_steps=10, snapshot_steps=(0,)),
}


@dataclass(frozen=True)
class Scenario:
    """One experiment.

    ``c0`` parametrises the non-blowup bell data, ``(cu, cv)`` the blowup
    data; ``Custom`` scenarios take numpy expressions in ``x`` and ``y``
    (``u0_expr``, ``v0_expr``).
    """

    kind: ScenarioKind = ScenarioKind.NON_BLOWUP
    nsquare: Optional[int] = None
    macro_kind: MacroKind = MacroKind.ACUTE
    k: Optional[float] = None
    n_steps: Optional[int] = None
    c0: float = 70.0
    cu: float = 1000.0
    cv: float = 500.0
    u0_expr: Optional[str] = None
    v0_expr: Optional[str] = None
    output_dir: Path = Path("runs")
    snapshot_steps: Optional[tuple[int, ...]] = None
    solver_kind: SolverKind = SolverKind.DIRECT
    run_id: Optional[str] = None

    def resolved(self) -> "Scenario":
        """Fill preset defaults and validate."""
        kind = ScenarioKind.parse(self.kind)
        preset = _PRESETS[kind]
        s = replace(
            self,
            kind=kind,
            macro_kind=MacroKind.parse(self.macro_kind),
            solver_kind=SolverKind.parse(self.solver_kind),
            nsquare=preset["nsquare"] if self.nsquare is None else int(self.nsquare),
            k=preset["k"] if self.k is None else float(self.k),
            n_steps=preset["n_steps"] if self.n_steps is None else int(self.n_steps),
            c0=float(self.c0), cu=float(self.cu), cv=float(self.cv),
            output_dir=Path(self.output_dir),
        )
        if s.snapshot_steps is None:
            snaps = tuple(n for n in preset["snapshot_steps"] if n <= s.n_steps)
        else:
            snaps = tuple(sorted({int(n) for n in s.snapshot_steps}))
        s = replace(s, snapshot_steps=snaps)
        if s.macro_kind is MacroKind.EXTERNAL:
            raise ConfigError("macro must be Acute or NonAcute")
        if s.nsquare < 1 or s.n_steps < 0 or not s.k > 0:
            raise ConfigError("nsquare, k must be positive and steps non-negative")
        if not (s.c0 > 0 and s.cu > 0 and s.cv > 0):
            raise ConfigError("c0, cu, cv must be positive")
        if any(n < 0 or n > s.n_steps for n in snaps):
            raise ConfigError(f"snapshot steps {snaps} outside [0, {s.n_steps}]")
        if kind is ScenarioKind.CUSTOM and not (s.u0_expr and s.v0_expr):
            raise ConfigError("Custom scenarios need both u0 and v0 expressions")
        if s.run_id is None:
            s = replace(s, run_id=s.default_run_id())
        return s

    def default_run_id(self) -> str:
        kind = ScenarioKind.parse(self.kind)
        macro = MacroKind.parse(self.macro_kind).value.lower()
        base = f"{kind.value.lower()}-{macro}-n{self.nsquare}"
        if kind is ScenarioKind.NON_BLOWUP:
            return f"{base}-c0_{self.c0:g}"
        if kind is ScenarioKind.BLOWUP:
            return f"{base}-cu_{self.cu:g}-cv_{self.cv:g}"
        return base

    def echo(self) -> str:
        s = self.resolved()
        lines = [
            f"scenario = {s.kind.value}",
            f"nsquare = {s.nsquare}",
            f"macro = {s.macro_kind.value}",
            f"k = {s.k!r}",
            f"steps = {s.n_steps}",
        ]
        if s.kind is ScenarioKind.NON_BLOWUP:
            lines.append(f"c0 = {s.c0!r}")
        elif s.kind is ScenarioKind.BLOWUP:
            lines += [f"cu = {s.cu!r}", f"cv = {s.cv!r}"]
        else:
            lines += [f"u0 = {s.u0_expr}", f"v0 = {s.v0_expr}"]
        lines += [
            f"snapshots = {','.join(map(str, s.snapshot_steps))}",
            f"solver = {s.solver_kind.value}",
            f"run_id = {s.run_id}",
        ]
        return "\n".join(lines) + "\n"


def nonblowup_data(c0: float):
    """Bell-shaped data centred at the origin (u) and the top edge midpoint (v)."""
    def u0(x, y):
        return c0 * np.exp(-c0 * (x ** 2 + y ** 2))

    def v0(x, y):
        return c0 * np.exp(-c0 * (x ** 2 + (y - 0.5) ** 2))

    return u0, v0


def blowup_data(cu: float, cv: float):
    """Concentrated data centred at the origin."""
    def u0(x, y):
        return cu * np.exp(-0.1 * cu * (x ** 2 + y ** 2))

    def v0(x, y):
        return cv * np.exp(-0.1 * cv * (x ** 2 + y ** 2))

    return u0, v0


_EXPR_NAMES = {
    name: getattr(np, name)
    for name in ("exp", "log", "sin", "cos", "tan", "sqrt", "abs", "tanh", "cosh", "sinh",
                 "pi", "e", "minimum", "maximum", "where", "ones_like", "zeros_like")
}


def _expression(text: str):
    try:
        code = compile(text, "<expression>", "eval")
    except SyntaxError as exc:
        raise ConfigError(f"bad expression {text!r}: {exc.msg}") from None
    for name in code.co_names:
        if name not in _EXPR_NAMES and name not in ("x", "y"):
            raise ConfigError(f"expression {text!r} uses unknown name {name!r}")

    def f(x, y):
        return eval(code, {"__builtins__": {}}, dict(_EXPR_NAMES, x=x, y=y))

    return f


def initial_data(s: Scenario):
    if s.kind is ScenarioKind.NON_BLOWUP:
        return nonblowup_data(s.c0)
    if s.kind is ScenarioKind.BLOWUP:
        return blowup_data(s.cu, s.cv)
    return _expression(s.u0_expr), _expression(s.v0_expr)


@dataclass
class RunResult:
    scenario: Scenario
    directory: Path
    records: list = field(default_factory=list)
    error: Optional[str] = None
    status: int = EXIT_OK


def run_scenario(scenario: Scenario) -> RunResult:
    """Run one scenario and write its output directory.

    Loss of positivity is recorded, never fatal. A solver failure stops the
    run; diagnostics up to the failing step are still written and the
    result carries the error (``status == 3``).

    Raises
    ------
    ConfigError
        Invalid scenario, or the output directory cannot be written.
    """
    s = scenario.resolved()
    if s.kind is ScenarioKind.NON_BLOWUP and s.c0 < 40:
        warnings.warn(f"c0 = {s.c0:g} < 40: the bell data are far from Neumann-compatible",
                      stacklevel=2)
    outdir = s.output_dir / s.run_id
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "config.echo").write_text(s.echo())
    except OSError as exc:
        raise ConfigError(f"cannot write to {outdir}: {exc}") from None

    mesh = build_macro_mesh(s.nsquare, s.macro_kind)
    save_mesh(mesh, outdir / "mesh.ksmesh")
    f_u, f_v = initial_data(s)
    try:
        u0 = nodal_interpolate(f_u, mesh)
        v0 = nodal_interpolate(f_v, mesh)
    except (ValueError, TypeError, NameError, ArithmeticError) as exc:
        raise ConfigError(f"cannot evaluate initial data: {exc}") from None
    snaps = set(s.snapshot_steps)

    def snapshot(state):
        if state.n not in snaps:
            return
        for name, field_ in (("u", state.u), ("v", state.v)):
            path = outdir / f"{name}_{state.n}.vtk"
            write_vtk(path, mesh, {name: field_.values},
                      title=f"{s.run_id} {name} n={state.n} t={state.t!r}")
            _, _, data = read_vtk(path)
            if not np.array_equal(data[name], field_.values):
                raise RuntimeError(f"VTK self-check failed for {path}")

    cfg = SchemeConfig(k=s.k, n_steps=s.n_steps, solver_kind=s.solver_kind)
    result = RunResult(s, outdir)
    log.info("running %s: %d triangles, %d steps", s.run_id, mesh.n_triangles, s.n_steps)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # positivity of the data is recorded per step
        try:
            result.records, _ = run(mesh, u0, v0, cfg, on_step=snapshot)
        except LinearSolveError as exc:
            result.records = getattr(exc, "records", [])
            result.error = str(exc)
            result.status = EXIT_SOLVER
            log.error("%s: solver failure: %s", s.run_id, exc)
    if result.records:
        emit_records(result.records, outdir / "diagnostics.csv")
    return result


def _run_one(s: Scenario) -> RunResult:
    try:
        return run_scenario(s)
    except ConfigError as exc:
        return RunResult(s, s.output_dir / (s.run_id or ""), error=str(exc), status=EXIT_CONFIG)


def sweep(base: Scenario, values: Sequence[float], jobs: int = 1):
    """Run a non-blowup scenario for each ``c0`` in ``values``.

    Writes one run directory per value and ``<out>/sweep_min_u.csv`` with
    columns ``n, t, min_u@C0=<value>...``; a failed run leaves its column
    blank from the failing step on and the remaining values still run.

    Returns
    -------
    list of RunResult
    """
    base = base.resolved()
    if base.kind is not ScenarioKind.NON_BLOWUP:
        raise ConfigError("sweep needs a NonBlowup base scenario")
    if not values:
        raise ConfigError("sweep needs at least one value")
    scenarios = [replace(base, c0=float(c), run_id=None).resolved() for c in values]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, scenarios))
    else:
        results = [_run_one(s) for s in scenarios]

    table = base.output_dir / "sweep_min_u.csv"
    with open(table, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["n", "t"] + [f"min_u@C0={c:g}" for c in values])
        for n in range(base.n_steps + 1):
            row = [str(n), f"{n * base.k:.17g}"]
            for r in results:
                row.append(f"{r.records[n].min_u:.17g}" if n < len(r.records) else "")
            writer.writerow(row)
    return results


_KEY_ALIASES = {
    "scenario": "kind", "nsquare": "nsquare", "macro": "macro_kind", "k": "k",
    "steps": "n_steps", "c0": "c0", "cu": "cu", "cv": "cv", "u0": "u0_expr",
    "v0": "v0_expr", "out": "output_dir", "snapshots": "snapshot_steps",
    "solver": "solver_kind", "run_id": "run_id",
}


def _convert(field_name: str, text: str):
    try:
        if field_name in ("nsquare", "n_steps"):
            return int(text)
        if field_name in ("k", "c0", "cu", "cv"):
            value = float(text)
            if not math.isfinite(value):
                raise ValueError(text)
            return value
        if field_name == "snapshot_steps":
            return tuple(int(x) for x in text.replace(" ", "").split(",") if x)
        if field_name == "output_dir":
            return Path(text)
        if field_name == "kind":
            return ScenarioKind.parse(text)
        if field_name == "macro_kind":
            return MacroKind.parse(text)
        if field_name == "solver_kind":
            return SolverKind.parse(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {field_name}: {text!r} ({exc})") from None
    return text


def read_config(path) -> dict:
    """Parse a ``key = value`` file into :class:`Scenario` keyword arguments."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in text.split("=", 1))
        key = key.lower().replace("-", "_")
        if key not in _KEY_ALIASES:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        name = _KEY_ALIASES[key]
        out[name] = _convert(name, value)
    return out


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; flags override it")
    common.add_argument("--scenario")
    common.add_argument("--nsquare")
    common.add_argument("--macro")
    common.add_argument("--k")
    common.add_argument("--steps")
    common.add_argument("--c0")
    common.add_argument("--cu")
    common.add_argument("--cv")
    common.add_argument("--u0", help="Custom initial cell density, numpy expression in x, y")
    common.add_argument("--v0", help="Custom initial chemoattractant")
    common.add_argument("--out")
    common.add_argument("--snapshots", help="comma-separated step indices")
    common.add_argument("--solver")
    common.add_argument("--run-id", dest="run_id")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ksfem", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run one scenario")
    p_sweep = sub.add_parser("sweep", parents=[common], help="sweep c0 for NonBlowup")
    p_sweep.add_argument("--values", required=True, help="comma-separated c0 values")
    p_sweep.add_argument("--jobs", type=int, default=1)
    return parser


def scenario_from_args(args: argparse.Namespace) -> Scenario:
    kwargs = read_config(args.config) if args.config else {}
    for key, name in _KEY_ALIASES.items():
        value = getattr(args, key, None)
        if value is not None:
            kwargs[name] = _convert(name, value)
    return Scenario(**kwargs).resolved()


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        scenario = scenario_from_args(args)
        if args.command == "sweep":
            values = [float(x) for x in args.values.split(",") if x.strip()]
            results = sweep(scenario, values, jobs=args.jobs)
        else:
            results = [run_scenario(scenario)]
    except (ConfigError, ValueError) as exc:
        print(f"ksfem: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    status = max(r.status for r in results)
    for r in results:
        if r.error:
            print(f"ksfem: {r.directory}: {r.error}", file=sys.stderr)
        elif r.records:
            last = r.records[-1]
            neg = [rec.n for rec in r.records if not rec.positivity_u]
            print(f"{r.directory}: {len(r.records) - 1} steps, final max_u={last.max_u:.6g}, "
                  f"min_u over run={min(rec.min_u for rec in r.records):.6g}"
                  + (f", u<=0 at steps {neg[0]}..{neg[-1]}" if neg else ""))
    return status


if __name__ == "__main__":
    sys.exit(main())
