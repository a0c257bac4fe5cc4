import functools
import sys
import time
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pytest
import scipy.spatial

sys.path.insert(0, str(Path(__file__).parent))

from ksfem.cli import blowup_data, nonblowup_data
from ksfem.fem import assemble_lumped_mass, assemble_stiffness, nodal_interpolate
from ksfem.mesh import Mesh, build_macro_mesh
from ksfem.scheme import SchemeConfig, run


@functools.lru_cache(maxsize=None)
def macro_mesh(n, kind="Acute"):
    return build_macro_mesh(n, kind)


@functools.lru_cache(maxsize=None)
def operators(n, kind="Acute"):
    m = macro_mesh(n, kind)
    return m, assemble_lumped_mass(m), assemble_stiffness(m)


class TimedRun(NamedTuple):
    records: list
    seconds: float  # wall time of the first (uncached) computation, mesh included


def _timed_run(data, kind, nsquare, k, steps) -> TimedRun:
    start = time.perf_counter()
    m = build_macro_mesh(nsquare, kind)
    f_u, f_v = data
    u0, v0 = nodal_interpolate(f_u, m), nodal_interpolate(f_v, m)
    records, _ = run(m, u0, v0, SchemeConfig(k, steps))
    return TimedRun(records, time.perf_counter() - start)


@functools.lru_cache(maxsize=None)
def nonblowup_run(c0, kind="Acute", nsquare=50, k=1e-4, steps=50) -> TimedRun:
    """Bell-data run, cached for the whole session."""
    return _timed_run(nonblowup_data(c0), kind, nsquare, k, steps)


@functools.lru_cache(maxsize=None)
def blowup_run(kind="Acute", nsquare=100, k=1e-6, steps=100) -> TimedRun:
    return _timed_run(blowup_data(1000.0, 500.0), kind, nsquare, k, steps)


def unit_square_two_triangles():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    return Mesh(v, [[0, 1, 2], [0, 2, 3]])


def random_delaunay_mesh(seed, npts=40):
    """Delaunay triangulation of the square corners plus random points."""
    rng = np.random.default_rng(seed)
    pts = np.vstack([[[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]],
                     rng.uniform(-0.45, 0.45, size=(npts, 2))])
    tri = scipy.spatial.Delaunay(pts).simplices.copy()
    p = pts[tri]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    cw = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    tri[cw] = tri[cw][:, [0, 2, 1]]
    return Mesh(pts, tri)


def small_meshes():
    """Every mesh with at most 200 triangles used by the oracle checks."""
    meshes = [unit_square_two_triangles()]
    for n in (1, 2, 3):
        for kind in ("Acute", "NonAcute"):
            meshes.append(build_macro_mesh(n, kind))
    meshes += [random_delaunay_mesh(s) for s in range(3)]
    assert all(m.n_triangles <= 200 for m in meshes)
    return meshes


_ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects ``criterion -> (passed, detail)`` for the summary table."""
    return _ACCEPTANCE


def record_check(report, key, ok, detail):
    """Store the outcome for the summary table, then assert it."""
    report[key] = (bool(ok), detail)
    assert ok, f"{key}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[0])):
        passed, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {key}: {detail}")
