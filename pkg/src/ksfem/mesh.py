"""Triangle meshes of the unit square built from 14-triangle macroelements.

The square ``[-1/2, 1/2]^2`` is divided into ``nsquare x nsquare`` square
macroelements. Each macroelement carries its 4 corners, its 4 edge
midpoints (shared with neighbours) and 4 interior vertices, and is split
into 14 triangles::

    c3 ------ m2 ------ c2
    |  \             /  |
    |    p3 ----- p2    |
    |   / |    /  |  \  |
    m3 <  |  /    |   > m1
    |   \ | /     |  /  |
    |    p0 ----- p1    |
    |  /             \  |
    c0 ------ m0 ------ c1

Interior vertex ``p0``/``p2`` sit on the main diagonal of the macroelement
at local offset ``diag_offset`` from their corner, ``p1``/``p3`` on the
anti-diagonal at ``anti_offset``. The inner quadrilateral is cut along
``p0-p2``, so the triangles ``p0 p1 p2`` and ``p0 p2 p3`` are acute exactly
when ``anti_offset < diag_offset``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Union

import numpy as np

__all__ = [
    "MacroKind",
    "Mesh",
    "MeshError",
    "MeshFormatError",
    "AngleReport",
    "ACUTE_OFFSETS",
    "NON_ACUTE_OFFSETS",
    "build_macro_mesh",
    "triangle_angles",
    "acuteness_report",
    "mesh_size",
    "mesh_edges",
    "is_conforming",
    "save_mesh",
    "load_mesh",
]

PathLike = Union[str, Path]

#: (diag_offset, anti_offset) of the acute macroelement; max angle ~73.74 deg.
ACUTE_OFFSETS = (3.0 / 8.0, 1.0 / 3.0)
#: Same topology with p1/p3 pulled towards the centre; max angle ~151.93 deg.
NON_ACUTE_OFFSETS = (0.3, 0.45)

# Local vertex order: corners c0..c3, midpoints m0..m3 (bottom, right, top,
# left), then interior p0..p3.
_C0, _C1, _C2, _C3, _M0, _M1, _M2, _M3, _P0, _P1, _P2, _P3 = range(12)
_MACRO_TRIANGLES = np.array(
    [
        (_C0, _M0, _P0), (_C0, _P0, _M3),
        (_M0, _C1, _P1), (_C1, _M1, _P1),
        (_M1, _C2, _P2), (_C2, _M2, _P2),
        (_M2, _C3, _P3), (_C3, _M3, _P3),
        (_M0, _P1, _P0), (_M1, _P2, _P1),
        (_M2, _P3, _P2), (_M3, _P0, _P3),
        (_P0, _P1, _P2), (_P0, _P2, _P3),
    ],
    dtype=np.int64,
)
# Corners and midpoints on the half-macro lattice, in units of half a macro.
_SHARED_LATTICE = np.array(
    [(0, 0), (2, 0), (2, 2), (0, 2), (1, 0), (2, 1), (1, 2), (0, 1)],
    dtype=np.int64,
)


class MeshError(ValueError):
    """Raised when mesh data violates a structural invariant."""


class MeshFormatError(MeshError):
    """Raised when a mesh file cannot be parsed."""

    def __init__(self, message: str, lineno: Optional[int] = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class MacroKind(enum.Enum):
    ACUTE = "Acute"
    NON_ACUTE = "NonAcute"
    EXTERNAL = "External"

    @classmethod
    def parse(cls, value: Union[str, "MacroKind"]) -> "MacroKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        for kind in cls:
            if kind.value.lower() == key:
                return kind
        raise ValueError(f"unknown macro kind {value!r}")


def _signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def mesh_edges(triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unique undirected edges of a triangulation.

    Returns
    -------
    edges : ndarray of shape (E, 2)
        Sorted vertex pairs ``(i, j)`` with ``i < j``, lexicographically ordered.
    counts : ndarray of shape (E,)
        Number of triangles sharing each edge.
    """
    t = np.asarray(triangles)
    pairs = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    pairs.sort(axis=1)
    edges, counts = np.unique(pairs, axis=0, return_counts=True)
    return edges, counts


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable conforming triangulation with counter-clockwise triangles.

    Parameters
    ----------
    vertices : ndarray of shape (V, 2)
    triangles : ndarray of shape (T, 3)
        0-based vertex indices, counter-clockwise.
    macro_kind : MacroKind
        How the mesh was produced; ``EXTERNAL`` for anything not built by
        :func:`build_macro_mesh`.
    nsquare : int or None
        Macroelements per side, when applicable.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    macro_kind: MacroKind = MacroKind.EXTERNAL
    nsquare: Optional[int] = None
    boundary_vertices: np.ndarray = field(init=False)

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=np.float64)
        triangles = np.array(self.triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError(f"vertices must have shape (V, 2), got {vertices.shape}")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError(f"triangles must have shape (T, 3), got {triangles.shape}")
        if len(triangles) == 0:
            raise MeshError("mesh has no triangles")
        if not np.all(np.isfinite(vertices)):
            raise MeshError("vertex coordinates must be finite")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            raise MeshError("triangle references an out-of-range vertex index")
        t = triangles
        distinct = (t[:, 0] != t[:, 1]) & (t[:, 1] != t[:, 2]) & (t[:, 0] != t[:, 2])
        if not distinct.all():
            bad = int(np.flatnonzero(~distinct)[0])
            raise MeshError(f"triangle {bad} repeats a vertex index")
        areas = _signed_areas(vertices, triangles)
        if not np.all(areas > 0):
            bad = int(np.flatnonzero(~(areas > 0))[0])
            raise MeshError(
                f"triangle {bad} is not counter-clockwise (signed area {areas[bad]:.3e})"
            )
        vertices.setflags(write=False)
        triangles.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)
        object.__setattr__(self, "macro_kind", MacroKind.parse(self.macro_kind))
        edges, counts = mesh_edges(triangles)
        bnd = np.unique(edges[counts == 1])
        bnd.setflags(write=False)
        object.__setattr__(self, "boundary_vertices", bnd)

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (
            self.macro_kind == other.macro_kind
            and self.nsquare == other.nsquare
            and np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.triangles, other.triangles)
            and np.array_equal(self.boundary_vertices, other.boundary_vertices)
        )

    __hash__ = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def areas(self) -> np.ndarray:
        a = _signed_areas(self.vertices, self.triangles)
        a.setflags(write=False)
        return a

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique edges ``(i, j)``, ``i < j``."""
        e, _ = mesh_edges(self.triangles)
        e.setflags(write=False)
        return e

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """Constant gradients of the three local hat functions, shape (T, 3, 2)."""
        p = self.vertices[self.triangles]
        # grad phi_i = (y_{i+1} - y_{i+2}, x_{i+2} - x_{i+1}) / (2|T|)
        nxt = np.roll(p, -1, axis=1)
        prv = np.roll(p, -2, axis=1)
        d = prv - nxt
        g = np.stack([-d[..., 1], d[..., 0]], axis=-1)
        g /= (2.0 * self.areas)[:, None, None]
        g.setflags(write=False)
        return g


def triangle_angles(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Interior angles in degrees, shape (T, 3); column ``i`` is the angle at vertex ``i``.

    Raises
    ------
    MeshError
        If a triangle is degenerate (zero area).
    """
    p = np.asarray(vertices, dtype=float)[np.asarray(triangles)]
    area2 = np.abs(2.0 * _signed_areas(np.asarray(vertices, float), np.asarray(triangles)))
    scale = np.max(np.linalg.norm(p - p[:, [1, 2, 0]], axis=2), axis=1)
    degenerate = area2 <= 1e-14 * np.maximum(scale, 1e-300) ** 2
    if degenerate.any():
        bad = int(np.flatnonzero(degenerate)[0])
        raise MeshError(f"triangle {bad} is degenerate (zero area)")
    u = np.roll(p, -1, axis=1) - p
    w = np.roll(p, -2, axis=1) - p
    cross = np.abs(u[..., 0] * w[..., 1] - u[..., 1] * w[..., 0])
    dot = np.einsum("tkd,tkd->tk", u, w)
    return np.degrees(np.arctan2(cross, dot))


@dataclass(frozen=True)
class AngleReport:
    max_angle_deg: float
    min_angle_deg: float
    is_acute: bool
    worst_triangle: int

    @property
    def beta_deg(self) -> float:
        """Margin ``90 - max_angle`` in degrees."""
        return 90.0 - self.max_angle_deg


def acuteness_report(mesh: Mesh) -> AngleReport:
    angles = triangle_angles(mesh.vertices, mesh.triangles)
    per_tri = angles.max(axis=1)
    worst = int(np.argmax(per_tri))
    max_angle = float(per_tri[worst])
    return AngleReport(
        max_angle_deg=max_angle,
        min_angle_deg=float(angles.min()),
        is_acute=bool(max_angle < 90.0),
        worst_triangle=worst,
    )


def mesh_size(mesh: Mesh) -> float:
    """Largest triangle diameter (longest edge)."""
    if mesh.n_triangles == 0:
        raise MeshError("empty mesh has no size")
    e = mesh.edges
    d = mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]]
    return float(np.sqrt(np.max(np.einsum("ij,ij->i", d, d))))


def is_conforming(mesh: Mesh, bounds: Optional[tuple[float, float, float, float]] = None,
                  tol: float = 1e-12) -> bool:
    """Check that the mesh is a conforming triangulation of a simply connected region.

    Every edge must be shared by one or two triangles, Euler's relation
    ``V - E + T = 1`` must hold and every vertex must be used. When
    ``bounds = (xmin, xmax, ymin, ymax)`` is given, boundary edges must also
    lie on the rectangle boundary and the triangle areas must add up to its
    measure; this rules out hanging nodes.
    """
    edges, counts = mesh_edges(mesh.triangles)
    if counts.max() > 2:
        return False
    if mesh.n_vertices - len(edges) + mesh.n_triangles != 1:
        return False
    if len(np.unique(mesh.triangles)) != mesh.n_vertices:
        return False
    if bounds is not None:
        xmin, xmax, ymin, ymax = bounds
        bnd = mesh.vertices[edges[counts == 1]]
        on_side = (
            (np.abs(bnd[..., 0] - xmin) < tol).all(axis=1)
            | (np.abs(bnd[..., 0] - xmax) < tol).all(axis=1)
            | (np.abs(bnd[..., 1] - ymin) < tol).all(axis=1)
            | (np.abs(bnd[..., 1] - ymax) < tol).all(axis=1)
        )
        if not on_side.all():
            return False
        measure = (xmax - xmin) * (ymax - ymin)
        if abs(mesh.areas.sum() - measure) > tol * max(1.0, measure):
            return False
    return True


def _macro_local_points(diag_offset: float, anti_offset: float) -> np.ndarray:
    b, c = diag_offset, anti_offset
    corners_mids = _SHARED_LATTICE / 2.0
    interior = np.array([(b, b), (1 - c, c), (1 - b, 1 - b), (c, 1 - c)])
    return np.vstack([corners_mids, interior])


def build_macro_mesh(nsquare: int, kind: Union[MacroKind, str] = MacroKind.ACUTE,
                     offsets: Optional[tuple[float, float]] = None) -> Mesh:
    """Triangulate ``[-1/2, 1/2]^2`` with ``nsquare^2`` 14-triangle macroelements.

    Parameters
    ----------
    nsquare : int
        Macroelements per side.
    kind : MacroKind or str
        ``Acute`` or ``NonAcute``; selects the default interior offsets.
    offsets : (float, float), optional
        Override ``(diag_offset, anti_offset)`` of the interior vertices,
        in macro-local units. Both must lie in ``(0, 1/2)``.

    Returns
    -------
    Mesh
        ``14 nsquare^2`` triangles and ``(nsquare+1)^2 + 2 nsquare (nsquare+1)
        + 4 nsquare^2`` vertices. Lattice vertices (corners and midpoints)
        come first in row-major order, then 4 interior vertices per
        macroelement.
    """
    n = int(nsquare)
    if n < 1:
        raise ValueError(f"nsquare must be >= 1, got {nsquare}")
    kind = MacroKind.parse(kind)
    if kind is MacroKind.EXTERNAL:
        raise ValueError("build_macro_mesh builds Acute or NonAcute meshes only")
    if offsets is None:
        offsets = ACUTE_OFFSETS if kind is MacroKind.ACUTE else NON_ACUTE_OFFSETS
    b, c = (float(o) for o in offsets)
    if not (0.0 < b < 0.5 and 0.0 < c < 0.5):
        raise ValueError(f"interior offsets must lie in (0, 1/2), got {offsets}")

    local = _macro_local_points(b, c)
    h = 1.0 / n
    jj, ii = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    origin = np.stack([ii.ravel(), jj.ravel()], axis=1)  # macro (i, j), row-major in j
    n_macro = n * n

    # Shared vertices: deduplicate by half-macro lattice coordinates.
    coords = -0.5 + (origin[:, None, :] + local[None, :8, :]) * h
    key = np.rint((coords + 0.5) * (2 * n)).astype(np.int64)
    if np.max(np.abs((coords + 0.5) * (2 * n) - key)) > 1e-12 * 2 * n:
        raise AssertionError("lattice vertex off the half-macro grid")
    flat = key[..., 1] * (2 * n + 1) + key[..., 0]
    uniq, inverse = np.unique(flat.ravel(), return_inverse=True)
    lattice_xy = np.stack([uniq % (2 * n + 1), uniq // (2 * n + 1)], axis=1)
    shared_vertices = -0.5 + lattice_xy / (2.0 * n)
    shared_index = inverse.reshape(n_macro, 8)

    n_shared = len(uniq)
    interior_vertices = (-0.5 + (origin[:, None, :] + local[None, 8:, :]) * h).reshape(-1, 2)
    interior_index = n_shared + np.arange(4 * n_macro).reshape(n_macro, 4)

    local_to_global = np.hstack([shared_index, interior_index])
    triangles = local_to_global[:, _MACRO_TRIANGLES].reshape(-1, 3)
    vertices = np.vstack([shared_vertices, interior_vertices])
    # Exact boundary coordinates.
    vertices[np.abs(vertices + 0.5) < 1e-14] = -0.5
    vertices[np.abs(vertices - 0.5) < 1e-14] = 0.5
    return Mesh(vertices, triangles, macro_kind=kind, nsquare=n)


_HEADER = "KSMESH 1"


def save_mesh(mesh: Mesh, path: PathLike) -> None:
    """Write ``mesh`` in the plain-text ``KSMESH 1`` format.

    Layout: header line, optional ``# key value`` metadata lines, ``V <count>``,
    vertex lines ``x y``, ``T <count>``, triangle lines ``i j k`` (0-based).
    Coordinates are written with 17 significant digits so that a reload is
    bit-exact.
    """
    lines = [_HEADER, f"# macro_kind {mesh.macro_kind.value}"]
    if mesh.nsquare is not None:
        lines.append(f"# nsquare {mesh.nsquare}")
    lines.append(f"V {mesh.n_vertices}")
    lines.extend(f"{x:.17g} {y:.17g}" for x, y in mesh.vertices)
    lines.append(f"T {mesh.n_triangles}")
    lines.extend(f"{i} {j} {k}" for i, j, k in mesh.triangles)
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path: PathLike) -> Mesh:
    """Read a ``KSMESH 1`` file written by :func:`save_mesh`.

    Raises
    ------
    MeshFormatError
        With the offending line number on malformed content, out-of-range
        vertex indices or clockwise/degenerate triangles.
    """
    with open(path) as fh:
        raw = fh.read().splitlines()
    # (lineno, text) for non-blank content lines, metadata separated out.
    meta: dict[str, str] = {}
    body: list[tuple[int, str]] = []
    for lineno, text in enumerate(raw, start=1):
        s = text.strip()
        if not s:
            continue
        if s.startswith("#"):
            parts = s[1:].split()
            if len(parts) == 2:
                meta[parts[0]] = parts[1]
            continue
        body.append((lineno, s))
    if not body or body[0][1] != _HEADER:
        raise MeshFormatError(f"expected header {_HEADER!r}", body[0][0] if body else 1)
    pos = 1

    def section(tag: str) -> int:
        nonlocal pos
        if pos >= len(body):
            raise MeshFormatError(f"missing '{tag} <count>' section", len(raw) + 1)
        lineno, s = body[pos]
        parts = s.split()
        if len(parts) != 2 or parts[0] != tag or not parts[1].isdigit():
            raise MeshFormatError(f"expected '{tag} <count>', got {s!r}", lineno)
        pos += 1
        return int(parts[1])

    def rows(count: int, width: int, convert, what: str) -> list:
        nonlocal pos
        out = []
        for _ in range(count):
            if pos >= len(body):
                raise MeshFormatError(f"file ends before all {what} were read", len(raw) + 1)
            lineno, s = body[pos]
            parts = s.split()
            if len(parts) != width:
                raise MeshFormatError(f"expected {width} fields for {what}, got {s!r}", lineno)
            try:
                out.append((lineno, [convert(p) for p in parts]))
            except ValueError:
                raise MeshFormatError(f"cannot parse {what} line {s!r}", lineno) from None
            pos += 1
        return out

    nv = section("V")
    vrows = rows(nv, 2, float, "vertices")
    vertices = np.array([r for _, r in vrows], dtype=np.float64).reshape(-1, 2)
    if not np.all(np.isfinite(vertices)):
        bad = int(np.flatnonzero(~np.isfinite(vertices).all(axis=1))[0])
        raise MeshFormatError("non-finite vertex coordinate", vrows[bad][0])
    nt = section("T")
    trows = rows(nt, 3, int, "triangles")
    if pos != len(body):
        raise MeshFormatError("unexpected trailing content", body[pos][0])
    triangles = np.array([r for _, r in trows], dtype=np.int64).reshape(-1, 3)
    for lineno, (i, j, k) in trows:
        if min(i, j, k) < 0 or max(i, j, k) >= nv:
            raise MeshFormatError(f"vertex index out of range [0, {nv})", lineno)
    if nt:
        areas = _signed_areas(vertices, triangles)
        bad = np.flatnonzero(~(areas > 0))
        if len(bad):
            raise MeshFormatError("triangle is not counter-clockwise", trows[int(bad[0])][0])
    try:
        kind = MacroKind.parse(meta.get("macro_kind", "External"))
        nsquare = int(meta["nsquare"]) if "nsquare" in meta else None
    except ValueError as exc:
        raise MeshFormatError(f"bad metadata: {exc}") from None
    try:
        return Mesh(vertices, triangles, macro_kind=kind, nsquare=nsquare)
    except MeshError as exc:
        raise MeshFormatError(str(exc)) from None
