"""Legacy ASCII VTK (``UNSTRUCTURED_GRID``) writer and a small reader."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np

from .mesh import Mesh

__all__ = ["write_vtk", "read_vtk", "VtkError"]

_VTK_TRIANGLE = 5


class VtkError(ValueError):
    pass


def write_vtk(path: Union[str, Path], mesh: Mesh,
              point_data: Optional[Mapping[str, np.ndarray]] = None,
              title: str = "ksfem") -> None:
    """Write ``mesh`` and nodal scalar fields as legacy ASCII VTK."""
    point_data = dict(point_data or {})
    nv, nt = mesh.n_vertices, mesh.n_triangles
    out = [
        "# vtk DataFile Version 3.0",
        title.replace("\n", " ")[:255],
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {nv} double",
    ]
    out.extend(f"{x:.17g} {y:.17g} 0" for x, y in mesh.vertices)
    out.append(f"CELLS {nt} {4 * nt}")
    out.extend(f"3 {i} {j} {k}" for i, j, k in mesh.triangles)
    out.append(f"CELL_TYPES {nt}")
    out.extend([str(_VTK_TRIANGLE)] * nt)
    if point_data:
        out.append(f"POINT_DATA {nv}")
        for name, values in point_data.items():
            vals = np.asarray(values, dtype=np.float64)
            if vals.shape != (nv,):
                raise ValueError(f"field {name!r} has shape {vals.shape}, expected ({nv},)")
            if " " in name:
                raise ValueError(f"field name {name!r} contains whitespace")
            out.append(f"SCALARS {name} double 1")
            out.append("LOOKUP_TABLE default")
            out.extend(f"{x:.17g}" for x in vals)
    Path(path).write_text("\n".join(out) + "\n")


def read_vtk(path: Union[str, Path]):
    """Parse a legacy ASCII unstructured grid of triangles.

    Returns
    -------
    points : ndarray (V, 3)
    triangles : ndarray (T, 3)
    point_data : dict of str to ndarray (V,)
    """
    tokens_by_line = [ln.split() for ln in Path(path).read_text().splitlines()]
    if not tokens_by_line or not " ".join(tokens_by_line[0]).startswith("# vtk DataFile"):
        raise VtkError("missing '# vtk DataFile' header")
    if len(tokens_by_line) < 4 or tokens_by_line[2] != ["ASCII"]:
        raise VtkError("only ASCII files are supported")
    if tokens_by_line[3] != ["DATASET", "UNSTRUCTURED_GRID"]:
        raise VtkError("expected DATASET UNSTRUCTURED_GRID")
    stream = [tok for line in tokens_by_line[4:] for tok in line]
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(stream):
            raise VtkError("unexpected end of file")
        chunk = stream[pos:pos + n]
        pos += n
        return chunk

    points = triangles = None
    point_data: dict[str, np.ndarray] = {}
    npoint_data = None
    while pos < len(stream):
        key = take(1)[0]
        if key == "POINTS":
            n, _dtype = take(2)
            points = np.array(take(3 * int(n)), dtype=np.float64).reshape(-1, 3)
        elif key == "CELLS":
            n, size = (int(x) for x in take(2))
            raw = np.array(take(size), dtype=np.int64)
            if size != 4 * n or np.any(raw[::4] != 3):
                raise VtkError("only triangle cells are supported")
            triangles = raw.reshape(n, 4)[:, 1:]
        elif key == "CELL_TYPES":
            n = int(take(1)[0])
            types = np.array(take(n), dtype=np.int64)
            if np.any(types != _VTK_TRIANGLE):
                raise VtkError("only triangle cells are supported")
        elif key == "POINT_DATA":
            npoint_data = int(take(1)[0])
        elif key == "SCALARS":
            if npoint_data is None:
                raise VtkError("SCALARS before POINT_DATA")
            name, _dtype, ncomp = take(3)
            if ncomp != "1":
                raise VtkError("only single-component scalars are supported")
            if take(2) != ["LOOKUP_TABLE", "default"]:
                raise VtkError("expected LOOKUP_TABLE default")
            point_data[name] = np.array(take(npoint_data), dtype=np.float64)
        else:
            raise VtkError(f"unsupported keyword {key!r}")
    if points is None or triangles is None:
        raise VtkError("file has no POINTS or CELLS section")
    if triangles.size and triangles.max() >= len(points):
        raise VtkError("cell references a missing point")
    if npoint_data is not None and npoint_data != len(points):
        raise VtkError("POINT_DATA count does not match POINTS")
    return points, triangles, point_data
