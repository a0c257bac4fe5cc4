"""P1 finite elements with mass lumping on a :class:`~ksfem.mesh.Mesh`.

All operators share the vertex-adjacency sparsity pattern of the mesh. The
pattern and the scatter map from local ``3 x 3`` element blocks into CSR
storage are computed once per mesh, so re-assembling the chemotaxis
operator each time step only costs a weighted ``bincount``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh

__all__ = [
    "FeFunction",
    "LumpedMass",
    "SparseOperator",
    "Norms",
    "assemble_lumped_mass",
    "assemble_stiffness",
    "assemble_chemotaxis",
    "nodal_interpolate",
    "discrete_laplacian",
    "norms",
    "save_function",
    "load_function",
]


class FeFunction:
    """Continuous piecewise-linear field given by its nodal values.

    Supports ``+``, ``-`` and scalar ``*`` so that simple expressions such as
    ``u + 1.0`` stay on the same mesh.
    """

    __slots__ = ("mesh", "values")

    def __init__(self, mesh: Mesh, values):
        values = np.array(values, dtype=np.float64).reshape(-1)
        if values.shape[0] != mesh.n_vertices:
            raise ValueError(
                f"{values.shape[0]} coefficients for a mesh with {mesh.n_vertices} vertices"
            )
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise ValueError(f"non-finite coefficient at vertex {bad}")
        self.mesh = mesh
        self.values = values

    def __len__(self):
        return len(self.values)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def _other(self, other):
        if isinstance(other, FeFunction):
            _check_same_mesh(self.mesh, other.mesh)
            return other.values
        return other

    def __add__(self, other):
        return FeFunction(self.mesh, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return FeFunction(self.mesh, self.values - self._other(other))

    def __mul__(self, scalar):
        return FeFunction(self.mesh, self.values * float(scalar))

    __rmul__ = __mul__

    def __repr__(self):
        return (
            f"FeFunction(n={len(self.values)}, min={self.values.min():.6g}, "
            f"max={self.values.max():.6g})"
        )

    def at_barycenters(self) -> np.ndarray:
        """Value at each triangle barycentre (mean of the three vertex values)."""
        return self.values[self.mesh.triangles].mean(axis=1)


def _check_same_mesh(a: Mesh, b: Mesh) -> None:
    if a is not b and a != b:
        raise ValueError("fields live on different meshes")


def _values(f, mesh: Mesh) -> np.ndarray:
    if isinstance(f, FeFunction):
        _check_same_mesh(f.mesh, mesh)
        return f.values
    x = np.asarray(f, dtype=np.float64)
    if x.shape != (mesh.n_vertices,):
        raise ValueError(f"expected {mesh.n_vertices} nodal values, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class LumpedMass:
    """Diagonal of the lumped mass matrix; ``(x, y)_h = sum_i d_i x_i y_i``."""

    diagonal: np.ndarray

    def __post_init__(self):
        if not np.all(self.diagonal > 0):
            raise ValueError("lumped mass entries must be positive")

    def __matmul__(self, x):
        return self.diagonal * np.asarray(x)

    @property
    def matrix(self) -> sp.csr_matrix:
        return sp.diags(self.diagonal, format="csr")

    def inner(self, x, y) -> float:
        return float(np.dot(self.diagonal, np.asarray(x) * np.asarray(y)))


@dataclass(frozen=True)
class SparseOperator:
    """CSR matrix on the node index set with a symmetry flag."""

    matrix: sp.csr_matrix
    symmetric: bool

    def __matmul__(self, x):
        return self.matrix @ np.asarray(x)

    @property
    def shape(self):
        return self.matrix.shape

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def edge_values(self, edges: np.ndarray) -> np.ndarray:
        """Entries ``(i, j)`` for each row of ``edges``."""
        return np.asarray(self.matrix[edges[:, 0], edges[:, 1]]).ravel()


class _Pattern:
    """CSR pattern of a P1 mesh and the element-to-slot scatter map."""

    def __init__(self, mesh: Mesh):
        t = mesh.triangles
        n = mesh.n_vertices
        rows = np.repeat(t, 3, axis=1).ravel()  # (T, 3, 3) with row = t[:, a]
        cols = np.tile(t, (1, 3)).ravel()  # col = t[:, b]
        key = rows * n + cols
        uniq, slot = np.unique(key, return_inverse=True)
        self.indices = (uniq % n).astype(np.int32)
        row_of = uniq // n
        self.indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(self.indptr, row_of + 1, 1)
        self.indptr = np.cumsum(self.indptr).astype(np.int32)
        self.slot = slot.reshape(-1)
        self.nnz = len(uniq)
        self.n = n

    def build(self, local: np.ndarray) -> sp.csr_matrix:
        """Sum local blocks of shape (T, 3, 3) into a CSR matrix."""
        data = np.bincount(self.slot, weights=local.reshape(-1), minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()),
                             shape=(self.n, self.n))


def _pattern(mesh: Mesh) -> _Pattern:
    cached = mesh.__dict__.get("_p1_pattern")
    if cached is None:
        cached = _Pattern(mesh)
        mesh.__dict__["_p1_pattern"] = cached
    return cached


def assemble_lumped_mass(mesh: Mesh) -> LumpedMass:
    """Lumped mass: node ``i`` gets ``sum_{T containing i} |T| / 3``."""
    d = np.bincount(mesh.triangles.ravel(), weights=np.repeat(mesh.areas / 3.0, 3),
                    minlength=mesh.n_vertices)
    return LumpedMass(d)


def assemble_stiffness(mesh: Mesh) -> SparseOperator:
    """Stiffness matrix ``A_ij = (grad phi_j, grad phi_i)``."""
    g = mesh.basis_gradients
    local = mesh.areas[:, None, None] * np.einsum("tad,tbd->tab", g, g)
    return SparseOperator(_pattern(mesh).build(local), symmetric=True)


def assemble_chemotaxis(mesh: Mesh, v) -> SparseOperator:
    """Chemotaxis operator ``C(v)`` with ``(C u)_i = (grad v, ubar grad phi_i)``.

    ``ubar`` is the piecewise constant barycentric value of ``u``, so
    ``C_ij = sum_{T containing i, j} (|T| / 3) grad v . grad phi_i``.
    """
    vv = _values(v, mesh)
    g = mesh.basis_gradients
    grad_v = np.einsum("tk,tkd->td", vv[mesh.triangles], g)
    w = (mesh.areas / 3.0)[:, None] * np.einsum("td,tad->ta", grad_v, g)
    local = np.repeat(w[:, :, None], 3, axis=2)
    return SparseOperator(_pattern(mesh).build(local), symmetric=False)


def nodal_interpolate(f: Callable, mesh: Mesh) -> FeFunction:
    """Nodal interpolant of ``f(x, y)``.

    ``f`` is called once with the coordinate arrays of all vertices, so it
    must be vectorised (numpy ufunc style). Scalars are broadcast.
    """
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    vals = np.broadcast_to(np.asarray(f(x, y), dtype=np.float64), x.shape).copy()
    bad = ~np.isfinite(vals)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ValueError(
            f"non-finite value {vals[i]} at vertex {i} ({x[i]:.17g}, {y[i]:.17g})"
        )
    return FeFunction(mesh, vals)


def discrete_laplacian(v, M: LumpedMass, A: SparseOperator) -> np.ndarray:
    """Nodal values ``w`` of the lumped discrete Laplacian: ``M w = -A v``."""
    vv = np.asarray(v, dtype=np.float64)
    return -(A @ vv) / M.diagonal


@dataclass(frozen=True)
class Norms:
    lumped_l2: float
    grad_l2: float
    lumped_l1: float
    min: float
    max: float
    mass: float


def norms(u, M: LumpedMass, A: SparseOperator) -> Norms:
    uu = np.asarray(u, dtype=np.float64)
    grad_sq = float(uu @ (A @ uu))
    return Norms(
        lumped_l2=float(np.sqrt(M.inner(uu, uu))),
        grad_l2=float(np.sqrt(max(grad_sq, 0.0))),
        lumped_l1=float(np.dot(M.diagonal, np.abs(uu))),
        min=float(uu.min()),
        max=float(uu.max()),
        mass=float(np.dot(M.diagonal, uu)),
    )


def save_function(u, path: Union[str, Path]) -> None:
    """Dump nodal values, one per line with 17 significant digits."""
    vals = np.asarray(u, dtype=np.float64)
    Path(path).write_text("".join(f"{x:.17g}\n" for x in vals))


def load_function(path: Union[str, Path], mesh: Mesh) -> FeFunction:
    vals = np.loadtxt(path, dtype=np.float64, ndmin=1)
    return FeFunction(mesh, vals)
