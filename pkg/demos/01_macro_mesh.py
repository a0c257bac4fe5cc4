"""
Building the macroelement mesh
==============================

Each square of an ``n x n`` grid is split into 14 triangles: the four
corners, the four edge midpoints and four interior points. Where the
interior points go decides whether every angle is acute, and acute angles
are what make the stiffness matrix an M-matrix.
"""

import numpy as np

from ksfem import (
    acuteness_report,
    assemble_stiffness,
    build_macro_mesh,
    is_conforming,
    mesh_size,
)

# A single macroelement first. Lattice vertices come first in the array,
# followed by the four interior points.
one = build_macro_mesh(1, "Acute")
print("one macroelement:", one.n_vertices, "vertices,", one.n_triangles, "triangles")
print(np.round(one.vertices, 4))

# The angle report gives the largest angle and the margin to 90 degrees.
for kind in ("Acute", "NonAcute"):
    r = acuteness_report(build_macro_mesh(1, kind))
    print(f"{kind:9s} max angle {r.max_angle_deg:8.4f}  acute={r.is_acute}  "
          f"margin {r.beta_deg:.4f} deg")

# %%
# The production mesh: 50 x 50 macroelements.
mesh = build_macro_mesh(50, "Acute")
print(f"\n50x50: {mesh.n_triangles} triangles, {mesh.n_vertices} vertices, "
      f"h = {mesh_size(mesh):.6f}, conforming = {is_conforming(mesh)}")

# %%
# The sign pattern follows the angles. On the acute mesh every edge entry of
# the stiffness matrix is negative; the non-acute mesh has non-negative ones.
for kind in ("Acute", "NonAcute"):
    m = build_macro_mesh(10, kind)
    off = assemble_stiffness(m).edge_values(m.edges)
    print(f"{kind:9s} edge entries: max {off.max():+.4f}, "
          f"non-negative count {(off >= 0).sum()} of {off.size}")
