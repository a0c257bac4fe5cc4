"""
Restriction indicators
======================

The positivity theory asks for ``k`` and ``h`` small relative to a quantity
``F`` built from the initial energy. For the bell data used in practice
``F`` is astronomically large, so the conditions fail even though the runs
stay positive. This script evaluates the indicators with every unknown
constant set to 1.
"""

import numpy as np

from ksfem import (
    IndicatorConfig,
    assemble_lumped_mass,
    assemble_stiffness,
    build_macro_mesh,
    nodal_interpolate,
)
from ksfem.cli import nonblowup_data
from ksfem.diagnostics import b2_scan, moser_trudinger_pair, restriction_indicators

mesh = build_macro_mesh(50, "Acute")
M, A = assemble_lumped_mass(mesh), assemble_stiffness(mesh)

for c0 in (5, 40, 70):
    fu, fv = nonblowup_data(c0)
    u0, v0 = nodal_interpolate(fu, mesh).values, nodal_interpolate(fv, mesh).values
    ind = restriction_indicators(u0, v0, M, A, mesh, k=1e-4)
    print(f"C0={c0:3d}: |grad v0|^2={v0 @ (A @ v0):10.2f}  E0={ind.E0:9.3f}  "
          f"B2={ind.B2:10.2f}  log F={ind.log_F:10.2f}")
    print(f"        k/h^2 condition {ind.cond_hk}, h condition {ind.cond_h}, "
          f"E1 condition {ind.cond_hII}, small mass {ind.smallness}")

# %%
# The bound B2 depends on two free splitting parameters. A grid search shows
# which pair gives a prescribed value, here for C0 = 70.
fu, fv = nonblowup_data(70)
u0, v0 = nodal_interpolate(fu, mesh).values, nodal_interpolate(fv, mesh).values
delta, eps, b2 = b2_scan(u0, v0, M, A, target=23411.5)
print(f"\nB2 closest to 23411.5: {b2:.1f} at delta={delta:.2f}, epsilon={eps:.2f}")

# %%
# Both sides of the discrete exponential-integrability bound, for the
# initial density scaled down to a few sizes.
for scale in (1e-3, 1e-2, 1e-1):
    mt = moser_trudinger_pair(scale * u0, M, A, IndicatorConfig())
    print(f"scale {scale:5.0e}: lhs {mt.lhs:.4e}  rhs {mt.rhs:.4e}  ratio {mt.ratio:.3e}")
