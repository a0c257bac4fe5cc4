"""Positivity-preserving P1 finite elements for the Keller-Segel system.

Lumped-mass, semi-implicit scheme on acute macroelement meshes of the
unit square, with diagnostics for mass, positivity and energy decay.
"""

from .diagnostics import (
    IndicatorConfig,
    StepRecord,
    emit_records,
    energy_E0,
    energy_E1,
    moser_trudinger_pair,
    read_records,
    restriction_indicators,
)
from .fem import (
    FeFunction,
    LumpedMass,
    SparseOperator,
    assemble_chemotaxis,
    assemble_lumped_mass,
    assemble_stiffness,
    discrete_laplacian,
    nodal_interpolate,
    norms,
)
from .mesh import (
    MacroKind,
    Mesh,
    acuteness_report,
    build_macro_mesh,
    is_conforming,
    load_mesh,
    mesh_size,
    save_mesh,
)
from .scheme import LinearSolveError, SchemeConfig, SchemeState, SolverKind, Stepper, run

__version__ = "0.1.0"
