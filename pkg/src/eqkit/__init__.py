"""eqkit: fixed-boundary toroidal MHD equilibrium reconstruction.

Reads and writes the EQDSK/EXPEQ/EXPTNZ/ITERDB/PROFILES/CHEASE-text file
family, solves the fixed-boundary Grad-Shafranov equation internally, and
drives the iterative current/pressure correction workflow to match a
target total toroidal current.
"""

from . import boundary, cli, core, errors, fluxavg, formats, gridmap, pipeline, solver
from .boundary import BoundaryPolicy, apply_policy, trace_lcms
from .core import (
    Boundary,
    EquilibriumProfiles,
    KineticProfiles,
    MachineScalars,
    PsiMap,
    RadialGrid,
    compose_pressure,
    compute_zeff,
    denormalize,
    normalize,
    pressure_gradient,
)
from .fluxavg import (
    FluxSurface,
    SurfaceIntegrals,
    convert_current,
    extract_surface,
    iparallel,
    istar,
    jparallel,
    jphi_from,
    surface_integrals,
    total_current,
)
from .formats import (
    read_chease,
    read_eqdsk,
    read_expeq,
    read_exptnz,
    read_iterdb,
    read_profiles,
    write_chease_out,
    write_eqdsk,
    write_expeq,
    write_exptnz,
    write_iterdb,
    write_profiles,
)
from .gridmap import (
    GridKind,
    GridSource,
    ProfileBundle,
    phin_to_psin,
    psin_to_phin,
    regrid,
    unify,
)
from .pipeline import (
    ImportedProfiles,
    NamelistSpec,
    RunConfig,
    SourceSelection,
    archive_iteration,
    assemble_inputs,
    create_namelist,
    current_correction,
    pressure_correction,
    resolve_shot,
    run_iterations,
)
from .solver import (
    SolovevParams,
    SolverConfig,
    equilibrium_outputs,
    solve_fixed_boundary,
    solovev_psimap,
    solovev_reference,
)

__version__ = "0.1.0"
