"""Workflow engine: namelist creation, input assembly, the iteration loop
with current/pressure correction, and iteration archiving.

A run owns its working directory (lock file).  Every iteration assembles
EXPTNZ and EXPEQ from the selected sources, writes the namelist, solves
the fixed-boundary equilibrium internally, emits EXPEQ.OUT / EXPTNZ.OUT /
the text bundle / a refreshed EQDSK, and archives everything with an
_iterNNN suffix.  Correction modes rescale the current (mode 2) or
pressure (mode 3) column by I_target/I_computed between iterations until
the relative current error drops under the tolerance.

Sources are named per profile and may be lists (one entry per iteration,
the last entry reused).  Imported profiles override any sourced profile
at iteration zero only and must travel with both rho grids.
"""

from __future__ import annotations

import glob
import logging
import os
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import fluxavg, solver
from .boundary import BoundaryPolicy, trace_lcms
from .core import MU0, Boundary, KineticProfiles, MachineScalars, RadialGrid
from .errors import (
    CollisionWithoutForce,
    DegenerateBoundary,
    DegenerateJacobian,
    EmptyShotDirectory,
    IllegalSourceForProfile,
    LevelOutOfRange,
    MissingProfile,
    MissingSourceFile,
    NoConvergence,
    OpenContour,
    OrphanImport,
    RaggedLists,
    SolverFailure,
    TargetNotReached,
    WorkdirLocked,
    ZeroComputedCurrent,
    ZeroT,
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
    write_namelist,
)
from .formats.expeq import CURRENT_KEYS, ExpeqFile, PRESSURE_KEYS
from .gridmap import GridKind, GridSource, regrid

logger = logging.getLogger(__name__)

# --- namelist -----------------------------------------------------------

NAMELIST_DEFAULTS = {
    "NS": 256, "NT": 256, "NISO": 256, "NPSI": 1024, "NCHI": 1024,
    "NRBOX": 60, "NZBOX": 60, "RELAX": 0.0, "NSTTP": 1, "NPROPT": 3,
    "NPPFUN": 8, "NEQDSK": 0, "TENSBND": 0, "COCOS_IN": 2, "TENSPROF": 0,
    "COCOS_OUT": 12, "NRHOMESH": 0,
}


@dataclass
class NamelistSpec:
    """Per-iteration namelist values: each entry scalar or list.

    Mixing scalars and lists (or lists of unequal length) is rejected,
    matching the all-or-nothing contract of the value-list mechanism.
    """

    values: dict = field(default_factory=dict)

    def __post_init__(self):
        lists = {k: v for k, v in self.values.items()
                 if isinstance(v, (list, tuple))}
        if lists:
            lengths = {len(v) for v in lists.values()}
            scalars = [k for k, v in self.values.items()
                       if not isinstance(v, (list, tuple))]
            if scalars or len(lengths) > 1:
                raise RaggedLists(
                    "namelist values must be all single-valued or all lists "
                    f"of one length (lists {sorted(lists)}, "
                    f"scalars {sorted(scalars)}, lengths {sorted(lengths)})")

    def value_at(self, name: str, iteration: int):
        if name in self.values:
            v = self.values[name]
            if isinstance(v, (list, tuple)):
                return v[min(iteration, len(v) - 1)]
            return v
        return NAMELIST_DEFAULTS[name]

    def params_at(self, iteration: int) -> dict:
        out = {}
        for name in NAMELIST_DEFAULTS:
            out[name] = self.value_at(name, iteration)
        for name in self.values:
            if name not in out:
                v = self.values[name]
                out[name] = (v[min(iteration, len(v) - 1)]
                             if isinstance(v, (list, tuple)) else v)
        return out


def create_namelist(spec: NamelistSpec, iteration: int, path=None) -> str:
    """Write the iteration's namelist (defaults for unset parameters)."""
    return write_namelist(spec.params_at(iteration), path)


# --- sources -------------------------------------------------------------

SOURCE_CODES = {"chease": 0, "eqdsk": 1, "expeq": 2, "exptnz": 3,
                "profiles": 4, "iterdb": 5, "imported": 7}
CODE_NAMES = {v: k for k, v in SOURCE_CODES.items()}

LEGAL_SOURCES = {
    "eprofiles": {0, 3, 4, 5, 7},
    "iprofiles": {0, 3, 4, 5, 7},
    "pressure": {0, 1, 2, 3, 4, 5, 7},
    "current": {0, 1, 2, 7},
    "rhomesh": {0, 1, 7},
}

IMPORT_KEYS = ("rhopsi", "rhotor", "ne", "Te", "ni", "Ti", "nz", "Tz",
               "Iprl", "Jprl", "ffprime", "Istr", "pressure", "pprime",
               "Zeff")


def _as_code(value, profile: str) -> int:
    if isinstance(value, str):
        key = value.lower()
        if key not in SOURCE_CODES:
            raise IllegalSourceForProfile(
                f"unknown source {value!r} for {profile}")
        code = SOURCE_CODES[key]
    else:
        code = int(value)
        if code not in CODE_NAMES:
            raise IllegalSourceForProfile(
                f"source number {code} is not assigned (valid: "
                f"{sorted(CODE_NAMES)})")
    if code not in LEGAL_SOURCES[profile]:
        raise IllegalSourceForProfile(
            f"source {CODE_NAMES[code]!r} ({code}) is not accepted for "
            f"{profile} (accepted: "
            f"{sorted(CODE_NAMES[c] for c in LEGAL_SOURCES[profile])})")
    return code


@dataclass
class SourceSelection:
    """Per-profile source tags (scalars or per-iteration lists)."""

    eprofiles_src: object = None
    iprofiles_src: object = None
    pressure_src: object = None
    current_src: object = None
    rhomesh_src: object = None
    boundary_type: str | int = "asis"
    psin_cut: float = 0.999
    eps: float = 1e-8
    iterTotal: int = 1

    def __post_init__(self):
        for profile in ("eprofiles", "iprofiles", "pressure", "current",
                        "rhomesh"):
            raw = getattr(self, f"{profile}_src")
            if raw is None:
                codes = None
            else:
                seq = raw if isinstance(raw, (list, tuple)) else [raw]
                codes = [_as_code(v, profile) for v in seq]
            setattr(self, f"_{profile}", codes)
        self.policy = BoundaryPolicy(mode=self.boundary_type,
                                     psin_cut=self.psin_cut, eps=self.eps)

    def source_at(self, profile: str, iteration: int):
        codes = getattr(self, f"_{profile}")
        if not codes:
            return None
        return codes[min(iteration, len(codes) - 1)]


@dataclass
class ImportedProfiles:
    """Externally supplied override profiles, with their grids."""

    values: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = {k: np.asarray(v, float) for k, v in self.values.items()}
        unknown = set(vals) - set(IMPORT_KEYS)
        if unknown:
            raise OrphanImport(f"unknown import keys {sorted(unknown)}; "
                               f"importable: {IMPORT_KEYS}")
        profile_keys = set(vals) - {"rhopsi", "rhotor"}
        if profile_keys and not {"rhopsi", "rhotor"} <= set(vals):
            raise OrphanImport(
                "imported profiles must be accompanied with both the "
                "rhopsi and rhotor grids")
        self.values = vals

    def __bool__(self):
        return bool(set(self.values) - {"rhopsi", "rhotor"})

    @property
    def grid(self) -> RadialGrid:
        return RadialGrid.from_rho(rhopsi=self.values["rhopsi"],
                                   rhotor=self.values["rhotor"])

    def profile(self, key: str):
        return self.values.get(key)


@dataclass
class RunConfig:
    """Run-level switches (mode, cleanup policy, tolerances)."""

    runmode: int = 1              # 1 run, 2 replot, 3 clean
    removeinputs: bool = False
    removeoutputs: bool = False
    shotpath: str | None = None
    workdir: str = "."
    cheasemode: int = 1           # 1 equilibrium, 2 current, 3 pressure
    current_tol: float = 1e-3
    target_current: float | None = None
    picard_tol: float = 1e-8
    max_picard: int = 200
    current_hook: object = None   # optional replacement correction hooks
    pressure_hook: object = None

    def __post_init__(self):
        if self.removeinputs and not self.shotpath:
            raise MissingSourceFile(
                "removeinputs requires a path to the shot files "
                "(set shotpath)")


# --- shot directory ------------------------------------------------------

SHOT_TYPES = ("EQDSK", "EXPEQ", "EXPTNZ", "ITERDB", "PROFILES", "CHEASE")


def resolve_shot(shotdir) -> dict:
    """Register ``<dirname>_<TYPE>`` files found in a shot directory."""
    shotdir = os.path.abspath(shotdir)
    if not os.path.isdir(shotdir):
        raise EmptyShotDirectory(f"{shotdir} is not a directory")
    prefix = os.path.basename(shotdir.rstrip(os.sep))
    found = {}
    for entry in sorted(os.listdir(shotdir)):
        full = os.path.join(shotdir, entry)
        if not os.path.isfile(full):
            continue
        if not entry.startswith(prefix + "_"):
            logger.warning("resolve_shot: %s does not match %s_<TYPE>; "
                           "skipping", entry, prefix)
            continue
        suffix = entry[len(prefix) + 1:]
        if suffix in SHOT_TYPES:
            found[suffix] = full
        else:
            logger.warning("resolve_shot: unknown file type %r in %s; "
                           "skipping", suffix, shotdir)
    if not found:
        raise EmptyShotDirectory(
            f"no <dirname>_<TYPE> files found in {shotdir}")
    return found


# --- correction hooks ----------------------------------------------------

def current_correction(Iprl, I_computed: float, I_target: float) -> np.ndarray:
    """Default parallel-current correction: multiplicative rescale.

    Treat this as a template; run_iterations accepts a replacement hook
    with the same signature (profile, computed, target) -> profile.
    """
    if I_computed == 0.0:
        raise ZeroComputedCurrent("computed total current is zero")
    return np.asarray(Iprl, float) * (I_target / I_computed)


def pressure_correction(P, I_computed: float, I_target: float) -> np.ndarray:
    """Default pressure correction: multiplicative rescale (template)."""
    if I_computed == 0.0:
        raise ZeroComputedCurrent("computed total current is zero")
    return np.asarray(P, float) * (I_target / I_computed)


# --- archiving -----------------------------------------------------------

ARCHIVE_MAP = (
    ("EXPEQ", "EXPEQ_iter{:03d}"),
    ("EXPEQ.OUT", "EXPEQ_iter{:03d}.OUT"),
    ("EXPTNZ", "EXPTNZ_iter{:03d}"),
    ("EXPTNZ.OUT", "EXPTNZ_iter{:03d}.OUT"),
    ("chease_namelist", "chease_namelist_iter{:03d}"),
    ("chease.dat", "chease_iter{:03d}.dat"),
)


def archive_iteration(workdir, iteration: int, force: bool = False) -> list:
    """Rename the iteration's working files to their _iterNNN names."""
    renamed = []
    for src_name, dst_tpl in ARCHIVE_MAP:
        src = os.path.join(workdir, src_name)
        if not os.path.exists(src):
            continue
        dst = os.path.join(workdir, dst_tpl.format(iteration))
        if os.path.exists(dst) and not force:
            raise CollisionWithoutForce(
                f"{dst} already exists; refusing to overwrite")
        os.replace(src, dst)
        renamed.append(dst)
    return renamed


def archived_iterations(workdir) -> list:
    """Sorted iteration numbers that already have a bundle archive."""
    out = []
    for path in glob.glob(os.path.join(workdir, "chease_iter*.dat")):
        m = re.fullmatch(r"chease_iter(\d{3})\.dat", os.path.basename(path))
        if m:
            out.append(int(m.group(1)))
    return sorted(out)


# working inputs are re-creatable from the shot; everything _iterNNN is a
# run record and travels with the outputs so archive numbering stays
# aligned with the bundles
INPUT_PATTERNS = ("EXPEQ", "EXPTNZ", "chease_namelist")
OUTPUT_PATTERNS = ("EXPEQ.OUT", "EXPTNZ.OUT", "chease.dat", "EQDSK",
                   "EXPEQ_iter[0-9]*", "EXPTNZ_iter[0-9]*",
                   "chease_namelist_iter[0-9]*", "chease_iter*.dat",
                   "run_report")


def clean_workdir(workdir, inputs: bool = True, outputs: bool = True) -> list:
    """Remove generated files from a working directory."""
    removed = []
    patterns = (INPUT_PATTERNS if inputs else ()) + \
        (OUTPUT_PATTERNS if outputs else ())
    for pattern in patterns:
        for path in glob.glob(os.path.join(workdir, pattern)):
            os.remove(path)
            removed.append(path)
    return removed


# --- source resolution ----------------------------------------------------

@dataclass
class _Resolved:
    """One resolved source: reader output plus provenance."""

    code: int
    data: dict
    grid: RadialGrid
    prior_output: bool


def _prior_paths(workdir, iteration):
    prev = iteration - 1
    return {
        "chease": os.path.join(workdir, f"chease_iter{prev:03d}.dat"),
        "expeq": os.path.join(workdir, f"EXPEQ_iter{prev:03d}.OUT"),
        "exptnz": os.path.join(workdir, f"EXPTNZ_iter{prev:03d}.OUT"),
        "eqdsk": os.path.join(workdir, "EQDSK"),
    }


class _SourcePool:
    """Lazily reads and caches every source needed by one iteration."""

    def __init__(self, shot_files, workdir, iteration, imported,
                 grid_kwargs, setparam):
        self.shot_files = shot_files
        self.workdir = workdir
        self.iteration = iteration
        self.imported = imported
        self.grid_kwargs = grid_kwargs
        self.setparam = setparam
        self._cache = {}

    def path_for(self, name: str):
        """Prefer the prior iteration's output over the shot file."""
        if self.iteration > 0:
            prior = _prior_paths(self.workdir, self.iteration).get(name)
            if prior and os.path.exists(prior):
                return prior, True
        shot = self.shot_files.get(name.upper())
        if shot:
            return shot, False
        return None, False

    def resolve(self, code: int, profile: str) -> _Resolved:
        name = CODE_NAMES[code]
        if name == "imported":
            if self.iteration > 0:
                raise MissingSourceFile(
                    "the imported source is honored at iteration 0 only; "
                    "switch to a file source via a per-iteration list")
            if not self.imported:
                raise MissingSourceFile(
                    f"{profile} wants imported data but none was provided")
            return _Resolved(code=7, data=dict(self.imported.values),
                             grid=self.imported.grid, prior_output=False)
        if name in self._cache:
            return self._cache[name]
        path, prior = self.path_for(name)
        if path is None:
            raise MissingSourceFile(
                f"{profile} source {name!r}: no file available "
                f"(iteration {self.iteration})")
        data, grid = self._read(name, path)
        resolved = _Resolved(code=code, data=data, grid=grid,
                             prior_output=prior)
        self._cache[name] = resolved
        return resolved

    def _read(self, name, path):
        kwargs = dict(self.grid_kwargs)
        setparam = dict(self.setparam)
        if name == "eqdsk":
            res = read_eqdsk(path, setParam=setparam, **kwargs)
            return dict(res.data), res.grid
        if name == "chease":
            data = read_chease(path, setParam=setparam, **kwargs)
            grid = RadialGrid(psin=data["PSIN"], phin=data.get("PHIN"))
            return data, grid
        if name == "expeq":
            res = read_expeq(path, setParam=setparam, **kwargs)
            data = dict(res.data)
            grid = RadialGrid.from_rho(
                rhopsi=data.get("rhopsi"), rhotor=data.get("rhotor"))
            return data, grid
        if name == "exptnz":
            data = read_exptnz(path, setParam=setparam, **kwargs)
        elif name == "profiles":
            data = read_profiles(path, setParam=setparam, **kwargs)
        elif name == "iterdb":
            data = read_iterdb(path, setParam=setparam, **kwargs)
        else:
            raise MissingSourceFile(f"unhandled source {name!r}")
        grid = RadialGrid.from_rho(rhopsi=data.get("rhopsi"),
                                   rhotor=data.get("rhotor"))
        return data, grid


def _grid_source_for(sel, pool, iteration):
    """Build the rhomesh GridSource (or None for native grids)."""
    code = sel.source_at("rhomesh", iteration)
    if code is None:
        return None, None
    name = CODE_NAMES[code]
    if name == "imported":
        if not pool.imported or "rhopsi" not in pool.imported.values:
            raise MissingSourceFile("rhomesh 'imported' needs rhopsi and "
                                    "rhotor in the imported values")
        return GridSource(kind=GridKind.imported, grid=pool.imported.grid), name
    path, _ = pool.path_for(name)
    if path is None:
        raise MissingSourceFile(f"rhomesh source {name!r}: no file available")
    if name == "eqdsk":
        res = read_eqdsk(path)
        return GridSource(kind=GridKind.eqdsk, grid=res.grid,
                          q=res.file.qpsi,
                          psi_scale=res.file.sibry - res.file.simag), name
    data = read_chease(path)
    return GridSource(kind=GridKind.chease,
                      grid=RadialGrid(psin=data["PSIN"],
                                      phin=data.get("PHIN")),
                      q=data["q"], psi_scale=data.get("psi_scale")), name


def _machine_scalars(pool: _SourcePool) -> MachineScalars:
    """B0/R0 (and the file's total current) from an EQDSK or CHEASE source."""
    path, _ = pool.path_for("eqdsk")
    if path:
        res = read_eqdsk(path)
        return MachineScalars(B0=res.file.bcentr, R0=res.file.rcentr,
                              I_target=res.file.current)
    path, _ = pool.path_for("chease")
    if path:
        data = read_chease(path)
        return MachineScalars(B0=data["B0EXP"], R0=data["R0EXP"],
                              I_target=data.get("ITEXP"))
    raise MissingSourceFile(
        "machine scalars need an EQDSK or CHEASE file in the shot")


def _norm_factor(key: str, s: MachineScalars) -> float:
    """Normalization divisor for an EXPEQ column."""
    return {
        "pressure": s.B0 ** 2 / MU0,
        "pprime": s.B0 / (MU0 * s.R0 ** 2),
        "ffprime": s.B0,
        "Istr": s.B0 * s.R0 / MU0,
        "Iprl": s.B0 * s.R0 / MU0,
        "Jprl": s.B0 / (MU0 * s.R0),
    }[key]


def _import_onto(imported: ImportedProfiles, key: str, grid: RadialGrid):
    """Re-grid one imported profile onto a target grid."""
    column = "rhopsi" if grid.has("psin") else "rhotor"
    return regrid(imported.profile(key), imported.grid, grid, column)


def _grid_column_name(grid: RadialGrid, nrhomesh: int) -> str:
    if nrhomesh == 1 and grid.has("phin"):
        return "rhotor"
    return "rhopsi" if grid.has("psin") else "rhotor"


@dataclass
class AssembledInputs:
    """Everything one iteration needs to run the solver."""

    expeq: ExpeqFile
    exptnz: dict
    scalars: MachineScalars
    grid: RadialGrid
    boundary: Boundary
    warnings: list


def assemble_inputs(sel: SourceSelection, imported: ImportedProfiles,
                    shot_files: dict, iteration: int, workdir: str,
                    params: dict, scale_current: float = 1.0,
                    scale_pressure: float = 1.0) -> AssembledInputs:
    """Build the EXPTNZ and EXPEQ contents for one iteration.

    Readers re-grid onto the rhomesh source when one is selected; without
    one, each file keeps the native grid of its own profile sources (ion
    profiles land on the electron-profile grid, the current column on the
    pressure grid).  Imported profiles override the sourced ones at
    iteration zero only.  ``scale_current``/``scale_pressure`` apply the
    correction-mode rescale to the assembled column.
    """
    imported = imported or ImportedProfiles()
    warnings = []
    nrhomesh = int(params.get("NRHOMESH", 0))
    nppfun = int(params.get("NPPFUN", 8))
    nsttp = int(params.get("NSTTP", 1))
    setparam = {"nrhopsi": nrhomesh}

    probe_pool = _SourcePool(shot_files, workdir, iteration, imported,
                             {}, {})
    grid_source, grid_source_name = _grid_source_for(sel, probe_pool,
                                                     iteration)
    grid_kwargs = {}
    if grid_source is not None:
        name = grid_source_name
        if name == "imported":
            grid_kwargs = {"imported": {
                "rhopsi": imported.values["rhopsi"],
                "rhotor": imported.values["rhotor"]}}
        else:
            path, _ = probe_pool.path_for(name)
            grid_kwargs = {name: path}
    pool = _SourcePool(shot_files, workdir, iteration, imported,
                       grid_kwargs, setparam)
    scalars = _machine_scalars(pool)

    # --- kinetic profiles (EXPTNZ content) ---
    e_code = sel.source_at("eprofiles", iteration)
    i_code = sel.source_at("iprofiles", iteration)
    if e_code is None or i_code is None:
        raise MissingSourceFile("eprofiles_src and iprofiles_src must be set")
    e_res = pool.resolve(e_code, "eprofiles")
    i_res = pool.resolve(i_code, "iprofiles")

    # with a rhomesh source the readers have already unified every profile
    # onto it, so the e-profile grid IS the common grid either way
    kin_grid = e_res.grid
    column = _grid_column_name(kin_grid, nrhomesh)

    def onto_kin(res, key):
        val = res.data.get(key)
        if val is None:
            return None
        if res.grid is kin_grid or np.array_equal(
                res.grid.column(column), kin_grid.column(column)):
            return np.asarray(val, float)
        return regrid(val, res.grid, kin_grid, column)

    exptnz = {column: kin_grid.column(column)}
    exptnz["Te"] = onto_kin(e_res, "Te")
    exptnz["ne"] = onto_kin(e_res, "ne")
    exptnz["Ti"] = onto_kin(i_res, "Ti")
    exptnz["ni"] = onto_kin(i_res, "ni")
    zeff = onto_kin(i_res, "Zeff")
    if zeff is None:
        zeff = onto_kin(e_res, "Zeff")
    for key, val in (("Te", exptnz["Te"]), ("ne", exptnz["ne"]),
                     ("Ti", exptnz["Ti"]), ("ni", exptnz["ni"])):
        if val is None:
            raise MissingProfile(f"selected sources do not provide {key!r}")
    if zeff is None:
        nz = onto_kin(i_res, "nz")
        nz = np.zeros_like(exptnz["ne"]) if nz is None else nz
        zeff = (exptnz["ni"] + 36.0 * nz) / exptnz["ne"]
    exptnz["Zeff"] = zeff

    kinetic_imports = []
    if iteration == 0 and imported:
        for key in ("Te", "ne", "Ti", "ni", "Zeff"):
            if imported.profile(key) is not None:
                exptnz[key] = _import_onto(imported, key, kin_grid)
                kinetic_imports.append(key)

    # --- equilibrium columns (EXPEQ content) ---
    p_code = sel.source_at("pressure", iteration)
    c_code = sel.source_at("current", iteration)
    if p_code is None or c_code is None:
        raise MissingSourceFile("pressure_src and current_src must be set")
    p_res = pool.resolve(p_code, "pressure")
    c_res = pool.resolve(c_code, "current")

    eq_grid = p_res.grid  # unified onto the rhomesh source when one is set
    eq_column = _grid_column_name(eq_grid, nrhomesh)

    def onto_eq(res, key):
        val = res.data.get(key)
        if val is None:
            return None
        if np.array_equal(res.grid.column(eq_column), eq_grid.column(eq_column)):
            return np.asarray(val, float)
        return regrid(val, res.grid, eq_grid, eq_column)

    pressure_key = PRESSURE_KEYS[nppfun]
    pres_col = onto_eq(p_res, pressure_key)
    if pres_col is None:
        raise MissingProfile(
            f"pressure source {CODE_NAMES[p_res.code]!r} does not provide "
            f"{pressure_key!r} (NPPFUN={nppfun})")
    current_key = CURRENT_KEYS[nsttp]
    curr_col = onto_eq(c_res, current_key)
    if curr_col is None:
        raise MissingProfile(
            f"current source {CODE_NAMES[c_res.code]!r} does not provide "
            f"{current_key!r} (NSTTP={nsttp})")

    # sources deliver SI except EXPEQ (already normalized)
    if CODE_NAMES[p_res.code] != "expeq":
        pres_col = pres_col / _norm_factor(pressure_key, scalars)
    if CODE_NAMES[c_res.code] != "expeq":
        curr_col = curr_col / _norm_factor(current_key, scalars)

    if iteration == 0 and imported:
        if imported.profile(pressure_key) is not None:
            pres_col = _import_onto(imported, pressure_key, eq_grid) \
                / _norm_factor(pressure_key, scalars)
        elif kinetic_imports:
            msg = ("imported kinetic profiles changed a pressure component "
                   f"({', '.join(kinetic_imports)}) but the pressure column "
                   f"stays file-sourced from "
                   f"{CODE_NAMES[p_res.code]!r}; recompute or import the "
                   "pressure to stay consistent")
            warnings.append(msg)
            logger.warning("%s", msg)
        if imported.profile(current_key) is not None:
            curr_col = _import_onto(imported, current_key, eq_grid) \
                / _norm_factor(current_key, scalars)

    pres_col = pres_col * scale_pressure
    curr_col = curr_col * scale_current

    boundary = _boundary_for(sel, pool, grid_source_name, p_res, c_res,
                             scalars)
    rb = boundary.r / scalars.R0
    zb = boundary.z / scalars.R0
    epsilon = (rb.max() - rb.min()) / (rb.max() + rb.min())
    zgeom = float(np.mean(zb[:-1] if boundary.closed else zb))

    if pressure_key == "pressure":
        pedge = float(pres_col[-1])
    else:
        src_pres = onto_eq(p_res, "pressure")
        if src_pres is not None and CODE_NAMES[p_res.code] != "expeq":
            src_pres = src_pres / _norm_factor("pressure", scalars)
        pedge = float(src_pres[-1]) if src_pres is not None else 0.0

    expeq = ExpeqFile(
        epsilon=float(epsilon), zgeom=zgeom, pedge=pedge,
        boundary_r=rb, boundary_z=zb, nppfun=nppfun, nsttp=nsttp,
        nrhotype=0 if eq_column == "rhopsi" else 1,
        grid=eq_grid.column(eq_column), pressure_col=pres_col,
        current_col=curr_col)
    return AssembledInputs(expeq=expeq, exptnz=exptnz, scalars=scalars,
                           grid=eq_grid, boundary=boundary,
                           warnings=warnings)


def _boundary_for(sel, pool, grid_source_name, p_res, c_res,
                  scalars) -> Boundary:
    """LCMS source follows the rhomesh source, with geometry fallbacks."""
    candidates = []
    if grid_source_name in ("eqdsk", "chease"):
        candidates.append(grid_source_name)
    for res in (c_res, p_res):
        name = CODE_NAMES[res.code]
        if name in ("eqdsk", "chease", "expeq"):
            candidates.append(name)
    candidates.append("eqdsk")

    boundary = None
    for name in candidates:
        path, _ = pool.path_for(name)
        if path is None:
            continue
        if name == "eqdsk":
            res = read_eqdsk(path)
            if res.psimap.boundary is not None:
                boundary = res.psimap.boundary
                break
        elif name == "chease":
            data = read_chease(path)
            if "rbound" in data:
                boundary = _close_polyline(data["rbound"], data["zbound"])
                break
        elif name == "expeq":
            res = read_expeq(path)
            boundary = _close_polyline(res.data["rbound"] * scalars.R0,
                                       res.data["zbound"] * scalars.R0)
            break
    if boundary is None:
        raise MissingSourceFile(
            "no source provides the LCMS (need EQDSK, CHEASE, or EXPEQ)")

    if sel.policy.mode == "interp":
        path, _ = pool.path_for("eqdsk")
        if path is None:
            raise MissingSourceFile(
                "boundary_type 'interp' needs an EQDSK flux map to trace")
        pmap = read_eqdsk(path).psimap
        boundary = trace_lcms(pmap, psin_cut=sel.policy.psin_cut,
                              eps=sel.policy.eps,
                              n_points=sel.policy.n_points)
    return boundary


def _close_polyline(r, z) -> Boundary:
    r = np.asarray(r, float)
    z = np.asarray(z, float)
    if abs(r[0] - r[-1]) > 1e-9 or abs(z[0] - z[-1]) > 1e-9:
        r = np.append(r, r[0])
        z = np.append(z, z[0])
    return Boundary(r=r, z=z, closed=True, psin_level=1.0)


# --- internal solve driver -------------------------------------------------

def _solver_config(params: dict, cfg: RunConfig) -> solver.SolverConfig:
    return solver.SolverConfig(
        ns=int(params.get("NS", 256)), nt=int(params.get("NT", 256)),
        npsi=int(params.get("NPSI", 1024)),
        nchi=min(int(params.get("NCHI", 1024)), 1024),
        niso=int(params.get("NISO", 256)),
        relax=float(params.get("RELAX", 0.0)),
        tol=cfg.picard_tol, max_picard=cfg.max_picard)


def _psin_table(expeq: ExpeqFile, q_hint=None) -> np.ndarray:
    """The EXPEQ grid column as psi_N, mapping from phi_N when needed."""
    rho = np.asarray(expeq.grid, float)
    if expeq.nrhotype == 0:
        return rho ** 2
    if q_hint is None:
        return rho ** 2  # first pass: identity mapping, refined later
    from .gridmap import phin_to_psin
    return phin_to_psin(rho ** 2, q_hint)


def solve_from_inputs(expeq: ExpeqFile, boundary: Boundary,
                      scalars: MachineScalars, params: dict,
                      cfg: RunConfig, psi_scale_hint: float | None = None):
    """Run the internal solver for one assembled input set.

    Pressure-form (NPPFUN=8) and averaged-current (NSTTP>1) inputs need
    flux-surface information that depends on the solution, so the Picard
    solve sits inside a short outer loop that lags the psi span, the
    TT' table, and (for rhotor-gridded inputs) the phi->psi mapping.
    Returns (psimap, last_solve_residual, pprime_of_psin, ttprime_of_psin).
    """
    scfg = _solver_config(params, cfg)
    B0, R0 = scalars.B0, scalars.R0

    q_hint = None
    psin_tab = _psin_table(expeq, q_hint)
    pres_si = np.asarray(expeq.pressure_col, float) * _norm_factor(
        expeq.pressure_key, scalars)
    curr_si = np.asarray(expeq.current_col, float) * _norm_factor(
        expeq.current_key, scalars)

    psi_scale = psi_scale_hint or 0.1 * B0 * R0 ** 2
    ttprime_tab = (curr_si.copy() if expeq.nsttp == 1
                   else np.zeros_like(curr_si))
    residual_box = [np.inf]

    def track(_iter, res):
        residual_box[0] = res

    pmap = None
    try:
        for outer in range(60):
            if expeq.nppfun == 4:
                pprime_tab = pres_si
            else:
                pprime_tab = np.gradient(pres_si, psin_tab * psi_scale,
                                         edge_order=2)
            pp = PchipInterpolator(psin_tab, pprime_tab)
            tt = PchipInterpolator(psin_tab, ttprime_tab)
            pmap = solver.solve_fixed_boundary(boundary, pp, tt, scfg,
                                               scalars, callback=track)

            new_scale = pmap.psi_scale
            scale_change = abs(new_scale - psi_scale) / abs(new_scale)
            # p' ~ 1/scale while the solved scale ~ p' makes the plain
            # update oscillate with unit gain for pressure-form inputs;
            # the geometric mean damps it into a contraction with the
            # same fixed point
            psi_scale = (float(np.sqrt(psi_scale * new_scale))
                         if expeq.nppfun == 8 and psi_scale * new_scale > 0
                         else new_scale)

            tt_change = 0.0
            if expeq.nsttp != 1:
                new_tt = _ttprime_table(pmap, expeq, curr_si, pprime_tab,
                                        psin_tab, ttprime_tab, scalars,
                                        scfg)
                denom = np.max(np.abs(new_tt)) or 1.0
                tt_change = float(np.max(np.abs(new_tt - ttprime_tab))
                                  / denom)
                ttprime_tab = new_tt

            map_change = 0.0
            if expeq.nrhotype == 1:
                new_q = _q_table(pmap, psin_tab, ttprime_tab, scalars, scfg)
                new_psin = _psin_table(expeq, new_q)
                map_change = float(np.max(np.abs(new_psin - psin_tab)))
                psin_tab = new_psin

            needs_outer = (expeq.nppfun == 8 or expeq.nsttp != 1
                           or expeq.nrhotype == 1)
            if not needs_outer:
                break
            if outer > 0 and scale_change < 1e-7 and tt_change < 1e-7 \
                    and map_change < 1e-9:
                break
    except (NoConvergence, DegenerateBoundary, OpenContour,
            LevelOutOfRange, DegenerateJacobian, ZeroT) as exc:
        raise SolverFailure(f"internal solve failed: {exc}") from exc

    pp = PchipInterpolator(psin_tab, pprime_tab)
    tt = PchipInterpolator(psin_tab, ttprime_tab)
    return pmap, residual_box[0], pp, tt


def _ttprime_table(pmap, expeq, curr_si, pprime_tab, psin_tab,
                   prev_tt, scalars, scfg):
    """Invert the averaged current column for TT' on the lagged geometry."""
    B0, R0 = scalars.B0, scalars.R0
    levels = np.linspace(0.0, 1.0, min(scfg.niso, psin_tab.size))
    T_tab = fluxavg.fpol_from_ffprime(
        np.interp(levels, psin_tab, prev_tt), levels, pmap.psi_scale,
        B0 * R0)
    T_int = PchipInterpolator(levels, T_tab)
    sset = fluxavg.build_surface_set(pmap, levels, n_points=scfg.nchi // 2,
                                     T_of_level=T_int)
    pp_int = PchipInterpolator(psin_tab, pprime_tab)
    cur_int = PchipInterpolator(psin_tab, curr_si)
    tt_lvl = np.empty(levels.size)
    for k, si in enumerate(sset.integrals):
        glev = sset.geom_levels[k]
        tt_lvl[k] = fluxavg._ttprime_from(
            expeq.nsttp, float(cur_int(glev)), float(pp_int(glev)), si,
            float(T_int(glev)), R0, B0)
    return PchipInterpolator(levels, tt_lvl)(psin_tab)


def _q_table(pmap, psin_tab, ttprime_tab, scalars, scfg):
    """q on the EXPEQ grid from the lagged map (for rhotor-grid inputs)."""
    B0, R0 = scalars.B0, scalars.R0
    T_tab = fluxavg.fpol_from_ffprime(ttprime_tab, psin_tab,
                                      pmap.psi_scale, B0 * R0)
    T_int = PchipInterpolator(psin_tab, T_tab)
    sset = fluxavg.build_surface_set(pmap, psin_tab,
                                     n_points=max(64, scfg.nchi // 4),
                                     T_of_level=T_int)
    return np.array([si.C2 for si in sset.integrals]) \
        * T_int(sset.geom_levels) / (2.0 * np.pi)


# --- output emission -------------------------------------------------------

def _write_outputs(workdir, bundle, pmap, params, scalars):
    """Write chease.dat, EXPEQ.OUT, EXPTNZ.OUT, and the refreshed EQDSK."""
    from .formats.eqdsk import EqdskFile

    write_chease_out(bundle, os.path.join(workdir, "chease.dat"))

    npropt = abs(int(params.get("NPROPT", 3)))
    nppfun = int(params.get("NPPFUN", 8))
    nrhomesh = int(params.get("NRHOMESH", 0))
    psin = bundle["PSIN"]
    grid_col = bundle["rhotor"] if nrhomesh == 1 else bundle["rhopsi"]
    pressure_key = PRESSURE_KEYS[nppfun]
    current_key = CURRENT_KEYS[npropt]
    pres = bundle[pressure_key] / _norm_factor(pressure_key, scalars)
    curr = bundle[current_key] / _norm_factor(current_key, scalars)
    rb = bundle["rbound"] / scalars.R0
    zb = bundle["zbound"] / scalars.R0
    pedge = float(bundle["pressure"][-1] / _norm_factor("pressure", scalars))
    expeq_out = ExpeqFile(
        epsilon=float((rb.max() - rb.min()) / (rb.max() + rb.min())),
        zgeom=float(np.mean(zb[:-1])), pedge=pedge, boundary_r=rb,
        boundary_z=zb, nppfun=nppfun, nsttp=npropt,
        nrhotype=nrhomesh, grid=grid_col, pressure_col=pres,
        current_col=curr)
    write_expeq(expeq_out, os.path.join(workdir, "EXPEQ.OUT"))

    if all(k in bundle for k in ("Te", "ne", "Ti", "ni")):
        prof = {"rhopsi": bundle["rhopsi"], "rhotor": bundle["rhotor"],
                "Te": bundle["Te"], "ne": bundle["ne"],
                "Ti": bundle["Ti"], "ni": bundle["ni"],
                "Zeff": bundle.get("Zeff",
                                   np.ones_like(bundle["Te"]))}
        gridname = "rhotor" if nrhomesh == 1 else "rhopsi"
        write_exptnz(prof, os.path.join(workdir, "EXPTNZ.OUT"),
                     gridname=gridname)

    nw, nh = pmap.R.size, pmap.Z.size
    remap = PchipInterpolator(psin, bundle["fpol"])
    x = np.linspace(0.0, 1.0, nw)
    eq = EqdskFile(
        description="eqkit equilibrium output", nw=nw, nh=nh,
        rdim=float(pmap.R[-1] - pmap.R[0]),
        zdim=float(pmap.Z[-1] - pmap.Z[0]), rcentr=scalars.R0,
        rleft=float(pmap.R[0]),
        zmid=float(0.5 * (pmap.Z[0] + pmap.Z[-1])),
        rmaxis=pmap.axis_R, zmaxis=pmap.axis_Z, simag=pmap.psi_axis,
        sibry=pmap.psi_bnd, bcentr=scalars.B0,
        current=float(bundle["ITEXP"]),
        fpol=remap(x),
        pres=PchipInterpolator(psin, bundle["pressure"])(x),
        ffprim=PchipInterpolator(psin, bundle["ffprime"])(x),
        pprime=PchipInterpolator(psin, bundle["pprime"])(x),
        psirz=pmap.psi, qpsi=PchipInterpolator(psin, bundle["q"])(x),
        rbbbs=bundle["rbound"], zbbbs=bundle["zbound"],
        rlim=np.array([pmap.R[0], pmap.R[-1], pmap.R[-1], pmap.R[0]]),
        zlim=np.array([pmap.Z[0], pmap.Z[0], pmap.Z[-1], pmap.Z[-1]]))
    write_eqdsk(eq, os.path.join(workdir, "EQDSK"),
                nrbox=int(params.get("NRBOX", 60)),
                nzbox=int(params.get("NZBOX", 60)))


# --- run loop ---------------------------------------------------------------

@dataclass
class IterationRecord:
    iteration: int
    i_computed: float
    i_target: float
    rel_error: float
    residual: float
    scale: float


@dataclass
class RunReport:
    records: list
    converged: bool
    target: float

    @property
    def iterations_run(self) -> int:
        return len(self.records)


REPORT_NAME = "run_report"
_REPORT_HEADER = ("# iteration  I_computed[A]  I_target[A]  rel_error  "
                  "picard_residual  applied_scale")


def _append_report(workdir, rec: IterationRecord):
    path = os.path.join(workdir, REPORT_NAME)
    new = not os.path.exists(path)
    with open(path, "a") as f:
        if new:
            f.write(_REPORT_HEADER + "\n")
        f.write(f"{rec.iteration:9d}  {rec.i_computed:.9e}  "
                f"{rec.i_target:.9e}  {rec.rel_error:.9e}  "
                f"{rec.residual:.9e}  {rec.scale:.9e}\n")


def read_report(workdir) -> list:
    path = os.path.join(workdir, REPORT_NAME)
    if not os.path.exists(path):
        return []
    records = []
    with open(path) as f:
        for line in f:
            if line.startswith("#") or not line.strip():
                continue
            parts = line.split()
            records.append(IterationRecord(
                iteration=int(parts[0]), i_computed=float(parts[1]),
                i_target=float(parts[2]), rel_error=float(parts[3]),
                residual=float(parts[4]), scale=float(parts[5])))
    return records


class _WorkdirLock:
    """One run owns its working directory exclusively."""

    def __init__(self, workdir):
        self.path = os.path.join(workdir, ".eqkit.lock")

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise WorkdirLocked(
                f"{self.path} exists; another run owns this directory "
                "(remove the lock if that run crashed)") from None
        os.write(fd, b"eqkit\n")
        os.close(fd)
        return self

    def __exit__(self, *exc):
        try:
            os.remove(self.path)
        except FileNotFoundError:
            pass
        return False


def _resolve_target(cfg: RunConfig, shot_files: dict) -> float:
    if cfg.target_current is not None:
        return float(cfg.target_current)
    if "EQDSK" in shot_files:
        return float(read_eqdsk(shot_files["EQDSK"]).file.current)
    if "CHEASE" in shot_files:
        return float(read_chease(shot_files["CHEASE"])["ITEXP"])
    raise MissingSourceFile(
        "no target current: provide target_current or a shot EQDSK/CHEASE")


def run_iterations(cfg: RunConfig, sel: SourceSelection,
                   spec: NamelistSpec | None = None,
                   imported: ImportedProfiles | None = None) -> RunReport:
    """Execute the iteration loop in cfg.workdir.

    Mode 1 runs sel.iterTotal fresh iterations; modes 2 and 3 iterate the
    current/pressure correction until |I - I_target|/|I_target| falls
    under cfg.current_tol (TargetNotReached past sel.iterTotal).  Existing
    archives are scanned first and numbering continues after them.
    """
    spec = spec or NamelistSpec()
    imported = imported or ImportedProfiles()
    workdir = os.path.abspath(cfg.workdir)
    os.makedirs(workdir, exist_ok=True)

    if cfg.runmode == 3:
        clean_workdir(workdir, inputs=True, outputs=True)
        return RunReport(records=[], converged=True, target=0.0)
    if cfg.runmode == 2:
        records = read_report(workdir)
        target = records[-1].i_target if records else 0.0
        return RunReport(records=records, converged=bool(records),
                         target=target)

    shot_files = resolve_shot(cfg.shotpath) if cfg.shotpath else {}

    with _WorkdirLock(workdir):
        if cfg.removeinputs:
            clean_workdir(workdir, inputs=True, outputs=False)
        if cfg.removeoutputs:
            clean_workdir(workdir, inputs=False, outputs=True)
            report_path = os.path.join(workdir, REPORT_NAME)
            if os.path.exists(report_path):
                os.remove(report_path)

        target = _resolve_target(cfg, shot_files)
        history = read_report(workdir)
        done = archived_iterations(workdir)
        start = (max(done) + 1) if done else 0
        if done and len(history) < len(done):
            logger.warning("run_report shorter than the archive set; "
                           "correction scales restart at 1")

        records: list = list(history)
        converged = False
        end = start + max(int(sel.iterTotal), 1)
        for iteration in range(start, end):
            params = spec.params_at(iteration)
            assembled = assemble_inputs(sel, imported, shot_files,
                                        iteration, workdir, params)

            # Correction modes rescale this iteration's column by the
            # previous current mismatch.  A column read back from the
            # prior iteration's output already carries earlier rescales,
            # so it takes the single-step ratio; a static shot-file source
            # needs the compounded product instead.
            applied = 1.0
            if cfg.cheasemode in (2, 3) and records:
                prev = records[-1]
                hook = (cfg.current_hook or current_correction) \
                    if cfg.cheasemode == 2 else \
                    (cfg.pressure_hook or pressure_correction)
                ratio = float(hook(np.array([1.0]), prev.i_computed,
                                   target)[0])
                profile = "current" if cfg.cheasemode == 2 else "pressure"
                code = sel.source_at(profile, iteration)
                name = CODE_NAMES[code] if code is not None else ""
                pool_probe = _SourcePool(shot_files, workdir, iteration,
                                         imported, {}, {})
                _, prior = pool_probe.path_for(name) if name else (None, False)
                applied = ratio if prior else prev.scale * ratio
                if cfg.cheasemode == 2:
                    assembled = assembled_with_scale(assembled,
                                                     current=applied)
                else:
                    assembled = assembled_with_scale(assembled,
                                                     pressure=applied)

            create_namelist(spec, iteration,
                            os.path.join(workdir, "chease_namelist"))
            write_expeq(assembled.expeq, os.path.join(workdir, "EXPEQ"))
            gridname = "rhotor" if "rhotor" in assembled.exptnz else "rhopsi"
            write_exptnz(assembled.exptnz, os.path.join(workdir, "EXPTNZ"),
                         gridname=gridname)

            try:
                pmap, residual, pp, tt = solve_from_inputs(
                    assembled.expeq, assembled.boundary, assembled.scalars,
                    params, cfg)
            except SolverFailure as exc:
                exc.iteration = iteration
                raise

            kin = _kinetic_from_exptnz(assembled.exptnz)
            scfg = _solver_config(params, cfg)
            pressure_int = None
            if assembled.expeq.nppfun == 8:
                pres_si = assembled.expeq.pressure_col * _norm_factor(
                    "pressure", assembled.scalars)
                psin_tab = _psin_table(assembled.expeq)
                pressure_int = PchipInterpolator(psin_tab, pres_si)
            bundle = solver.equilibrium_outputs(
                pmap, kin, scfg, assembled.scalars, pp, tt,
                pressure_of_psin=pressure_int)
            _write_outputs(workdir, bundle, pmap, params, assembled.scalars)
            archive_iteration(workdir, iteration)

            i_comp = float(bundle["ITEXP"])
            rel = abs(i_comp - target) / abs(target) if target else np.inf
            rec = IterationRecord(iteration=iteration, i_computed=i_comp,
                                  i_target=target, rel_error=rel,
                                  residual=residual, scale=applied)
            _append_report(workdir, rec)
            records.append(rec)
            logger.info("iteration %03d: I=%.6e target=%.6e rel=%.3e",
                        iteration, i_comp, target, rel)

            if cfg.cheasemode in (2, 3) and rel < cfg.current_tol:
                converged = True
                break

        if cfg.cheasemode in (2, 3) and not converged:
            raise TargetNotReached(
                f"relative current error {records[-1].rel_error:.3e} after "
                f"{len(records)} iterations (tolerance {cfg.current_tol})",
                achieved=records[-1].i_computed, target=target)
        return RunReport(records=records,
                         converged=converged or cfg.cheasemode == 1,
                         target=target)


def assembled_with_scale(assembled: AssembledInputs, current: float = 1.0,
                         pressure: float = 1.0) -> AssembledInputs:
    """Rescale the assembled current/pressure columns (correction modes)."""
    expeq = assembled.expeq
    new = ExpeqFile(
        epsilon=expeq.epsilon, zgeom=expeq.zgeom,
        pedge=expeq.pedge * pressure, boundary_r=expeq.boundary_r,
        boundary_z=expeq.boundary_z, nppfun=expeq.nppfun,
        nsttp=expeq.nsttp, nrhotype=expeq.nrhotype, grid=expeq.grid,
        pressure_col=expeq.pressure_col * pressure,
        current_col=expeq.current_col * current)
    return AssembledInputs(expeq=new, exptnz=assembled.exptnz,
                           scalars=assembled.scalars, grid=assembled.grid,
                           boundary=assembled.boundary,
                           warnings=assembled.warnings)


def _kinetic_from_exptnz(exptnz: dict) -> KineticProfiles:
    gridname = "rhotor" if "rhotor" in exptnz else "rhopsi"
    grid = RadialGrid.from_rho(**{gridname: exptnz[gridname]})
    return KineticProfiles(grid=grid, Te=exptnz["Te"], ne=exptnz["ne"],
                           Ti=exptnz["Ti"], ni=exptnz["ni"],
                           Zeff=exptnz["Zeff"],
                           quasineutrality_tol=np.inf)
