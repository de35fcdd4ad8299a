"""EXPEQ reader and writer (reduced, normalized equilibrium file).

Layout, one value per line unless noted:

    epsilon
    zgeom
    pedge
    n_boundary
    r z                  (n_boundary lines)
    n_rho NPPFUN
    NSTTP NRHOMESH
    grid column          (n_rho lines)
    pressure column      (n_rho lines)
    current column       (n_rho lines)

All quantities are normalized to machine units.  NPPFUN selects the
pressure column (8 = pressure, 4 = pressure gradient), NSTTP the current
column (1 = TT', 2 = I*, 3 = I_par, 4 = J_par), NRHOMESH the grid family
(0 = rhopsi, 1 = rhotor).  The current column is written with the sign it
arrives with; no output-type sign flip is applied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Boundary, RadialGrid
from ..errors import BadTypeCode, CountMismatch, LengthMismatch, NotNormalized
from ._util import read_value_column, require_finite

_F = "%18.8E"

CURRENT_KEYS = {1: "ffprime", 2: "Istr", 3: "Iprl", 4: "Jprl"}
PRESSURE_KEYS = {4: "pprime", 8: "pressure"}


@dataclass
class ExpeqFile:
    """Contents of one EXPEQ file; profile columns are normalized."""

    epsilon: float
    zgeom: float
    pedge: float
    boundary_r: np.ndarray
    boundary_z: np.ndarray
    nppfun: int
    nsttp: int
    nrhotype: int
    grid: np.ndarray
    pressure_col: np.ndarray
    current_col: np.ndarray

    def __post_init__(self):
        if self.nppfun not in PRESSURE_KEYS:
            raise BadTypeCode(f"nppfun must be 4 or 8, got {self.nppfun}")
        if self.nsttp not in CURRENT_KEYS:
            raise BadTypeCode(f"nsttp must be 1..4, got {self.nsttp}")
        if self.nrhotype not in (0, 1):
            raise BadTypeCode(f"nrhotype must be 0 or 1, got {self.nrhotype}")
        n = len(self.grid)
        if not (len(self.pressure_col) == len(self.current_col) == n):
            raise LengthMismatch("profile columns must all have equal length")
        if len(self.boundary_r) != len(self.boundary_z):
            raise LengthMismatch("boundary r and z lengths differ")

    @property
    def pressure_key(self) -> str:
        return PRESSURE_KEYS[self.nppfun]

    @property
    def current_key(self) -> str:
        return CURRENT_KEYS[self.nsttp]


@dataclass
class ExpeqResult:
    file: ExpeqFile
    data: dict

    def __getitem__(self, key):
        return self.data[key]

    def keys(self):
        return self.data.keys()


def read_expeq(path, setParam=None, **kwargs) -> ExpeqResult:
    """Read an EXPEQ file into the type-code-keyed dictionary.

    The pressure key is ``pressure`` or ``pprime`` per NPPFUN, the
    current key ``ffprime``/``Istr``/``Iprl``/``Jprl`` per NSTTP, and the
    grid key ``rhopsi`` or ``rhotor`` per NRHOMESH.  With a grid-source
    keyword the profiles are re-gridded and the file's own grid dropped.
    """
    with open(path) as f:
        lines = [ln for ln in f.read().splitlines()]
    while lines and not lines[-1].strip():
        lines.pop()
    if len(lines) < 6:
        raise CountMismatch(f"{path}: file too short for an EXPEQ layout")

    def scalar(i, what):
        try:
            return float(lines[i].split()[0])
        except (ValueError, IndexError) as exc:
            raise CountMismatch(f"{path}: bad {what} line {lines[i]!r}") from exc

    epsilon = scalar(0, "epsilon")
    zgeom = scalar(1, "zgeom")
    pedge = scalar(2, "pedge")
    try:
        n_bnd = int(lines[3].split()[0])
    except (ValueError, IndexError) as exc:
        raise CountMismatch(f"{path}: bad boundary count") from exc
    if 4 + n_bnd + 2 > len(lines):
        raise CountMismatch(f"{path}: boundary block truncated")
    bnd = np.empty((n_bnd, 2))
    for i in range(n_bnd):
        parts = lines[4 + i].split()
        if len(parts) < 2:
            raise CountMismatch(f"{path}: bad boundary pair {lines[4 + i]!r}")
        bnd[i] = float(parts[0]), float(parts[1])

    row = 4 + n_bnd
    parts = lines[row].split()
    if len(parts) < 2:
        raise CountMismatch(f"{path}: bad 'n_rho NPPFUN' line")
    n_rho, nppfun = int(parts[0]), int(parts[1])
    parts = lines[row + 1].split()
    if len(parts) < 2:
        raise CountMismatch(f"{path}: bad 'NSTTP NRHOMESH' line")
    nsttp, nrhotype = int(parts[0]), int(parts[1])

    row += 2
    grid_col = read_value_column(lines, row, n_rho, "grid column")
    pres_col = read_value_column(lines, row + n_rho, n_rho, "pressure column")
    curr_col = read_value_column(lines, row + 2 * n_rho, n_rho, "current column")
    if row + 3 * n_rho != len(lines):
        raise CountMismatch(f"{path}: trailing data after the current column")
    for name, arr in (("grid", grid_col), ("pressure", pres_col),
                      ("current", curr_col), ("boundary", bnd)):
        require_finite(name, arr)

    file = ExpeqFile(epsilon=epsilon, zgeom=zgeom, pedge=pedge,
                     boundary_r=bnd[:, 0], boundary_z=bnd[:, 1],
                     nppfun=nppfun, nsttp=nsttp, nrhotype=nrhotype,
                     grid=grid_col, pressure_col=pres_col,
                     current_col=curr_col)
    return _assemble_result(file, setParam=setParam, **kwargs)


def _assemble_result(file: ExpeqFile, setParam=None, **kwargs) -> ExpeqResult:
    from ._sources import resolve_grid_source
    from ..gridmap import ProfileBundle, unify

    setParam = dict(setParam or {})
    grid_name = "rhopsi" if file.nrhotype == 0 else "rhotor"
    grid = RadialGrid.from_rho(**{grid_name: file.grid})
    values = {file.pressure_key: file.pressure_col,
              file.current_key: file.current_col}

    source = resolve_grid_source(**kwargs)
    if source is not None:
        nrhotype = int(setParam.get("nrhopsi", 0))
        bundle = unify([ProfileBundle(grid=grid, values=values)],
                       rhomesh=source, nrhotype=nrhotype)[0]
        grid, values = bundle.grid, bundle.values

    data = {
        "epsilon": file.epsilon, "zgeom": file.zgeom, "pedge": file.pedge,
        "nRZmesh": file.boundary_r.size, "nrhomesh": file.grid.size,
        "nrhotype": file.nrhotype, "nsttp": file.nsttp, "nppfun": file.nppfun,
        "rbound": file.boundary_r, "zbound": file.boundary_z,
    }
    if grid.has("psin"):
        data["rhopsi"] = grid.rhopsi
    if grid.has("phin"):
        data["rhotor"] = grid.rhotor
    data.update(values)
    return ExpeqResult(file=file, data=data)


def write_expeq(file: ExpeqFile, path, normalized: bool = True) -> None:
    """Write an EXPEQ file (exact inverse of the read layout).

    The caller asserts the contents are normalized; passing
    ``normalized=False`` raises, mirroring the file family's contract.
    """
    if not normalized:
        raise NotNormalized("EXPEQ files carry normalized quantities only")
    require_finite("grid", file.grid)
    require_finite("pressure", file.pressure_col)
    require_finite("current", file.current_col)
    out = [_F % file.epsilon, _F % file.zgeom, _F % file.pedge,
           f"{file.boundary_r.size:d}"]
    for r, z in zip(file.boundary_r, file.boundary_z):
        out.append(f"{_F % r} {_F % z}")
    out.append(f"{file.grid.size:d} {file.nppfun:d}")
    out.append(f"{file.nsttp:d} {file.nrhotype:d}")
    for col in (file.grid, file.pressure_col, file.current_col):
        out.extend(_F % v for v in col)
    with open(path, "w") as f:
        f.write("\n".join(out) + "\n")


def boundary_to_expeq(boundary: Boundary, R0: float) -> tuple:
    """Normalize a boundary polyline by R0 for EXPEQ storage."""
    return boundary.r / R0, boundary.z / R0
