"""EXPTNZ reader and writer (kinetic profile file).

Header: ``<n> <grid>,  Te,   ne,   Zeff,   Ti,   ni  profiles`` with
``grid`` either rhopsi or rhotor, followed by 5n values in a single
column (Te, ne, Zeff, Ti, ni blocks in header order).  The grid itself
is implicit: n uniform points of the named coordinate spanning [0, 1].

The impurity density is closed from Zeff and quasineutrality,
nz = ne (Zeff - Zi) / (Zz (Zz - Zi)), and the derived total pressure
never includes fast ions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import QE, RadialGrid, pressure_gradient
from ..errors import HeaderMismatch, MissingProfile
from ._util import read_value_column, require_finite

_F = "%18.8E"
COLUMN_ORDER = ("Te", "ne", "Zeff", "Ti", "ni")
GRID_TOKENS = ("rhopsi", "rhotor")


@dataclass
class ExptnzFile:
    """Contents of one EXPTNZ file (five columns on a uniform grid)."""

    n: int
    gridname: str
    Te: np.ndarray
    ne: np.ndarray
    Zeff: np.ndarray
    Ti: np.ndarray
    ni: np.ndarray

    def __post_init__(self):
        if self.gridname not in GRID_TOKENS:
            raise HeaderMismatch(f"grid token must be rhopsi or rhotor, "
                                 f"got {self.gridname!r}")
        for name in COLUMN_ORDER:
            if len(getattr(self, name)) != self.n:
                raise HeaderMismatch(f"{name} column length != {self.n}")

    def grid_column(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n)


def parse_exptnz_header(line: str):
    tokens = line.replace(",", " ").split()
    if len(tokens) != 2 + len(COLUMN_ORDER) + 1 or tokens[-1] != "profiles":
        raise HeaderMismatch(f"unrecognized EXPTNZ header {line!r}")
    if tuple(tokens[2:-1]) != COLUMN_ORDER:
        raise HeaderMismatch(f"EXPTNZ columns must be {COLUMN_ORDER}, "
                             f"got {tuple(tokens[2:-1])}")
    try:
        n = int(tokens[0])
    except ValueError as exc:
        raise HeaderMismatch(f"bad point count in header {line!r}") from exc
    return n, tokens[1]


def read_exptnz(path, setParam=None, **kwargs) -> dict:
    """Read an EXPTNZ file into a profile dictionary.

    Returns Te, Ti, ne, ni, nz, Zeff, the grid columns, and the derived
    pressure/pprime.  With a grid-source keyword the profiles are
    re-projected and the file's implicit grid dropped; re-projection onto
    the rhotor family needs a q-bearing or two-family source.
    """
    with open(path) as f:
        lines = [ln for ln in f.read().splitlines()]
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise HeaderMismatch(f"{path}: empty file")
    n, gridname = parse_exptnz_header(lines[0])
    if len(lines) - 1 != 5 * n:
        raise HeaderMismatch(f"{path}: header promises {5 * n} values, "
                             f"found {len(lines) - 1}")
    cols = {}
    for i, name in enumerate(COLUMN_ORDER):
        cols[name] = require_finite(
            name, read_value_column(lines, 1 + i * n, n, name))
    file = ExptnzFile(n=n, gridname=gridname, **cols)
    return assemble_exptnz(file, setParam=setParam, **kwargs)


def assemble_exptnz(file: ExptnzFile, setParam=None, **kwargs) -> dict:
    from ._sources import resolve_grid_source, source_psi_scale
    from ..gridmap import ProfileBundle, unify

    setParam = dict(setParam or {})
    zi = float(setParam.get("Zi", 1.0))
    zz = float(setParam.get("Zz", 6.0))

    nz = file.ne * (file.Zeff - zi) / (zz * (zz - zi))
    nz = np.clip(nz, 0.0, None)
    values = {"Te": file.Te, "ne": file.ne, "Zeff": file.Zeff,
              "Ti": file.Ti, "ni": file.ni, "nz": nz}

    grid = RadialGrid.from_rho(**{file.gridname: file.grid_column()})
    source = resolve_grid_source(**kwargs)
    if source is not None:
        nrhotype = int(setParam.get("nrhopsi", 0))
        bundle = unify([ProfileBundle(grid=grid, values=values)],
                       rhomesh=source, nrhotype=nrhotype)[0]
        grid, values = bundle.grid, bundle.values

    out = dict(values)
    if grid.has("psin"):
        out["rhopsi"] = grid.rhopsi
    if grid.has("phin"):
        out["rhotor"] = grid.rhotor

    # Thermal pressure only; impurity temperature falls back to Ti.
    pressure = QE * (out["ne"] * out["Te"] + out["ni"] * out["Ti"]
                     + out["nz"] * out["Ti"])
    out["pressure"] = pressure
    if grid.has("psin"):
        out["pprime"] = pressure_gradient(pressure, grid,
                                          source_psi_scale(source))
    else:
        out["pprime"] = np.gradient(pressure, grid.phin, edge_order=2)
    return out


def write_exptnz(profiles, path, gridname: str = "rhopsi",
                 n: int | None = None) -> None:
    """Write an EXPTNZ file from a profile mapping.

    ``profiles`` must carry Te, ne, Zeff, Ti, ni on the grid column named
    by ``gridname`` (also required, used to re-sample onto the uniform
    layout grid when necessary).
    """
    from ..gridmap import regrid

    for key in COLUMN_ORDER:
        if key not in profiles:
            raise MissingProfile(f"write_exptnz needs {key!r}")
    if gridname not in GRID_TOKENS:
        raise HeaderMismatch(f"grid token must be rhopsi or rhotor, "
                             f"got {gridname!r}")
    if gridname not in profiles:
        raise MissingProfile(f"write_exptnz needs the {gridname!r} column")
    rho = np.asarray(profiles[gridname], float)
    n = int(n or rho.size)
    uniform = np.linspace(0.0, 1.0, n)
    src_grid = RadialGrid.from_rho(**{gridname: rho})
    dst_grid = RadialGrid.from_rho(**{gridname: uniform})

    cols = []
    for key in COLUMN_ORDER:
        col = np.asarray(profiles[key], float)
        col = regrid(col, src_grid, dst_grid, gridname)
        cols.append(require_finite(key, col))

    header = (f"{n} {gridname},  Te,   ne,   Zeff,   Ti,   ni  profiles")
    out = [header]
    for col in cols:
        out.extend(_F % v for v in col)
    with open(path, "w") as f:
        f.write("\n".join(out) + "\n")
