"""PROFILES reader and writer (full experimental profile file).

Header names the grid and the value columns actually present:

    <n> psin, Te, ne, Ti, ni, Tb, nb, nz, Pb, Zeff, Vtor, Vpol profiles

followed by one block of n values per named column (grid block first),
single value per line.  Optional columns simply stay out of the header.
Profiles live natively on a psi_N grid in SI units (eV, m^-3, Pa).
"""

from __future__ import annotations

import numpy as np

from ..core import QE, KineticProfiles, RadialGrid, compute_zeff, pressure_gradient
from ..errors import HeaderMismatch, MissingProfile
from ._util import read_value_column, require_finite

_F = "%18.8E"
OPTIONAL_COLUMNS = ("Tb", "nb", "nz", "Pb", "Zeff", "Vtor", "Vpol")
REQUIRED_COLUMNS = ("Te", "ne", "Ti", "ni")
ALL_COLUMNS = REQUIRED_COLUMNS + OPTIONAL_COLUMNS


def read_profiles(path, setParam=None, **kwargs) -> dict:
    """Read a PROFILES file into a profile dictionary.

    Returns the full column set plus derived quantities: Zeff computed
    from the species when the file lacks it (or flattened to its average
    when setParam has Zeff=False), Pb = e nb Tb when absent, the total
    pressure of all species including fast ions, and pprime.  PHIN and
    rhotor are attached only when a grid source is supplied.
    """
    with open(path) as f:
        lines = f.read().splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise HeaderMismatch(f"{path}: empty file")

    tokens = lines[0].replace(",", " ").split()
    if len(tokens) < 4 or tokens[-1] != "profiles":
        raise HeaderMismatch(f"{path}: unrecognized header {lines[0]!r}")
    try:
        n = int(tokens[0])
    except ValueError as exc:
        raise HeaderMismatch(f"bad point count in {lines[0]!r}") from exc
    if tokens[1] != "psin":
        raise HeaderMismatch(f"{path}: PROFILES grid token must be psin, "
                             f"got {tokens[1]!r}")
    columns = tokens[2:-1]
    for name in columns:
        if name not in ALL_COLUMNS:
            raise HeaderMismatch(f"{path}: unknown column {name!r}")
    for name in REQUIRED_COLUMNS:
        if name not in columns:
            raise HeaderMismatch(f"{path}: required column {name!r} missing")
    expected = (1 + len(columns)) * n
    if len(lines) - 1 != expected:
        raise HeaderMismatch(f"{path}: header promises {expected} values, "
                             f"found {len(lines) - 1}")

    psin = require_finite("psin", read_value_column(lines, 1, n, "psin"))
    blocks = {}
    for i, name in enumerate(columns):
        blocks[name] = require_finite(
            name, read_value_column(lines, 1 + (1 + i) * n, n, name))
    return assemble_profiles(psin, blocks, setParam=setParam, **kwargs)


def assemble_profiles(psin, blocks: dict, setParam=None, **kwargs) -> dict:
    from ._sources import resolve_grid_source, source_psi_scale
    from ..gridmap import ProfileBundle, unify

    setParam = dict(setParam or {})
    values = dict(blocks)
    values.setdefault("nz", np.zeros_like(psin))

    grid = RadialGrid(psin=psin)
    source = resolve_grid_source(**kwargs)
    if source is not None:
        nrhotype = int(setParam.get("nrhopsi", 0))
        bundle = unify([ProfileBundle(grid=grid, values=values)],
                       rhomesh=source, nrhotype=nrhotype)[0]
        grid, values = bundle.grid, bundle.values

    out = dict(values)
    if grid.has("psin"):
        out["PSIN"] = grid.psin
        out["rhopsi"] = grid.rhopsi
    if grid.has("phin"):
        out["PHIN"] = grid.phin
        out["rhotor"] = grid.rhotor

    if "Zeff" not in out:
        kin = KineticProfiles(grid=grid, ne=out["ne"], ni=out["ni"],
                              nz=out["nz"], quasineutrality_tol=np.inf)
        out["Zeff"] = compute_zeff(kin)
    if setParam.get("Zeff", True) is False:
        out["Zeff"] = np.full_like(out["Zeff"], out["Zeff"].mean())

    tz = out.get("Tz", out["Ti"])
    thermal = QE * (out["ne"] * out["Te"] + out["ni"] * out["Ti"]
                    + out["nz"] * tz)
    if "Pb" not in out:
        if "nb" in out and "Tb" in out:
            out["Pb"] = QE * out["nb"] * out["Tb"]
        else:
            out["Pb"] = np.zeros_like(thermal)
    out["pressure"] = thermal + out["Pb"]
    if grid.has("psin"):
        out["pprime"] = pressure_gradient(out["pressure"], grid,
                                          source_psi_scale(source))
    else:
        out["pprime"] = np.gradient(out["pressure"], grid.phin, edge_order=2)
    return out


def write_profiles(profiles, path) -> None:
    """Write a PROFILES file from a mapping carrying PSIN (or psin)."""
    psin = profiles.get("PSIN", profiles.get("psin"))
    if psin is None:
        raise MissingProfile("write_profiles needs a PSIN column")
    psin = require_finite("psin", np.asarray(psin, float))
    columns = [name for name in ALL_COLUMNS if name in profiles]
    for name in REQUIRED_COLUMNS:
        if name not in columns:
            raise MissingProfile(f"write_profiles needs {name!r}")
    header = (f"{psin.size} psin, " + ", ".join(columns) + " profiles")
    out = [header]
    out.extend(_F % v for v in psin)
    for name in columns:
        col = require_finite(name, np.asarray(profiles[name], float))
        if col.size != psin.size:
            raise MissingProfile(f"{name} length != grid length")
        out.extend(_F % v for v in col)
    with open(path, "w") as f:
        f.write("\n".join(out) + "\n")
