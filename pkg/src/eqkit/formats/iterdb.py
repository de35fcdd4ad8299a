"""ITERDB reader and writer (transport-code kinetic profiles).

Only the ASCII block layout is accepted; binary files are rejected.
Each block is ``<name> <units> <count>`` on one line followed by the
values, five per line.  Profiles live natively on a rhotor grid in SI
units.  Recognized block names: rhotor, Te, Ti, ne, ni, nz, Zeff, Vtor,
Vpol; anything else raises UnknownBlock.
"""

from __future__ import annotations

import numpy as np

from ..core import QE, RadialGrid, compute_zeff, KineticProfiles
from ..errors import HeaderMismatch, MissingProfile, UnknownBlock
from ._util import fmt_block, require_finite

_F = "%18.8E"
KNOWN_BLOCKS = ("rhotor", "Te", "Ti", "ne", "ni", "nz", "Zeff", "Vtor", "Vpol")
_UNITS = {"rhotor": "-", "Te": "eV", "Ti": "eV", "ne": "m^-3", "ni": "m^-3",
          "nz": "m^-3", "Zeff": "-", "Vtor": "m/s", "Vpol": "m/s"}
REQUIRED = ("rhotor", "Te", "Ti", "ne", "ni")


def _is_binary(raw: bytes) -> bool:
    return b"\x00" in raw[:4096]


def read_iterdb(path, setParam=None, **kwargs) -> dict:
    """Read an ASCII ITERDB file into a profile dictionary.

    Returns the kinetic profiles on the native rhotor grid plus derived
    nz (zeros when absent), Zeff (computed from the species when the file
    lacks it), pressure (fast ions excluded), and pprime.  rhopsi is
    attached only when a grid source is supplied.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if _is_binary(raw):
        raise UnknownBlock(f"{path}: binary ITERDB files are not supported; "
                           "convert to the ASCII block layout")
    lines = raw.decode().splitlines()
    while lines and not lines[-1].strip():
        lines.pop()

    blocks = {}
    i = 0
    while i < len(lines):
        header = lines[i].split()
        if len(header) != 3:
            raise UnknownBlock(f"{path}: bad block header {lines[i]!r}")
        name, _units, count_s = header
        if name not in KNOWN_BLOCKS:
            raise UnknownBlock(f"{path}: unknown block {name!r}")
        try:
            count = int(count_s)
        except ValueError as exc:
            raise UnknownBlock(f"{path}: bad count in {lines[i]!r}") from exc
        n_lines = (count + 4) // 5
        chunk = " ".join(lines[i + 1:i + 1 + n_lines]).split()
        if len(chunk) != count:
            raise HeaderMismatch(f"{path}: block {name} promises {count} "
                                 f"values, found {len(chunk)}")
        blocks[name] = require_finite(name, np.array(chunk, dtype=float))
        i += 1 + n_lines

    for name in REQUIRED:
        if name not in blocks:
            raise MissingProfile(f"{path}: ITERDB block {name!r} is required")
    return assemble_iterdb(blocks, setParam=setParam, **kwargs)


def assemble_iterdb(blocks: dict, setParam=None, **kwargs) -> dict:
    from ._sources import resolve_grid_source, source_psi_scale
    from ..gridmap import ProfileBundle, unify

    setParam = dict(setParam or {})
    rhotor = blocks["rhotor"]
    values = {k: v for k, v in blocks.items() if k != "rhotor"}
    values.setdefault("nz", np.zeros_like(rhotor))

    grid = RadialGrid.from_rho(rhotor=rhotor)
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

    if "Zeff" not in out:
        kin = KineticProfiles(grid=grid, ne=out["ne"], ni=out["ni"],
                              nz=out["nz"], quasineutrality_tol=np.inf)
        out["Zeff"] = compute_zeff(kin)

    # Thermal species only; fast-ion pressure never enters here.
    pressure = QE * (out["ne"] * out["Te"] + out["ni"] * out["Ti"]
                     + out["nz"] * out["Ti"])
    out["pressure"] = pressure
    if grid.has("psin"):
        from ..core import pressure_gradient
        out["pprime"] = pressure_gradient(pressure, grid,
                                          source_psi_scale(source))
    else:
        out["pprime"] = np.gradient(pressure, grid.phin, edge_order=2)
    return out


def write_iterdb(profiles, path) -> None:
    """Write the ASCII block ITERDB layout from a profile mapping."""
    if "rhotor" not in profiles:
        raise MissingProfile("write_iterdb needs the rhotor column")
    out = []
    for name in KNOWN_BLOCKS:
        if name not in profiles:
            continue
        arr = require_finite(name, np.asarray(profiles[name], float))
        out.append(f"{name} {_UNITS[name]} {arr.size:d}")
        out.append(fmt_block(arr, _F))
    with open(path, "w") as f:
        f.write("\n".join(out) + "\n")
