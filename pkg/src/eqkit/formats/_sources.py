"""Grid-source resolution shared by all profile readers.

Readers accept keyword sources (eqdsk=path, chease=path, imported=dict)
naming where a replacement radial mesh comes from.  Imported grids
override file-derived ones.
"""

from __future__ import annotations

from ..core import RadialGrid
from ..gridmap import GridKind, GridSource


def resolve_grid_source(**kwargs) -> GridSource | None:
    """Build a GridSource from reader keyword arguments, or None.

    Priority when several are given: imported, then chease, then eqdsk.
    """
    imported = kwargs.get("imported")
    if imported is not None:
        grid = RadialGrid.from_rho(rhopsi=imported.get("rhopsi"),
                                   rhotor=imported.get("rhotor"))
        q = imported.get("q")
        return GridSource(kind=GridKind.imported, grid=grid, q=q,
                          psi_scale=imported.get("psi_scale"))
    chease = kwargs.get("chease")
    if chease is not None:
        from .cheaseout import read_chease
        data = read_chease(chease)
        grid = RadialGrid(psin=data["PSIN"],
                          phin=data.get("PHIN"))
        scale = data.get("psi_scale")
        return GridSource(kind=GridKind.chease, grid=grid, q=data["q"],
                          psi_scale=scale)
    eqdsk = kwargs.get("eqdsk")
    if eqdsk is not None:
        from .eqdsk import read_eqdsk
        res = read_eqdsk(eqdsk)
        grid = res.grid
        return GridSource(kind=GridKind.eqdsk, grid=grid, q=res.file.qpsi,
                          psi_scale=res.file.sibry - res.file.simag)
    return None


def source_psi_scale(source: GridSource | None) -> float:
    """Physical psi span carried by the source, 1.0 when unknown.

    Readers use this to turn d/dpsi_N gradients into d/dpsi; without a
    flux-bearing source the gradient stays in normalized-flux units.
    """
    if source is not None and source.psi_scale is not None:
        return float(source.psi_scale)
    return 1.0
