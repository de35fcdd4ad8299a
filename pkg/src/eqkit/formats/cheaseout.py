"""CHEASE text-output bundle reader and writer.

The equilibrium bundle is a sequence of labeled blocks::

    <NAME> <count>
    <values, five per line, 17 significant digits>

Scalars are one-value blocks.  Unknown block names are kept and a
warning logged, so bundles written by newer emitters still read.
All stored quantities are SI; ``Normalized=True`` on read rescales the
profile fields to machine units using the bundle's own B0EXP/R0EXP.
"""

from __future__ import annotations

import logging

import numpy as np

from ..core import MU0, RadialGrid
from ..errors import CountMismatch, HeaderMismatch
from ._util import fmt_block, require_finite

logger = logging.getLogger(__name__)

_F = "%25.17E"

#: canonical block order for deterministic output
BLOCK_ORDER = (
    "B0EXP", "R0EXP", "ITEXP", "PSIN", "PHIN", "rhopsi", "rhotor",
    "q", "shear", "signeo", "pressure", "pprime", "ffprime", "fpol",
    "Istr", "Iprl", "Jprl", "Itor", "Jtor", "Ibs", "Jbs",
    "Te", "ne", "Ti", "ni", "nz", "Zeff", "rbound", "zbound",
    "psi_scale",
)

SCALAR_KEYS = ("B0EXP", "R0EXP", "ITEXP", "psi_scale")

#: normalization divisors, as functions of (B0, R0)
_NORM = {
    "pressure": lambda b, r: b ** 2 / MU0,
    "pprime": lambda b, r: b / (MU0 * r ** 2),
    "ffprime": lambda b, r: b,
    "fpol": lambda b, r: b * r,
    "Istr": lambda b, r: b * r / MU0,
    "Iprl": lambda b, r: b * r / MU0,
    "Itor": lambda b, r: b * r / MU0,
    "Ibs": lambda b, r: b * r / MU0,
    "Jprl": lambda b, r: b / (MU0 * r),
    "Jtor": lambda b, r: b / (MU0 * r),
    "Jbs": lambda b, r: b / (MU0 * r),
    "ITEXP": lambda b, r: b * r / MU0,
    "rbound": lambda b, r: r,
    "zbound": lambda b, r: r,
    "psi_scale": lambda b, r: b * r ** 2,
}


def write_chease_out(bundle: dict, path) -> None:
    """Write the equilibrium bundle as labeled text blocks."""
    out = []
    names = [k for k in BLOCK_ORDER if k in bundle]
    names += [k for k in bundle if k not in BLOCK_ORDER]
    for name in names:
        arr = np.atleast_1d(np.asarray(bundle[name], float))
        require_finite(name, arr)
        out.append(f"{name} {arr.size:d}")
        out.append(fmt_block(arr, _F))
    with open(path, "w") as f:
        f.write("\n".join(out) + "\n")


def read_chease(path, setParam=None, Normalized=False, **kwargs) -> dict:
    """Read a CHEASE text bundle into a dictionary.

    One-value blocks come back as floats.  With a grid-source keyword the
    radial profiles are re-gridded onto the source mesh; geometry columns
    (rbound/zbound) and scalars pass through unchanged.
    """
    with open(path) as f:
        lines = f.read().splitlines()
    while lines and not lines[-1].strip():
        lines.pop()

    raw = {}
    i = 0
    while i < len(lines):
        header = lines[i].split()
        if len(header) != 2:
            raise HeaderMismatch(f"{path}: bad block header {lines[i]!r}")
        name = header[0]
        try:
            count = int(header[1])
        except ValueError as exc:
            raise HeaderMismatch(f"{path}: bad count in {lines[i]!r}") from exc
        n_lines = (count + 4) // 5
        chunk = " ".join(lines[i + 1:i + 1 + n_lines]).split()
        if len(chunk) != count:
            raise CountMismatch(f"{path}: block {name} promises {count} "
                                f"values, found {len(chunk)}")
        raw[name] = np.array(chunk, dtype=float)
        i += 1 + n_lines

    known = set(BLOCK_ORDER)
    for name in raw:
        if name not in known:
            logger.warning("read_chease: keeping unknown block %r", name)

    data = {}
    for name, arr in raw.items():
        if name in SCALAR_KEYS or arr.size == 1:
            data[name] = float(arr[0])
        else:
            data[name] = arr

    data = _regrid_chease(data, setParam=setParam, **kwargs)

    if Normalized:
        b0, r0 = data.get("B0EXP"), data.get("R0EXP")
        if b0 is None or r0 is None:
            raise HeaderMismatch(f"{path}: Normalized read needs B0EXP and "
                                 "R0EXP blocks")
        for name, scale in _NORM.items():
            if name in data:
                data[name] = data[name] / scale(b0, r0)
    return data


def _regrid_chease(data: dict, setParam=None, **kwargs) -> dict:
    from ._sources import resolve_grid_source
    from ..gridmap import ProfileBundle, unify

    source = resolve_grid_source(**kwargs)
    if source is None or "PSIN" not in data:
        return data
    setParam = dict(setParam or {})
    nrhotype = int(setParam.get("nrhopsi", 0))
    grid = RadialGrid(psin=data["PSIN"], phin=data.get("PHIN"))
    n = grid.size
    radial = {k: v for k, v in data.items()
              if isinstance(v, np.ndarray) and v.size == n
              and k not in ("PSIN", "PHIN", "rhopsi", "rhotor")}
    bundle = unify([ProfileBundle(grid=grid, values=radial)],
                   rhomesh=source, nrhotype=nrhotype)[0]
    out = {k: v for k, v in data.items() if k not in radial}
    out.update(bundle.values)
    out.pop("PSIN", None), out.pop("PHIN", None)
    out.pop("rhopsi", None), out.pop("rhotor", None)
    g = bundle.grid
    if g.has("psin"):
        out["PSIN"] = g.psin
        out["rhopsi"] = g.rhopsi
    if g.has("phin"):
        out["PHIN"] = g.phin
        out["rhotor"] = g.rhotor
    return out
