"""Coordinate conversion between poloidal- and toroidal-flux grids.

The toroidal flux follows from the safety factor through dphi = q dpsi,
integrated cumulatively from the axis and normalized to the edge value.
Profile re-projection uses monotone piecewise-cubic interpolation
(PCHIP), which is exact on linear data and never overshoots local
extrema.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import PchipInterpolator

from .core import RadialGrid
from .errors import (
    ExtrapolationRequired,
    GridFamilyUnavailable,
    MissingColumn,
    NonMonotoneInput,
    SignChangingQ,
)


class GridKind(enum.IntEnum):
    """Source families that may define a common radial mesh."""

    chease = 0
    eqdsk = 1
    imported = 7


@dataclass(frozen=True, eq=False)
class GridSource:
    """A radial mesh (plus q when available) taken from one source file.

    chease/eqdsk sources always carry q, which lets them convert between
    the psi and phi families; an imported source converts only when it
    supplies both families up front.  ``psi_scale`` records the physical
    flux span (psi_bnd - psi_axis) when the source knows it.
    """

    kind: GridKind
    grid: RadialGrid
    q: np.ndarray | None = None
    psi_scale: float | None = None

    def __post_init__(self):
        q = None if self.q is None else np.asarray(self.q, float)
        if self.kind in (GridKind.chease, GridKind.eqdsk):
            if q is None or q.size != self.grid.size:
                raise ValueError(f"{self.kind.name} grid source must carry a "
                                 "q profile of grid length")
        if q is not None:
            if q.size != self.grid.size:
                raise ValueError("q length != grid length")
            q.setflags(write=False)
        object.__setattr__(self, "q", q)

    def both_families(self) -> RadialGrid:
        """Grid with psin and phin both attached, deriving the missing one
        from q when necessary."""
        g = self.grid
        if g.has("psin") and g.has("phin"):
            return g
        if self.q is None:
            raise GridFamilyUnavailable(
                f"{self.kind.name} grid source carries neither both grid "
                "families nor a q profile to convert between them")
        if g.has("psin"):
            return RadialGrid(psin=g.psin, phin=psin_to_phin(g.psin, self.q))
        return RadialGrid(psin=phin_to_psin(g.phin, self.q), phin=g.phin)


def _check_monotone(name, x):
    if not np.all(np.diff(x) > 0):
        raise NonMonotoneInput(f"{name} must be strictly increasing")


def psin_to_phin(psin, q, psi_scale: float = 1.0) -> np.ndarray:
    """Map normalized poloidal flux to normalized toroidal flux.

    phi = integral(q dpsi) by cumulative trapezoid from the axis; the
    psi_scale factor cancels in the normalization but is accepted so
    callers can pass physical fluxes.
    """
    psin = np.asarray(psin, float)
    q = np.asarray(q, float)
    if psin.size != q.size:
        raise ValueError("psin and q must have equal length")
    _check_monotone("psin", psin)
    if np.min(q) < 0 < np.max(q) or np.any(q == 0):
        raise SignChangingQ("q must be sign-definite")
    phi = cumulative_trapezoid(q, psin * psi_scale, initial=0.0)
    phin = phi / phi[-1]
    phin[0] = 0.0
    phin[-1] = 1.0
    return phin


def phin_to_psin(phin, q, psi_scale: float = 1.0, psin_table=None) -> np.ndarray:
    """Inverse of :func:`psin_to_phin` by monotone interpolation.

    ``q`` is tabulated on ``psin_table`` (uniform [0, 1] of the same
    length when omitted); the forward map is built on that table and
    inverted with PCHIP.
    """
    phin = np.asarray(phin, float)
    q = np.asarray(q, float)
    if psin_table is None:
        psin_table = np.linspace(0.0, 1.0, q.size)
    else:
        psin_table = np.asarray(psin_table, float)
    _check_monotone("phin", phin)
    phin_table = psin_to_phin(psin_table, q, psi_scale)
    inv = PchipInterpolator(phin_table, psin_table, extrapolate=False)
    out = inv(np.clip(phin, 0.0, 1.0))
    out[phin <= 0.0] = 0.0
    out[phin >= 1.0] = 1.0
    return out


def regrid(values, src: RadialGrid, dst: RadialGrid, column: str = "rhopsi") -> np.ndarray:
    """Re-project ``values`` from one grid onto another along ``column``.

    Monotone cubic interpolation, exact at shared abscissae; identical
    grids are passed through untouched.  Requests outside the source span
    raise ExtrapolationRequired.
    """
    if column not in ("rhopsi", "rhotor", "psin", "phin"):
        raise MissingColumn(f"unknown grid column {column!r}")
    x_src = src.column(column)
    x_dst = dst.column(column)
    values = np.asarray(values, float)
    if values.size != x_src.size:
        raise ValueError("values length != source grid length")
    if np.array_equal(x_src, x_dst):
        return values.copy()
    slack = 1e-12
    if x_dst[0] < x_src[0] - slack or x_dst[-1] > x_src[-1] + slack:
        raise ExtrapolationRequired(
            f"target span [{x_dst[0]}, {x_dst[-1]}] exceeds source span "
            f"[{x_src[0]}, {x_src[-1]}]")
    interp = PchipInterpolator(x_src, values, extrapolate=True)
    return interp(x_dst)


@dataclass(frozen=True, eq=False)
class ProfileBundle:
    """A set of same-grid profiles travelling together through unify."""

    grid: RadialGrid
    values: dict

    def __post_init__(self):
        vals = {k: np.asarray(v, float) for k, v in self.values.items()}
        for k, v in vals.items():
            if v.size != self.grid.size:
                raise ValueError(f"profile {k!r} length != grid length")
        object.__setattr__(self, "values", vals)


def _target_column(nrhotype: int) -> str:
    if nrhotype == 0:
        return "rhopsi"
    if nrhotype == 1:
        return "rhotor"
    raise ValueError(f"nrhotype must be 0 or 1, got {nrhotype}")


def unify(bundles: list, rhomesh: GridSource | None = None,
          nrhotype: int = 0) -> list:
    """Re-grid every bundle onto the rhomesh source's grid.

    Without a rhomesh source each bundle keeps its native grid.  A bundle
    living on the other flux family is sampled along the target grid's
    companion column: a two-family target grid pairs psin and phin values
    point by point, so the cross-family correspondence is already encoded.
    Raises GridFamilyUnavailable when that companion cannot be built.
    """
    column = _target_column(nrhotype)
    if rhomesh is None:
        return list(bundles)
    other = "rhotor" if column == "rhopsi" else "rhopsi"
    family = "psin" if column == "rhopsi" else "phin"
    cross_needed = any(not b.grid.has(column) for b in bundles)
    if cross_needed or not rhomesh.grid.has(family):
        target_grid = rhomesh.both_families()
    else:
        target_grid = rhomesh.grid

    out = []
    for bundle in bundles:
        use = column if bundle.grid.has(column) else other
        new_vals = {k: regrid(v, bundle.grid, target_grid, use)
                    for k, v in bundle.values.items()}
        out.append(ProfileBundle(grid=target_grid, values=new_vals))
    return out
