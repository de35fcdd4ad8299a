"""Flux-surface geometry and the current-profile algebra.

Surfaces are closed psi_N isocontours parameterized by the poloidal
angle chi about the magnetic axis.  With the contour integrals

    {C0, C1, C2, C3} = closed-integral {1/R, 1, 1/R^2, |grad psi|^2/R^2} J dchi

and T = R*B_phi at the surface, every current representation follows:

    I*    = -R0^2 (C1/C0) p' - R0^2 (C2/C0) TT'/mu0
    I_par = R0 <J.B> / <T/R^2>
          = -R0 (C1/C2) p' - R0 (TT'/mu0) (1 + C3/(T^2 C2))   [closed form]
    J_par = <J.B>/B0,   <J.B> = -T p' - T' <B^2>/mu0
    <B^2> = (T^2 C2 + C3)/C1,   <T/R^2> = T C2/C1

and the toroidal current density can be reconstructed from either
averaged form:

    j_phi = (1/R) [ (C0/C2) I*/R0^2 + (C1/C2 - R^2) p' ]
    j_phi = (1/(yR)) [ I_par/R0 + (C1/C2 - y R^2) p' ],  y = 1 + C3/(T^2 C2)

The R0-factored forms carry ampere units; dividing them back out inside
the j_phi reconstruction keeps the two routes algebraically identical.

Contours come from marching squares with linear edge interpolation,
re-sampled on a uniform chi grid with each point polished onto the
exact interpolated level along its ray from the axis; the Jacobian is
J = R * (dl/dchi) / |grad psi|, consistent with dS = (J/R) dpsi dchi.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator, RectBivariateSpline
from skimage import measure

from ._geom import points_in_polygon, winding_number
from .core import MU0, EquilibriumProfiles, PsiMap
from .errors import (
    DegenerateJacobian,
    LevelOutOfRange,
    MissingSource,
    OpenContour,
    UnknownForm,
    ZeroT,
)

DEFAULT_N_POINTS = 256
LEVEL_FLOOR = 1e-4

FORM_KEYS = {1: "ffprime", 2: "Istr", 3: "Iprl", 4: "Jprl"}


@dataclass(frozen=True, eq=False)
class FluxSurface:
    """One closed flux surface sampled on a uniform chi grid."""

    psin_level: float
    R: np.ndarray
    Z: np.ndarray
    chi: np.ndarray
    jacobian: np.ndarray
    gradpsi2: np.ndarray


@dataclass(frozen=True)
class SurfaceIntegrals:
    """Contour integrals and averages of one surface."""

    C0: float
    C1: float
    C2: float
    C3: float
    avgB2: float
    avgToverR2: float
    y: float


class _MapGeometry:
    """Cached bicubic interpolants of one PsiMap."""

    def __init__(self, pmap: PsiMap):
        self.pmap = pmap
        self.spline = RectBivariateSpline(pmap.R, pmap.Z, pmap.psi,
                                          kx=3, ky=3, s=0)
        self.scale = pmap.psi_scale

    def psin(self, r, z):
        return (self.spline.ev(r, z) - self.pmap.psi_axis) / self.scale

    def grad(self, r, z):
        return self.spline.ev(r, z, dx=1), self.spline.ev(r, z, dy=1)


_geometry_cache: "weakref.WeakKeyDictionary[PsiMap, _MapGeometry]" = (
    weakref.WeakKeyDictionary())


def map_geometry(pmap: PsiMap) -> _MapGeometry:
    geo = _geometry_cache.get(pmap)
    if geo is None:
        geo = _MapGeometry(pmap)
        _geometry_cache[pmap] = geo
    return geo


def extract_surface(pmap: PsiMap, psin_level: float,
                    n_points: int = DEFAULT_N_POINTS,
                    level_floor: float = LEVEL_FLOOR) -> FluxSurface:
    """Extract the closed psi_N isocontour at one level.

    Marching squares locates the contour; the points are then re-sampled
    on n_points uniform chi values about the axis, with each radius
    refined by bisection on the bicubic interpolant so chi-refinement
    studies converge.
    """
    if not (level_floor <= psin_level < 1.0):
        raise LevelOutOfRange(
            f"psin level {psin_level} outside [{level_floor}, 1)")
    geo = map_geometry(pmap)
    psin_grid = pmap.psin()
    contours = measure.find_contours(psin_grid, psin_level)
    rax, zax = pmap.axis_R, pmap.axis_Z

    chosen = None
    for c in contours:
        closed = np.allclose(c[0], c[-1])
        if not closed:
            continue
        r = np.interp(c[:, 0], np.arange(pmap.R.size), pmap.R)
        z = np.interp(c[:, 1], np.arange(pmap.Z.size), pmap.Z)
        if abs(winding_number(rax, zax, r, z)) > 0.5:
            chosen = (r, z)
            break
    if chosen is None:
        raise OpenContour(f"no closed contour at psi_N={psin_level} "
                          "encloses the magnetic axis")
    r_raw, z_raw = chosen

    # polyline radius as a function of chi, then polish each ray
    chi_raw = np.unwrap(np.arctan2(z_raw - zax, r_raw - rax))
    if chi_raw[-1] < chi_raw[0]:
        chi_raw = chi_raw[::-1]
        r_raw, z_raw = r_raw[::-1], z_raw[::-1]
    rad_raw = np.hypot(r_raw - rax, z_raw - zax)
    order = np.argsort(chi_raw)
    chi_sorted = chi_raw[order]
    rad_sorted = rad_raw[order]
    chi0 = chi_sorted[0]

    chi = np.linspace(0.0, 2.0 * np.pi, n_points, endpoint=False)
    chi_lookup = (chi - chi0) % (2.0 * np.pi) + chi0
    radius0 = np.interp(chi_lookup, chi_sorted, rad_sorted,
                        period=2.0 * np.pi)
    radius = _polish_radii(geo, rax, zax, chi, radius0, psin_level)

    R = rax + radius * np.cos(chi)
    Z = zax + radius * np.sin(chi)
    psi_r, psi_z = geo.grad(R, Z)
    gradpsi2 = psi_r ** 2 + psi_z ** 2

    h = 2.0 * np.pi / n_points
    dRdchi = (np.roll(R, -1) - np.roll(R, 1)) / (2.0 * h)
    dZdchi = (np.roll(Z, -1) - np.roll(Z, 1)) / (2.0 * h)
    dldchi = np.hypot(dRdchi, dZdchi)
    jac = R * dldchi / np.sqrt(gradpsi2)

    return FluxSurface(psin_level=psin_level, R=R, Z=Z, chi=chi,
                       jacobian=jac, gradpsi2=gradpsi2)


def _polish_radii(geo, rax, zax, chi, radius0, level, width=0.08, iters=52):
    """Vectorized bisection of psi_N(axis + t*dir) = level along each ray."""
    cos, sin = np.cos(chi), np.sin(chi)

    def value(t):
        return geo.psin(rax + t * cos, zax + t * sin) - level

    lo = radius0 * (1.0 - width)
    hi = radius0 * (1.0 + width)
    flo, fhi = value(lo), value(hi)
    for _ in range(3):
        bad = flo > 0
        if np.any(bad):
            lo[bad] *= 1.0 - width
            flo = value(lo)
        bad = fhi < 0
        if np.any(bad):
            hi[bad] *= 1.0 + width
            fhi = value(hi)
    usable = (flo <= 0) & (fhi >= 0)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = value(mid)
        takes = fm > 0
        hi = np.where(takes, mid, hi)
        lo = np.where(takes, lo, mid)
    out = 0.5 * (lo + hi)
    return np.where(usable, out, radius0)


def surface_integrals(surface: FluxSurface, T_at_level: float) -> SurfaceIntegrals:
    """Periodic-trapezoid contour integrals C0..C3 and the derived averages."""
    jac = surface.jacobian
    if np.any(~np.isfinite(jac)) or np.any(jac <= 0):
        raise DegenerateJacobian("surface jacobian must be positive and finite")
    h = 2.0 * np.pi / surface.chi.size
    R = surface.R

    def cint(f):
        return float(np.sum(f * jac) * h)

    c0 = cint(1.0 / R)
    c1 = cint(np.ones_like(R))
    c2 = cint(1.0 / R ** 2)
    c3 = cint(surface.gradpsi2 / R ** 2)
    T = float(T_at_level)
    avg_b2 = (T ** 2 * c2 + c3) / c1
    avg_t_r2 = T * c2 / c1
    y = 1.0 + c3 / (T ** 2 * c2) if T != 0.0 else np.inf
    return SurfaceIntegrals(C0=c0, C1=c1, C2=c2, C3=c3, avgB2=avg_b2,
                            avgToverR2=avg_t_r2, y=y)


# --- current-profile algebra -------------------------------------------

def istar(si: SurfaceIntegrals, pprime: float, ttprime: float,
          R0: float) -> float:
    """Surface-averaged current (ampere form)."""
    return (-R0 ** 2 * (si.C1 / si.C0) * pprime
            - R0 ** 2 * (si.C2 / si.C0) * ttprime / MU0)


def jdotb_average(si: SurfaceIntegrals, pprime: float, ttprime: float,
                  T: float) -> float:
    """<J.B> from the pressure and poloidal-current sources."""
    if T == 0.0:
        raise ZeroT("T must be nonzero")
    tprime = ttprime / T
    return -T * pprime - tprime * si.avgB2 / MU0


def iparallel(si: SurfaceIntegrals, pprime: float, ttprime: float,
              T: float, R0: float) -> float:
    """Averaged parallel current, R0 <J.B> / <T/R^2> (primary form)."""
    if T == 0.0:
        raise ZeroT("T must be nonzero")
    return R0 * jdotb_average(si, pprime, ttprime, T) / si.avgToverR2


def iparallel_closed_form(si: SurfaceIntegrals, pprime: float, ttprime: float,
                          T: float, R0: float) -> float:
    """The equivalent closed form, kept as an independent cross-check."""
    if T == 0.0:
        raise ZeroT("T must be nonzero")
    y = 1.0 + si.C3 / (T ** 2 * si.C2)
    return -R0 * (si.C1 / si.C2) * pprime - R0 * (ttprime / MU0) * y


def jparallel(si: SurfaceIntegrals, pprime: float, ttprime: float,
              T: float, B0: float) -> float:
    """Averaged parallel current density <J.B>/B0."""
    return jdotb_average(si, pprime, ttprime, T) / B0


def jphi_from(si: SurfaceIntegrals, form: str, value: float, pprime: float,
              R0: float, R):
    """Toroidal current density on the surface from an averaged form.

    ``form`` is 'istar' or 'iparallel'; ``value`` the corresponding
    ampere-form quantity; ``R`` scalar or array of major radii.
    """
    R = np.asarray(R, float)
    if form == "istar":
        return (1.0 / R) * ((si.C0 / si.C2) * value / R0 ** 2
                            + (si.C1 / si.C2 - R ** 2) * pprime)
    if form == "iparallel":
        y = si.y
        return (1.0 / (y * R)) * (value / R0
                                  + (si.C1 / si.C2 - y * R ** 2) * pprime)
    raise UnknownForm(f"form must be 'istar' or 'iparallel', got {form!r}")


def total_current(pmap: PsiMap, jphi) -> float:
    """Total toroidal current by midpoint quadrature over psi_N < 1.

    ``jphi`` is a nodal array on the map grid.  Cut cells (mask changes
    across the cell) are sub-sampled 4x4 on the bilinear interpolant so
    the boundary staircase does not dominate the quadrature error.
    """
    jphi = np.asarray(jphi, float)
    if jphi.shape != pmap.psi.shape:
        raise ValueError("jphi array must match the psi map shape")
    psin = pmap.psin()
    dr = np.diff(pmap.R)
    dz = np.diff(pmap.Z)

    inside_n = psin < 1.0
    if pmap.boundary is not None:
        RR, ZZ = np.meshgrid(pmap.R, pmap.Z, indexing="ij")
        poly = points_in_polygon(RR, ZZ, pmap.boundary.r, pmap.boundary.z)
        inside_n &= poly.reshape(psin.shape)

    corners = (inside_n[:-1, :-1], inside_n[1:, :-1],
               inside_n[:-1, 1:], inside_n[1:, 1:])
    n_in = sum(c.astype(int) for c in corners)
    jc = 0.25 * (jphi[:-1, :-1] + jphi[1:, :-1] + jphi[:-1, 1:] + jphi[1:, 1:])
    area = dr[:, None] * dz[None, :]

    full = n_in == 4
    cut = (n_in > 0) & ~full
    current = float(np.sum(jc[full] * area[full]))

    if np.any(cut):
        iu, ju = np.nonzero(cut)
        # 4x4 sub-centers on the bilinear interpolants of psin and jphi
        t = (np.arange(4) + 0.5) / 4.0
        tx, ty = np.meshgrid(t, t, indexing="ij")
        tx, ty = tx.ravel()[None, :], ty.ravel()[None, :]

        def bilin(f):
            f00 = f[iu, ju][:, None]
            f10 = f[iu + 1, ju][:, None]
            f01 = f[iu, ju + 1][:, None]
            f11 = f[iu + 1, ju + 1][:, None]
            return (f00 * (1 - tx) * (1 - ty) + f10 * tx * (1 - ty)
                    + f01 * (1 - tx) * ty + f11 * tx * ty)

        sub_in = bilin(psin) < 1.0
        sub_j = np.where(sub_in, bilin(jphi), 0.0).mean(axis=1)
        current += float(np.sum(sub_j * area[iu, ju]))
    return current


def fpol_from_ffprime(ffprime, psin, psi_scale: float, edge_T: float) -> np.ndarray:
    """Integrate T TT' inward from the edge value T(1) = edge_T."""
    from scipy.integrate import cumulative_trapezoid

    ff = np.asarray(ffprime, float)
    psin = np.asarray(psin, float)
    upto = cumulative_trapezoid(ff, psin * psi_scale, initial=0.0)
    t2 = edge_T ** 2 - 2.0 * (upto[-1] - upto)
    if np.any(t2 <= 0):
        raise ZeroT("TT' integral drives T^2 nonpositive")
    return np.sqrt(t2)


@dataclass(frozen=True, eq=False)
class SurfaceSet:
    """Per-level geometry shared by the conversion and output routines."""

    levels: np.ndarray           # requested psi_N levels
    geom_levels: np.ndarray      # clipped levels the surfaces were cut at
    surfaces: list
    integrals: list


def build_surface_set(pmap: PsiMap, levels, n_points: int = DEFAULT_N_POINTS,
                      T_of_level=None, level_floor: float = 2e-3,
                      level_cut: float = 0.9995) -> SurfaceSet:
    """Extract surfaces for every level, clipping the axis/edge endpoints.

    Levels below ``level_floor`` (the degenerate axis) and above
    ``level_cut`` are evaluated at the clipped level; the contour ratios
    vary smoothly there, so endpoint profiles stay well defined and the
    clipping cancels out of round-trip conversions.
    """
    levels = np.asarray(levels, float)
    geom_levels = np.clip(levels, level_floor, level_cut)
    surfaces = []
    integrals = []
    for glev in geom_levels:
        s = extract_surface(pmap, glev, n_points=n_points)
        T = 1.0 if T_of_level is None else float(T_of_level(glev))
        integrals.append(surface_integrals(s, T))
        surfaces.append(s)
    return SurfaceSet(levels=levels, geom_levels=geom_levels,
                      surfaces=surfaces, integrals=integrals)


def _ttprime_from(form: int, value: float, pprime: float,
                  si: SurfaceIntegrals, T: float, R0: float, B0: float) -> float:
    """Invert one averaged current form for TT'."""
    if form == 1:
        return value
    if form == 2:
        return -(value + R0 ** 2 * (si.C1 / si.C0) * pprime) * MU0 \
            * si.C0 / (R0 ** 2 * si.C2)
    if form == 3:
        y = 1.0 + si.C3 / (T ** 2 * si.C2)
        return -(value / R0 + (si.C1 / si.C2) * pprime) * MU0 / y
    if form == 4:
        # J_par = (-T p' - (TT'/T) <B^2>/mu0) / B0
        return -(value * B0 + T * pprime) * MU0 * T / si.avgB2
    raise UnknownForm(f"current form must be 1..4, got {form}")


def _value_from(form: int, ttprime: float, pprime: float,
                si: SurfaceIntegrals, T: float, R0: float, B0: float) -> float:
    if form == 1:
        return ttprime
    if form == 2:
        return istar(si, pprime, ttprime, R0)
    if form == 3:
        return iparallel(si, pprime, ttprime, T, R0)
    if form == 4:
        return jparallel(si, pprime, ttprime, T, B0)
    raise UnknownForm(f"current form must be 1..4, got {form}")


def convert_current(eq: EquilibriumProfiles, pmap: PsiMap, from_form: int,
                    to_form: int, n_points: int = DEFAULT_N_POINTS,
                    surface_set: SurfaceSet | None = None) -> EquilibriumProfiles:
    """Convert the current column between the averaged representations.

    Each surface's relations are solved for TT', then re-evaluated in the
    target form; the source profile column must be present.  The returned
    profiles carry the target column (field per FORM_KEYS).
    """
    if from_form not in FORM_KEYS or to_form not in FORM_KEYS:
        raise UnknownForm(f"forms must be 1..4, got {from_form}->{to_form}")
    src_key = FORM_KEYS[from_form]
    values = getattr(eq, src_key)
    if values is None:
        raise MissingSource(f"profiles lack the {src_key!r} column for "
                            f"nsttp={from_form}")
    if to_form == from_form:
        return eq

    psin = eq.grid.column("psin")
    scale = pmap.psi_scale
    B0, R0 = eq.scalars.B0, eq.scalars.R0

    if eq.pprime is not None:
        pprime = eq.pprime
    elif eq.pressure is not None:
        from .core import pressure_gradient
        pprime = pressure_gradient(eq.pressure, eq.grid, scale)
    else:
        raise MissingSource("profiles lack pressure and pprime")

    if eq.fpol is not None:
        T_interp = PchipInterpolator(psin, eq.fpol)
    elif from_form == 1:
        fpol = fpol_from_ffprime(values, psin, scale, B0 * R0)
        T_interp = PchipInterpolator(psin, fpol)
    else:
        raise MissingSource("conversion needs fpol (or ffprime to integrate)")

    if surface_set is None:
        surface_set = build_surface_set(pmap, psin, n_points=n_points,
                                        T_of_level=T_interp)
    out = np.empty_like(np.asarray(values, float))
    ttp = np.empty_like(out)
    for k, si in enumerate(surface_set.integrals):
        T = float(T_interp(surface_set.geom_levels[k]))
        ttp[k] = _ttprime_from(from_form, float(values[k]), float(pprime[k]),
                               si, T, R0, B0)
        out[k] = _value_from(to_form, ttp[k], float(pprime[k]), si, T, R0, B0)

    updates = {FORM_KEYS[to_form]: out}
    if to_form != 1 and eq.ffprime is None:
        updates["ffprime"] = ttp
    return eq.with_updates(**updates)


def jphi_map(pmap: PsiMap, surface_set: SurfaceSet, form: str, values,
             pprimes, R0: float) -> np.ndarray:
    """Reconstruct j_phi on the full map grid from one averaged form.

    Per-level contour ratios are interpolated in psi_N (monotone cubic)
    and the chosen reconstruction formula evaluated at every grid node
    inside the plasma; outside, j_phi is zero.
    """
    if form not in ("istar", "iparallel"):
        raise UnknownForm(f"form must be 'istar' or 'iparallel', got {form!r}")
    levels = surface_set.levels
    c0c2 = np.array([si.C0 / si.C2 for si in surface_set.integrals])
    c1c2 = np.array([si.C1 / si.C2 for si in surface_set.integrals])
    ys = np.array([si.y for si in surface_set.integrals])

    def interp(arr):
        return PchipInterpolator(levels, arr, extrapolate=True)

    i_c0c2, i_c1c2, i_y = interp(c0c2), interp(c1c2), interp(ys)
    i_val, i_pp = interp(np.asarray(values, float)), interp(np.asarray(pprimes, float))

    # evaluate at every node with the flux clipped into the table range:
    # the smooth continuation just outside the boundary keeps the cut-cell
    # quadrature of total_current unbiased (the plasma mask still decides
    # what is integrated)
    psin = pmap.psin()
    pv = np.clip(psin, levels[0], levels[-1])
    Rv = np.broadcast_to(pmap.R[:, None], psin.shape)
    if form == "istar":
        out = (1.0 / Rv) * (i_c0c2(pv) * i_val(pv) / R0 ** 2
                            + (i_c1c2(pv) - Rv ** 2) * i_pp(pv))
    else:
        yv = i_y(pv)
        out = (1.0 / (yv * Rv)) * (i_val(pv) / R0
                                   + (i_c1c2(pv) - yv * Rv ** 2) * i_pp(pv))
    return out
