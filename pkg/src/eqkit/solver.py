"""Internal fixed-boundary Grad-Shafranov solver and its analytic oracle.

The equilibrium operator in cylindrical coordinates is

    Dstar psi = psi_RR - psi_R / R + psi_ZZ = -mu0 R^2 p'(psi) - T T'(psi)

solved on a rectangular (R, Z) grid with the plasma boundary imposed as
an irregular Dirichlet curve (Shortley-Weller arms at cut edges, which
keeps the scheme second order).  The p'/TT' sources are functions of the
normalized flux, so the linear solve sits inside a Picard loop with the
normalization lagged one iterate and optional under-relaxation; the
operator matrix depends on geometry only and is factorized once.

The analytic reference is the classic polynomial equilibrium with
constant p' and TT': with f = (R^2-R0^2)^2/4 + (cR R^2 + c0 R0^2) Z^2
and psi = psi_axis (1 - f/f_bnd),

    Dstar psi = -(psi_axis/f_bnd) (2 (1+cR) R^2 + 2 c0 R0^2)

which identifies mu0 p' = 2 (1+cR) psi_axis/f_bnd and
TT' = 2 c0 R0^2 psi_axis/f_bnd, both exactly constant, with a
closed-form boundary (the f = f_bnd oval).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csc_matrix
from scipy.sparse.linalg import splu

from ._geom import points_in_polygon, polyline_distance
from .core import MU0, Boundary, MachineScalars, PsiMap
from .errors import DegenerateBoundary, NoConvergence

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    """Resolutions and iteration controls for the internal solver."""

    ns: int = 129
    nt: int = 129
    npsi: int = 128
    nchi: int = 256
    niso: int = 64
    relax: float = 0.0
    tol: float = 1e-8
    max_picard: int = 200

    def __post_init__(self):
        if not (0.0 <= self.relax < 1.0):
            raise ValueError("relax must lie in [0, 1)")
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")


# --- analytic reference -------------------------------------------------

@dataclass(frozen=True)
class SolovevParams:
    """Closed-form equilibrium with constant p' and TT' sources.

    p_coeff is p' in Pa/(Wb/rad), f_coeff is TT' in tesla; both must be
    representable within the one-oval polynomial family for the given
    geometry (an error explains when they are not).
    """

    R0: float = 1.7
    a: float = 0.5
    elongation: float = 1.0
    p_coeff: float = -1.2e6
    f_coeff: float = -1.0

    def __post_init__(self):
        if not (0.0 < self.a < self.R0):
            raise ValueError("need 0 < a < R0")
        object.__setattr__(self, "_c", _solovev_coeffs(self))

    @property
    def coeffs(self) -> dict:
        return self._c

    @property
    def psi_axis(self) -> float:
        return self._c["psi_axis"]


def _solovev_coeffs(p: SolovevParams) -> dict:
    eps = p.a / p.R0
    # f_bnd puts the outboard crossing exactly at R0 + a
    f_bnd = (p.a * (p.R0 + 0.5 * p.a)) ** 2
    s = ((1.0 + 0.5 * eps) / p.elongation) ** 2  # cR + c0, from elongation
    if p.p_coeff == 0.0:
        raise ValueError("p_coeff must be nonzero (pure-TT' ovals do not "
                         "close in this family)")
    rho = p.f_coeff / (MU0 * p.p_coeff)
    c0 = rho * (1.0 + s) / (p.R0 ** 2 + rho)
    cr = s - c0
    if cr <= -0.5 * s:
        raise ValueError(
            f"f_coeff/p_coeff ratio {rho:.3g} is not representable; "
            f"TT'/(mu0 p') must stay below ~{1.5 * s * p.R0 ** 2:.3g}")
    psi_axis = MU0 * p.p_coeff * f_bnd / (2.0 * (1.0 + cr))
    return {"f_bnd": f_bnd, "c0": c0, "cr": cr, "psi_axis": psi_axis, "s": s}


def solovev_reference(p: SolovevParams, R, Z) -> np.ndarray:
    """Closed-form psi(R, Z) in Wb/rad; zero on the boundary oval."""
    c = p.coeffs
    R = np.asarray(R, float)
    Z = np.asarray(Z, float)
    f = ((R ** 2 - p.R0 ** 2) ** 2 / 4.0
         + (c["cr"] * R ** 2 + c["c0"] * p.R0 ** 2) * Z ** 2)
    return c["psi_axis"] * (1.0 - f / c["f_bnd"])


def solovev_boundary(p: SolovevParams, n: int = 257) -> Boundary:
    """The f = f_bnd oval sampled in poloidal angle about (R0, 0)."""
    c = p.coeffs
    theta = np.linspace(0.0, 2.0 * np.pi, n)
    ct, st = np.cos(theta), np.sin(theta)
    lo = np.zeros_like(theta)
    hi = np.full_like(theta, 2.5 * p.a)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        R = p.R0 + mid * ct
        Z = mid * st
        f = ((R ** 2 - p.R0 ** 2) ** 2 / 4.0
             + (c["cr"] * R ** 2 + c["c0"] * p.R0 ** 2) * Z ** 2)
        inside = f < c["f_bnd"]
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    t = 0.5 * (lo + hi)
    r = p.R0 + t * np.cos(theta)
    z = t * np.sin(theta)
    r[-1], z[-1] = r[0], z[0]
    return Boundary(r=r, z=z, closed=True, psin_level=1.0)


def solovev_psimap(p: SolovevParams, nr: int = 129, nz: int = 129,
                   pad: float = 0.08) -> PsiMap:
    """Analytic psi evaluated on a padded rectangular grid."""
    bnd = solovev_boundary(p)
    rmin, rmax = bnd.r.min(), bnd.r.max()
    zmin, zmax = bnd.z.min(), bnd.z.max()
    mr = pad * (rmax - rmin)
    mz = pad * (zmax - zmin)
    R = np.linspace(rmin - mr, rmax + mr, nr)
    Z = np.linspace(zmin - mz, zmax + mz, nz)
    psi = solovev_reference(p, R[:, None], Z[None, :])
    return PsiMap(R=R, Z=Z, psi=psi, psi_axis=p.psi_axis, psi_bnd=0.0,
                  axis_R=p.R0, axis_Z=0.0, boundary=bnd)


# --- fixed-boundary solve ------------------------------------------------

class _Discretization:
    """Shortley-Weller 5-point Dstar operator inside a boundary polygon.

    Grid edges that cross the boundary get shortened arms ending on the
    curve, where the Dirichlet value applies; the assembled matrix is
    factorized once and reused for every Picard step.
    """

    def __init__(self, boundary: Boundary, ns: int, nt: int, pad: float = 0.04):
        rmin, rmax = boundary.r.min(), boundary.r.max()
        zmin, zmax = boundary.z.min(), boundary.z.max()
        mr = pad * (rmax - rmin)
        mz = pad * (zmax - zmin)
        self.R = np.linspace(rmin - mr, rmax + mr, ns)
        self.Z = np.linspace(zmin - mz, zmax + mz, nt)
        self.hr = self.R[1] - self.R[0]
        self.hz = self.Z[1] - self.Z[0]
        self.boundary = boundary

        RR, ZZ = np.meshgrid(self.R, self.Z, indexing="ij")
        self.RR, self.ZZ = RR, ZZ
        self.inside = points_in_polygon(
            RR, ZZ, boundary.r, boundary.z).reshape(RR.shape)
        self.index = -np.ones(RR.shape, dtype=int)
        self.index[self.inside] = np.arange(np.count_nonzero(self.inside))
        self.n_unknown = int(np.count_nonzero(self.inside))
        if self.n_unknown < 9:
            raise DegenerateBoundary("boundary encloses too few grid nodes")
        self._assemble()

    def _cut_fraction(self, r0, z0, r1, z1) -> float:
        """Fraction along (r0,z0)->(r1,z1) where the boundary is crossed."""
        br, bz = self.boundary.r, self.boundary.z
        ar, az = br[:-1], bz[:-1]
        dr, dz = np.diff(br), np.diff(bz)
        er, ez = r1 - r0, z1 - z0
        denom = er * dz - ez * dr
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((ar - r0) * dz - (az - z0) * dr) / denom
            u = ((ar - r0) * ez - (az - z0) * er) / denom
        ok = (np.abs(denom) > 1e-300) & (t >= -1e-12) & (t <= 1 + 1e-12) \
            & (u >= -1e-12) & (u <= 1 + 1e-12)
        if not np.any(ok):
            return 1.0
        return float(np.clip(np.min(t[ok]), 1e-6, 1.0))

    def _assemble(self):
        ns, nt = self.R.size, self.Z.size
        rows, cols, vals = [], [], []
        self.dirichlet = np.zeros(self.n_unknown)

        ii, jj = np.nonzero(self.inside)
        for i, j in zip(ii, jj):
            k = self.index[i, j]
            r0, z0 = self.R[i], self.Z[j]
            arms = {}
            for tag, di, dj in (("W", -1, 0), ("E", 1, 0),
                                ("S", 0, -1), ("N", 0, 1)):
                i2, j2 = i + di, j + dj
                full = self.hr if di else self.hz
                if 0 <= i2 < ns and 0 <= j2 < nt and self.inside[i2, j2]:
                    arms[tag] = (full, self.index[i2, j2])
                else:
                    r1 = self.R[min(max(i2, 0), ns - 1)] if di else r0
                    z1 = self.Z[min(max(j2, 0), nt - 1)] if dj else z0
                    frac = self._cut_fraction(r0, z0, r1, z1)
                    arms[tag] = (full * frac, -1)

            hw, he = arms["W"][0], arms["E"][0]
            hs, hn = arms["S"][0], arms["N"][0]
            # second derivative weights (unequal arms)
            ce = 2.0 / (he * (he + hw))
            cw = 2.0 / (hw * (he + hw))
            cc_r = -2.0 / (he * hw)
            # first derivative weights (second-order, unequal arms)
            de = hw / (he * (he + hw))
            dw = -he / (hw * (he + hw))
            dc = (he - hw) / (he * hw)
            # Dstar has -(1/R) d/dR
            ce -= de / r0
            cw -= dw / r0
            cc_r -= dc / r0
            cn = 2.0 / (hn * (hn + hs))
            cs = 2.0 / (hs * (hn + hs))
            cc_z = -2.0 / (hn * hs)

            rows.append(k); cols.append(k); vals.append(cc_r + cc_z)
            for coeff, arm in ((ce, arms["E"]), (cw, arms["W"]),
                               (cn, arms["N"]), (cs, arms["S"])):
                if arm[1] >= 0:
                    rows.append(k); cols.append(arm[1]); vals.append(coeff)
                else:
                    self.dirichlet[k] += coeff
        self.matrix = csc_matrix((vals, (rows, cols)),
                                 shape=(self.n_unknown, self.n_unknown))
        self.lu = splu(self.matrix)


def solve_fixed_boundary(boundary: Boundary, pprime_of_psin,
                         ttprime_of_psin, cfg: SolverConfig,
                         scalars: MachineScalars,
                         psi_bnd: float = 0.0,
                         callback=None) -> PsiMap:
    """Solve the fixed-boundary equilibrium by Picard iteration.

    ``pprime_of_psin`` and ``ttprime_of_psin`` are callables of psi_N
    returning SI values.  The returned map carries the converged psi with
    psi_N = 0 at the located axis and 1 on the boundary; exterior nodes
    are filled by a linear continuation so near-edge interpolation stays
    usable.  Convergence is max |dpsi| / |psi_axis - psi_bnd| < tol.
    """
    if not boundary.closed:
        raise DegenerateBoundary("fixed-boundary solve needs a closed boundary")
    disc = _Discretization(boundary, cfg.ns, cfg.nt)
    r_in = disc.RR[disc.inside]

    psi = np.full(disc.n_unknown, psi_bnd, dtype=float)
    psin = np.full(disc.n_unknown, 0.5)
    psi_axis = psi_bnd
    axis_rz = (float(boundary.r.mean()), float(boundary.z.mean()))
    residual = np.inf

    for iteration in range(cfg.max_picard):
        source = (-MU0 * r_in ** 2 * np.asarray(pprime_of_psin(psin), float)
                  - np.asarray(ttprime_of_psin(psin), float))
        rhs = source - disc.dirichlet * psi_bnd
        psi_new = disc.lu.solve(rhs)
        if cfg.relax > 0.0 and iteration > 0:
            psi_new = (1.0 - cfg.relax) * psi_new + cfg.relax * psi
        psi_axis, axis_rz = _locate_axis(disc, psi_new, psi_bnd)
        span = abs(psi_axis - psi_bnd)
        if span < 1e-12 * max(1.0, abs(psi_bnd)):
            raise DegenerateBoundary(
                "flux extremum indistinct from the boundary value; "
                "sources too weak to define a magnetic axis")
        residual = float(np.max(np.abs(psi_new - psi)) / span)
        psi = psi_new
        psin = np.clip((psi - psi_axis) / (psi_bnd - psi_axis), 0.0, 1.0)
        if callback is not None:
            callback(iteration, residual)
        if residual < cfg.tol and iteration > 0:
            break
    else:
        raise NoConvergence(
            f"Picard stalled after {cfg.max_picard} iterations "
            f"(residual {residual:.3e})", residual=residual,
            iterations=cfg.max_picard)

    logger.debug("solve converged after %d Picard steps (residual %.3e)",
                 iteration + 1, residual)
    full = _fill_exterior(disc, psi, psi_bnd, psi_axis)
    return PsiMap(R=disc.R, Z=disc.Z, psi=full, psi_axis=psi_axis,
                  psi_bnd=psi_bnd, axis_R=axis_rz[0], axis_Z=axis_rz[1],
                  boundary=boundary)


def _locate_axis(disc, psi_vec, psi_bnd):
    """Interior extremum of psi, refined by a local quadratic fit."""
    grid = np.full(disc.inside.shape, psi_bnd)
    grid[disc.inside] = psi_vec
    dev = np.abs(grid - psi_bnd)
    dev[~disc.inside] = -1.0
    i, j = np.unravel_index(np.argmax(dev), dev.shape)
    i = int(np.clip(i, 1, disc.R.size - 2))
    j = int(np.clip(j, 1, disc.Z.size - 2))
    patch = grid[i - 1:i + 2, j - 1:j + 2]
    dr = (patch[2, 1] - patch[0, 1]) / 2.0
    dz = (patch[1, 2] - patch[1, 0]) / 2.0
    drr = patch[2, 1] - 2.0 * patch[1, 1] + patch[0, 1]
    dzz = patch[1, 2] - 2.0 * patch[1, 1] + patch[1, 0]
    drz = (patch[2, 2] - patch[2, 0] - patch[0, 2] + patch[0, 0]) / 4.0
    det = drr * dzz - drz ** 2
    if abs(det) < 1e-300:
        off_r = off_z = 0.0
    else:
        off_r = float(np.clip(-(dr * dzz - dz * drz) / det, -1.0, 1.0))
        off_z = float(np.clip(-(drr * dz - drz * dr) / det, -1.0, 1.0))
    psi_axis = (patch[1, 1] + dr * off_r + dz * off_z
                + 0.5 * (drr * off_r ** 2 + dzz * off_z ** 2)
                + drz * off_r * off_z)
    axis = (disc.R[i] + off_r * disc.hr, disc.Z[j] + off_z * disc.hz)
    return float(psi_axis), axis


def _fill_exterior(disc, psi_vec, psi_bnd, psi_axis):
    """Continue psi past the boundary, linear in distance to the curve.

    The continuation slope is the mean interior |grad psi| near the
    boundary, signed so psi keeps moving away from the axis value.
    """
    grid = np.full(disc.inside.shape, psi_bnd)
    grid[disc.inside] = psi_vec
    outside = ~disc.inside
    if not np.any(outside):
        return grid
    gr, gz = np.gradient(grid, disc.R, disc.Z)
    gmag = np.hypot(gr, gz)[disc.inside]
    slope = float(np.mean(gmag)) if gmag.size else 0.0
    sign = 1.0 if psi_bnd >= psi_axis else -1.0
    d = polyline_distance(disc.RR[outside], disc.ZZ[outside],
                          disc.boundary.r, disc.boundary.z)
    grid[outside] = psi_bnd + sign * slope * d
    return grid


# --- output assembly ------------------------------------------------------

def equilibrium_outputs(pmap: PsiMap, kin, cfg: SolverConfig,
                        scalars: MachineScalars, pprime_of_psin,
                        ttprime_of_psin, pressure_of_psin=None) -> dict:
    """Assemble the full per-surface output bundle of one solve.

    Returns the text-bundle dictionary: radial grids (PSIN/PHIN and the
    rho columns), q and shear, pressure and its gradient, every current
    representation on ``cfg.npsi`` levels, the kinetic profiles re-gridded
    onto the output mesh, the boundary polyline, and the machine scalars
    with the total toroidal current (ITEXP) from the quadrature of the
    reconstructed j_phi.  Neoclassical conductivity and bootstrap current
    are emitted as zero placeholders (never computed here).
    """
    from scipy.integrate import cumulative_trapezoid
    from scipy.interpolate import PchipInterpolator

    from . import fluxavg
    from .gridmap import psin_to_phin, regrid
    from .core import RadialGrid

    npsi = cfg.npsi
    psin = np.linspace(0.0, 1.0, npsi)
    scale = pmap.psi_scale
    B0, R0 = scalars.B0, scalars.R0

    ffprime = np.asarray(ttprime_of_psin(psin), float)
    pprime = np.asarray(pprime_of_psin(psin), float)
    fpol = fluxavg.fpol_from_ffprime(ffprime, psin, scale, B0 * R0)
    T_interp = PchipInterpolator(psin, fpol)

    sset = fluxavg.build_surface_set(pmap, psin, n_points=cfg.nchi,
                                     T_of_level=T_interp)
    glev = sset.geom_levels
    q = np.array([si.C2 for si in sset.integrals]) \
        * T_interp(glev) / (2.0 * np.pi)
    istr = np.array([fluxavg.istar(si, pprime[k], ffprime[k], R0)
                     for k, si in enumerate(sset.integrals)])
    iprl = np.array([fluxavg.iparallel(si, pprime[k], ffprime[k],
                                       float(T_interp(glev[k])), R0)
                     for k, si in enumerate(sset.integrals)])
    jprl = np.array([fluxavg.jparallel(si, pprime[k], ffprime[k],
                                       float(T_interp(glev[k])), B0)
                     for k, si in enumerate(sset.integrals)])

    jphi = fluxavg.jphi_map(pmap, sset, "istar", istr, pprime, R0)
    itexp = fluxavg.total_current(pmap, jphi)
    itor = _cumulative_current(pmap, jphi, psin)
    jtor = istr / R0 ** 2

    if pressure_of_psin is not None:
        pressure = np.asarray(pressure_of_psin(psin), float)
    else:
        upto = cumulative_trapezoid(pprime, psin * scale, initial=0.0)
        pressure = upto - upto[-1]  # zero edge pressure
    phin = psin_to_phin(psin, q)
    grid = RadialGrid(psin=psin, phin=phin)
    rhotor = grid.rhotor
    with np.errstate(divide="ignore", invalid="ignore"):
        shear = rhotor / q * np.gradient(q, rhotor, edge_order=1)
    shear[0] = shear[1]

    bundle = {
        "B0EXP": B0, "R0EXP": R0, "ITEXP": itexp,
        "PSIN": psin, "PHIN": phin,
        "rhopsi": grid.rhopsi, "rhotor": rhotor,
        "q": q, "shear": shear, "signeo": np.zeros(npsi),
        "pressure": pressure, "pprime": pprime,
        "ffprime": ffprime, "fpol": fpol,
        "Istr": istr, "Iprl": iprl, "Jprl": jprl,
        "Itor": itor, "Jtor": jtor,
        "Ibs": np.zeros(npsi), "Jbs": np.zeros(npsi),
        "psi_scale": scale,
    }
    if pmap.boundary is not None:
        bundle["rbound"] = pmap.boundary.r
        bundle["zbound"] = pmap.boundary.z

    if kin is not None:
        kin_grid = kin.grid
        for name in ("Te", "ne", "Ti", "ni", "nz", "Zeff"):
            arr = getattr(kin, name, None)
            if arr is not None:
                column = "rhopsi" if kin_grid.has("rhopsi") else "rhotor"
                bundle[name] = regrid(arr, kin_grid, grid, column)
    return bundle


def _cumulative_current(pmap, jphi, levels):
    """Toroidal current enclosed by each psi_N level (midpoint cells)."""
    psin = pmap.psin()
    pc = 0.25 * (psin[:-1, :-1] + psin[1:, :-1] + psin[:-1, 1:] + psin[1:, 1:])
    jc = 0.25 * (jphi[:-1, :-1] + jphi[1:, :-1] + jphi[:-1, 1:] + jphi[1:, 1:])
    area = np.diff(pmap.R)[:, None] * np.diff(pmap.Z)[None, :]
    contrib = (jc * area).ravel()
    order = np.argsort(pc.ravel())
    pc_sorted = pc.ravel()[order]
    cum = np.cumsum(contrib[order])
    return np.interp(levels, pc_sorted, cum, left=0.0)
