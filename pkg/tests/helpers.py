"""Shared fixture builders: an analytic equilibrium shot directory.

The shot is generated from the closed-form constant-source equilibrium so
every derived file (EQDSK flux map, EXPEQ current column, kinetic
profiles) has an oracle: psi, p', TT', and the boundary are exact, q and
the averaged currents come from contour quadrature on the analytic map.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.interpolate import PchipInterpolator

from eqkit import fluxavg, solver
from eqkit.core import MU0, QE, MachineScalars, PsiMap
from eqkit.formats import write_eqdsk, write_expeq, write_exptnz, write_iterdb, write_profiles
from eqkit.formats.eqdsk import EqdskFile
from eqkit.formats.expeq import ExpeqFile
from eqkit.gridmap import psin_to_phin

B0 = 2.0
R0 = 1.7
ZEFF = 1.8
T_PEAK_EV = 2.0e3


def solovev_case(p_coeff=-1.2e6, f_coeff=-1.0, a=0.5, elongation=1.1):
    return solver.SolovevParams(R0=R0, a=a, elongation=elongation,
                                p_coeff=p_coeff, f_coeff=f_coeff)


def analytic_profiles(p: solver.SolovevParams, psin):
    """Exact p, p', TT', T, and the poloidal-flux values at psi_N points."""
    psin = np.asarray(psin, float)
    psi = p.psi_axis * (1.0 - psin)           # psi_bnd = 0
    p_edge = 0.02 * abs(p.p_coeff * p.psi_axis)
    pressure = p_edge + p.p_coeff * psi
    fpol = np.sqrt((B0 * R0) ** 2 + 2.0 * p.f_coeff * psi)
    return {"psi": psi, "pressure": pressure, "pprime": p.p_coeff,
            "ffprime": p.f_coeff, "fpol": fpol, "p_edge": p_edge}


def direct_jphi_grid(p: solver.SolovevParams, pmap: PsiMap) -> np.ndarray:
    RR = np.broadcast_to(pmap.R[:, None], pmap.psi.shape)
    return -RR * p.p_coeff - p.f_coeff / (MU0 * RR)


def surface_tables(p: solver.SolovevParams, pmap: PsiMap, psin,
                   n_chi=256):
    """q, Istr, Iprl, Jprl at psi_N levels by contour quadrature."""
    ana = analytic_profiles(p, psin)
    T_int = PchipInterpolator(psin, ana["fpol"])
    sset = fluxavg.build_surface_set(pmap, psin, n_points=n_chi,
                                     T_of_level=T_int)
    q = np.array([si.C2 for si in sset.integrals]) \
        * T_int(sset.geom_levels) / (2.0 * np.pi)
    istr = np.array([fluxavg.istar(si, p.p_coeff, p.f_coeff, R0)
                     for si in sset.integrals])
    iprl = np.array([fluxavg.iparallel(si, p.p_coeff, p.f_coeff,
                                       float(T_int(g)), R0)
                     for si, g in zip(sset.integrals, sset.geom_levels)])
    jprl = np.array([fluxavg.jparallel(si, p.p_coeff, p.f_coeff,
                                       float(T_int(g)), B0)
                     for si, g in zip(sset.integrals, sset.geom_levels)])
    return {"q": q, "Istr": istr, "Iprl": iprl, "Jprl": jprl, "sset": sset}


def kinetic_tables(p: solver.SolovevParams, psin):
    """Quasineutral two-species profiles whose thermal pressure matches
    the analytic pressure profile exactly."""
    ana = analytic_profiles(p, psin)
    pressure = ana["pressure"]
    p0 = pressure[0]
    nz_frac = (ZEFF - 1.0) / 30.0            # nz/ne for Zi=1, Zz=6
    ni_frac = 1.0 - 6.0 * nz_frac
    species_sum = 1.0 + ni_frac + nz_frac
    w = np.sqrt(pressure / p0)
    Te = T_PEAK_EV * w
    n0 = p0 / (species_sum * QE * T_PEAK_EV)
    ne = n0 * w
    return {"Te": Te, "Ti": Te.copy(), "ne": ne, "ni": ni_frac * ne,
            "nz": nz_frac * ne, "Zeff": np.full_like(ne, ZEFF),
            "pressure": pressure}


def build_eqdsk_file(p: solver.SolovevParams, nw=65, nh=65) -> EqdskFile:
    pmap = solver.solovev_psimap(p, nr=nw, nz=nh)
    psin = np.linspace(0.0, 1.0, nw)
    ana = analytic_profiles(p, psin)
    tables = surface_tables(p, pmap, psin, n_chi=128)
    current = fluxavg.total_current(pmap, direct_jphi_grid(p, pmap))
    bnd = pmap.boundary
    return EqdskFile(
        description="analytic constant-source equilibrium", nw=nw, nh=nh,
        rdim=float(pmap.R[-1] - pmap.R[0]),
        zdim=float(pmap.Z[-1] - pmap.Z[0]), rcentr=R0,
        rleft=float(pmap.R[0]),
        zmid=float(0.5 * (pmap.Z[0] + pmap.Z[-1])), rmaxis=p.R0,
        zmaxis=0.0, simag=p.psi_axis, sibry=0.0, bcentr=B0,
        current=current, fpol=ana["fpol"],
        pres=ana["pressure"], ffprim=np.full(nw, p.f_coeff),
        pprime=np.full(nw, p.p_coeff), psirz=pmap.psi,
        qpsi=tables["q"], rbbbs=bnd.r, zbbbs=bnd.z,
        rlim=np.array([pmap.R[0], pmap.R[-1], pmap.R[-1], pmap.R[0]]),
        zlim=np.array([pmap.Z[0], pmap.Z[0], pmap.Z[-1], pmap.Z[-1]]))


def make_shot(dirname, p: solver.SolovevParams | None = None, nw=65,
              n_prof=64, expeq_nsttp=3) -> dict:
    """Create a complete shot directory; returns the file path map."""
    p = p or solovev_case()
    os.makedirs(dirname, exist_ok=True)
    prefix = os.path.basename(os.path.normpath(dirname))
    paths = {}

    eq = build_eqdsk_file(p, nw=nw, nh=nw)
    paths["EQDSK"] = os.path.join(dirname, f"{prefix}_EQDSK")
    write_eqdsk(eq, paths["EQDSK"], nrbox=nw, nzbox=nw)

    pmap = solver.solovev_psimap(p, nr=129, nz=129)
    psin = np.linspace(0.0, 1.0, n_prof)
    rho = np.sqrt(psin)
    kin = kinetic_tables(p, psin)
    ana = analytic_profiles(p, psin)
    tables = surface_tables(p, pmap, psin, n_chi=128)

    paths["EXPTNZ"] = os.path.join(dirname, f"{prefix}_EXPTNZ")
    write_exptnz({"rhopsi": rho, "Te": kin["Te"], "ne": kin["ne"],
                  "Zeff": kin["Zeff"], "Ti": kin["Ti"], "ni": kin["ni"]},
                 paths["EXPTNZ"])

    paths["PROFILES"] = os.path.join(dirname, f"{prefix}_PROFILES")
    write_profiles({"PSIN": psin, "Te": kin["Te"], "ne": kin["ne"],
                    "Ti": kin["Ti"], "ni": kin["ni"], "nz": kin["nz"],
                    "Zeff": kin["Zeff"],
                    "Vtor": np.full(n_prof, 1.0e4),
                    "Vpol": np.full(n_prof, 500.0)},
                   paths["PROFILES"])

    phin = psin_to_phin(psin, tables["q"])
    paths["ITERDB"] = os.path.join(dirname, f"{prefix}_ITERDB")
    write_iterdb({"rhotor": np.sqrt(phin), "Te": kin["Te"],
                  "Ti": kin["Ti"], "ne": kin["ne"], "ni": kin["ni"],
                  "nz": kin["nz"], "Zeff": kin["Zeff"],
                  "Vtor": np.full(n_prof, 1.0e4)}, paths["ITERDB"])

    bnd = pmap.boundary
    current_key = {1: "ffprime", 2: "Istr", 3: "Iprl", 4: "Jprl"}[expeq_nsttp]
    norm = {"ffprime": B0, "Istr": B0 * R0 / MU0, "Iprl": B0 * R0 / MU0,
            "Jprl": B0 / (MU0 * R0)}[current_key]
    if expeq_nsttp == 1:
        curr = np.full(n_prof, p.f_coeff) / norm
    else:
        curr = tables[current_key] / norm
    expeq = ExpeqFile(
        epsilon=float((bnd.r.max() - bnd.r.min())
                      / (bnd.r.max() + bnd.r.min())),
        zgeom=float(np.mean(bnd.z[:-1]) / R0),
        pedge=float(ana["pressure"][-1] / (B0 ** 2 / MU0)),
        boundary_r=bnd.r / R0, boundary_z=bnd.z / R0, nppfun=8,
        nsttp=expeq_nsttp, nrhotype=0, grid=rho,
        pressure_col=ana["pressure"] / (B0 ** 2 / MU0),
        current_col=curr)
    paths["EXPEQ"] = os.path.join(dirname, f"{prefix}_EXPEQ")
    write_expeq(expeq, paths["EXPEQ"])
    return paths


def xpoint_psimap(n=301) -> PsiMap:
    """Saddle-bearing map whose psi_bnd sits beyond the separatrix, so the
    default 0.999 cutoff selects an open surface leaving the domain."""
    x = np.linspace(-0.05, 1.4, n)
    z = np.linspace(-0.8, 0.8, n)
    rc = 3.0
    psi = z[None, :] ** 2 - x[:, None] ** 2 + x[:, None] ** 4
    return PsiMap(R=rc + x, Z=z, psi=psi, psi_axis=-0.25, psi_bnd=0.025,
                  axis_R=rc + 1.0 / np.sqrt(2.0), axis_Z=0.0)


def circular_psimap(nr=257, a=0.5) -> PsiMap:
    R = np.linspace(R0 - 0.7, R0 + 0.7, nr)
    Z = np.linspace(-0.7, 0.7, nr)
    psi = (R[:, None] - R0) ** 2 + Z[None, :] ** 2
    return PsiMap(R=R, Z=Z, psi=psi, psi_axis=0.0, psi_bnd=a ** 2,
                  axis_R=R0, axis_Z=0.0)


def machine_scalars(target=None) -> MachineScalars:
    return MachineScalars(B0=B0, R0=R0, I_target=target)


# --- randomized valid files (round-trip fuzzing) -------------------------

def random_eqdsk_file(rng) -> EqdskFile:
    nw = int(rng.integers(9, 33))
    nh = int(rng.integers(9, 33))
    r0 = rng.uniform(1.0, 3.0)
    a = rng.uniform(0.2, 0.45) * r0
    rleft = r0 - 1.6 * a
    rdim = 3.2 * a
    zdim = 3.4 * a
    psi_axis = rng.uniform(-2.0, -0.1)
    R = rleft + np.linspace(0, rdim, nw)
    Z = -zdim / 2 + np.linspace(0, zdim, nh)
    psi = psi_axis * (1 - (((R[:, None] - r0) ** 2
                            + Z[None, :] ** 2) / a ** 2))
    psin = np.linspace(0, 1, nw)
    nb = int(rng.integers(17, 64))
    theta = np.linspace(0, 2 * np.pi, nb)
    rb = r0 + a * np.cos(theta)
    zb = a * np.sin(theta)
    rb[-1], zb[-1] = rb[0], zb[0]
    return EqdskFile(
        description=f"random equilibrium {rng.integers(1e6)}",
        nw=nw, nh=nh, rdim=rdim, zdim=zdim, rcentr=r0, rleft=rleft,
        zmid=0.0, rmaxis=r0, zmaxis=0.0, simag=psi_axis, sibry=0.0,
        bcentr=rng.uniform(0.8, 6.0), current=rng.uniform(1e5, 2e7),
        fpol=rng.uniform(2, 8) + rng.normal(0, 0.1, nw),
        pres=np.abs(rng.normal(1e4, 3e3, nw)),
        ffprim=rng.normal(-1, 0.2, nw), pprime=rng.normal(-1e4, 2e3, nw),
        psirz=psi, qpsi=rng.uniform(0.8, 1.2) + psin ** 2,
        rbbbs=rb, zbbbs=zb,
        rlim=np.array([R[0], R[-1]]), zlim=np.array([Z[0], Z[-1]]))


def random_expeq_file(rng) -> ExpeqFile:
    n = int(rng.integers(16, 100))
    nb = int(rng.integers(17, 80))
    theta = np.linspace(0, 2 * np.pi, nb)
    eps = rng.uniform(0.2, 0.4)
    rb = 1.0 + eps * np.cos(theta)
    zb = eps * rng.uniform(1.0, 1.8) * np.sin(theta)
    rb[-1], zb[-1] = rb[0], zb[0]
    rho = np.sqrt(np.linspace(0, 1, n))
    return ExpeqFile(
        epsilon=eps, zgeom=rng.normal(0, 0.01),
        pedge=abs(rng.normal(1e-4, 1e-5)),
        boundary_r=rb, boundary_z=zb,
        nppfun=int(rng.choice([4, 8])), nsttp=int(rng.integers(1, 5)),
        nrhotype=int(rng.integers(0, 2)), grid=rho,
        pressure_col=rng.normal(1e-3, 1e-4, n),
        current_col=rng.normal(0.3, 0.05, n))


def random_exptnz_profiles(rng) -> dict:
    n = int(rng.integers(16, 200))
    rho = np.linspace(0, 1, n)
    return {"rhopsi": rho,
            "Te": np.abs(rng.normal(2e3, 200, n)),
            "ne": np.abs(rng.normal(5e19, 5e18, n)),
            "Zeff": rng.uniform(1.0, 3.0, n),
            "Ti": np.abs(rng.normal(1.8e3, 150, n)),
            "ni": np.abs(rng.normal(4e19, 4e18, n))}


def random_chease_bundle(rng) -> dict:
    n = int(rng.integers(16, 120))
    psin = np.linspace(0, 1, n)
    nb = int(rng.integers(17, 64))
    theta = np.linspace(0, 2 * np.pi, nb)
    bundle = {"B0EXP": rng.uniform(1, 5), "R0EXP": rng.uniform(1, 3),
              "ITEXP": rng.uniform(1e5, 1e7),
              "PSIN": psin, "PHIN": psin ** rng.uniform(1.1, 1.6),
              "rhopsi": np.sqrt(psin), "q": 1 + 2 * psin ** 2,
              "pressure": np.abs(rng.normal(2e4, 2e3, n)),
              "pprime": rng.normal(-1e4, 1e3, n),
              "ffprime": rng.normal(-1, 0.1, n),
              "Iprl": rng.normal(1e6, 1e5, n),
              "Te": np.abs(rng.normal(2e3, 100, n)),
              "ne": np.abs(rng.normal(5e19, 1e18, n)),
              "signeo": np.zeros(n),
              "rbound": 1.7 + 0.5 * np.cos(theta),
              "zbound": 0.55 * np.sin(theta)}
    bundle["PHIN"][0] = 0.0
    bundle["PHIN"][-1] = 1.0
    return bundle
