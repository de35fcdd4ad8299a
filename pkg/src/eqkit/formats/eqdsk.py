"""G-EQDSK reader and writer.

Layout: a 48-character description followed by three integers (idum, nw,
nh) on the first line; all floats in Fortran 5e16.9 fields, five per
line; boundary and limiter counts as two integers on their own line.
Values round-trip at the format's 9-significant-digit precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator, RectBivariateSpline

from ..core import Boundary, EquilibriumProfiles, MachineScalars, PsiMap, RadialGrid
from ..errors import CountMismatch, MalformedHeader, ResampleOutOfRange
from ..gridmap import psin_to_phin
from ._util import FixedFieldReader, fmt_block, require_finite

_F = "%16.9E"


@dataclass
class EqdskFile:
    """Raw G-EQDSK contents, field for field."""

    description: str
    nw: int
    nh: int
    rdim: float
    zdim: float
    rcentr: float
    rleft: float
    zmid: float
    rmaxis: float
    zmaxis: float
    simag: float
    sibry: float
    bcentr: float
    current: float
    fpol: np.ndarray
    pres: np.ndarray
    ffprim: np.ndarray
    pprime: np.ndarray
    psirz: np.ndarray  # indexed [r, z]
    qpsi: np.ndarray
    rbbbs: np.ndarray
    zbbbs: np.ndarray
    rlim: np.ndarray
    zlim: np.ndarray

    def r_axis_vector(self) -> np.ndarray:
        return self.rleft + np.linspace(0.0, self.rdim, self.nw)

    def z_axis_vector(self) -> np.ndarray:
        return self.zmid - 0.5 * self.zdim + np.linspace(0.0, self.zdim, self.nh)


@dataclass
class EqdskResult:
    """Typed read_eqdsk output plus the conventional-key dictionary."""

    file: EqdskFile
    psimap: PsiMap
    profiles: EquilibriumProfiles
    grid: RadialGrid
    data: dict

    def __getitem__(self, key):
        return self.data[key]

    def keys(self):
        return self.data.keys()


def read_eqdsk(path, setParam=None, Normalized=False, **kwargs) -> EqdskResult:
    """Read a G-EQDSK file.

    The returned data dictionary carries the frequently used keys (q,
    BCTR, RCTR, CURNT, PSIN, PHIN, rhopsi, rhotor, rbound, zbound,
    pprime, pressure, ffprime); the full file contents sit on ``.file``.
    The radial grid is the uniform nw-point psi_N mesh between axis and
    boundary flux, with the toroidal-flux family attached from the file's
    own q profile.
    """
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise MalformedHeader(f"{path}: empty file")

    header = lines[0]
    description = header[:48]
    tail = header[48:].split()
    if len(tail) < 3:
        raise MalformedHeader(f"{path}: header needs idum, nw, nh after the "
                              "48-char description")
    try:
        nw, nh = int(tail[-2]), int(tail[-1])
    except ValueError as exc:
        raise MalformedHeader(f"{path}: bad integer in header") from exc
    if nw < 2 or nh < 2:
        raise MalformedHeader(f"{path}: nonsense grid size {nw}x{nh}")

    rd = FixedFieldReader(lines[1:])
    rdim, zdim, rcentr, rleft, zmid = rd.read_floats(5, "scalars line 2")
    rmaxis, zmaxis, simag, sibry, bcentr = rd.read_floats(5, "scalars line 3")
    current, _, _, _, _ = rd.read_floats(5, "scalars line 4")
    _ = rd.read_floats(5, "scalars line 5")
    fpol = rd.read_floats(nw, "fpol")
    pres = rd.read_floats(nw, "pres")
    ffprim = rd.read_floats(nw, "ffprim")
    pprime = rd.read_floats(nw, "pprime")
    psi_flat = rd.read_floats(nw * nh, "psirz")
    qpsi = rd.read_floats(nw, "qpsi")
    counts = rd.next_line().split()
    if len(counts) < 2:
        raise CountMismatch("boundary/limiter count line is malformed")
    nbbbs, limitr = int(counts[0]), int(counts[1])
    bbbs = rd.read_floats(2 * nbbbs, "boundary") if nbbbs else np.empty(0)
    lim = rd.read_floats(2 * limitr, "limiter") if limitr else np.empty(0)

    for name, arr in (("fpol", fpol), ("pres", pres), ("ffprim", ffprim),
                      ("pprime", pprime), ("psirz", psi_flat), ("qpsi", qpsi),
                      ("boundary", bbbs), ("limiter", lim)):
        require_finite(name, arr)
    if simag == sibry:
        raise MalformedHeader("simag equals sibry")

    # Fortran writes psi with the R index fastest: reshape (nh, nw) -> [r, z]
    psirz = psi_flat.reshape(nh, nw).T
    rbbbs, zbbbs = bbbs[0::2], bbbs[1::2]
    rlim, zlim = lim[0::2], lim[1::2]

    file = EqdskFile(description=description, nw=nw, nh=nh, rdim=rdim,
                     zdim=zdim, rcentr=rcentr, rleft=rleft, zmid=zmid,
                     rmaxis=rmaxis, zmaxis=zmaxis, simag=simag, sibry=sibry,
                     bcentr=bcentr, current=current, fpol=fpol, pres=pres,
                     ffprim=ffprim, pprime=pprime, psirz=psirz, qpsi=qpsi,
                     rbbbs=rbbbs, zbbbs=zbbbs, rlim=rlim, zlim=zlim)
    return _assemble_result(file, setParam=setParam, Normalized=Normalized,
                            **kwargs)


def _assemble_result(file: EqdskFile, setParam=None, Normalized=False,
                     **kwargs) -> EqdskResult:
    from ._sources import resolve_grid_source
    from ..gridmap import ProfileBundle, unify

    setParam = dict(setParam or {})
    psin = np.linspace(0.0, 1.0, file.nw)
    phin = psin_to_phin(psin, file.qpsi)
    grid = RadialGrid(psin=psin, phin=phin)

    boundary = None
    if file.rbbbs.size >= 16:
        closed = (abs(file.rbbbs[0] - file.rbbbs[-1]) < 1e-9
                  and abs(file.zbbbs[0] - file.zbbbs[-1]) < 1e-9)
        boundary = Boundary(r=file.rbbbs, z=file.zbbbs, closed=closed,
                            psin_level=1.0)
    psimap = PsiMap(R=file.r_axis_vector(), Z=file.z_axis_vector(),
                    psi=file.psirz, psi_axis=file.simag, psi_bnd=file.sibry,
                    axis_R=file.rmaxis, axis_Z=file.zmaxis, boundary=boundary)

    scalars = MachineScalars(B0=file.bcentr, R0=file.rcentr,
                             I_target=file.current)
    values = {"pressure": file.pres, "pprime": file.pprime,
              "ffprime": file.ffprim, "fpol": file.fpol, "q": file.qpsi}

    source = resolve_grid_source(**kwargs)
    if source is not None:
        nrhotype = int(setParam.get("nrhopsi", 0))
        bundle = unify([ProfileBundle(grid=grid, values=values)],
                       rhomesh=source, nrhotype=nrhotype)[0]
        grid = bundle.grid
        values = bundle.values

    profiles = EquilibriumProfiles(grid=grid, scalars=scalars,
                                   pressure=values["pressure"],
                                   pprime=values["pprime"],
                                   ffprime=values["ffprime"],
                                   fpol=values["fpol"], q=values["q"])
    if Normalized:
        from ..core import normalize
        profiles = normalize(profiles)

    data = {
        "q": profiles.q, "BCTR": file.bcentr, "RCTR": file.rcentr,
        "CURNT": file.current, "PSIN": grid.psin, "rhopsi": grid.rhopsi,
        "rbound": file.rbbbs, "zbound": file.zbbbs,
        "pprime": profiles.pprime, "pressure": profiles.pressure,
        "ffprime": profiles.ffprime, "fpol": profiles.fpol,
        "psi_scale": file.sibry - file.simag,
    }
    if grid.has("phin"):
        data["PHIN"] = grid.phin
        data["rhotor"] = grid.rhotor
    return EqdskResult(file=file, psimap=psimap, profiles=profiles,
                       grid=grid, data=data)


def write_eqdsk(data, path, nrbox: int = 60, nzbox: int = 60) -> None:
    """Write a G-EQDSK file with an nrbox x nzbox flux map.

    ``data`` may be an EqdskFile or an EqdskResult; psi and the radial
    profiles are resampled when the requested box differs from the
    source resolution.
    """
    file = data.file if isinstance(data, EqdskResult) else data
    if nrbox < 2 or nzbox < 2:
        raise ResampleOutOfRange(f"cannot resample to {nrbox}x{nzbox}")

    if nrbox != file.nw or nzbox != file.nh:
        file = _resample(file, nrbox, nzbox)

    out = []
    desc = (file.description + " " * 48)[:48]
    out.append(f"{desc}{0:4d}{file.nw:4d}{file.nh:4d}")
    out.append(fmt_block([file.rdim, file.zdim, file.rcentr, file.rleft,
                          file.zmid], _F))
    out.append(fmt_block([file.rmaxis, file.zmaxis, file.simag, file.sibry,
                          file.bcentr], _F))
    out.append(fmt_block([file.current, file.simag, 0.0, file.rmaxis, 0.0], _F))
    out.append(fmt_block([file.zmaxis, 0.0, file.sibry, 0.0, 0.0], _F))
    for name in ("fpol", "pres", "ffprim", "pprime"):
        out.append(fmt_block(require_finite(name, getattr(file, name)), _F))
    out.append(fmt_block(require_finite("psirz", file.psirz.T), _F))
    out.append(fmt_block(require_finite("qpsi", file.qpsi), _F))
    out.append(f"{file.rbbbs.size:5d}{file.rlim.size:5d}")
    if file.rbbbs.size:
        out.append(fmt_block(np.column_stack([file.rbbbs, file.zbbbs]), _F))
    if file.rlim.size:
        out.append(fmt_block(np.column_stack([file.rlim, file.zlim]), _F))
    with open(path, "w") as f:
        f.write("\n".join(out) + "\n")


def _resample(file: EqdskFile, nrbox: int, nzbox: int) -> EqdskFile:
    r_old = file.r_axis_vector()
    z_old = file.z_axis_vector()
    r_new = file.rleft + np.linspace(0.0, file.rdim, nrbox)
    z_new = file.zmid - 0.5 * file.zdim + np.linspace(0.0, file.zdim, nzbox)
    spline = RectBivariateSpline(r_old, z_old, file.psirz)
    psirz = spline(r_new, z_new)
    x_old = np.linspace(0.0, 1.0, file.nw)
    x_new = np.linspace(0.0, 1.0, nrbox)

    def remap(arr):
        return PchipInterpolator(x_old, arr)(x_new)

    return EqdskFile(description=file.description, nw=nrbox, nh=nzbox,
                     rdim=file.rdim, zdim=file.zdim, rcentr=file.rcentr,
                     rleft=file.rleft, zmid=file.zmid, rmaxis=file.rmaxis,
                     zmaxis=file.zmaxis, simag=file.simag, sibry=file.sibry,
                     bcentr=file.bcentr, current=file.current,
                     fpol=remap(file.fpol), pres=remap(file.pres),
                     ffprim=remap(file.ffprim), pprime=remap(file.pprime),
                     psirz=psirz, qpsi=remap(file.qpsi), rbbbs=file.rbbbs,
                     zbbbs=file.zbbbs, rlim=file.rlim, zlim=file.zlim)
