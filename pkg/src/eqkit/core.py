"""Domain types, unit normalization, and species physics.

Profiles follow the fusion-file convention: temperatures in eV, densities
in m^-3, magnetic quantities in SI.  The normalization scalings divide
each field by a machine-scale unit built from B0, R0, mu0:

    psi     -> B0*R0^2          I  -> B0*R0/mu0      J  -> B0/(mu0*R0)
    p       -> B0^2/mu0         p' -> B0/(mu0*R0^2)
    T(fpol) -> B0*R0            T' -> 1/R0           TT' -> B0
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    AlreadyNormalized,
    DegeneratePsiScale,
    MissingColumn,
    MissingScalars,
    MissingSpecies,
    NotNormalized,
    QuasineutralityViolation,
    ZeroElectronDensity,
)

MU0 = 4.0e-7 * math.pi
QE = 1.602176634e-19  # elementary charge, exact

_GRID_EDGE_TOL = 1e-12


def _as_array(x):
    return None if x is None else np.asarray(x, dtype=float)


@dataclass(frozen=True)
class MachineScalars:
    """Machine-scale reference values used for normalization."""

    B0: float
    R0: float
    I_target: float | None = None
    mu0: float = MU0

    def __post_init__(self):
        if self.B0 == 0.0:
            raise MissingScalars("B0 must be nonzero")
        if self.R0 <= 0.0:
            raise MissingScalars("R0 must be positive")
        if abs(self.mu0 - MU0) > 1e-22:
            raise MissingScalars("mu0 must be the exact constant 4*pi*1e-7")


def _check_grid_column(name, x):
    if x.ndim != 1 or x.size < 2:
        raise ValueError(f"{name} must be a 1-D array with >= 2 points")
    if not np.all(np.diff(x) > 0):
        raise ValueError(f"{name} must be strictly increasing")
    if abs(x[0]) > _GRID_EDGE_TOL or abs(x[-1] - 1.0) > _GRID_EDGE_TOL:
        raise ValueError(f"{name} must span [0, 1] (got [{x[0]}, {x[-1]}])")


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """One monotone radial mesh carrying up to four coordinate columns.

    ``psin`` and ``phin`` are normalized poloidal/toroidal flux; ``rhopsi``
    and ``rhotor`` are their square roots, derived on access so the
    rho**2 == flux invariant holds by construction.  At least one flux
    family must be present; the other stays None until a q-bearing source
    attaches it.
    """

    psin: np.ndarray | None = None
    phin: np.ndarray | None = None

    def __post_init__(self):
        psin = _as_array(self.psin)
        phin = _as_array(self.phin)
        if psin is None and phin is None:
            raise ValueError("RadialGrid needs psin or phin")
        for name, col in (("psin", psin), ("phin", phin)):
            if col is not None:
                _check_grid_column(name, col)
                col.setflags(write=False)
        if psin is not None and phin is not None and psin.size != phin.size:
            raise ValueError("psin and phin must have equal length")
        object.__setattr__(self, "psin", psin)
        object.__setattr__(self, "phin", phin)

    @classmethod
    def from_rho(cls, rhopsi=None, rhotor=None) -> "RadialGrid":
        psin = None if rhopsi is None else np.asarray(rhopsi, float) ** 2
        phin = None if rhotor is None else np.asarray(rhotor, float) ** 2
        return cls(psin=psin, phin=phin)

    @property
    def rhopsi(self) -> np.ndarray | None:
        return None if self.psin is None else np.sqrt(self.psin)

    @property
    def rhotor(self) -> np.ndarray | None:
        return None if self.phin is None else np.sqrt(self.phin)

    @property
    def size(self) -> int:
        return self.psin.size if self.psin is not None else self.phin.size

    def column(self, name: str) -> np.ndarray:
        """Return one of psin/phin/rhopsi/rhotor, raising MissingColumn."""
        val = getattr(self, name, None)
        if val is None:
            raise MissingColumn(f"grid does not carry {name!r}")
        return val

    def has(self, name: str) -> bool:
        return getattr(self, name, None) is not None


@dataclass(frozen=True, eq=False)
class KineticProfiles:
    """Species densities/temperatures on a radial grid.

    Temperatures in eV, densities in m^-3.  Zi/Zz are the main-ion and
    impurity charge numbers used by the Z_eff and quasineutrality algebra.
    """

    grid: RadialGrid
    Te: np.ndarray | None = None
    Ti: np.ndarray | None = None
    Tb: np.ndarray | None = None
    Tz: np.ndarray | None = None
    ne: np.ndarray | None = None
    ni: np.ndarray | None = None
    nb: np.ndarray | None = None
    nz: np.ndarray | None = None
    Zeff: np.ndarray | None = None
    Vtor: np.ndarray | None = None
    Vpol: np.ndarray | None = None
    Zi: float = 1.0
    Zz: float = 6.0
    quasineutrality_tol: float = 0.05

    _array_fields = ("Te", "Ti", "Tb", "Tz", "ne", "ni", "nb", "nz",
                     "Zeff", "Vtor", "Vpol")

    def __post_init__(self):
        n = self.grid.size
        for name in self._array_fields:
            arr = _as_array(getattr(self, name))
            if arr is not None:
                if arr.size != n:
                    raise ValueError(f"{name} length {arr.size} != grid length {n}")
                arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("Te", "Ti", "Tb", "Tz", "ne", "ni", "nb", "nz"):
            arr = getattr(self, name)
            if arr is not None and np.any(arr < 0):
                raise ValueError(f"{name} must be nonnegative")
        if self.nz is not None and self.ne is not None and self.ni is not None:
            charge = self.Zi * self.ni + self.Zz * self.nz
            scale = np.maximum(self.ne, 1e-30 * np.max(self.ne) + 1e-300)
            residual = np.max(np.abs(self.ne - charge) / scale)
            if residual > self.quasineutrality_tol:
                raise QuasineutralityViolation(
                    f"quasineutrality residual {residual:.3g} exceeds "
                    f"tolerance {self.quasineutrality_tol:.3g}")

    def with_updates(self, **kwargs) -> "KineticProfiles":
        return replace(self, **kwargs)


#: normalization divisor for each EquilibriumProfiles field
def _norm_scales(s: MachineScalars) -> dict:
    return {
        "pressure": s.B0 ** 2 / s.mu0,
        "pprime": s.B0 / (s.mu0 * s.R0 ** 2),
        "ffprime": s.B0,
        "fpol": s.B0 * s.R0,
        "Istr": s.B0 * s.R0 / s.mu0,
        "Iprl": s.B0 * s.R0 / s.mu0,
        "Jprl": s.B0 / (s.mu0 * s.R0),
        "q": 1.0,
    }


@dataclass(frozen=True, eq=False)
class EquilibriumProfiles:
    """Pressure/current profile bundle with its machine scalars."""

    grid: RadialGrid
    scalars: MachineScalars
    pressure: np.ndarray | None = None
    pprime: np.ndarray | None = None
    ffprime: np.ndarray | None = None
    fpol: np.ndarray | None = None
    Istr: np.ndarray | None = None
    Iprl: np.ndarray | None = None
    Jprl: np.ndarray | None = None
    q: np.ndarray | None = None
    normalized: bool = False

    _array_fields = ("pressure", "pprime", "ffprime", "fpol",
                     "Istr", "Iprl", "Jprl", "q")

    def __post_init__(self):
        n = self.grid.size
        for name in self._array_fields:
            arr = _as_array(getattr(self, name))
            if arr is not None:
                if arr.size != n:
                    raise ValueError(f"{name} length {arr.size} != grid length {n}")
                arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.q is not None and np.any(self.q == 0.0):
            raise ValueError("q profile must have no zero crossing")
        if self.q is not None and np.min(self.q) < 0 < np.max(self.q):
            raise ValueError("q profile must have no zero crossing")

    def with_updates(self, **kwargs) -> "EquilibriumProfiles":
        return replace(self, **kwargs)


@dataclass(frozen=True, eq=False)
class Boundary:
    """Closed (or open) plasma boundary polyline in meters."""

    r: np.ndarray
    z: np.ndarray
    closed: bool = True
    psin_level: float = 1.0

    def __post_init__(self):
        r = np.asarray(self.r, float)
        z = np.asarray(self.z, float)
        if r.size != z.size:
            raise ValueError("boundary r and z must have equal length")
        if r.size < 16:
            raise ValueError("boundary needs at least 16 points")
        if self.closed:
            gap = math.hypot(r[0] - r[-1], z[0] - z[-1])
            if gap > 1e-9:
                raise ValueError(f"closed boundary endpoints differ by {gap:.3g} m")
        if not _polyline_is_simple(r, z, self.closed):
            raise ValueError("boundary polyline is self-intersecting")
        r.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "z", z)

    @property
    def size(self) -> int:
        return self.r.size


def _polyline_is_simple(r, z, closed) -> bool:
    """Cheap non-self-intersection test on a decimated copy of the polyline.

    Exact all-pairs segment intersection, vectorized; decimation caps the
    cost for very fine boundaries (a genuine crossing survives decimation
    at this scale).
    """
    n = r.size
    if closed:
        r, z = r[:-1], z[:-1]
        n -= 1
    step = max(1, n // 256)
    r, z = r[::step], z[::step]
    if closed:
        r = np.append(r, r[0])
        z = np.append(z, z[0])
    p = np.column_stack([r, z])
    a, b = p[:-1], p[1:]
    m = a.shape[0]
    d1 = b - a

    def cross2(u, v):
        return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]

    for i in range(m - 2):
        js = np.arange(i + 2, m)
        if closed and i == 0:
            js = js[:-1]  # first and last segment share an endpoint
        if js.size == 0:
            continue
        a2, b2 = a[js], b[js]
        d2 = b2 - a2
        denom = cross2(d1[i], d2)
        t = cross2(a2 - a[i], d2)
        u = cross2(a2 - a[i], d1[i])
        with np.errstate(divide="ignore", invalid="ignore"):
            tt = t / denom
            uu = u / denom
        hit = (np.abs(denom) > 1e-300) & (tt > 0) & (tt < 1) & (uu > 0) & (uu < 1)
        if np.any(hit):
            return False
    return True


@dataclass(frozen=True, eq=False)
class PsiMap:
    """Poloidal-flux map psi(R, Z) with axis/boundary metadata.

    ``psi`` is indexed [i, j] -> psi(R[i], Z[j]).
    """

    R: np.ndarray
    Z: np.ndarray
    psi: np.ndarray
    psi_axis: float
    psi_bnd: float
    axis_R: float
    axis_Z: float
    boundary: Boundary | None = None

    def __post_init__(self):
        R = np.asarray(self.R, float)
        Z = np.asarray(self.Z, float)
        psi = np.asarray(self.psi, float)
        if not (np.all(np.diff(R) > 0) and np.all(np.diff(Z) > 0)):
            raise ValueError("R and Z must be strictly increasing")
        if psi.shape != (R.size, Z.size):
            raise ValueError(f"psi shape {psi.shape} != ({R.size}, {Z.size})")
        if self.psi_axis == self.psi_bnd:
            raise ValueError("psi_axis must differ from psi_bnd")
        if not (R[0] <= self.axis_R <= R[-1] and Z[0] <= self.axis_Z <= Z[-1]):
            raise ValueError("axis lies outside the (R, Z) box")
        for arr in (R, Z, psi):
            arr.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "psi", psi)

    @property
    def psi_scale(self) -> float:
        return self.psi_bnd - self.psi_axis

    def psin(self) -> np.ndarray:
        """Normalized flux on the full grid; 0 at axis by construction."""
        return (self.psi - self.psi_axis) / self.psi_scale


# --- operations --------------------------------------------------------

def normalize(eq: EquilibriumProfiles) -> EquilibriumProfiles:
    """Rescale all profile fields to machine units (see module header)."""
    if eq.normalized:
        raise AlreadyNormalized("profiles already normalized")
    if eq.scalars is None:
        raise MissingScalars("normalize needs machine scalars")
    scales = _norm_scales(eq.scalars)
    updates = {}
    for name, scale in scales.items():
        arr = getattr(eq, name)
        if arr is not None:
            updates[name] = arr / scale
    return eq.with_updates(normalized=True, **updates)


def denormalize(eq: EquilibriumProfiles) -> EquilibriumProfiles:
    """Inverse of :func:`normalize`."""
    if not eq.normalized:
        raise NotNormalized("profiles are not normalized")
    scales = _norm_scales(eq.scalars)
    updates = {}
    for name, scale in scales.items():
        arr = getattr(eq, name)
        if arr is not None:
            updates[name] = arr * scale
    return eq.with_updates(normalized=False, **updates)


def compute_zeff(kin: KineticProfiles, flatten: bool = False) -> np.ndarray:
    """Effective charge sum(n_s * Z_s^2) / n_e per grid point.

    The sum runs over the thermal ion species (ni, nz); fast ions are
    excluded, consistent with the quasineutrality bookkeeping.  With
    ``flatten`` the whole profile is replaced by its average value.
    """
    if kin.ne is None:
        raise MissingSpecies("compute_zeff needs ne")
    if np.any(kin.ne <= 0):
        raise ZeroElectronDensity("ne must be positive everywhere")
    if kin.ni is None and kin.nz is None:
        raise MissingSpecies("compute_zeff needs at least one ion species")
    total = np.zeros(kin.grid.size)
    if kin.ni is not None:
        total = total + kin.ni * kin.Zi ** 2
    if kin.nz is not None:
        total = total + kin.nz * kin.Zz ** 2
    zeff = total / kin.ne
    if flatten:
        zeff = np.full_like(zeff, zeff.mean())
    return zeff


def compose_pressure(kin: KineticProfiles, include_fast: bool = False) -> np.ndarray:
    """Total thermal pressure e*(ne*Te + ni*Ti [+ nz*Tz] [+ nb*Tb]) in Pa.

    The impurity term enters whenever nz is present (Tz falls back to Ti);
    the fast-ion term only with ``include_fast`` and both nb, Tb present.
    """
    if kin.ne is None or kin.Te is None:
        raise MissingSpecies("compose_pressure needs ne and Te")
    if kin.ni is None or kin.Ti is None:
        raise MissingSpecies("compose_pressure needs ni and Ti")
    p = kin.ne * kin.Te + kin.ni * kin.Ti
    if kin.nz is not None:
        tz = kin.Tz if kin.Tz is not None else kin.Ti
        p = p + kin.nz * tz
    if include_fast and kin.nb is not None and kin.Tb is not None:
        p = p + kin.nb * kin.Tb
    return QE * p


def pressure_gradient(pressure: np.ndarray, grid: RadialGrid,
                      psi_scale: float) -> np.ndarray:
    """dP/dpsi on psi = psin * psi_scale.

    Centered differences inside, second-order one-sided at the endpoints.
    """
    if psi_scale == 0.0:
        raise DegeneratePsiScale("psi_scale must be nonzero")
    psin = grid.column("psin")
    pressure = np.asarray(pressure, float)
    if pressure.size != psin.size:
        raise ValueError("pressure length != grid length")
    return np.gradient(pressure, psin * psi_scale, edge_order=2)
