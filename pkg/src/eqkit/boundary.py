"""Last-closed-surface extraction by integrating the contour equations.

The level curve psi_N = cut is followed with the unit-speed system

    dr/ds = (dpsi/dZ)/|grad psi|,   dz/ds = -(dpsi/dR)/|grad psi|

integrated by an adaptive embedded 5(4) Dormand-Prince pair off a
bicubic interpolant of the flux map.  The continuum flow conserves psi
exactly, so the numerical flux drift is the error monitor: whenever the
accumulated deviation passes 0.25*eps (normalized units) the point is
Newton-projected back onto the level along the local gradient.  Leaving
the map domain, or winding that stalls before closing, means the
requested level is an open field line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .core import Boundary, PsiMap
from .errors import LevelOutOfRange, MaxStepsExceeded, OpenFieldLine
from .fluxavg import map_geometry

# Dormand-Prince 5(4) tableau
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
       187 / 2100, 1 / 40)


@dataclass(frozen=True)
class BoundaryPolicy:
    """How the LCMS is produced: pass the source polyline through
    unchanged ('asis'/0) or re-trace it at a psi_N cutoff ('interp'/1)."""

    mode: str = "asis"
    psin_cut: float = 0.999
    eps: float = 1e-8
    n_points: int = 256

    def __post_init__(self):
        mode = {0: "asis", 1: "interp"}.get(self.mode, self.mode)
        if mode not in ("asis", "interp"):
            raise ValueError(f"boundary mode must be asis/0 or interp/1, "
                             f"got {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        if not (0.0 < self.psin_cut < 1.0):
            raise ValueError("psin_cut must lie strictly inside (0, 1)")


class _Tracer:
    def __init__(self, pmap: PsiMap, psin_cut: float, eps: float):
        self.geo = map_geometry(pmap)
        self.pmap = pmap
        self.cut = psin_cut
        self.eps = eps
        self.rmin, self.rmax = pmap.R[0], pmap.R[-1]
        self.zmin, self.zmax = pmap.Z[0], pmap.Z[-1]
        self.len_scale = math.hypot(self.rmax - self.rmin,
                                    self.zmax - self.zmin)

    def _check_domain(self, r, z):
        if not (self.rmin <= r <= self.rmax and self.zmin <= z <= self.zmax):
            raise OpenFieldLine(
                f"field line left the map domain at ({r:.4g}, {z:.4g}); "
                f"psi_N = {self.cut} is outside the last closed surface")

    def rhs(self, y):
        r, z = y
        self._check_domain(r, z)
        pr, pz = self.geo.grad(r, z)
        norm = math.hypot(pr, pz)
        if norm < 1e-14 * abs(self.geo.scale):
            raise OpenFieldLine(
                f"vanishing gradient at ({r:.4g}, {z:.4g}); the trace "
                "reached a stagnation (X-) point")
        return np.array([pz / norm, -pr / norm])

    def project(self, y):
        """Newton steps along grad psi back onto the level."""
        r, z = y
        for _ in range(4):
            dev = self.geo.psin(r, z) - self.cut
            if abs(dev) < 1e-15:
                break
            pr, pz = self.geo.grad(r, z)
            g2 = pr ** 2 + pz ** 2
            if g2 == 0.0:
                break
            step = dev * self.geo.scale / g2
            r, z = r - step * pr, z - step * pz
        self._check_domain(r, z)
        return np.array([r, z])

    def deviation(self, y):
        return abs(self.geo.psin(y[0], y[1]) - self.cut)


def _start_point(tracer: _Tracer, pmap: PsiMap) -> np.ndarray:
    """Outboard-midplane crossing of the cut level."""
    geo = tracer.geo
    zax = pmap.axis_Z
    r_hi = pmap.R[-1]

    def f(r):
        return geo.psin(r, zax) - tracer.cut

    r_samples = np.linspace(pmap.axis_R, r_hi, 512)
    vals = f(r_samples)
    sign_change = np.nonzero(np.diff(np.sign(vals)) != 0)[0]
    if sign_change.size == 0:
        raise LevelOutOfRange(
            f"psi_N = {tracer.cut} has no outboard-midplane crossing")
    k = sign_change[0]
    r0 = brentq(f, r_samples[k], r_samples[k + 1], xtol=1e-14)
    return np.array([r0, zax])


def trace_lcms(pmap: PsiMap, psin_cut: float = 0.999, eps: float = 1e-8,
               n_points: int = 256, max_steps: int = 200_000) -> Boundary:
    """Trace the closed flux surface at psi_N = psin_cut.

    Returns a closed Boundary with ``n_points`` samples (uniform in
    poloidal angle about the axis).  Raises OpenFieldLine when the level
    escapes the domain or fails to wind once around the axis, and
    MaxStepsExceeded when the stepper exhausts its budget.
    """
    if not (0.0 < psin_cut < 1.0):
        raise LevelOutOfRange("psin_cut must lie strictly inside (0, 1)")
    tracer = _Tracer(pmap, psin_cut, eps)
    y = _start_point(tracer, pmap)
    y = tracer.project(y)
    rax, zax = pmap.axis_R, pmap.axis_Z

    # rough circumference estimate for step sizing and stall detection
    radius0 = math.hypot(y[0] - rax, y[1] - zax)
    circumference = 2.0 * math.pi * radius0
    h = circumference / 200.0
    tol = eps * tracer.len_scale
    dev_limit = 0.25 * eps

    points = [y.copy()]
    theta_prev = math.atan2(y[1] - zax, y[0] - rax)
    theta_cum = [0.0]
    arc = 0.0
    k = np.empty((7, 2))

    steps = 0
    while True:
        steps += 1
        if steps > max_steps:
            raise MaxStepsExceeded(
                f"tracer exceeded {max_steps} steps at psi_N={psin_cut}")
        # one embedded Dormand-Prince step
        k[0] = tracer.rhs(y)
        try:
            for i in range(1, 7):
                yi = y + h * sum(a * k[j] for j, a in enumerate(_A[i]))
                k[i] = tracer.rhs(yi)
        except OpenFieldLine:
            # the trial stage stepped outside: shrink before giving up
            if h > 1e-6 * circumference:
                h *= 0.5
                continue
            raise
        y5 = y + h * sum(b * k[j] for j, b in enumerate(_B5))
        y4 = y + h * sum(b * k[j] for j, b in enumerate(_B4))
        err = math.hypot(*(y5 - y4))
        ratio = err / tol if tol > 0 else 0.0
        if ratio > 1.0:
            h *= max(0.2, 0.9 * ratio ** -0.2)
            continue

        y = y5
        if tracer.deviation(y) > dev_limit:
            y = tracer.project(y)
        arc += h
        h *= min(5.0, max(0.2, 0.9 * (ratio + 1e-16) ** -0.2))
        h = min(h, circumference / 16.0)

        theta = math.atan2(y[1] - zax, y[0] - rax)
        dtheta = (theta - theta_prev + math.pi) % (2.0 * math.pi) - math.pi
        theta_prev = theta
        theta_cum.append(theta_cum[-1] + dtheta)
        points.append(y.copy())

        # land on the closure angle geometrically: cap the next step so the
        # accumulated winding approaches (not crosses) one full turn
        remaining = 2.0 * math.pi - abs(theta_cum[-1])
        if remaining <= 2.0 * math.pi * 1e-13:
            break
        radius_now = math.hypot(y[0] - rax, y[1] - zax)
        h = min(h, max(0.5 * remaining * radius_now, 1e-15 * circumference))
        if arc > 4.0 * circumference:
            raise OpenFieldLine(
                f"trace at psi_N={psin_cut} ran {arc:.3g} m without closing; "
                "winding stalled (open or X-point limited surface)")

    y_end = tracer.project(y)
    gap = math.hypot(y_end[0] - points[0][0], y_end[1] - points[0][1])
    if gap > 100.0 * eps * max(rax, 1.0):
        raise OpenFieldLine(
            f"trace returned {gap:.3g} m away from its start "
            f"(limit {100.0 * eps * max(rax, 1.0):.3g}); surface is open")

    winding_sign = 1.0 if theta_cum[-1] > 0 else -1.0
    pts = np.array(points[:-1] + [y_end])
    theta_abs = np.abs(np.array(theta_cum[:-1] + [2.0 * math.pi]))
    return _resample_uniform_theta(tracer, pts, theta_abs, winding_sign,
                                   rax, zax, n_points)


def _resample_uniform_theta(tracer, pts, theta_abs, winding_sign,
                            rax, zax, n_points):
    """Uniform poloidal-angle resampling of the traced polyline, with each
    resampled point re-projected onto the level."""
    theta_abs, order = np.unique(theta_abs, return_index=True)
    pts = pts[order]
    radius = np.hypot(pts[:, 0] - rax, pts[:, 1] - zax)
    theta0 = math.atan2(pts[0, 1] - zax, pts[0, 0] - rax)

    t_new = np.linspace(0.0, 2.0 * math.pi, n_points)
    rad_new = np.interp(t_new, theta_abs, radius)
    ang = theta0 + winding_sign * t_new
    r = rax + rad_new * np.cos(ang)
    z = zax + rad_new * np.sin(ang)
    out = np.column_stack([r, z])
    for i in range(out.shape[0]):
        out[i] = tracer.project(out[i])
    out[-1] = out[0]
    return Boundary(r=out[:, 0], z=out[:, 1], closed=True,
                    psin_level=tracer.cut)


def apply_policy(src_boundary: Boundary, pmap: PsiMap,
                 policy: BoundaryPolicy) -> Boundary:
    """asis passes the source boundary through; interp re-traces the
    surface at the policy's psi_N cutoff."""
    if policy.mode == "asis":
        return src_boundary
    return trace_lcms(pmap, psin_cut=policy.psin_cut, eps=policy.eps,
                      n_points=policy.n_points)
