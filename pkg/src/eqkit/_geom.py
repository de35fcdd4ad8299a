"""Planar geometry helpers shared by the flux-surface and solver modules."""

from __future__ import annotations

import numpy as np


def points_in_polygon(px, pz, poly_r, poly_z) -> np.ndarray:
    """Even-odd (ray casting) point-in-polygon test, vectorized over points.

    The polygon may or may not repeat its first vertex; both work.
    """
    px = np.asarray(px, float).ravel()
    pz = np.asarray(pz, float).ravel()
    r = np.asarray(poly_r, float)
    z = np.asarray(poly_z, float)
    if r[0] == r[-1] and z[0] == z[-1]:
        r, z = r[:-1], z[:-1]
    inside = np.zeros(px.shape, dtype=bool)
    n = r.size
    j = n - 1
    for i in range(n):
        zi, zj = z[i], z[j]
        ri, rj = r[i], r[j]
        crosses = (zi > pz) != (zj > pz)
        if np.any(crosses):
            x_cross = (rj - ri) * (pz[crosses] - zi) / (zj - zi) + ri
            flip = px[crosses] < x_cross
            idx = np.flatnonzero(crosses)[flip]
            inside[idx] = ~inside[idx]
        j = i
    return inside


def polyline_distance(px, pz, poly_r, poly_z) -> np.ndarray:
    """Distance from each point to the nearest polyline segment."""
    px = np.asarray(px, float).ravel()
    pz = np.asarray(pz, float).ravel()
    r = np.asarray(poly_r, float)
    z = np.asarray(poly_z, float)
    ar, az = r[:-1], z[:-1]
    dr, dz = np.diff(r), np.diff(z)
    seg2 = dr ** 2 + dz ** 2
    seg2[seg2 == 0.0] = 1e-300
    best = np.full(px.shape, np.inf)
    # chunk over points to bound the (n_points x n_segments) temporary
    chunk = max(1, int(2e6 / max(1, ar.size)))
    for s in range(0, px.size, chunk):
        e = min(px.size, s + chunk)
        wx = px[s:e, None] - ar[None, :]
        wz = pz[s:e, None] - az[None, :]
        t = np.clip((wx * dr + wz * dz) / seg2, 0.0, 1.0)
        dx = wx - t * dr
        dy = wz - t * dz
        best[s:e] = np.sqrt(np.min(dx ** 2 + dy ** 2, axis=1))
    return best


def winding_number(px, pz, path_r, path_z) -> float:
    """Total winding of a closed path about the point, in turns."""
    theta = np.arctan2(np.asarray(path_z, float) - pz,
                       np.asarray(path_r, float) - px)
    dtheta = np.diff(theta)
    dtheta = (dtheta + np.pi) % (2.0 * np.pi) - np.pi
    return float(np.sum(dtheta) / (2.0 * np.pi))
