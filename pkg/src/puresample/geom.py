"""Directions, the hemisphere/disk parameterization, and base distributions.

Directions are numpy arrays of shape ``(..., 3)`` holding unit vectors with
``z >= 0`` for the upper hemisphere. Disk points are arrays of shape
``(..., 2)``. The hemisphere <-> disk map is the orthographic projection
``(x, y, z) -> (x, y)``, whose area measure on the unit disk equals the
projected solid angle, so a density stored per unit disk area is already a
density per projected solid angle.
"""

from __future__ import annotations

import numpy as np

from .rng import Rng

UNIT_TOL = 1e-6
INV_TWO_PI = 1.0 / (2.0 * np.pi)


class OffManifoldError(ValueError):
    """Raised for points outside the closed unit disk or below the horizon."""


def direction(x: float, y: float, z: float) -> np.ndarray:
    """Construct a validated upper-hemisphere unit direction."""
    d = np.array([x, y, z], dtype=np.float64)
    n = np.linalg.norm(d)
    if abs(n - 1.0) > UNIT_TOL:
        raise ValueError(f"direction is not unit length (|d| = {n:.8f})")
    if z < 0.0:
        raise OffManifoldError("direction lies in the lower hemisphere (z < 0)")
    return d


def normalized(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=-1, keepdims=v.ndim > 1)


def dir_to_disk(d) -> np.ndarray:
    """Orthographic projection of upper-hemisphere directions to the disk."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d[..., 2] < -UNIT_TOL):
        raise OffManifoldError("dir_to_disk requires z >= 0")
    return d[..., :2].copy()


def disk_to_dir(p) -> np.ndarray:
    """Lift disk points to the upper hemisphere; inverse of dir_to_disk."""
    p = np.asarray(p, dtype=np.float64)
    r2 = np.sum(p * p, axis=-1)
    if np.any(r2 > 1.0 + 1e-9):
        raise OffManifoldError("disk point lies outside the closed unit disk")
    z = np.sqrt(np.maximum(0.0, 1.0 - r2))
    return np.concatenate([p, z[..., None]], axis=-1)


def pdf_projected_to_solid(rho_proj, d):
    """Convert a density per projected solid angle to one per solid angle."""
    d = np.asarray(d, dtype=np.float64)
    return np.asarray(rho_proj, dtype=np.float64) * d[..., 2]


def sample_uniform_hemisphere(rng: Rng, n: int | None = None) -> np.ndarray:
    """Uniform (1 / 2pi per solid angle) directions on the upper hemisphere."""
    m = 1 if n is None else n
    z = rng.uniform(m)
    phi = 2.0 * np.pi * rng.uniform(m)
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    d = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
    return d[0] if n is None else d


def stratified_hemisphere(n_rings: int, n_sectors: int) -> np.ndarray:
    """Deterministic directions at equal-projected-area disk cell centers."""
    ks = (np.arange(n_rings) + 0.5) / n_rings
    radii = np.sqrt(ks)
    phis = 2.0 * np.pi * (np.arange(n_sectors) + 0.5) / n_sectors
    r, phi = np.meshgrid(radii, phis, indexing="ij")
    pts = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=-1).reshape(-1, 2)
    return disk_to_dir(pts)


# -- 2D standard Gaussian (flow base distribution) ---------------------------


def gaussian2d_sample(rng: Rng, n: int | None = None) -> np.ndarray:
    m = 1 if n is None else n
    x = rng.normal((m, 2))
    return x[0] if n is None else x


def gaussian2d_pdf(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    r2 = np.sum(p * p, axis=-1)
    return np.exp(-0.5 * r2) * INV_TWO_PI


# -- real spherical harmonics, degrees 0..4 (25 values) ----------------------

# Orthonormal real basis, band order l = 0..4, within a band m = -l..l.
# Constants are the usual closed forms sqrt((2l+1)/(4 pi) * ...).

_C = {
    "l0": 0.28209479177387814,
    "l1": 0.4886025119029199,
    "l2m2": 1.0925484305920792,
    "l2m0": 0.31539156525252005,
    "l2p2": 0.5462742152960396,
    "l3m3": 0.5900435899266435,
    "l3m2": 2.890611442640554,
    "l3m1": 0.4570457994644658,
    "l3m0": 0.3731763325901154,
    "l3p2": 1.445305721320277,
    "l4m4": 2.5033429417967046,
    "l4m3": 1.7701307697799304,
    "l4m2": 0.9461746957575601,
    "l4m1": 0.6690465435572892,
    "l4m0": 0.10578554691520431,
    "l4p2": 0.47308734787878004,
    "l4p4": 0.6258357354491761,
}


def sh_encode(d) -> np.ndarray:
    """Real spherical harmonics Y_l^m for l <= 4 at unit direction(s) d.

    Returns 25 coefficients per direction, ordered by ascending l and,
    within each band, ascending m from -l to +l.
    """
    d = np.asarray(d, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    x2, y2, z2 = x * x, y * y, z * z
    out = np.empty(d.shape[:-1] + (25,), dtype=np.float64)
    C = _C
    out[..., 0] = C["l0"]

    out[..., 1] = C["l1"] * y
    out[..., 2] = C["l1"] * z
    out[..., 3] = C["l1"] * x

    out[..., 4] = C["l2m2"] * x * y
    out[..., 5] = C["l2m2"] * y * z
    out[..., 6] = C["l2m0"] * (3.0 * z2 - 1.0)
    out[..., 7] = C["l2m2"] * x * z
    out[..., 8] = C["l2p2"] * (x2 - y2)

    out[..., 9] = C["l3m3"] * y * (3.0 * x2 - y2)
    out[..., 10] = C["l3m2"] * x * y * z
    out[..., 11] = C["l3m1"] * y * (5.0 * z2 - 1.0)
    out[..., 12] = C["l3m0"] * z * (5.0 * z2 - 3.0)
    out[..., 13] = C["l3m1"] * x * (5.0 * z2 - 1.0)
    out[..., 14] = C["l3p2"] * z * (x2 - y2)
    out[..., 15] = C["l3m3"] * x * (x2 - 3.0 * y2)

    out[..., 16] = C["l4m4"] * x * y * (x2 - y2)
    out[..., 17] = C["l4m3"] * y * z * (3.0 * x2 - y2)
    out[..., 18] = C["l4m2"] * x * y * (7.0 * z2 - 1.0)
    out[..., 19] = C["l4m1"] * y * z * (7.0 * z2 - 3.0)
    out[..., 20] = C["l4m0"] * (35.0 * z2 * z2 - 30.0 * z2 + 3.0)
    out[..., 21] = C["l4m1"] * x * z * (7.0 * z2 - 3.0)
    out[..., 22] = C["l4p2"] * (x2 - y2) * (7.0 * z2 - 1.0)
    out[..., 23] = C["l4m3"] * x * z * (x2 - 3.0 * y2)
    out[..., 24] = C["l4p4"] * (x2 * x2 - 6.0 * x2 * y2 + y2 * y2)
    return out
