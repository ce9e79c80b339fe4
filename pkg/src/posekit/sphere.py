"""Spherical signals on the Driscoll-Healy grid and their correlations.

Correlations are evaluated by direct quadrature with bilinear (sphere) or
trilinear (SO(3), ZYZ coordinates) interpolation of the rotated template.
An index-aligned fast path is used whenever the output rotation grid is
compatible with the sphere grid; it computes the identical sums.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import lpmv

from . import _fastcorr
from .so3 import RotationGrid, euler_from_rotations

TWO_PI = 2.0 * math.pi


class SphereGrid:
    """Cell-centered 2b x 2b equiangular grid over (alpha, beta).

    Sample (i, j) sits at alpha_i = (i+1/2) * pi/b, beta_j = (j+1/2) * pi/(2b).
    Row weights are exact cell integrals of dx = da sin(b) db / (4 pi) and
    sum to 1 over the whole grid.
    """

    def __init__(self, b: int):
        if b < 2:
            raise ValueError("bandwidth must be >= 2")
        self.b = int(b)
        n = 2 * self.b
        self.alphas = (np.arange(n) + 0.5) * (TWO_PI / n)
        self.betas = (np.arange(n) + 0.5) * (math.pi / n)
        edges = np.arange(n + 1) * (math.pi / n)
        self.beta_weights = (np.cos(edges[:-1]) - np.cos(edges[1:])) / (2.0 * n)

    @property
    def n_side(self) -> int:
        return 2 * self.b

    @property
    def n_samples(self) -> int:
        return 4 * self.b * self.b

    @cached_property
    def directions(self) -> np.ndarray:
        """Unit vectors of every sample, shape (2b, 2b, 3), axes (alpha, beta)."""
        a = self.alphas[:, None]
        bt = self.betas[None, :]
        return np.stack(
            [np.sin(bt) * np.cos(a) * np.ones_like(a * bt),
             np.sin(bt) * np.sin(a),
             np.cos(bt) * np.ones_like(a)], axis=-1)

    def __eq__(self, other) -> bool:
        return isinstance(other, SphereGrid) and other.b == self.b

    def __hash__(self) -> int:
        return hash(("SphereGrid", self.b))

    def __repr__(self) -> str:
        return f"SphereGrid(b={self.b})"


def dh_grid(b: int) -> SphereGrid:
    """Driscoll-Healy style grid with normalized quadrature weights."""
    return SphereGrid(b)


@dataclass(frozen=True)
class SphericalSignal:
    """K-channel signal sampled on a SphereGrid; values shape (K, 2b, 2b)."""

    grid: SphereGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        n = self.grid.n_side
        if v.ndim == 2:
            v = v[None]
        if v.shape[1:] != (n, n):
            raise ValueError(f"values must be (K, {n}, {n}), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("signal values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class RotationGridSignal:
    """K-channel signal on a RotationGrid; values shape (K, na, nb, ng)."""

    grid: RotationGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 3:
            v = v[None]
        if v.shape[1:] != self.grid.shape:
            raise ValueError(f"values must be (K,) + {self.grid.shape}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("signal values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class TriMesh:
    """Triangle mesh in meters."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face indices out of range")
        if len(f):
            e1 = v[f[:, 1]] - v[f[:, 0]]
            e2 = v[f[:, 2]] - v[f[:, 0]]
            areas = 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)
            if np.any(areas <= 1e-12):
                raise ValueError("mesh has degenerate faces")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    def transformed(self, r: np.ndarray, t: np.ndarray | None = None) -> "TriMesh":
        t = np.zeros(3) if t is None else np.asarray(t, dtype=float)
        return TriMesh(self.vertices @ np.asarray(r).T + t, self.faces)


# ---------------------------------------------------------------------------
# Signal operations
# ---------------------------------------------------------------------------


def rotate_signal(r: np.ndarray, f: SphericalSignal) -> SphericalSignal:
    """Rotated signal: output(x) = f(R^-1 x) via bilinear interpolation.

    Rotations aligned with the azimuth lattice reduce to exact sample
    permutations (interpolation fractions snap at 1e-12).
    """
    grid = f.grid
    dirs = grid.directions.reshape(-1, 3)
    q = dirs @ np.asarray(r, dtype=float)  # rows R^-1 x
    alpha = np.arctan2(q[:, 1], q[:, 0])
    beta = np.arctan2(np.hypot(q[:, 0], q[:, 1]), q[:, 2])
    vals = _fastcorr.sample_sphere_bilinear(f.values, alpha, beta)
    n = grid.n_side
    return SphericalSignal(grid, vals.reshape(f.channels, n, n))


def sphere_inner(phi: SphericalSignal, f: SphericalSignal) -> float:
    """Quadrature inner product over samples and channels."""
    if phi.grid != f.grid:
        raise ValueError("signals live on different sphere grids")
    if phi.channels != f.channels:
        raise ValueError("channel count mismatch")
    w = phi.grid.beta_weights[None, None, :]
    return float(np.sum(w * phi.values * f.values))


def s2_correlate(phi: SphericalSignal, f: SphericalSignal, g: RotationGrid) -> RotationGridSignal:
    """Spherical correlation [phi * f](R) over the nodes of g.

    output(R) = sum_x sum_k w(x) phi_k(R^-1 x) f_k(x), phi interpolated
    bilinearly.  Single output channel.
    """
    if phi.grid != f.grid:
        raise ValueError("signals live on different sphere grids")
    if phi.channels != f.channels:
        raise ValueError("channel count mismatch")
    if _fastcorr.s2_aligned(phi.grid.b, g):
        eng = _fastcorr.s2_engine(phi.grid.b, g.n_alpha)
        out = np.zeros(g.shape)
        w = phi.grid.beta_weights[None, :]
        for k in range(phi.channels):
            table = eng.prepare_filter(phi.values[k])
            out += eng.apply(table, w * f.values[k])
        return RotationGridSignal(g, out[None])
    return RotationGridSignal(g, _s2_direct(phi, f, g.rotations.reshape(-1, 3, 3)).reshape(g.shape)[None])


def s2_correlation_values(phi: SphericalSignal, f: SphericalSignal, rotations: np.ndarray) -> np.ndarray:
    """[phi * f](R) evaluated at an arbitrary stack of rotations."""
    if phi.grid != f.grid or phi.channels != f.channels:
        raise ValueError("signals must share grid and channels")
    return _s2_direct(phi, f, np.asarray(rotations, dtype=float).reshape(-1, 3, 3))


def _s2_direct(phi: SphericalSignal, f: SphericalSignal, rots: np.ndarray) -> np.ndarray:
    grid = phi.grid
    dirs = grid.directions.reshape(-1, 3)
    fw = (grid.beta_weights[None, None, :] * f.values).reshape(f.channels, -1)
    out = np.empty(len(rots))
    chunk = max(1, int(2e6 // max(dirs.shape[0], 1)))
    for lo in range(0, len(rots), chunk):
        rc = rots[lo:lo + chunk]
        q = np.einsum("sj,rji->rsi", dirs, rc)  # R^-1 x per rotation
        alpha = np.arctan2(q[..., 1], q[..., 0])
        beta = np.arctan2(np.hypot(q[..., 0], q[..., 1]), q[..., 2])
        vals = _fastcorr.sample_sphere_bilinear(phi.values, alpha.ravel(), beta.ravel())
        vals = vals.reshape(phi.channels, len(rc), -1)
        out[lo:lo + chunk] = np.einsum("krs,ks->r", vals, fw)
    return out


def so3_correlate(phi: RotationGridSignal, f: RotationGridSignal) -> RotationGridSignal:
    """SO(3) correlation over the shared grid of phi and f.

    output(R) = sum_Q sum_k w(Q) phi_k(R^-1 Q) f_k(Q), phi interpolated
    trilinearly in canonical ZYZ coordinates.  Single output channel.
    """
    if phi.grid != f.grid:
        raise ValueError("signals live on different rotation grids")
    if phi.channels != f.channels:
        raise ValueError("channel count mismatch")
    g = phi.grid
    if g.is_cubic:
        eng = _fastcorr.so3_engine(g.n_alpha)
        out = np.zeros(g.shape)
        w = g.beta_node_weights[None, :, None]
        for k in range(phi.channels):
            pf = eng.prepare_filter(phi.values[k])
            out += eng.apply_batch(pf, w * f.values[k])
        return RotationGridSignal(g, out[None])
    return RotationGridSignal(g, _so3_direct(phi, f)[None])


def _so3_direct(phi: RotationGridSignal, f: RotationGridSignal) -> np.ndarray:
    g = phi.grid
    rots = g.rotations.reshape(-1, 3, 3)
    fw = (g.weights[None] * f.values).reshape(f.channels, -1)
    out = np.empty(len(rots))
    chunk = max(1, int(2e6 // max(len(rots), 1)))
    for lo in range(0, len(rots), chunk):
        rc = rots[lo:lo + chunk]
        rel = np.einsum("rji,qjk->rqik", rc, rots)  # R^-1 Q
        alpha, beta, gamma = euler_from_rotations(rel)
        vals = _fastcorr.sample_so3_trilinear(
            phi.values, g, alpha.ravel(), beta.ravel(), gamma.ravel())
        vals = vals.reshape(phi.channels, len(rc), -1)
        out[lo:lo + chunk] = np.einsum("krq,kq->r", vals, fw)
    return out.reshape(g.shape)


# ---------------------------------------------------------------------------
# Geometry to sphere
# ---------------------------------------------------------------------------


def raycast_sphere(mesh: TriMesh, origin, grid: SphereGrid | None = None,
                   b: int = 20) -> SphericalSignal:
    """Cast a ray per grid direction from origin to the first mesh hit.

    Channels: (hit distance in meters, |cos| of the incidence angle between
    ray and face normal).  Misses encode (0, 0).
    """
    if len(mesh.faces) == 0:
        raise ValueError("mesh has no faces")
    grid = grid or dh_grid(b)
    origin = np.asarray(origin, dtype=float).reshape(3)
    dirs = grid.directions.reshape(-1, 3)
    v0 = mesh.vertices[mesh.faces[:, 0]]
    e1 = mesh.vertices[mesh.faces[:, 1]] - v0
    e2 = mesh.vertices[mesh.faces[:, 2]] - v0
    normals = np.cross(e1, e2)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    s = origin[None, :] - v0

    n_rays = dirs.shape[0]
    best_t = np.full(n_rays, np.inf)
    best_cos = np.zeros(n_rays)
    eps = 1e-12
    edge_tol = 1e-9
    chunk = max(1, int(4e6 // max(len(v0), 1)))
    for lo in range(0, n_rays, chunk):
        d = dirs[lo:lo + chunk]
        h = np.cross(d[:, None, :], e2[None, :, :])
        a = np.einsum("fj,rfj->rf", e1, h)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(np.abs(a) > eps, 1.0 / a, 0.0)
            u = inv * np.einsum("fj,rfj->rf", s, h)
            q = np.cross(s, e1)[None, :, :]
            v = inv * np.einsum("rj,rfj->rf", d, np.broadcast_to(q, (len(d),) + q.shape[1:]))
            t = inv * np.einsum("fj,rfj->rf", e2, np.broadcast_to(q, (len(d),) + q.shape[1:]))
        hit = ((np.abs(a) > eps) & (u >= -edge_tol) & (v >= -edge_tol)
               & (u + v <= 1.0 + edge_tol) & (t > eps))
        t = np.where(hit, t, np.inf)
        fidx = np.argmin(t, axis=1)
        tmin = t[np.arange(len(d)), fidx]
        found = np.isfinite(tmin)
        rows = lo + np.nonzero(found)[0]
        best_t[rows] = tmin[found]
        best_cos[rows] = np.abs(np.einsum("rj,rj->r", d[found], normals[fidx[found]]))
    missed = ~np.isfinite(best_t)
    best_t[missed] = 0.0
    best_cos[missed] = 0.0
    n = grid.n_side
    return SphericalSignal(grid, np.stack([best_t.reshape(n, n), best_cos.reshape(n, n)]))


def project_hemisphere(feature_map: np.ndarray, mask: np.ndarray,
                       grid: SphereGrid) -> SphericalSignal:
    """Warp the masked bounding square of an image onto the front hemisphere.

    Grid sample (alpha, beta <= pi/2) reads the image at
    (cx + rho sin(beta) cos(alpha), cy + rho sin(beta) sin(alpha)) with rho
    half the bounding-square side, so an in-plane rotation of the content
    becomes a cyclic alpha shift.  The back hemisphere is zero.  Values
    outside the mask contribute zero.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask is empty")
    fm = np.asarray(feature_map, dtype=float)
    if fm.ndim == 2:
        fm = fm[:, :, None]
    if fm.shape[:2] != mask.shape:
        raise ValueError("feature map and mask shapes differ")
    ys, xs = np.nonzero(mask)
    x0, x1 = xs.min(), xs.max()
    y0, y1 = ys.min(), ys.max()
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    rho = 0.5 * max(x1 - x0, y1 - y0)
    if rho == 0.0:
        rho = 0.5

    masked = fm * mask[:, :, None]
    n = grid.n_side
    front = grid.betas <= math.pi / 2.0 + 1e-12
    a = grid.alphas[:, None]
    bt = grid.betas[None, front]
    px = cx + rho * np.sin(bt) * np.cos(a)
    py = cy + rho * np.sin(bt) * np.sin(a)
    vals = _bilinear_image(masked, px.ravel(), py.ravel())
    out = np.zeros((fm.shape[2], n, n))
    out[:, :, front] = vals.reshape(n, front.sum(), fm.shape[2]).transpose(2, 0, 1)
    return SphericalSignal(grid, out)


def _bilinear_image(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear sample of an (H, W, C) image at continuous (x, y); edge clamp."""
    h, w = img.shape[:2]
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, w - 2) if w > 1 else np.zeros(len(x), np.int64)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, h - 2) if h > 1 else np.zeros(len(y), np.int64)
    fx = x - x0
    fy = y - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    out = ((1 - fx)[:, None] * (1 - fy)[:, None] * img[y0, x0]
           + fx[:, None] * (1 - fy)[:, None] * img[y0, x1]
           + (1 - fx)[:, None] * fy[:, None] * img[y1, x0]
           + fx[:, None] * fy[:, None] * img[y1, x1])
    return out


# ---------------------------------------------------------------------------
# Band-limited test/filter constructors
# ---------------------------------------------------------------------------


def bandlimited_sphere_signal(grid: SphereGrid, channels: int, max_degree: int,
                              rng: np.random.Generator,
                              positive: bool = False) -> SphericalSignal:
    """Random smooth signal from explicit low-order spherical harmonics.

    positive=True shifts each channel by a constant (a degree-0 term, so the
    signal stays band-limited) until its minimum clears zero; useful for
    filters that must survive rectifiers on non-negative inputs.
    """
    n = grid.n_side
    a = grid.alphas[:, None]
    cb = np.cos(grid.betas)[None, :]
    vals = np.zeros((channels, n, n))
    for ch in range(channels):
        acc = np.zeros((n, n))
        for l in range(max_degree + 1):
            for m in range(l + 1):
                basis = lpmv(m, l, cb)
                scale = 1.0 / (1.0 + l * (l + 1))
                if m == 0:
                    acc += rng.standard_normal() * scale * basis * np.ones_like(a)
                else:
                    acc += scale * basis * (
                        rng.standard_normal() * np.cos(m * a)
                        + rng.standard_normal() * np.sin(m * a))
        if positive:
            acc += 0.1 * (acc.max() - acc.min()) - acc.min()
        vals[ch] = acc
    return SphericalSignal(grid, vals)


def smooth_rotation_filter(grid: RotationGrid, channels: int,
                           rng: np.random.Generator, max_order: int = 2,
                           positive: bool = False) -> RotationGridSignal:
    """Random smooth (low angular order) signal on a rotation grid."""
    a = grid.alphas[:, None, None]
    cb = np.cos(grid.betas)[None, :, None]
    g = grid.gammas[None, None, :]
    vals = np.zeros((channels,) + grid.shape)
    for ch in range(channels):
        acc = np.zeros(grid.shape)
        for p in range(max_order + 1):
            for q in range(max_order + 1):
                for l in range(max_order + 1):
                    scale = 1.0 / (1.0 + p + q + 2 * l)
                    pa = np.cos(p * a) if rng.random() < 0.5 else np.sin(p * a + (0 if p else 1e-3))
                    qg = np.cos(q * g) if rng.random() < 0.5 else np.sin(q * g + (0 if q else 1e-3))
                    acc += rng.standard_normal() * scale * pa * lpmv(0, l, cb) * qg
        if positive:
            acc += 0.1 * (acc.max() - acc.min()) - acc.min()
        vals[ch] = acc
    return RotationGridSignal(grid, vals)
