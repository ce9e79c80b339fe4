"""Rotations, ZYZ Euler angles and the discretized rotation grid.

Rotations are plain 3x3 numpy arrays (proper orthogonal). The ZYZ
convention used throughout is R = Rz(alpha) @ Ry(beta) @ Rz(gamma) with
alpha, gamma in [0, 2*pi) and beta in [0, pi].
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

TWO_PI = 2.0 * math.pi

# Below this |sin(beta)| the ZYZ extraction switches to the gimbal branch
# (alpha absorbs the full z-angle, gamma = 0).  Grid geometry keeps all
# legitimate queries either < 1e-7 or > 1e-3 away, so the exact value is
# uncritical as long as every consumer shares it.
GIMBAL_EPS = 1e-6


class InvalidRotationError(ValueError):
    pass


@dataclass(frozen=True)
class EulerZYZ:
    """ZYZ Euler angles in radians: alpha, gamma in [0, 2pi), beta in [0, pi]."""

    alpha: float
    beta: float
    gamma: float

    def to_json_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma}


def _rz(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _ry(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_from_euler_zyz(e: EulerZYZ | tuple[float, float, float]) -> np.ndarray:
    """Build Rz(alpha) @ Ry(beta) @ Rz(gamma)."""
    if isinstance(e, EulerZYZ):
        a, b, g = e.alpha, e.beta, e.gamma
    else:
        a, b, g = e
    if not (math.isfinite(a) and math.isfinite(b) and math.isfinite(g)):
        raise ValueError("euler angles must be finite")
    return _rz(a) @ _ry(b) @ _rz(g)


def euler_zyz_matrices(alpha: np.ndarray, beta: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Vectorized rotation_from_euler_zyz; broadcasts to (..., 3, 3)."""
    alpha, beta, gamma = np.broadcast_arrays(alpha, beta, gamma)
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    cg, sg = np.cos(gamma), np.sin(gamma)
    out = np.empty(alpha.shape + (3, 3))
    out[..., 0, 0] = ca * cb * cg - sa * sg
    out[..., 0, 1] = -ca * cb * sg - sa * cg
    out[..., 0, 2] = ca * sb
    out[..., 1, 0] = sa * cb * cg + ca * sg
    out[..., 1, 1] = -sa * cb * sg + ca * cg
    out[..., 1, 2] = sa * sb
    out[..., 2, 0] = -sb * cg
    out[..., 2, 1] = sb * sg
    out[..., 2, 2] = cb
    return out


def euler_from_rotation(r: np.ndarray) -> EulerZYZ:
    """Canonical ZYZ extraction.

    At the gimbal singularities (beta near 0 or pi) the full z-rotation is
    assigned to alpha and gamma is set to 0; this rule is shared by every
    interpolation consumer so degenerate queries stay deterministic.
    """
    a, b, g = euler_from_rotations(r[None])
    return EulerZYZ(float(a[0]), float(b[0]), float(g[0]))


def euler_from_rotations(r: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized canonical ZYZ extraction for an (..., 3, 3) array."""
    r = np.asarray(r, dtype=float)
    sb = np.hypot(np.hypot(r[..., 0, 2], r[..., 1, 2]), 0.0)
    beta = np.arctan2(sb, r[..., 2, 2])
    regular = sb >= GIMBAL_EPS
    alpha = np.where(regular, np.arctan2(r[..., 1, 2], r[..., 0, 2]), 0.0)
    gamma = np.where(regular, np.arctan2(r[..., 2, 1], -r[..., 2, 0]), 0.0)
    # gimbal: R ~ Rz(alpha) @ Ry(0 or pi); recover alpha from the upper block
    near_zero = (~regular) & (r[..., 2, 2] > 0.0)
    near_pi = (~regular) & (r[..., 2, 2] <= 0.0)
    if np.any(near_zero):
        alpha = np.where(near_zero, np.arctan2(r[..., 1, 0], r[..., 0, 0]), alpha)
    if np.any(near_pi):
        alpha = np.where(near_pi, np.arctan2(-r[..., 1, 0], -r[..., 0, 0]), alpha)
    alpha = np.mod(alpha, TWO_PI)
    gamma = np.mod(gamma, TWO_PI)
    return alpha, beta, gamma


def compose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.asarray(a) @ np.asarray(b)


def inverse(r: np.ndarray) -> np.ndarray:
    return np.asarray(r).T.copy()


def geodesic_distance(a: np.ndarray, b: np.ndarray) -> float:
    """arccos((trace(a^T b) - 1) / 2), clamped against round-off.

    Small angles are evaluated through the equivalent
    2 asin(|a - b|_F / (2 sqrt(2))) form, which resolves distances below
    the ~1e-8 conditioning floor of arccos near 1.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = min(1.0, max(-1.0, (float(np.trace(a.T @ b)) - 1.0) / 2.0))
    if c > 0.9:
        s = np.linalg.norm(a - b) / (2.0 * math.sqrt(2.0))
        return 2.0 * math.asin(min(1.0, s))
    return math.acos(c)


def geodesic_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Broadcast geodesic distance for stacks of rotations."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t = np.einsum("...ij,...ij->...", a, b)
    c = np.clip((t - 1.0) / 2.0, -1.0, 1.0)
    big = np.arccos(c)
    diff = np.sqrt(np.sum((a - b) ** 2, axis=(-2, -1))) / (2.0 * math.sqrt(2.0))
    small = 2.0 * np.arcsin(np.minimum(diff, 1.0))
    return np.where(c > 0.9, small, big)


def validate_rotation(r: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        raise InvalidRotationError(f"rotation must be 3x3, got {r.shape}")
    if not np.all(np.isfinite(r)):
        raise InvalidRotationError("rotation has non-finite entries")
    if np.max(np.abs(r.T @ r - np.eye(3))) > tol:
        raise InvalidRotationError("matrix is not orthogonal within tolerance")
    if abs(np.linalg.det(r) - 1.0) > tol:
        raise InvalidRotationError("determinant is not +1 within tolerance")
    return r


def quat_from_rotation(r: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z); sign convention w >= 0."""
    r = np.asarray(r, dtype=float)
    t = np.trace(r)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s,
                      (r[1, 0] - r[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(max(1.0 + r[i, i] - r[j, j] - r[k, k], 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (r[j, i] + r[i, j]) / s
        q[1 + k] = (r[k, i] + r[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def rotation_from_quat(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation via normalized quaternion."""
    q = rng.standard_normal(4)
    return rotation_from_quat(q)


def rotation_to_json(r: np.ndarray) -> list[float]:
    """Row-major 9-element list."""
    return [float(v) for v in np.asarray(r, dtype=float).reshape(9)]


def rotation_from_json(vals) -> np.ndarray:
    arr = np.asarray(vals, dtype=float).reshape(3, 3)
    return validate_rotation(arr, tol=1e-6)


class RotationGrid:
    """Cell-centered ZYZ grid over SO(3).

    Node (i, j, k) sits at alpha_i = (i+1/2) * 2pi/n_alpha,
    beta_j = (j+1/2) * pi/n_beta, gamma_k = (k+1/2) * 2pi/n_gamma.  Node
    weights are the exact cell integrals of dQ = da sin(b) db dg / (8 pi^2),
    so they depend on j only and sum to 1.
    """

    def __init__(self, n_alpha: int, n_beta: int, n_gamma: int):
        if min(n_alpha, n_beta, n_gamma) < 2:
            raise ValueError("rotation grid needs at least 2 nodes per axis")
        self.n_alpha = int(n_alpha)
        self.n_beta = int(n_beta)
        self.n_gamma = int(n_gamma)
        self.alphas = (np.arange(self.n_alpha) + 0.5) * (TWO_PI / self.n_alpha)
        self.betas = (np.arange(self.n_beta) + 0.5) * (math.pi / self.n_beta)
        self.gammas = (np.arange(self.n_gamma) + 0.5) * (TWO_PI / self.n_gamma)
        edges = np.arange(self.n_beta + 1) * (math.pi / self.n_beta)
        # per-node weight as a function of the beta row; alpha/gamma cells are uniform
        self.beta_node_weights = (np.cos(edges[:-1]) - np.cos(edges[1:])) / (
            2.0 * self.n_alpha * self.n_gamma
        )

    @property
    def n_nodes(self) -> int:
        return self.n_alpha * self.n_beta * self.n_gamma

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_alpha, self.n_beta, self.n_gamma)

    @property
    def is_cubic(self) -> bool:
        return self.n_alpha == self.n_beta == self.n_gamma

    @cached_property
    def weights(self) -> np.ndarray:
        """Full (n_alpha, n_beta, n_gamma) weight array; sums to 1."""
        w = np.broadcast_to(
            self.beta_node_weights[None, :, None], self.shape
        )
        return np.ascontiguousarray(w)

    @cached_property
    def rotations(self) -> np.ndarray:
        """All node rotations, shape (n_alpha, n_beta, n_gamma, 3, 3)."""
        a = self.alphas[:, None, None]
        b = self.betas[None, :, None]
        g = self.gammas[None, None, :]
        return euler_zyz_matrices(
            np.broadcast_to(a, self.shape),
            np.broadcast_to(b, self.shape),
            np.broadcast_to(g, self.shape),
        )

    def node_rotation(self, i: int, j: int, k: int) -> np.ndarray:
        return rotation_from_euler_zyz((self.alphas[i], self.betas[j], self.gammas[k]))

    def nearest_node(self, r: np.ndarray) -> tuple[int, int, int]:
        """Flattened-lexicographic-first geodesically nearest node."""
        d = geodesic_distances(self.rotations, np.asarray(r))
        idx = int(np.argmin(d.reshape(-1)))
        return np.unravel_index(idx, self.shape)  # type: ignore[return-value]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, RotationGrid)
            and self.shape == other.shape
        )

    def __hash__(self) -> int:
        return hash(("RotationGrid", self.shape))

    def __repr__(self) -> str:
        return f"RotationGrid(n_alpha={self.n_alpha}, n_beta={self.n_beta}, n_gamma={self.n_gamma})"


def so3_grid(n: int) -> RotationGrid:
    """Cubic n x n x n rotation grid (the paper-style angle grid)."""
    if n < 2:
        raise ValueError("grid size must be >= 2")
    return RotationGrid(n, n, n)
