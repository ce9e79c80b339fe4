"""Internal correlation engines.

Direct quadrature correlation is O(outputs x samples) with one interpolated
lookup per term.  When the output rotation grid divides the source grid
(always true for the cubic paper-scale grids), the lookup angles decompose
into per-(row, lattice-offset) tables plus exact integer index shifts in the
output alpha/gamma coordinates, so a correlation collapses to one gather
pass over the filter plus a dense GEMM.  Both paths evaluate the identical
interpolation rule; tests pin them against nested-loop references.

Gimbal handling: ZYZ coordinates of a near-identity (or near-pi flip)
relative rotation are canonicalized by posekit.so3.euler_from_rotations
(gamma = 0, alpha takes the whole z-angle).  The aligned tables detect the
grid pairs that hit those fibers exactly and route them through the same
canonical rule, otherwise the table decomposition and a direct evaluation
would interpolate at different points of the same fiber.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .so3 import RotationGrid, euler_from_rotations, euler_zyz_matrices

TWO_PI = 2.0 * math.pi
# fractional interpolation positions this close to a node collapse onto it,
# making grid-aligned rotations exact permutations
SNAP = 1e-12
# sin(beta) below this marks a structurally gimbal table entry
TABLE_GIMBAL_EPS = 1e-7


def _split_position(pos: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """floor/frac of interpolation positions with snapping to exact nodes."""
    i0 = np.floor(pos)
    frac = pos - i0
    hi = frac > 1.0 - SNAP
    i0 = i0 + hi
    frac = np.where(hi, 0.0, frac)
    frac[frac < SNAP] = 0.0
    return i0.astype(np.int64), frac


def _clamped_beta_position(beta: np.ndarray, step: float, n_rows: int):
    """Beta has no wraparound: clamp to the first/last row pair."""
    v = beta / step - 0.5
    j0, fb = _split_position(v)
    low = j0 < 0
    j0 = np.where(low, 0, j0)
    fb = np.where(low, 0.0, fb)
    high = j0 > n_rows - 2
    fb = np.where(high, 1.0, fb)
    j0 = np.where(high, n_rows - 2, j0)
    return j0, fb


def sample_sphere_bilinear(values: np.ndarray, alpha_q: np.ndarray, beta_q: np.ndarray) -> np.ndarray:
    """Bilinear lookup on a cell-centered (K, 2b, 2b) sphere signal.

    Alpha wraps around, beta clamps at the pole rows.
    """
    k, n_a, n_b = values.shape
    da = TWO_PI / n_a
    db = math.pi / n_b
    u = np.mod(alpha_q, TWO_PI) / da - 0.5
    i0, fa = _split_position(u)
    i0 = np.mod(i0, n_a)
    i1 = np.mod(i0 + 1, n_a)
    j0, fb = _clamped_beta_position(beta_q, db, n_b)
    j1 = j0 + 1
    v00 = values[:, i0, j0]
    v10 = values[:, i1, j0]
    v01 = values[:, i0, j1]
    v11 = values[:, i1, j1]
    return ((1 - fa) * (1 - fb) * v00 + fa * (1 - fb) * v10
            + (1 - fa) * fb * v01 + fa * fb * v11)


def sample_so3_trilinear(values: np.ndarray, grid: RotationGrid,
                         alpha_q: np.ndarray, beta_q: np.ndarray,
                         gamma_q: np.ndarray) -> np.ndarray:
    """Trilinear lookup on a (K, na, nb, ng) rotation-grid signal.

    Alpha and gamma wrap around, beta clamps.
    """
    na, nb, ng = grid.shape
    da = TWO_PI / na
    db = math.pi / nb
    dg = TWO_PI / ng
    u = np.mod(alpha_q, TWO_PI) / da - 0.5
    i0, fa = _split_position(u)
    i0 = np.mod(i0, na)
    i1 = np.mod(i0 + 1, na)
    j0, fb = _clamped_beta_position(beta_q, db, nb)
    j1 = j0 + 1
    w = np.mod(gamma_q, TWO_PI) / dg - 0.5
    k0, fc = _split_position(w)
    k0 = np.mod(k0, ng)
    k1 = np.mod(k0 + 1, ng)
    out = np.zeros((values.shape[0],) + alpha_q.shape)
    for ii, wa in ((i0, 1 - fa), (i1, fa)):
        for jj, wb in ((j0, 1 - fb), (j1, fb)):
            for kk, wc in ((k0, 1 - fc), (k1, fc)):
                out += wa * wb * wc * values[:, ii, jj, kk]
    return out


def relative_euler(rot_out: np.ndarray, rot_in: np.ndarray):
    """Canonical ZYZ angles of R_out^-1 @ R_in (broadcasting stacks)."""
    rel = np.swapaxes(rot_out, -1, -2) @ rot_in
    return euler_from_rotations(rel)


# ---------------------------------------------------------------------------
# Aligned S^2 engine
# ---------------------------------------------------------------------------


class S2Engine:
    """Aligned-lattice S^2 correlation onto a cubic rotation grid.

    Valid when m = 2b / n is an even integer; the azimuth-difference lattice
    then never touches a pole and every output gamma shift is an exact
    integer number of sphere-azimuth steps.
    """

    def __init__(self, b: int, n: int):
        two_b = 2 * b
        if two_b % n != 0 or ((two_b // n) % 2) != 0:
            raise ValueError(f"S2Engine requires even 2b/n, got b={b}, n={n}")
        self.b = b
        self.n = n
        self.m = two_b // n
        ds = TWO_PI / two_b

        t = np.arange(two_b)
        a_lat = ds * (t + 0.5 * (1 - self.m))  # azimuth-difference lattice
        beta_x = (np.arange(two_b) + 0.5) * (math.pi / two_b)
        beta_out = (np.arange(n) + 0.5) * (math.pi / n)

        # y = Ry(-beta_out) Rz(a) x(0, beta_x), tabulated over (t, jx, j)
        sa, ca = np.sin(a_lat), np.cos(a_lat)
        sx, cx = np.sin(beta_x), np.cos(beta_x)
        sj, cj = np.sin(beta_out), np.cos(beta_out)
        T, X, J = np.meshgrid(np.arange(two_b), np.arange(two_b), np.arange(n), indexing="ij")
        y1 = cj[J] * sx[X] * ca[T] - sj[J] * cx[X]
        y2 = sx[X] * sa[T]
        y3 = sj[J] * sx[X] * ca[T] + cj[J] * cx[X]
        r_xy = np.hypot(y1, y2)
        if np.min(r_xy) < 1e-9:
            raise AssertionError("aligned S2 table hit a pole; lattice invariant broken")
        alpha_y = np.arctan2(y2, y1)
        beta_y = np.arctan2(r_xy, y3)

        u0 = np.mod(alpha_y, TWO_PI) / ds - 0.5 - 0.5 * self.m
        i0, fa = _split_position(u0)
        j0, fb = _clamped_beta_position(beta_y, math.pi / two_b, two_b)

        shift = (np.arange(n) * self.m)  # gamma_k index shift
        corners = []
        for di, wa in ((0, 1 - fa), (1, fa)):
            for dj, wb in ((0, 1 - fb), (1, fb)):
                ai = np.mod(i0 + di, two_b)
                flat = (np.mod(ai[..., None] - shift, two_b) * two_b
                        + (j0 + dj)[..., None])
                corners.append(((wa * wb), flat.astype(np.int32)))
        self._corners = corners
        # forward gather: F2[i, t, jx] = Fw[(t + m i) % 2b, jx]
        self._row_idx = np.mod(np.arange(two_b)[None, :] + self.m * np.arange(n)[:, None], two_b)

    def prepare_filter(self, phi: np.ndarray) -> np.ndarray:
        """Gather table G[t, jx, j, k] for a single-channel (2b, 2b) filter."""
        two_b, n = 2 * self.b, self.n
        flat = phi.reshape(-1)
        g = np.zeros((two_b, two_b, n, n))
        for w, idx in self._corners:
            g += w[..., None] * flat[idx]
        return g.reshape(two_b * two_b, n * n)

    def apply(self, g_table: np.ndarray, f_weighted: np.ndarray) -> np.ndarray:
        """Correlate a weighted (2b, 2b) signal against a prepared filter."""
        f2 = f_weighted[self._row_idx]  # (n, 2b, 2b)
        out = f2.reshape(self.n, -1) @ g_table
        return out.reshape(self.n, self.n, self.n)


# ---------------------------------------------------------------------------
# Aligned SO(3) engine
# ---------------------------------------------------------------------------


class _SpecialTriple:
    """Grid pair class whose relative rotation sits on a gimbal fiber."""

    __slots__ = ("kind", "t", "j", "jq", "i0", "fa")

    def __init__(self, kind: str, t: int, j: int, jq: int, i0: int, fa: float):
        self.kind = kind
        self.t = t
        self.j = j
        self.jq = jq
        self.i0 = i0
        self.fa = fa


class PreparedSo3Filter:
    __slots__ = ("g_table", "special_vecs")

    def __init__(self, g_table, special_vecs):
        self.g_table = g_table
        self.special_vecs = special_vecs


class So3Engine:
    """Aligned-lattice SO(3) autocorrelation engine on a cubic n-grid."""

    def __init__(self, n: int):
        self.n = n
        delta = TWO_PI / n
        dbeta = math.pi / n
        betas = (np.arange(n) + 0.5) * dbeta
        a_lat = np.arange(n) * delta

        # M[t, j, jq] = Ry(-beta_j) Rz(a_t) Ry(beta_jq)
        ry_neg = euler_zyz_matrices(np.zeros(n), -betas, np.zeros(n))
        ry_pos = euler_zyz_matrices(np.zeros(n), betas, np.zeros(n))
        rz = euler_zyz_matrices(a_lat, np.zeros(n), np.zeros(n))
        m_all = np.einsum("jab,tbc,qcd->tjqad", ry_neg, rz, ry_pos)
        alpha_m, beta_m, gamma_m = euler_from_rotations(m_all)

        sin_bm = np.sin(beta_m)
        special_mask = np.minimum(beta_m, math.pi - beta_m) < TABLE_GIMBAL_EPS
        regular_sin = sin_bm[~special_mask]
        if regular_sin.size and np.min(regular_sin) < 1e-4:
            raise AssertionError("SO3 table has a near-gimbal entry outside the structural set")

        u0 = np.mod(alpha_m, TWO_PI) / delta - 1.0
        i0, fa = _split_position(u0)
        j0, fb = _clamped_beta_position(beta_m, dbeta, n)
        w0 = np.mod(gamma_m, TWO_PI) / delta
        k0, fc = _split_position(w0)

        zero_w = special_mask.astype(float)
        corner_data = []
        for di, wa in ((0, 1 - fa), (1, fa)):
            for dj, wb in ((0, 1 - fb), (1, fb)):
                for dk, wc in ((0, 1 - fc), (1, fc)):
                    w = wa * wb * wc * (1.0 - zero_w)
                    corner_data.append((w, np.mod(i0 + di, n), j0 + dj, np.mod(k0 + dk, n)))
        self._corner_data = corner_data

        self.specials: list[_SpecialTriple] = []
        for t, j, jq in zip(*np.nonzero(special_mask)):
            kind = "zero" if m_all[t, j, jq, 2, 2] > 0 else "pi"
            am = alpha_m[t, j, jq]
            base = am / delta - 0.5 if kind == "zero" else am / delta - 1.5
            bi, bf = _split_position(np.array([base]))
            self.specials.append(_SpecialTriple(kind, int(t), int(j), int(jq), int(bi[0]) % n, float(bf[0])))

        # forward gather row map: F2[i, t] rows = F[(t + i) % n]
        self._row_idx = np.mod(np.arange(n)[None, :] + np.arange(n)[:, None], n)
        self._g_indices = None
        self._adj_data = None

    # -- forward ------------------------------------------------------------

    def _build_g_indices(self):
        n = self.n
        shift_k = np.arange(n)
        shift_g = np.arange(n)
        idx_list = []
        w_list = []
        for w, ai, bj, gk in self._corner_data:
            # layout (t, jq, g, j, k); triple axes are (t, j, jq)
            a = np.mod(ai.transpose(0, 2, 1)[:, :, None, :, None] - shift_k[None, None, None, None, :], n)
            g = np.mod(gk.transpose(0, 2, 1)[:, :, None, :, None] + shift_g[None, None, :, None, None], n)
            b = bj.transpose(0, 2, 1)[:, :, None, :, None]
            flat = (a * n + b) * n + g
            idx_list.append(np.ascontiguousarray(flat.astype(np.int32)))
            w_list.append(np.ascontiguousarray(w.transpose(0, 2, 1)[:, :, None, :, None]))
        self._g_indices = (w_list, idx_list)

    def prepare_filter(self, phi: np.ndarray) -> PreparedSo3Filter:
        """Build the (n^3, n^2) gather table for a single-channel filter."""
        n = self.n
        if self._g_indices is None:
            self._build_g_indices()
        w_list, idx_list = self._g_indices
        flat = phi.reshape(-1)
        g = np.zeros((n, n, n, n, n))
        for w, idx in zip(w_list, idx_list):
            g += w * flat[idx]
        special_vecs = []
        for sp in self.specials:
            d = np.arange(n)
            sign = 1 if sp.kind == "zero" else -1
            lo = np.mod(sp.i0 + sign * d, n)
            hi = np.mod(sp.i0 + 1 + sign * d, n)
            row = phi[:, 0, :] if sp.kind == "zero" else phi[:, n - 1, :]
            ring = 0.5 * (row[:, n - 1] + row[:, 0])
            vec = (1 - sp.fa) * ring[lo] + sp.fa * ring[hi]
            special_vecs.append(vec)
        return PreparedSo3Filter(g.reshape(n ** 3, n * n), special_vecs)

    def apply_batch(self, pf: PreparedSo3Filter, f_weighted: np.ndarray) -> np.ndarray:
        """Correlate weighted (B, n, n, n) signals against a prepared filter."""
        n = self.n
        fb = f_weighted.reshape(-1, n, n, n)
        bsz = fb.shape[0]
        f2 = fb[:, self._row_idx]  # (B, n_i, n_t, n, n)
        out = (f2.reshape(bsz * n, -1) @ pf.g_table).reshape(bsz, n, n, n)
        for sp, vec in zip(self.specials, pf.special_vecs):
            rows = fb[:, np.mod(sp.t + np.arange(n), n), sp.jq, :]  # (B, n_i, n_g)
            if sp.kind == "zero":
                vmat = vec[np.mod(np.arange(n)[None, :] - np.arange(n)[:, None], n)]  # [k, g]
            else:
                vmat = vec[np.mod(np.arange(n)[None, :] + np.arange(n)[:, None], n)]
            out[:, :, sp.j, :] += np.einsum("big,kg->bik", rows, vmat)
        if f_weighted.ndim == 3:
            return out[0]
        return out

    # -- adjoint (gradient w.r.t. the filter) --------------------------------

    def _build_adj_data(self):
        n = self.n
        xs = np.arange(n)
        zs = np.arange(n)
        data = []
        for w, ai, bj, gk in self._corner_data:
            w_f = w.reshape(-1)
            a_f = ai.reshape(-1)
            b_f = np.clip(bj.reshape(-1), 0, n - 1)
            g_f = gk.reshape(-1)
            order = np.argsort(b_f, kind="stable")
            b_sorted = b_f[order]
            rows_present, starts = np.unique(b_sorted, return_index=True)
            t_idx, j_idx, q_idx = np.unravel_index(order, (n, n, n))
            # DF layout (t, j, kappa, jq, lambda)
            kap = np.mod(a_f[order][:, None] - xs[None, :], n)  # (S, x)
            lam = np.mod(zs[None, :] - g_f[order][:, None], n)  # (S, z)
            base = ((t_idx * n + j_idx) * n)[:, None] + kap  # (S, x)
            base = base * n + q_idx[:, None]
            idx = base[:, :, None] * n + lam[:, None, :]
            data.append((w_f[order], idx.astype(np.int32), starts, rows_present))
        self._adj_data = data

    def adjoint_batch(self, d: np.ndarray, f_weighted: np.ndarray) -> np.ndarray:
        """Gradient of sum_s <d_s, correlate(f_s, phi)> with respect to phi."""
        n = self.n
        if self._adj_data is None:
            self._build_adj_data()
        d3 = d.reshape(-1, n, n, n)
        f3 = f_weighted.reshape(-1, n, n, n)
        bsz = d3.shape[0]
        df = np.empty((n, n, n, n, n))  # (t, j, kappa, jq, lambda)
        dmat = d3.transpose(0, 1, 2, 3).reshape(bsz * n, n * n)
        for t in range(n):
            froll = f3[:, np.mod(np.arange(n) + t, n)].reshape(bsz * n, n * n)
            df[t] = (dmat.T @ froll).reshape(n, n, n, n)
        df_flat = df.reshape(-1)
        grad = np.zeros((n, n, n))
        for w_f, idx, starts, rows_present in self._adj_data:
            t_all = w_f[:, None, None] * df_flat[idx]
            sums = np.add.reduceat(t_all.reshape(len(w_f), -1), starts, axis=0)
            grad[:, rows_present, :] += sums.reshape(len(rows_present), n, n).transpose(1, 0, 2)
        for sp in self.specials:
            rows = f3[:, np.mod(sp.t + np.arange(n), n), sp.jq, :]  # (B, i, g)
            c = np.einsum("bik,big->kg", d3[:, :, sp.j, :], rows)
            if sp.kind == "zero":
                # diag[d] = sum_k C[k, (k+d) % n]
                diag = np.array([np.trace(np.roll(c, -dd, axis=1)) for dd in range(n)])
            else:
                # diag[s] = sum_k C[k, (s-k) % n]
                diag = np.array([c[np.arange(n), np.mod(dd - np.arange(n), n)].sum() for dd in range(n)])
            sign = 1 if sp.kind == "zero" else -1
            lo = np.mod(sp.i0 + sign * np.arange(n), n)
            hi = np.mod(sp.i0 + 1 + sign * np.arange(n), n)
            row = 0 if sp.kind == "zero" else n - 1
            for cols, wcol in ((lo, 1 - sp.fa), (hi, sp.fa)):
                np.add.at(grad[:, row, n - 1], cols, 0.5 * wcol * diag)
                np.add.at(grad[:, row, 0], cols, 0.5 * wcol * diag)
        return grad


@lru_cache(maxsize=8)
def s2_engine(b: int, n: int) -> S2Engine:
    return S2Engine(b, n)


@lru_cache(maxsize=8)
def so3_engine(n: int) -> So3Engine:
    return So3Engine(n)


def s2_aligned(b: int, grid: RotationGrid) -> bool:
    if not grid.is_cubic:
        return False
    two_b = 2 * b
    n = grid.n_alpha
    return two_b % n == 0 and ((two_b // n) % 2) == 0
