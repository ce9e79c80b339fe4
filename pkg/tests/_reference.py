"""Independent scalar reference implementations used as test oracles.

Everything here is deliberately written with plain Python loops and its own
interpolation arithmetic so the production (vectorized / table-based) paths
are checked against a genuinely separate computation.
"""
import math

import numpy as np

from posekit.so3 import euler_from_rotation

TWO_PI = 2.0 * math.pi


def bilinear_sphere_ref(vals, alpha_q, beta_q):
    """Scalar bilinear lookup on a (K, 2b, 2b) cell-centered signal."""
    _, na, nb = vals.shape
    da = TWO_PI / na
    db = math.pi / nb
    u = (alpha_q % TWO_PI) / da - 0.5
    i0 = math.floor(u)
    fa = u - i0
    i0 %= na
    i1 = (i0 + 1) % na
    v = beta_q / db - 0.5
    if v <= 0:
        j0, fb = 0, 0.0
    elif v >= nb - 1:
        j0, fb = nb - 2, 1.0
    else:
        j0 = math.floor(v)
        fb = v - j0
    j1 = j0 + 1
    return ((1 - fa) * (1 - fb) * vals[:, i0, j0] + fa * (1 - fb) * vals[:, i1, j0]
            + (1 - fa) * fb * vals[:, i0, j1] + fa * fb * vals[:, i1, j1])


def trilinear_so3_ref(vals, shape, alpha_q, beta_q, gamma_q):
    """Scalar trilinear lookup on a (K, na, nb, ng) rotation-grid signal."""
    na, nb, ng = shape
    da = TWO_PI / na
    db = math.pi / nb
    dg = TWO_PI / ng
    u = (alpha_q % TWO_PI) / da - 0.5
    i0 = math.floor(u)
    fa = u - i0
    i0 %= na
    i1 = (i0 + 1) % na
    v = beta_q / db - 0.5
    if v <= 0:
        j0, fb = 0, 0.0
    elif v >= nb - 1:
        j0, fb = nb - 2, 1.0
    else:
        j0 = math.floor(v)
        fb = v - j0
    j1 = j0 + 1
    w = (gamma_q % TWO_PI) / dg - 0.5
    k0 = math.floor(w)
    fc = w - k0
    k0 %= ng
    k1 = (k0 + 1) % ng
    out = np.zeros(vals.shape[0])
    for ii, wa in ((i0, 1 - fa), (i1, fa)):
        for jj, wb in ((j0, 1 - fb), (j1, fb)):
            for kk, wc in ((k0, 1 - fc), (k1, fc)):
                out += wa * wb * wc * vals[:, ii, jj, kk]
    return out


def brute_s2_correlate(phi, f, g):
    """Nested-loop spherical correlation over all grid rotations."""
    grid = phi.grid
    n = grid.n_side
    out = np.zeros(g.shape)
    for ia in range(g.n_alpha):
        for jb in range(g.n_beta):
            for kg in range(g.n_gamma):
                rot = g.node_rotation(ia, jb, kg)
                acc = 0.0
                for i in range(n):
                    for j in range(n):
                        d = grid.directions[i, j]
                        y = rot.T @ d
                        aq = math.atan2(y[1], y[0])
                        bq = math.atan2(math.hypot(y[0], y[1]), y[2])
                        pv = bilinear_sphere_ref(phi.values, aq, bq)
                        acc += grid.beta_weights[j] * float(np.dot(pv, f.values[:, i, j]))
                out[ia, jb, kg] = acc
    return out


def brute_so3_correlate(phi, f):
    """Nested-loop SO(3) correlation over all grid-node pairs."""
    g = phi.grid
    rots = g.rotations
    out = np.zeros(g.shape)
    for ia in range(g.n_alpha):
        for jb in range(g.n_beta):
            for kg in range(g.n_gamma):
                rot = rots[ia, jb, kg]
                acc = 0.0
                for qa in range(g.n_alpha):
                    for qb in range(g.n_beta):
                        for qg in range(g.n_gamma):
                            e = euler_from_rotation(rot.T @ rots[qa, qb, qg])
                            pv = trilinear_so3_ref(phi.values, g.shape, e.alpha, e.beta, e.gamma)
                            acc += g.beta_node_weights[qb] * float(
                                np.dot(pv, f.values[:, qa, qb, qg]))
                out[ia, jb, kg] = acc
    return out


def brute_chamfer(a, b):
    """Exhaustive double-loop Chamfer distance."""
    total_ab = 0.0
    for p in a:
        total_ab += min(math.dist(p, q) for q in b)
    total_ba = 0.0
    for q in b:
        total_ba += min(math.dist(p, q) for p in a)
    return total_ab / len(a) + total_ba / len(b)


def brute_min_cost_matching(n_left, n_right, edges):
    """Exhaustive min-cost maximum matching over sparse bipartite edges.

    edges: list of (left, right, cost).  Returns (best_cost, best_pairs).
    """
    by_left = {}
    for l, r, c in edges:
        by_left.setdefault(l, []).append((r, c))
    lefts = sorted(by_left)
    best = {"size": -1, "cost": float("inf"), "pairs": None}

    def rec(i, used, size, cost, pairs):
        if i == len(lefts):
            if size > best["size"] or (size == best["size"] and cost < best["cost"]):
                best["size"] = size
                best["cost"] = cost
                best["pairs"] = list(pairs)
            return
        l = lefts[i]
        rec(i + 1, used, size, cost, pairs)  # leave l unmatched
        for r, c in by_left[l]:
            if r not in used:
                used.add(r)
                pairs.append((l, r))
                rec(i + 1, used, size + 1, cost + c, pairs)
                pairs.pop()
                used.remove(r)

    rec(0, set(), 0, 0.0, [])
    return best["cost"], best["pairs"]
