import math

import numpy as np
import pytest

from _reference import brute_s2_correlate, brute_so3_correlate
from posekit.so3 import rotation_from_euler_zyz, random_rotation, so3_grid
from posekit.sphere import (
    RotationGridSignal,
    SphericalSignal,
    TriMesh,
    bandlimited_sphere_signal,
    dh_grid,
    project_hemisphere,
    raycast_sphere,
    rotate_signal,
    s2_correlate,
    s2_correlation_values,
    so3_correlate,
    sphere_inner,
)
from posekit.meshes import cube_mesh, icosphere_mesh


def constant_signal(grid, value, channels=1):
    n = grid.n_side
    return SphericalSignal(grid, np.full((channels, n, n), float(value)))


# ---------------------------------------------------------------------------
# dh_grid
# ---------------------------------------------------------------------------


def test_dh_grid_counts_and_weights():
    g = dh_grid(10)
    assert g.n_samples == 400
    assert (g.beta_weights.sum() * g.n_side) == pytest.approx(1.0, abs=1e-9)
    assert dh_grid(2).n_samples == 16
    for b in (2, 4, 8, 20):
        g = dh_grid(b)
        total = g.beta_weights[None, :].repeat(g.n_side, axis=0).sum()
        assert total == pytest.approx(1.0, abs=1e-9)


def test_dh_grid_equator_heaviest():
    g = dh_grid(6)
    assert np.argmax(g.beta_weights) in (g.b - 1, g.b)


def test_dh_grid_rejects_small_b():
    with pytest.raises(ValueError):
        dh_grid(1)


# ---------------------------------------------------------------------------
# rotate_signal
# ---------------------------------------------------------------------------


def test_rotate_identity_is_noop():
    rng = np.random.default_rng(0)
    f = SphericalSignal(dh_grid(4), rng.standard_normal((2, 8, 8)))
    out = rotate_signal(np.eye(3), f)
    assert np.allclose(out.values, f.values, atol=1e-12)


def test_rotate_constant_invariant():
    rng = np.random.default_rng(1)
    f = constant_signal(dh_grid(4), 3.25)
    out = rotate_signal(random_rotation(rng), f)
    assert np.allclose(out.values, f.values, atol=1e-12)


def test_rotate_one_alpha_step_is_exact_cyclic_shift():
    rng = np.random.default_rng(2)
    grid = dh_grid(5)
    f = SphericalSignal(grid, rng.standard_normal((1, 10, 10)))
    step = 2 * math.pi / grid.n_side
    out = rotate_signal(rotation_from_euler_zyz((step, 0.0, 0.0)), f)
    assert np.array_equal(out.values, np.roll(f.values, 1, axis=1))


# ---------------------------------------------------------------------------
# sphere_inner
# ---------------------------------------------------------------------------


def test_inner_of_unit_constants_is_one():
    g = dh_grid(6)
    assert sphere_inner(constant_signal(g, 1.0), constant_signal(g, 1.0)) == pytest.approx(
        1.0, abs=1e-9)


def test_inner_self_nonnegative():
    rng = np.random.default_rng(3)
    f = SphericalSignal(dh_grid(4), rng.standard_normal((3, 8, 8)))
    assert sphere_inner(f, f) >= 0.0


def test_inner_grid_mismatch_raises():
    with pytest.raises(ValueError):
        sphere_inner(constant_signal(dh_grid(4), 1.0), constant_signal(dh_grid(5), 1.0))
    with pytest.raises(ValueError):
        sphere_inner(constant_signal(dh_grid(4), 1.0), constant_signal(dh_grid(4), 1.0, channels=2))


def test_inner_bilinearity():
    rng = np.random.default_rng(4)
    g = dh_grid(4)
    p1 = SphericalSignal(g, rng.standard_normal((1, 8, 8)))
    p2 = SphericalSignal(g, rng.standard_normal((1, 8, 8)))
    f = SphericalSignal(g, rng.standard_normal((1, 8, 8)))
    a = 2.7
    lhs = sphere_inner(SphericalSignal(g, a * p1.values + p2.values), f)
    rhs = a * sphere_inner(p1, f) + sphere_inner(p2, f)
    assert lhs == pytest.approx(rhs, rel=1e-9)


def test_inner_rotation_invariance_bandlimited():
    rng = np.random.default_rng(5)
    g = dh_grid(20)
    phi = bandlimited_sphere_signal(g, 1, 2, rng)
    f = bandlimited_sphere_signal(g, 1, 2, rng)
    base = sphere_inner(phi, f)
    for _ in range(5):
        r = random_rotation(rng)
        rotated = sphere_inner(rotate_signal(r, phi), rotate_signal(r, f))
        assert rotated == pytest.approx(base, rel=0.01)


# ---------------------------------------------------------------------------
# s2_correlate
# ---------------------------------------------------------------------------


def test_s2_constant_correlation():
    g = dh_grid(4)
    rg = so3_grid(4)
    out = s2_correlate(constant_signal(g, 2.0), constant_signal(g, 3.0), rg)
    assert np.allclose(out.values, 6.0, atol=1e-9)


def test_s2_onehot_peaks_near_identity():
    g = dh_grid(6)
    rg = so3_grid(6)
    vals = np.zeros((1, 12, 12))
    vals[0, 3, 5] = 1.0
    sig = SphericalSignal(g, vals)
    out = s2_correlate(sig, sig, rg)
    idx = np.unravel_index(np.argmax(out.values[0]), rg.shape)
    argmax_rot = rg.node_rotation(*idx)
    # the peak sits on a grid node as close to the identity as the grid allows
    from posekit.so3 import geodesic_distance
    d_best = min(
        geodesic_distance(np.eye(3), rg.node_rotation(i, j, k))
        for i in range(rg.n_alpha) for j in range(rg.n_beta) for k in range(rg.n_gamma))
    assert geodesic_distance(np.eye(3), argmax_rot) <= d_best + 1e-9


def test_s2_matches_brute_force_oracle():
    rng = np.random.default_rng(6)
    g = dh_grid(4)
    rg = so3_grid(4)
    phi = SphericalSignal(g, rng.standard_normal((2, 8, 8)))
    f = SphericalSignal(g, rng.standard_normal((2, 8, 8)))
    ref = brute_s2_correlate(phi, f, rg)
    out = s2_correlate(phi, f, rg)
    assert np.max(np.abs(out.values[0] - ref)) <= 1e-12


def test_s2_direct_path_matches_brute_force():
    # n that breaks the fast-path alignment exercises the chunked direct path
    rng = np.random.default_rng(7)
    g = dh_grid(4)
    rg = so3_grid(3)
    phi = SphericalSignal(g, rng.standard_normal((1, 8, 8)))
    f = SphericalSignal(g, rng.standard_normal((1, 8, 8)))
    ref = brute_s2_correlate(phi, f, rg)
    out = s2_correlate(phi, f, rg)
    assert np.max(np.abs(out.values[0] - ref)) <= 1e-12


def test_s2_shift_relation_for_grid_aligned_rotation():
    rng = np.random.default_rng(8)
    g = dh_grid(4)
    rg = so3_grid(4)
    phi = bandlimited_sphere_signal(g, 1, 2, rng)
    f = bandlimited_sphere_signal(g, 1, 2, rng)
    base = s2_correlate(phi, f, rg).values[0]
    q = rotation_from_euler_zyz((math.pi / 2, 0.0, 0.0))  # one rotation-grid alpha step
    shifted_in = s2_correlate(phi, rotate_signal(q, f), rg).values[0]
    assert np.max(np.abs(shifted_in - np.roll(base, 1, axis=0))) <= 1e-9


def test_s2_correlation_values_match_grid_nodes():
    rng = np.random.default_rng(9)
    g = dh_grid(4)
    rg = so3_grid(4)
    phi = SphericalSignal(g, rng.standard_normal((1, 8, 8)))
    f = SphericalSignal(g, rng.standard_normal((1, 8, 8)))
    grid_out = s2_correlate(phi, f, rg).values[0]
    vals = s2_correlation_values(phi, f, rg.rotations.reshape(-1, 3, 3))
    assert np.max(np.abs(vals.reshape(rg.shape) - grid_out)) <= 1e-12


def test_s2_mismatch_raises():
    g = dh_grid(4)
    with pytest.raises(ValueError):
        s2_correlate(constant_signal(g, 1.0), constant_signal(dh_grid(5), 1.0), so3_grid(4))


# ---------------------------------------------------------------------------
# so3_correlate
# ---------------------------------------------------------------------------


def test_so3_constant_correlation():
    rg = so3_grid(4)
    a = RotationGridSignal(rg, np.full((1, 4, 4, 4), 2.0))
    b = RotationGridSignal(rg, np.full((1, 4, 4, 4), 5.0))
    out = so3_correlate(a, b)
    assert np.allclose(out.values, 10.0, atol=1e-9)


def test_so3_matches_brute_force_oracle():
    rng = np.random.default_rng(10)
    rg = so3_grid(4)
    phi = RotationGridSignal(rg, rng.standard_normal((2, 4, 4, 4)))
    f = RotationGridSignal(rg, rng.standard_normal((2, 4, 4, 4)))
    ref = brute_so3_correlate(phi, f)
    out = so3_correlate(phi, f)
    assert np.max(np.abs(out.values[0] - ref)) <= 1e-12


def test_so3_onehot_autocorrelation_peaks_near_identity():
    rg = so3_grid(4)
    vals = np.zeros((1, 4, 4, 4))
    vals[0, 1, 2, 3] = 1.0
    sig = RotationGridSignal(rg, vals)
    out = so3_correlate(sig, sig).values[0]
    from posekit.so3 import geodesic_distance
    idx = np.unravel_index(np.argmax(out), rg.shape)
    d_arg = geodesic_distance(np.eye(3), rg.node_rotation(*idx))
    d_best = min(
        geodesic_distance(np.eye(3), rg.node_rotation(i, j, k))
        for i in range(4) for j in range(4) for k in range(4))
    assert d_arg <= d_best + 1e-9


def test_so3_equivariance_grid_aligned_shift():
    rng = np.random.default_rng(11)
    rg = so3_grid(5)
    phi = RotationGridSignal(rg, rng.standard_normal((1, 5, 5, 5)))
    f = RotationGridSignal(rg, rng.standard_normal((1, 5, 5, 5)))
    base = so3_correlate(phi, f).values[0]
    shifted = RotationGridSignal(rg, np.roll(f.values, 2, axis=1))
    out = so3_correlate(phi, shifted).values[0]
    assert np.max(np.abs(out - np.roll(base, 2, axis=0))) <= 1e-9


def test_so3_mismatch_raises():
    rg = so3_grid(4)
    a = RotationGridSignal(rg, np.zeros((1, 4, 4, 4)))
    b = RotationGridSignal(so3_grid(5), np.zeros((1, 5, 5, 5)))
    with pytest.raises(ValueError):
        so3_correlate(a, b)


# ---------------------------------------------------------------------------
# raycast_sphere
# ---------------------------------------------------------------------------


def test_raycast_unit_sphere_lengths():
    mesh = icosphere_mesh(radius=1.0, subdivisions=3)
    sig = raycast_sphere(mesh, np.zeros(3), dh_grid(8))
    lengths = sig.values[0]
    assert np.all(lengths > 0)
    assert np.max(np.abs(lengths - 1.0)) <= 0.02


def test_raycast_cube_length_range():
    mesh = cube_mesh(side=2.0)
    sig = raycast_sphere(mesh, np.zeros(3), dh_grid(8))
    lengths = sig.values[0]
    assert np.all(lengths >= 1.0 - 1e-9)
    assert np.all(lengths <= math.sqrt(3.0) + 1e-9)
    assert lengths.max() > 1.2  # corners are actually seen


def test_raycast_rotation_covariance():
    rng = np.random.default_rng(12)
    mesh = cube_mesh(side=1.0)
    grid = dh_grid(16)
    base = raycast_sphere(mesh, np.zeros(3), grid)
    r = random_rotation(rng)
    rotated_cast = raycast_sphere(mesh.transformed(r), np.zeros(3), grid)
    predicted = rotate_signal(r, base)
    # compare away from edge/corner discontinuities via quantiles
    diff = np.abs(rotated_cast.values[0] - predicted.values[0])
    assert np.quantile(diff, 0.9) <= 0.05


def test_raycast_empty_mesh_rejected():
    with pytest.raises(ValueError):
        raycast_sphere(TriMesh(np.zeros((3, 3)), np.zeros((0, 3), dtype=int)), np.zeros(3))


# ---------------------------------------------------------------------------
# project_hemisphere
# ---------------------------------------------------------------------------


def test_project_constant_map_full_mask():
    g = dh_grid(6)
    fm = np.full((32, 32), 7.0)
    mask = np.ones((32, 32), dtype=bool)
    sig = project_hemisphere(fm, mask, g)
    front = g.betas <= math.pi / 2
    assert np.allclose(sig.values[0][:, front], 7.0, atol=1e-9)
    assert np.allclose(sig.values[0][:, ~front], 0.0)


def test_project_empty_mask_raises():
    with pytest.raises(ValueError):
        project_hemisphere(np.zeros((8, 8)), np.zeros((8, 8), dtype=bool), dh_grid(4))


def test_project_inplane_rotation_becomes_alpha_shift():
    # radial disc image rotated by one alpha step
    g = dh_grid(8)
    h = w = 65
    yy, xx = np.mgrid[0:h, 0:w]
    cx = cy = 32.0
    ang = np.arctan2(yy - cy, xx - cx)
    rad = np.hypot(xx - cx, yy - cy)
    mask = rad <= 30
    theta = 2 * math.pi / g.n_side
    img0 = np.cos(3 * ang) * (rad / 30.0)
    img1 = np.cos(3 * (ang - theta)) * (rad / 30.0)
    s0 = project_hemisphere(img0 * mask, mask, g)
    s1 = project_hemisphere(img1 * mask, mask, g)
    shifted = np.roll(s0.values, 1, axis=1)
    front = g.betas <= math.pi / 2
    err = np.abs(s1.values[:, :, front] - shifted[:, :, front])
    assert np.quantile(err, 0.95) <= 0.08


# ---------------------------------------------------------------------------
# TriMesh validation
# ---------------------------------------------------------------------------


def test_trimesh_rejects_degenerate_faces():
    verts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
    with pytest.raises(ValueError):
        TriMesh(verts, np.array([[0, 1, 2]]))


def test_trimesh_rejects_bad_indices():
    verts = np.zeros((3, 3))
    with pytest.raises(ValueError):
        TriMesh(verts, np.array([[0, 1, 5]]))
