import math

import numpy as np
import pytest

from posekit.so3 import (
    EulerZYZ,
    compose,
    euler_from_rotation,
    geodesic_distance,
    inverse,
    quat_from_rotation,
    random_rotation,
    rotation_from_euler_zyz,
    rotation_from_json,
    rotation_from_quat,
    rotation_to_json,
    so3_grid,
    validate_rotation,
)


def test_identity_from_zero_angles():
    r = rotation_from_euler_zyz(EulerZYZ(0.0, 0.0, 0.0))
    assert np.allclose(r, np.eye(3), atol=1e-15)


def test_rz_pi_flips_x_and_y():
    # hand evaluation of Rz(pi)
    r = rotation_from_euler_zyz(EulerZYZ(math.pi, 0.0, 0.0))
    expected = np.diag([-1.0, -1.0, 1.0])
    assert np.allclose(r, expected, atol=1e-12)


def test_gimbal_degeneracy_at_beta_zero():
    a, g = 0.7, 1.9
    r1 = rotation_from_euler_zyz(EulerZYZ(a, 0.0, g))
    r2 = rotation_from_euler_zyz(EulerZYZ(a + g, 0.0, 0.0))
    assert np.allclose(r1, r2, atol=1e-12)


def test_non_finite_angle_rejected():
    with pytest.raises(ValueError):
        rotation_from_euler_zyz(EulerZYZ(float("nan"), 0.0, 0.0))


def test_compose_inverse_identity():
    rng = np.random.default_rng(0)
    for _ in range(20):
        r = random_rotation(rng)
        assert np.allclose(compose(r, inverse(r)), np.eye(3), atol=1e-12)
        assert np.allclose(compose(np.eye(3), r), r, atol=1e-15)


def test_compose_associative():
    rng = np.random.default_rng(1)
    a, b, c = (random_rotation(rng) for _ in range(3))
    assert np.allclose(compose(compose(a, b), c), compose(a, compose(b, c)), atol=1e-12)


def test_inverse_of_axis_rotation():
    r = rotation_from_euler_zyz(EulerZYZ(0.6, 0.0, 0.0))
    r_inv = rotation_from_euler_zyz(EulerZYZ(2 * math.pi - 0.6, 0.0, 0.0))
    assert np.allclose(inverse(r), r_inv, atol=1e-12)


def test_geodesic_distance_basics():
    rng = np.random.default_rng(2)
    r = random_rotation(rng)
    assert geodesic_distance(r, r) == pytest.approx(0.0, abs=1e-7)
    rz90 = rotation_from_euler_zyz(EulerZYZ(math.pi / 2, 0.0, 0.0))
    # trace(Rz(pi/2)) = 1 so arccos(0) = pi/2
    assert geodesic_distance(np.eye(3), rz90) == pytest.approx(math.pi / 2, abs=1e-12)
    a, b = random_rotation(rng), random_rotation(rng)
    assert geodesic_distance(a, b) == pytest.approx(geodesic_distance(b, a), abs=1e-12)


def test_geodesic_left_invariance():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a, b, c = (random_rotation(rng) for _ in range(3))
        d1 = geodesic_distance(a, b)
        d2 = geodesic_distance(compose(c, a), compose(c, b))
        assert d1 == pytest.approx(d2, abs=1e-9)


def test_euler_round_trip_away_from_singularities():
    rng = np.random.default_rng(4)
    count = 0
    while count < 1000:
        r = random_rotation(rng)
        e = euler_from_rotation(r)
        if not (0.1 <= e.beta <= math.pi - 0.1):
            continue
        count += 1
        r2 = rotation_from_euler_zyz(e)
        assert geodesic_distance(r, r2) < 1e-9
        assert 0.0 <= e.alpha < 2 * math.pi
        assert 0.0 <= e.gamma < 2 * math.pi


def test_so3_grid_node_counts_and_weights():
    g = so3_grid(20)  # the paper-scale angle grid
    assert g.n_nodes == 8000
    assert g.weights.sum() == pytest.approx(1.0, abs=1e-9)
    assert so3_grid(2).n_nodes == 8
    for n in (2, 10, 20, 60):
        assert so3_grid(n).weights.sum() == pytest.approx(1.0, abs=1e-9)


def test_so3_grid_weight_spread():
    for n in (2, 5, 12):
        w = so3_grid(n).weights
        assert np.isfinite(w.max() / w.min())
        assert w.max() / w.min() > 1.0  # sin(beta) weighting


def test_so3_grid_rejects_small_n():
    with pytest.raises(ValueError):
        so3_grid(1)


def test_grid_nodes_avoid_beta_singularity():
    g = so3_grid(6)
    assert g.betas.min() > 0.0
    assert g.betas.max() < math.pi


def test_grid_node_rotations_valid():
    g = so3_grid(4)
    for r in g.rotations.reshape(-1, 3, 3):
        validate_rotation(r)


def test_nearest_node_identity():
    g = so3_grid(8)
    i, j, k = g.nearest_node(g.node_rotation(3, 2, 5))
    assert (i, j, k) == (3, 2, 5)


def test_quaternion_round_trip():
    rng = np.random.default_rng(5)
    for _ in range(100):
        r = random_rotation(rng)
        q = quat_from_rotation(r)
        assert np.allclose(rotation_from_quat(q), r, atol=1e-12)


def test_rotation_json_round_trip():
    rng = np.random.default_rng(6)
    r = random_rotation(rng)
    data = rotation_to_json(r)
    assert len(data) == 9
    assert data[1] == r[0, 1]  # row-major
    assert np.allclose(rotation_from_json(data), r, atol=1e-12)
