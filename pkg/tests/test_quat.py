import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from graspvae import quat

unit_quats = st.lists(st.floats(-1, 1, allow_nan=False), min_size=4, max_size=4).filter(
    lambda v: np.linalg.norm(v) > 1e-3).map(lambda v: np.array(v) / np.linalg.norm(v))


@given(unit_quats)
def test_canonicalize_is_idempotent_and_keeps_rotation(q):
    c = quat.canonicalize(q)
    np.testing.assert_array_equal(quat.canonicalize(c), c)
    np.testing.assert_array_equal(quat.canonicalize(-q), c)
    np.testing.assert_allclose(quat.to_matrix(c), quat.to_matrix(q), atol=1e-12)


def test_canonicalize_zero_scalar_part():
    np.testing.assert_array_equal(quat.canonicalize([0.0, -1.0, 0.0, 0.0]), [0.0, 1.0, 0.0, 0.0])
    np.testing.assert_array_equal(quat.canonicalize([0.0, 0.0, -0.6, 0.0]), [0.0, 0.0, 0.6, 0.0])


@settings(max_examples=200)
@given(unit_quats)
def test_matrix_round_trip(q):
    back = quat.from_matrix(quat.to_matrix(q))
    assert back[3] >= 0.0
    # near qw = 0 either sign is canonical up to rounding, so compare rotations
    np.testing.assert_allclose(quat.to_matrix(back), quat.to_matrix(q), atol=1e-12)


def test_about_z_composition_and_angle():
    q = quat.multiply(quat.about_z(0.3), quat.about_z(0.4))
    np.testing.assert_allclose(q, quat.about_z(0.7), atol=1e-15)
    assert math.isclose(quat.angle_between(quat.about_z(0.0), quat.about_z(0.5)), 0.5, rel_tol=1e-12)
    assert quat.angle_between(q, -q) < 1e-7
