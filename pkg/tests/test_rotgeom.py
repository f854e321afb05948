import numpy as np
import pytest

from hoidiff import rotgeom
from hoidiff.errors import DegenerateRotation, InvalidRotation
from hoidiff.rotgeom import (
    RigidTransform,
    matrix_to_rot6d,
    random_rotation,
    rot6d_jacobian,
    rot6d_to_matrix,
    rotation_angle,
)


def test_identity_encoding():
    a = matrix_to_rot6d(np.eye(3))
    assert np.array_equal(a, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    assert np.array_equal(rot6d_to_matrix(a), np.eye(3))


def test_ninety_degree_z():
    # 90 degrees about +z sends x->y and y->-x.
    Rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    a = matrix_to_rot6d(Rz)
    assert np.allclose(a, [0, 1, 0, -1, 0, 0], atol=1e-15)
    assert np.allclose(rot6d_to_matrix(a), Rz, atol=1e-15)


def test_round_trip_many():
    rng = np.random.default_rng(7)
    R = random_rotation(rng, (1000,))
    back = rot6d_to_matrix(matrix_to_rot6d(R))
    assert np.abs(back - R).max() < 1e-9


def test_decoded_orthonormality_and_det():
    rng = np.random.default_rng(11)
    a = rng.normal(size=(1000, 6))
    R = rot6d_to_matrix(a)
    gram = np.swapaxes(R, -1, -2) @ R
    assert np.abs(gram - np.eye(3)).max() < 1e-9
    assert np.abs(np.linalg.det(R) - 1.0).max() < 1e-9


def test_rescaling_columns_is_invariant():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(200, 6))
    scaled = a.copy()
    scaled[:, :3] *= 2.5
    scaled[:, 3:] *= 0.4
    assert np.allclose(rot6d_to_matrix(a), rot6d_to_matrix(scaled), atol=1e-12)


def test_degenerate_inputs_raise():
    with pytest.raises(DegenerateRotation):
        rot6d_to_matrix(np.zeros(6))
    with pytest.raises(DegenerateRotation):
        rot6d_to_matrix([1.0, 0.0, 0.0, 2.0, 0.0, 0.0])  # collinear
    with pytest.raises(DegenerateRotation):
        rot6d_to_matrix([1e-12, 0.0, 0.0, 0.0, 1.0, 0.0])


def test_matrix_to_rot6d_rejects_non_rotation():
    with pytest.raises(InvalidRotation):
        matrix_to_rot6d(np.eye(3) * 2.0)
    refl = np.diag([-1.0, 1.0, 1.0])
    with pytest.raises(InvalidRotation):
        matrix_to_rot6d(refl)


def test_jacobian_matches_central_differences():
    rng = np.random.default_rng(19)
    a = rng.normal(size=(20, 6))
    J = rot6d_jacobian(a)
    h = 1e-6
    for c in range(6):
        ap = a.copy()
        am = a.copy()
        ap[:, c] += h
        am[:, c] -= h
        fd = (rot6d_to_matrix(ap) - rot6d_to_matrix(am)) / (2 * h)
        assert np.abs(J[..., c] - fd).max() < 1e-7


def test_rotation_angle_basics():
    rng = np.random.default_rng(5)
    R = random_rotation(rng, (50,))
    assert np.abs(rotation_angle(R, R)).max() < 1e-7
    Rz = rot6d_to_matrix(np.array([0.0, 1.0, 0.0, -1.0, 0.0, 0.0]))
    assert abs(rotation_angle(np.eye(3), Rz) - np.pi / 2) < 1e-12


def test_random_rotation_uniform_trace_mean():
    # E[tr R] = 0 under Haar; loose check that sign fixing didn't bias it.
    rng = np.random.default_rng(0)
    R = random_rotation(rng, (4000,))
    tr = np.einsum("nii->n", R)
    assert abs(tr.mean()) < 0.1


def test_rigid_transform_compose_apply_inverse():
    rng = np.random.default_rng(23)
    A = RigidTransform(random_rotation(rng), rng.normal(size=3))
    B = RigidTransform(random_rotation(rng), rng.normal(size=3))
    p = rng.normal(size=(40, 3))
    assert np.allclose(A.compose(B).apply(p), A.apply(B.apply(p)), atol=1e-12)
    assert np.allclose(A.compose(A.inverse()).apply(p), p, atol=1e-12)
    ident = RigidTransform.identity()
    assert np.allclose(ident.apply(p), p)
