import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from meshlift import tensorcore as tc
from meshlift.geometry import (Camera, MeshGrid2D, MeshGrid3D, grid_index, grid_triangles, lift,
                               lift_t, project)
from meshlift.tensorcore import Tensor

CAM = Camera(100.0, 100.0, 50.0, 50.0, 101, 101)


class TestCamera:
    def test_rejects_bad_focal(self):
        with pytest.raises(ValueError):
            Camera(0.0, 1.0, 1.0, 1.0, 4, 4)

    def test_rejects_principal_point_outside(self):
        with pytest.raises(ValueError):
            Camera(10.0, 10.0, 4.0, 1.0, 4, 4)

    def test_centered(self):
        c = Camera.centered(80.0, 64)
        assert (c.uc, c.vc, c.width, c.height) == (31.5, 31.5, 64, 64)


class TestMeshes:
    def test_requires_square_grid(self):
        with pytest.raises(ValueError):
            MeshGrid3D(np.zeros((5, 3)))
        with pytest.raises(ValueError):
            MeshGrid3D(np.zeros((1, 3)))

    def test_requires_finite(self):
        v = np.zeros((4, 3))
        v[0, 0] = np.nan
        with pytest.raises(ValueError):
            MeshGrid3D(v)

    def test_grid_view(self):
        m = MeshGrid3D(np.arange(27.0).reshape(9, 3))
        assert m.N == 3
        np.testing.assert_array_equal(m.grid[1, 2], [15, 16, 17])

    def test_2d_allows_out_of_frame(self):
        assert MeshGrid2D(np.array([[-5.0, 300.0]] * 4)).N == 2


class TestGridIndex:
    def test_examples(self):
        assert grid_index(0, 9) == (0, 0)
        assert grid_index(80, 9) == (8, 8)
        assert grid_index(10, 9) == (1, 1)

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            grid_index(81, 9)
        with pytest.raises(IndexError):
            grid_index(-1, 9)

    @given(st.integers(2, 12))
    def test_bijective(self, N):
        pairs = {grid_index(i, N) for i in range(N * N)}
        assert pairs == {(j, k) for j in range(N) for k in range(N)}

    def test_triangle_count(self):
        assert grid_triangles(9).shape == (2 * 8 * 8, 3)


class TestProjectLift:
    def test_optical_axis(self):
        U = project(CAM, MeshGrid3D(np.array([[0.0, 0.0, 1.0]] * 4)))
        np.testing.assert_array_equal(U.vertices[0], [50.0, 50.0])

    def test_offset_point(self):
        U = project(CAM, MeshGrid3D(np.array([[0.5, 0.0, 1.0]] * 4)))
        np.testing.assert_array_equal(U.vertices[0], [100.0, 50.0])

    def test_behind_camera(self):
        with pytest.raises(ValueError):
            project(CAM, MeshGrid3D(np.array([[0.0, 0.0, -1.0]] * 4)))

    def test_lift_principal_point(self):
        X = lift(CAM, MeshGrid2D(np.array([[50.0, 50.0]] * 4)), np.full(4, 5.0))
        np.testing.assert_array_equal(X.vertices[0], [0.0, 0.0, 5.0])

    def test_lift_substitution(self):
        X = lift(CAM, MeshGrid2D(np.array([[150.0, 50.0]] * 4)), np.full(4, 2.0))
        assert X.vertices[0, 0] == 2.0

    def test_lift_rejects_nonpositive_depth(self):
        with pytest.raises(ValueError):
            lift(CAM, MeshGrid2D(np.zeros((4, 2))), np.array([1.0, 0.0, 1.0, 1.0]))

    def test_lift_gradcheck(self, rng):
        U = rng.uniform(0, 100, (2, 9, 2))
        z = rng.uniform(0.5, 3, (2, 9))
        cams = np.tile(CAM.as_array(), (2, 1))
        proj = Tensor(rng.normal(size=(2, 9, 3)))
        assert tc.grad_check(lambda t: (lift_t(t, Tensor(z), cams) * proj).sum(), U) < 1e-6
        assert tc.grad_check(lambda t: (lift_t(Tensor(U), t, cams) * proj).sum(), z) < 1e-6


coords = arrays(np.float64, (9, 2), elements=st.floats(-200, 300))
depths = arrays(np.float64, (9,), elements=st.floats(0.05, 50))


@given(coords, depths)
def test_project_lift_roundtrip(U, z):
    back = project(CAM, lift(CAM, MeshGrid2D(U), z)).vertices
    np.testing.assert_allclose(back, U, rtol=0, atol=1e-10)


@given(arrays(np.float64, (9, 3), elements=st.floats(-2, 2)), st.floats(0.5, 5))
def test_lift_project_roundtrip_3d(P, shift):
    P = P.copy()
    P[:, 2] = np.abs(P[:, 2]) + shift
    X = MeshGrid3D(P)
    back = lift(CAM, project(CAM, X), P[:, 2]).vertices
    np.testing.assert_allclose(back, P, rtol=0, atol=1e-10)


@given(coords, depths, st.floats(0.1, 10))
def test_lift_homogeneous_in_depth(U, z, alpha):
    a = lift(CAM, MeshGrid2D(U), alpha * z).vertices
    b = alpha * lift(CAM, MeshGrid2D(U), z).vertices
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-9)
