import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from meshlift import detect2d as d2
from meshlift import tensorcore as tc
from meshlift.geometry import Camera, MeshGrid2D
from meshlift.tensorcore import Tensor


def stage_setup(rng, C=6, Nv=4, H=8, W=8, width=8):
    regs = [d2.StageRegressor(t, C, Nv, width=width) for t in (1, 2, 3)]
    P = {}
    for r in regs:
        P.update({k: Tensor(v) for k, v in r.init_params(rng).items()})
    F = Tensor(rng.normal(size=(2, H, W, C)))
    return regs, P, F


class TestNormalize:
    def test_uniform(self):
        B = d2.normalize(Tensor(np.zeros((1, 4, 4, 2)))).maps.data
        np.testing.assert_allclose(B, 1 / 16, rtol=0, atol=1e-15)

    def test_peak(self):
        raw = np.zeros((1, 4, 4, 1))
        raw[0, 1, 2, 0] = 50.0
        assert d2.normalize(Tensor(raw)).maps.data[0, 1, 2, 0] > 0.9999

    def test_gradcheck(self, rng):
        proj = Tensor(rng.normal(size=(1, 4, 5, 3)))
        err = tc.grad_check(lambda t: (tc.apply("spatial_softmax", t) * proj).sum(), rng.normal(size=(1, 4, 5, 3)))
        assert err < 1e-5

    @given(st.integers(0, 2**32 - 1), st.floats(1, 100))
    def test_slices_sum_to_one(self, seed, scale):
        raw = np.random.default_rng(seed).normal(0, scale, (2, 5, 6, 3))
        B = d2.normalize(Tensor(raw)).maps.data
        assert np.all(B >= 0)
        np.testing.assert_allclose(B.sum(axis=(1, 2)), 1.0, atol=1e-6)


class TestSoftArgmax:
    def test_one_hot(self):
        H = W = 56
        B = np.zeros((1, H, W, 4))
        B[0, 20, 10, :] = 1.0  # row 20, column 10
        cam = Camera.centered(100.0, 4 * W)
        U = d2.soft_argmax(d2.BeliefMapStack(1, Tensor(B)), cam).vertices[0]
        np.testing.assert_allclose(U, [(10 + 0.5) * 4 - 0.5, (20 + 0.5) * 4 - 0.5])

    def test_uniform_centre(self):
        B = np.full((1, 56, 56, 1), 1 / 56 ** 2)
        out = d2.soft_argmax_t(Tensor(B), 1.0, 1.0).data[0, 0]
        np.testing.assert_allclose(out, [27.5, 27.5], atol=1e-12)

    def test_two_peaks(self):
        B = np.zeros((1, 40, 40, 1))
        B[0, 10, 10, 0] = B[0, 30, 30, 0] = 0.5
        np.testing.assert_allclose(d2.soft_argmax_t(Tensor(B), 1.0, 1.0).data[0, 0], [20, 20])

    def test_gradcheck(self, rng):
        B = rng.uniform(0.05, 1, (2, 5, 4, 3))
        B /= B.sum(axis=(1, 2), keepdims=True)
        proj = Tensor(rng.normal(size=(2, 3, 2)))
        assert tc.grad_check(lambda t: (d2.soft_argmax_t(t, 4.0, 4.0) * proj).sum(), B) < 1e-5

    @given(st.integers(0, 2**32 - 1))
    def test_inside_grid_hull(self, seed):
        raw = np.random.default_rng(seed).normal(0, 5, (1, 6, 7, 4))
        B = d2.normalize(Tensor(raw)).maps
        g = d2.soft_argmax_t(B, 1.0, 1.0).data[0]
        assert np.all(g[:, 0] >= -1e-12) and np.all(g[:, 0] <= 6 + 1e-12)
        assert np.all(g[:, 1] >= -1e-12) and np.all(g[:, 1] <= 5 + 1e-12)

    @given(st.integers(0, 2**32 - 1))
    def test_vertex_permutation_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        raw = rng.normal(size=(1, 5, 5, 6))
        perm = rng.permutation(6)
        B = d2.normalize(Tensor(raw)).maps.data
        Bp = d2.normalize(Tensor(raw[..., perm])).maps.data
        np.testing.assert_allclose(Bp, B[..., perm], rtol=1e-14, atol=0)
        np.testing.assert_allclose(d2.soft_argmax_t(Tensor(Bp), 2.0, 2.0).data,
                                   d2.soft_argmax_t(Tensor(B), 2.0, 2.0).data[:, perm], rtol=1e-14, atol=0)


class TestPixelMapping:
    @given(st.floats(-10, 100), st.sampled_from([1.0, 2.0, 4.0]))
    def test_round_trip(self, p, s):
        assert d2.grid_to_pixel(d2.pixel_to_grid(p, s), s) == pytest.approx(p, abs=1e-12)


class TestGtHeatmap:
    def test_recovers_interior_vertices(self, rng):
        U = MeshGrid2D(rng.uniform(16, 48, (9, 2)))
        stack = d2.gt_heatmap(U, 16, 16, sigma=1.5, scale=4.0)
        back = d2.soft_argmax_t(stack.maps, 4.0, 4.0).data[0]
        err_cells = np.abs(back - U.vertices).max() / 4.0
        assert err_cells < 0.1

    def test_peak_at_nearest_cell(self):
        U = MeshGrid2D(np.array([[5.3, 9.8]] * 4))
        maps = d2.gt_heatmap(U, 16, 16, sigma=1.5).maps.data[0, :, :, 0]
        assert np.unravel_index(maps.argmax(), maps.shape) == (10, 5)

    def test_narrow_mass(self):
        U = MeshGrid2D(np.array([[8.0, 8.0]] * 4))
        maps = d2.gt_heatmap(U, 17, 17, sigma=0.5).maps.data[0, :, :, 0]
        yy, xx = np.mgrid[:17, :17]
        assert maps[(yy - 8) ** 2 + (xx - 8) ** 2 <= 4].sum() > 0.99

    def test_bad_sigma(self):
        with pytest.raises(ValueError):
            d2.gt_heatmaps(np.zeros((1, 4, 2)), 4, 4, sigma=0.0, scale_u=1.0)


class TestRunStage:
    def test_first_stage_normalized(self, rng):
        regs, P, F = stage_setup(rng)
        B = d2.run_stage(regs[0], P, F, None)
        assert B.stage == 1 and B.maps.shape == (2, 8, 8, 4)
        np.testing.assert_allclose(B.maps.data.sum(axis=(1, 2)), 1.0, atol=1e-12)

    def test_input_channels(self):
        assert d2.StageRegressor(2, 32, 25).in_channels == 32 + 25
        assert d2.StageRegressor(1, 32, 25).in_channels == 32

    def test_prev_required_iff_later_stage(self, rng):
        regs, P, F = stage_setup(rng)
        B1 = d2.run_stage(regs[0], P, F, None)
        with pytest.raises(ValueError):
            d2.run_stage(regs[1], P, F, None)
        with pytest.raises(ValueError):
            d2.run_stage(regs[0], P, F, B1)

    def test_grid_mismatch(self, rng):
        regs, P, F = stage_setup(rng)
        B1 = d2.run_stage(regs[0], P, F, None)
        with pytest.raises(tc.ShapeError):
            d2.run_stage(regs[1], P, Tensor(np.zeros((2, 4, 4, 6))), B1)

    def test_chain_gradcheck(self, rng):
        regs, P, F = stage_setup(rng, C=3, Nv=2, H=16, W=16, width=4)
        proj = Tensor(rng.normal(size=(2, 2, 2)))

        def f(t):
            B = None
            for r in regs:
                B = d2.run_stage(r, P, t, B)
            return (d2.soft_argmax_t(B.maps, 4.0, 4.0) * proj).sum()
        assert tc.grad_check(f, F.data) < 1e-3
