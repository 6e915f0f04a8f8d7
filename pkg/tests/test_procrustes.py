import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshlift import procrustes as pc
from meshlift import tensorcore as tc
from meshlift.tensorcore import Tensor


def random_rotation(rng):
    Q, R = np.linalg.qr(rng.normal(size=(3, 3)))
    Q = Q * np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def similarity(X, rng):
    return rng.uniform(0.2, 5.0) * X @ random_rotation(rng).T + rng.normal(0, 3, 3)


seeds = st.integers(0, 2**32 - 1)


class TestNormalizeShape:
    def test_unit_cube(self):
        cube = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
        Xh = pc.normalize_shape(cube)
        assert np.abs(Xh.sum(axis=0)).max() < 1e-10
        assert abs((Xh ** 2).sum() - 1.0) < 1e-10

    def test_degenerate(self):
        with pytest.raises(pc.DegenerateShapeError):
            pc.normalize_shape(np.ones((9, 3)))

    @given(seeds)
    def test_similarity_invariant(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(9, 3))
        a = rng.uniform(0.1, 10)
        np.testing.assert_allclose(pc.normalize_shape(a * X + rng.normal(0, 5, 3)), pc.normalize_shape(X),
                                   atol=1e-10)

    def test_gradcheck(self, rng):
        proj = Tensor(rng.normal(size=(1, 9, 3)))
        x = rng.normal(size=(1, 9, 3))
        assert tc.grad_check(lambda t: (tc.apply("normalize_shape", t) * proj).sum(), x) < 1e-6


class TestQuatMatrix:
    def test_self_alignment(self, rng):
        A = pc.normalize_shape(rng.normal(size=(9, 3)))
        w, _ = pc.eig_sym4(pc.quat_matrix(A, A))
        assert abs(w[0] - 1.0) < 1e-10

    def test_rotated(self, rng):
        A = pc.normalize_shape(rng.normal(size=(9, 3)))
        B = A @ random_rotation(rng).T
        assert abs(pc.eig_sym4(pc.quat_matrix(A, B))[0][0] - 1.0) < 1e-10

    def test_symmetric(self, rng):
        M = pc.quat_matrix(rng.normal(size=(7, 3)), rng.normal(size=(7, 3)))
        np.testing.assert_allclose(M, M.T, atol=1e-12)

    @given(seeds)
    def test_lambda_max_matches_svd(self, seed):
        rng = np.random.default_rng(seed)
        A = pc.normalize_shape(rng.normal(size=(9, 3)))
        B = pc.normalize_shape(rng.normal(size=(9, 3)))
        R, _ = pc.svd_align(A, B)
        best = float((A * (B @ R.T)).sum())
        assert abs(pc.eig_sym4(pc.quat_matrix(A, B))[0][0] - best) < 1e-9


class TestEigSym4:
    def test_diagonal(self):
        w, V = pc.eig_sym4(np.diag([4.0, 3.0, 2.0, 1.0]))
        np.testing.assert_array_equal(w, [4, 3, 2, 1])
        assert abs(abs(V[0, 0]) - 1.0) < 1e-15

    def test_identity_flags_degenerate_gradient(self):
        before = pc.degenerate_gradients
        with tc.Tape() as tape:
            M = Tensor(np.eye(4)[None], requires_grad=True)
            lam = tc.apply("lambda_max", M).sum()
        np.testing.assert_array_equal(lam.data, 1.0)
        g = tc.backward(tape, lam)[M]
        assert pc.degenerate_gradients == before + 1
        assert not g.any()

    @given(seeds)
    def test_matches_numpy(self, seed):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(4, 4))
        M = A + A.T
        w, V = pc.eig_sym4(M)
        np.testing.assert_allclose(w, np.linalg.eigvalsh(M)[::-1], atol=1e-10)
        np.testing.assert_allclose(M @ V, V * w, atol=1e-9)
        np.testing.assert_allclose(V.T @ V, np.eye(4), atol=1e-12)

    def test_batched(self, rng):
        A = rng.normal(size=(6, 4, 4))
        M = A + np.swapaxes(A, 1, 2)
        w, _ = pc.eig_sym4(M)
        for k in range(6):
            np.testing.assert_allclose(w[k], pc.eig_sym4(M[k])[0], atol=1e-12)

    def test_lambda_max_gradcheck(self, rng):
        Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        M = (Q @ np.diag([2.0, 1.0, 0.0, -1.0]) @ Q.T)[None]
        assert tc.grad_check(lambda t: tc.apply("lambda_max", t).sum(), M) < 1e-6


class TestErrAlign:
    def test_similarity_zero(self, rng):
        X = rng.normal(size=(81, 3))
        assert pc.err_align(X, similarity(X, rng)) < 1e-8

    @given(seeds)
    def test_similarity_zero_tight(self, seed):
        # the value avoids the cancellation in 2 - 2 lambda_max
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(25, 3))
        assert pc.err_align(X, similarity(X, rng)) < 1e-13

    @given(seeds)
    def test_matches_eigenvalue_form(self, seed):
        rng = np.random.default_rng(seed)
        X, Y = rng.normal(size=(2, 25, 3))
        lam = pc.eig_sym4(pc.quat_matrix(pc.normalize_shape(X), pc.normalize_shape(Y)))[0][0]
        assert pc.err_align(X, Y) ** 2 == pytest.approx((2 - 2 * lam) / 25, abs=1e-14)

    def test_symmetric(self, rng):
        X, Y = rng.normal(size=(2, 81, 3))
        assert abs(pc.err_align(X, Y) - pc.err_align(Y, X)) < 1e-12

    def test_matches_oracle_9x9(self, rng):
        for _ in range(20):
            X, Y = rng.normal(size=(2, 81, 3))
            assert abs(pc.err_align(X, Y) - pc.oracle_err_align(X, Y)) < 1e-8

    def test_perturbation_positive(self, rng):
        X = rng.normal(size=(25, 3))
        Y = similarity(X, rng)
        Y[3] += 1e-3
        assert pc.err_align(X, Y) > 0

    def test_shape_mismatch(self):
        with pytest.raises(tc.ShapeError):
            pc.err_align_t(Tensor(np.ones((1, 4, 3))), Tensor(np.ones((1, 9, 3))))

    def test_gradcheck(self, rng):
        Xs = Tensor(rng.normal(size=(2, 25, 3)))
        assert tc.grad_check(lambda t: pc.err_align_t(t, Xs).sum(), rng.normal(size=(2, 25, 3))) < 1e-4

    @given(seeds)
    @settings(max_examples=25)
    def test_bounded(self, seed):
        rng = np.random.default_rng(seed)
        X, Y = rng.normal(size=(2, 16, 3))
        assert pc.err_align(X, Y) <= np.sqrt(2.0 / 16) + 1e-12


class TestSvdAlign:
    def test_recovers_rotation(self, rng):
        A = rng.normal(size=(10, 3))
        A -= A.mean(axis=0)
        R = random_rotation(rng)
        R_est, rmsd = pc.svd_align(A @ R.T, A)
        assert np.linalg.norm(R_est - R) < 1e-10
        assert rmsd < 1e-10

    def test_collinear(self):
        t = np.linspace(0, 1, 5)[:, None]
        with pytest.raises(pc.DegenerateShapeError):
            pc.svd_align(t * [1.0, 2.0, 3.0], t * [3.0, 2.0, 1.0])

    @given(seeds)
    def test_identity_with_lambda(self, seed):
        rng = np.random.default_rng(seed)
        A = pc.normalize_shape(rng.normal(size=(12, 3)))
        B = pc.normalize_shape(rng.normal(size=(12, 3)))
        _, rmsd = pc.svd_align(A, B)
        lam = pc.eig_sym4(pc.quat_matrix(A, B))[0][0]
        expect = ((A * A).sum() + (B * B).sum()) / 12 - 2 * lam / 12
        assert abs(rmsd ** 2 - expect) < 1e-12


class TestAlignedVertexError:
    def test_zero_for_similarity(self, rng):
        X = rng.normal(size=(25, 3))
        assert pc.aligned_vertex_error(similarity(X, rng), X) < 1e-10

    def test_ground_truth_units(self, rng):
        X = rng.normal(size=(25, 3))
        noise = rng.normal(size=(25, 3))
        small = pc.aligned_vertex_error(X + 1e-3 * noise, X)
        big = pc.aligned_vertex_error(10 * X + 1e-2 * noise, 10 * X)
        assert big == pytest.approx(10 * small, rel=1e-6)
