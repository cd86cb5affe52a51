import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import l1_oracle
from multirobust.geometry import (
    INF,
    Lp,
    PermutationRT,
    RotateTranslate,
    apply_rotation_translation,
    clip_to_box,
    lp_norm,
    project_l1,
    project_lp,
    scale,
    steepest_direction,
)


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


class TestNorms:
    def test_examples(self):
        r = np.array([3.0, -4.0])
        assert lp_norm(r, 2) == 5.0
        assert lp_norm(r, 1) == 7.0
        assert lp_norm(r, INF) == 4.0

    @pytest.mark.parametrize("p", [1, 2, INF])
    def test_zero(self, p):
        assert lp_norm(np.zeros((3, 2)), p) == 0.0

    def test_unsupported(self):
        with pytest.raises(ValueError):
            lp_norm(np.ones(3), 3)


class TestSteepest:
    def test_examples(self):
        np.testing.assert_array_equal(steepest_direction(np.array([1.0, -2.0]), INF), [1, -1])
        np.testing.assert_allclose(steepest_direction(np.array([3.0, 4.0]), 2), [0.6, 0.8])
        np.testing.assert_array_equal(steepest_direction(np.array([1.0, -2.0]), 1), [0, -1])

    def test_l1_tie_lowest_index(self):
        np.testing.assert_array_equal(steepest_direction(np.array([2.0, -2.0, 1.0]), 1), [1, 0, 0])

    @pytest.mark.parametrize("p", [1, 2, INF])
    def test_zero_gradient(self, p):
        assert np.all(steepest_direction(np.zeros(4), p) == 0)

    @pytest.mark.parametrize("p", [1, 2, INF])
    def test_maximizes_inner_product(self, rng, p):
        g = rng.normal(size=10)
        best = steepest_direction(g, p) @ g
        v = rng.normal(size=(1000, 10))
        norms = {1: np.abs(v).sum(1), 2: np.linalg.norm(v, axis=1), INF: np.abs(v).max(1)}[p]
        v = v / norms[:, None]
        assert np.all(v @ g <= best + 1e-12)


class TestProjection:
    def test_feasible_unchanged(self):
        r = np.array([0.2, -0.3])
        np.testing.assert_array_equal(project_l1(r, 1.0), r)

    def test_single_axis(self):
        np.testing.assert_allclose(project_l1(np.array([3.0, 0.0]), 1.0), [1.0, 0.0])

    def test_matches_oracle(self, rng):
        for _ in range(1000):
            d = int(rng.integers(1, 9))
            r = rng.normal(size=d) * rng.uniform(0.1, 5)
            eps = rng.uniform(0.05, 3)
            assert np.max(np.abs(project_l1(r, eps) - l1_oracle(r, eps))) <= 1e-9

    @pytest.mark.parametrize("d", [10, 1000, 10_000])
    def test_feasible_and_idempotent(self, rng, d):
        r = rng.normal(size=d)
        eps = 0.1 * d ** 0.5
        p = project_l1(r, eps)
        assert np.abs(p).sum() <= eps + 1e-9
        assert np.max(np.abs(project_l1(p, eps) - p)) <= 1e-12
        nz = p != 0
        assert np.all(np.sign(p[nz]) == np.sign(r[nz]))

    def test_is_closest_point(self, rng):
        r = rng.normal(size=6) * 3
        eps = 1.0
        p = project_l1(r, eps)
        z = rng.normal(size=(2000, 6))
        z = z / np.abs(z).sum(1, keepdims=True) * rng.uniform(0, eps, size=(2000, 1))
        assert np.all(np.linalg.norm(z - r, axis=1) >= np.linalg.norm(p - r) - 1e-12)

    def test_project_lp_examples(self):
        np.testing.assert_allclose(project_lp(np.array([0.5, -0.1]), Lp(INF, 0.3)), [0.3, -0.1])
        np.testing.assert_allclose(project_lp(np.array([3.0, 4.0]), Lp(2, 1.0)), [0.6, 0.8])
        r = np.array([0.9, -0.4, 0.2])
        np.testing.assert_allclose(project_lp(r, Lp(1, 0.5)), l1_oracle(r, 0.5), atol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.integers(1, 12), elements=finite),
           st.sampled_from([1, 2, INF]), st.floats(1e-3, 10))
    def test_lp_idempotent_and_nonexpansive(self, r, p, eps):
        b = Lp(p, eps)
        once = project_lp(r, b)
        assert lp_norm(once, p) <= eps * (1 + 1e-9) + 1e-12
        np.testing.assert_allclose(project_lp(once, b), once, rtol=1e-9, atol=1e-9)
        # projection is no farther from r than any feasible point we try (0 included)
        assert np.linalg.norm(once - r) <= np.linalg.norm(r) + 1e-9


class TestBox:
    def test_examples(self):
        np.testing.assert_array_equal(clip_to_box(np.array([-0.2, 0.5, 1.3])), [0, 0.5, 1])
        x = np.array([0.1, 0.9])
        np.testing.assert_array_equal(clip_to_box(x), x)

    @given(arrays(np.float64, st.integers(1, 20), elements=finite))
    def test_idempotent(self, x):
        once = clip_to_box(x)
        assert np.array_equal(clip_to_box(once), once)


class TestBudgets:
    def test_validation(self):
        with pytest.raises(ValueError):
            Lp(3, 1.0)
        with pytest.raises(ValueError):
            Lp(1, -1.0)
        with pytest.raises(ValueError):
            PermutationRT(0)
        with pytest.raises(ValueError):
            RotateTranslate(1, 1, 10, grid_angles=0)

    def test_scale(self):
        assert scale(Lp(INF, 0.3), 0.5).eps == pytest.approx(0.15)
        rt = scale(RotateTranslate(3, 3, 30.0), 0.5)
        assert (rt.max_dx_px, rt.max_dy_px, rt.max_angle_deg) == (1, 1, 15.0)
        assert scale(PermutationRT(49), 0.5).N == 25  # 24.5 rounds away from zero
        assert scale(PermutationRT(49), 0.0).N == 1
        with pytest.raises(ValueError):
            scale(Lp(1, 1.0), 1.5)

    def test_grid(self):
        g = RotateTranslate(1, 2, 30.0, grid_angles=3).grid()
        assert len(g) == 3 * 5 * 3
        assert (0, 0, 0.0) in g
        assert RotateTranslate(1, 1, 0.0).grid().count((0, 0, 0.0)) == 1


class TestRotationTranslation:
    def test_identity(self, rng):
        img = rng.uniform(size=(7, 9, 2))
        assert np.array_equal(apply_rotation_translation(img, 0, 0, 0.0), img)

    @pytest.mark.parametrize("dx,dy", [(1, 0), (0, 2), (-2, 1), (3, -3)])
    def test_integer_shift_one_hot(self, dx, dy):
        img = np.zeros((8, 8, 1))
        img[4, 3, 0] = 1.0
        out = apply_rotation_translation(img, dx, dy, 0.0)
        expect = np.zeros_like(img)
        expect[4 + dy, 3 + dx, 0] = 1.0
        assert np.array_equal(out, expect)

    def test_shift_fills_black(self, rng):
        img = rng.uniform(0.1, 1, size=(5, 5, 1))
        out = apply_rotation_translation(img, 2, 0, 0.0)
        assert np.all(out[:, :2] == 0)
        assert np.array_equal(out[:, 2:], img[:, :3])

    @pytest.mark.parametrize("interp", ["bilinear", "nearest"])
    @pytest.mark.parametrize("k", [1, 2, 3, -1])
    def test_right_angles_permute(self, rng, k, interp):
        img = rng.uniform(size=(6, 6, 3))
        out = apply_rotation_translation(img, 0, 0, 90.0 * k, interpolation=interp)
        # counter-clockwise as displayed is np.rot90 with positive k
        assert np.array_equal(out, np.rot90(img, k, axes=(0, 1)))

    def test_batch_matches_single(self, rng):
        imgs = rng.uniform(size=(3, 8, 8, 1))
        batch = apply_rotation_translation(imgs, 1, -1, 17.0)
        for i in range(3):
            np.testing.assert_array_equal(batch[i], apply_rotation_translation(imgs[i], 1, -1, 17.0))

    def test_bilinear_in_range(self, rng):
        img = rng.uniform(size=(10, 10, 1))
        out = apply_rotation_translation(img, 0.5, -0.3, 23.0)
        assert out.min() >= 0 and out.max() <= 1

    def test_unknown_interpolation(self):
        with pytest.raises(ValueError):
            apply_rotation_translation(np.zeros((3, 3, 1)), 0, 0, 10.0, interpolation="cubic")
