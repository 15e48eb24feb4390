import numpy as np
import pytest

from convmean import baselines as bl
from convmean.evaluation import angular_error

from oracles import gray_edge_oracle, minkowski_oracle

GRAY = np.ones(3) / np.sqrt(3)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def constant(color, shape=(8, 10)):
    img = np.empty(shape + (3,))
    img[:] = color
    return img


def random_image(seed, shape=(32, 48)):
    return np.random.default_rng(seed).uniform(1, 255, size=shape + (3,))


class TestGrayWorld:
    def test_constant(self):
        np.testing.assert_allclose(bl.gray_world(constant((0.2, 0.4, 0.8))), unit((0.2, 0.4, 0.8)))

    def test_half_red_half_blue(self):
        img = np.zeros((4, 4, 3))
        img[:2, :, 0] = 1
        img[2:, :, 2] = 1
        np.testing.assert_allclose(bl.gray_world(img), unit((1, 0, 1)))

    def test_masked_block_ignored(self):
        img = constant((0.3, 0.5, 0.2))
        masked = img.copy()
        masked[2:5, 3:7] = 0
        np.testing.assert_allclose(bl.gray_world(masked), bl.gray_world(img), atol=1e-15)
        assert angular_error(bl.gray_world(masked, exclude_masked=False), bl.gray_world(img)) < 1e-6

    def test_fully_masked(self):
        with pytest.raises(ValueError):
            bl.gray_world(np.zeros((4, 4, 3)))


class TestWhitePatch:
    def test_white_pixel(self):
        img = random_image(0).astype(np.uint8)
        img[3, 3] = 255
        np.testing.assert_allclose(bl.white_patch(img), GRAY)

    def test_constant(self):
        np.testing.assert_allclose(bl.white_patch(constant((5, 1, 2))), unit((5, 1, 2)))

    def test_fully_masked(self):
        with pytest.raises(ValueError):
            bl.white_patch(np.zeros((4, 4, 3)))


class TestShadesOfGray:
    @pytest.mark.parametrize("seed", range(5))
    def test_p1_is_gray_world(self, seed):
        img = random_image(seed)
        assert np.abs(bl.shades_of_gray(img, 1) - bl.gray_world(img)).max() < 1e-9

    @pytest.mark.parametrize("p", [1, 2, 6, 40])
    def test_constant(self, p):
        np.testing.assert_allclose(bl.shades_of_gray(constant((0.1, 0.6, 0.3)), p), unit((0.1, 0.6, 0.3)))

    def test_matches_direct_summation(self):
        for seed in range(100):
            img = random_image(seed, (12, 16))
            img[:2, :3] = 0
            assert np.abs(bl.shades_of_gray(img, 6) - minkowski_oracle(img, 6)).max() < 1e-7

    def test_large_p_is_stable(self):
        img = random_image(1)
        assert np.all(np.isfinite(bl.shades_of_gray(img, 1000)))

    def test_power_mean_nondecreasing_in_p(self):
        for seed in range(10):
            flat = random_image(seed).reshape(-1, 3)
            means = [bl._minkowski(flat, p) for p in (1, 2, 6, 32, 256)]
            for lo, hi in zip(means, means[1:]):
                assert np.all(lo <= hi * (1 + 1e-12))
            assert np.all(means[-1] <= flat.max(axis=0) * (1 + 1e-12))

    def test_approaches_white_patch(self):
        for seed in range(10):
            img = random_image(seed)
            far = angular_error(bl.shades_of_gray(img, 1), bl.white_patch(img))
            near = angular_error(bl.shades_of_gray(img, 256), bl.white_patch(img))
            assert near < far and near < 0.5

    def test_invalid_p(self):
        with pytest.raises(ValueError):
            bl.shades_of_gray(random_image(0), 0.5)


class TestGrayEdge:
    def test_constant_falls_back(self):
        for order in (1, 2):
            est, degenerate = bl.gray_edge(constant((0.3, 0.3, 0.9)), order)
            assert degenerate
            np.testing.assert_allclose(est, GRAY)

    @pytest.mark.parametrize("order", [1, 2])
    def test_single_step(self, order):
        img = constant((0.2, 0.1, 0.1), (9, 12))
        img[:, 6:] = (0.4, 0.2, 0.2)
        est, degenerate = bl.gray_edge(img, order)
        assert not degenerate
        np.testing.assert_allclose(est, unit((0.2, 0.1, 0.1)), atol=1e-12)

    @pytest.mark.parametrize("order, p", [(1, 1), (1, 6), (2, 1), (2, 2)])
    def test_matches_brute_force(self, order, p):
        for seed in range(100 if (order, p) == (1, 1) else 10):
            img = random_image(seed, (10, 14))
            img[3:5, 4:6] = 0
            est, _ = bl.gray_edge(img, order, p)
            assert np.abs(est - gray_edge_oracle(img, order, p)).max() < 1e-6

    def test_masked_stencils_dropped(self):
        img = constant((0.5, 0.5, 0.5), (10, 10))
        img[4:6, 4:6] = 0
        est, degenerate = bl.gray_edge(img)
        # the only edges are against the masked block, which are excluded
        assert degenerate
        est, degenerate = bl.gray_edge(img, exclude_masked=False)
        assert not degenerate

    def test_needs_3x3(self):
        with pytest.raises(ValueError):
            bl.gray_edge(np.ones((2, 5, 3)))


@pytest.mark.parametrize("name", bl.ALGORITHMS)
def test_unit_nonnegative_and_exposure_invariant(name):
    for seed in range(5):
        img = random_image(seed)
        est = bl.estimate(name, img)
        assert np.linalg.norm(est) == pytest.approx(1.0)
        assert np.all(est >= 0)
        np.testing.assert_allclose(bl.estimate(name, 3.7 * img), est, atol=1e-9)


def test_unknown_name():
    with pytest.raises(ValueError):
        bl.estimate("retinex", random_image(0))


def test_config_validation():
    assert bl.BaselineConfig().minkowski_p == 6.0
    with pytest.raises(ValueError):
        bl.BaselineConfig(minkowski_p=0.5)
    with pytest.raises(ValueError):
        bl.BaselineConfig(edge_order=3)
