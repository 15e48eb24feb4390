import numpy as np
import pytest

from convmean import model as cm
from convmean.exceptions import FormatError, ShapeError

from oracles import fd_gradient, live_network, relative_error

V = cm.Variant


def random_image(seed, shape=cm.INPUT_SHAPE):
    return np.random.default_rng(seed).random(shape + (3,))


class TestParams:
    def test_param_count_cm(self):
        assert cm.param_count(V.CM) == 1113 == 189 + 882 + 42
        assert cm.init_kaiming(0).n_params() == 1113

    def test_param_count_variants(self):
        assert cm.param_count(V.CM_C_SingleConv) == 3 * 3 * 3 * 38 + 38 * 3 == 1140
        for v in (V.CM_A_NoMaxPool, V.CM_B_NoReLU, V.CM_D_ChromaInput):
            assert cm.param_count(v) == 1113

    def test_kaiming_deterministic(self):
        a, b = cm.init_kaiming(42), cm.init_kaiming(42)
        assert a.flat().tobytes() == b.flat().tobytes()
        assert cm.init_kaiming(43).flat().tobytes() != a.flat().tobytes()

    def test_kaiming_std(self):
        draws = np.concatenate([cm.init_kaiming(s).f1.ravel() for s in range(10)])
        assert draws.size == 1890
        expected = np.sqrt(2 / 27)
        assert abs(draws.std() - expected) < 0.2 * expected
        assert abs(draws.mean()) < 0.2 * expected

    def test_kaiming_fan_in_per_bank(self):
        p = cm.init_kaiming(0)
        assert p.f2.std() == pytest.approx(np.sqrt(2 / 63), rel=0.2)
        assert p.f3.std() == pytest.approx(np.sqrt(2 / 14), rel=0.35)

    def test_params_are_read_only(self):
        p = cm.init_kaiming(0)
        with pytest.raises(ValueError):
            p.f1[0, 0, 0, 0] = 1.0

    def test_wrong_shape_rejected(self):
        with pytest.raises(ShapeError):
            cm.CmParams(np.zeros((3, 3, 3, 8)), np.zeros((3, 3, 7, 14)), np.zeros((1, 1, 14, 3)))

    def test_variant_names(self):
        assert V.parse("cm-c") is V.CM_C_SingleConv
        assert V.parse("CM_B_NoReLU") is V.CM_B_NoReLU
        assert V.parse(4) is V.CM_D_ChromaInput
        with pytest.raises(ValueError):
            V.parse("cm-z")


class TestForward:
    def test_zero_filters_degenerate(self):
        p = cm.CmParams(np.zeros((3, 3, 3, 7)), np.zeros((3, 3, 7, 14)), np.zeros((1, 1, 14, 3)))
        est, _, degenerate = cm.forward(p, random_image(0))
        assert degenerate
        np.testing.assert_allclose(est, np.ones(3) / np.sqrt(3))

    def test_shape_trace(self):
        p, x, _ = live_network(0)
        _, c, _ = cm.forward(p, x)
        assert c.x.shape[1:] == (32, 48, 3)
        assert c.conv1.shape[1:] == (32, 48, 7)
        assert c.g1.shape[1:] == (16, 24, 7)
        assert c.conv2.shape[1:] == (16, 24, 14)
        assert c.g2.shape[1:] == (8, 12, 14)
        assert c.conv3.shape[1:] == (8, 12, 3)
        assert c.pre_norm.shape[1:] == (3,)

    def test_variant_shapes(self):
        x = random_image(1)
        _, c, _ = cm.forward(cm.init_kaiming(0, V.CM_A_NoMaxPool), x)
        assert c.g2.shape[1:] == (32, 48, 14) and c.route1 is None
        _, c, _ = cm.forward(cm.init_kaiming(0, V.CM_C_SingleConv), x)
        assert c.g1.shape[1:] == (16, 24, 38) and c.conv2 is None
        assert c.features.shape[1:] == (16, 24, 38)

    def test_no_relu_variant_keeps_negatives(self):
        _, c, _ = cm.forward(cm.init_kaiming(0, V.CM_B_NoReLU), random_image(2))
        assert c.g1.min() < 0

    def test_matches_manual_composition(self):
        # compose the primitives by hand: l2(gap(relu(conv1x1(g(conv(g(conv(x))))))))
        from convmean import tensor_nn as nn
        p, x, _ = live_network(1)
        p = p.astype(np.float64)

        def g(t):
            return nn.relu(nn.maxpool2x2(t)[0])
        feat = g(nn.conv2d(g(nn.conv2d(x, p.f1, pad=1)), p.f2, pad=1))
        v = nn.global_avg_pool(nn.relu(nn.conv2d(feat, p.f3)))
        est, _, _ = cm.forward(p, x)
        np.testing.assert_allclose(est, v / np.linalg.norm(v), atol=1e-12)

    @pytest.mark.parametrize("variant", list(V))
    def test_unit_nonnegative(self, variant):
        for seed in range(5):
            p = cm.init_kaiming(seed, variant)
            x = cm.prepare_input(random_image(seed), variant)
            est, _, degenerate = cm.forward(p, x)
            assert np.all(np.isfinite(est)) and np.all(est >= 0)
            if not degenerate:
                assert np.linalg.norm(est) == pytest.approx(1.0, abs=1e-6)

    def test_exposure_invariance(self):
        p, _, _ = live_network(3)
        raw = random_image(3) * 200
        ref = cm.predict(p, cm.prepare_input(raw).astype(np.float32))
        for k in (0.25, 0.5, 2.0):
            out = cm.predict(p, cm.prepare_input(k * raw).astype(np.float32))
            np.testing.assert_array_equal(out, ref)

    def test_batch_equals_singles(self):
        p, _, _ = live_network(4)
        xb = np.stack([cm.prepare_input(random_image(s)) for s in range(4)]).astype(np.float32)
        est, _, deg = cm.forward(p, xb)
        assert est.shape == (4, 3) and deg.shape == (4,)
        for i in range(4):
            np.testing.assert_allclose(est[i], cm.predict(p, xb[i]), atol=1e-6)

    def test_wrong_shape(self):
        with pytest.raises(ShapeError):
            cm.forward(cm.init_kaiming(0), np.zeros((32, 48)))
        with pytest.raises(ShapeError):
            cm.forward(cm.init_kaiming(0), np.zeros((32, 48, 4)))

    def test_chromaticity(self):
        x = np.array([[[2.0, 1.0, 1.0], [0.0, 0.0, 0.0]]])
        np.testing.assert_allclose(cm.to_chromaticity(x), [[[0.5, 0.25, 0.25], [0, 0, 0]]])
        xc = cm.prepare_input(random_image(0) * 9, V.CM_D_ChromaInput)
        np.testing.assert_allclose(xc.sum(axis=-1), 1.0)


class TestBackward:
    @pytest.mark.parametrize("variant", list(V))
    def test_matches_finite_differences(self, variant):
        p, x, rng = live_network(11, variant)
        w = rng.normal(size=3)
        _, cache, _ = cm.forward(p, x.astype(np.float32))
        analytic = cm.backward(p, cache, w).flat()
        numeric, _ = fd_gradient(p, x, w)
        assert relative_error(analytic, numeric).max() < 1e-3

    def test_batched_gradient_is_sum(self):
        p, _, _ = live_network(5)
        rng = np.random.default_rng(5)
        xb = np.stack([cm.prepare_input(rng.random((32, 48, 3))) for _ in range(3)])
        d = rng.normal(size=(3, 3))
        p64 = p.astype(np.float64)
        _, cache, _ = cm.forward(p64, xb)
        total = cm.backward(p64, cache, d).flat()
        parts = sum(cm.backward(p64, cm.forward(p64, xb[i])[1], d[i]).flat() for i in range(3))
        np.testing.assert_allclose(total, parts, atol=1e-12)

    def test_zero_upstream(self):
        p, x, _ = live_network(6)
        _, cache, _ = cm.forward(p, x)
        grads = cm.backward(p, cache, np.zeros(3))
        assert all(not np.any(g) for g in grads.banks)

    def test_dead_channel_has_zero_gradient(self):
        p, x, rng = live_network(7)
        f3 = np.array(p.f3)
        f3[..., 1] = -np.abs(f3[..., 1]) - 1.0  # features are >= 0, so channel 1 never fires
        p = cm.CmParams(p.f1, p.f2, f3)
        est, cache, _ = cm.forward(p, x)
        assert est[1] == 0
        grads = cm.backward(p, cache, rng.normal(size=3))
        assert not np.any(grads.f3[..., 1])
        assert np.any(grads.f3[..., 0])

    def test_finite(self):
        for seed in range(5):
            p, x, rng = live_network(seed)
            _, cache, _ = cm.forward(p, x)
            grads = cm.backward(p, cache, rng.normal(size=3))
            assert all(np.all(np.isfinite(g)) for g in grads.banks)

    def test_degenerate_has_zero_gradient(self):
        p = cm.CmParams(np.zeros((3, 3, 3, 7)), np.zeros((3, 3, 7, 14)), np.zeros((1, 1, 14, 3)))
        _, cache, _ = cm.forward(p, random_image(0))
        assert not np.any(cm.backward(p, cache, np.ones(3)).flat())

    def test_stale_cache_rejected(self):
        p, x, _ = live_network(8)
        _, cache, _ = cm.forward(p, x)
        with pytest.raises(ValueError, match="different parameters"):
            cm.backward(cm.init_kaiming(1), cache, np.ones(3))
        with pytest.raises(ShapeError):
            cm.backward(p, cache, np.ones(4))


class TestSerialization:
    @pytest.mark.parametrize("variant", list(V))
    def test_round_trip_bitwise(self, variant):
        p = cm.init_kaiming(3, variant)
        blob = cm.serialize(p)
        q = cm.deserialize(blob)
        assert q.variant is variant
        assert q.flat().tobytes() == p.flat().tobytes()
        assert cm.serialize(q) == blob

    def test_file_size(self):
        assert len(cm.serialize(cm.init_kaiming(0))) == 4460 == 8 + 1113 * 4
        assert len(cm.serialize(cm.init_kaiming(0, V.CM_C_SingleConv))) == 8 + 1140 * 4

    def test_layout(self):
        p = cm.init_kaiming(9)
        blob = cm.serialize(p)
        assert blob[:8] == b"CMW1\x01\x00\x00\x00"
        f1 = np.frombuffer(blob[8:8 + 189 * 4], dtype="<f4").reshape(3, 3, 3, 7)
        np.testing.assert_array_equal(f1, p.f1)
        # [kh][kw][cin][cout] row-major: the second float is f1[0, 0, 0, 1]
        assert np.frombuffer(blob[12:16], "<f4")[0] == p.f1[0, 0, 0, 1]
        f3 = np.frombuffer(blob[8 + (189 + 882) * 4:], dtype="<f4").reshape(1, 1, 14, 3)
        np.testing.assert_array_equal(f3, p.f3)
        assert cm.serialize(cm.init_kaiming(0, V.CM_D_ChromaInput))[5] == 4

    @pytest.mark.parametrize("mutate, message", [
        (lambda b: b[:-1], "4460"),
        (lambda b: b[:5], "too short"),
        (lambda b: b"CMW2" + b[4:], "magic"),
        (lambda b: b[:4] + b"\x02" + b[5:], "version"),
        (lambda b: b[:5] + b"\x09" + b[6:], "variant"),
        (lambda b: b[:6] + b"\x01" + b[7:], "reserved"),
        (lambda b: b + b"\x00" * 4, "4460"),
    ])
    def test_bad_files(self, mutate, message):
        with pytest.raises(FormatError, match=message):
            cm.deserialize(mutate(cm.serialize(cm.init_kaiming(0))))

    def test_save_load(self, tmp_path):
        p = cm.init_kaiming(1)
        cm.save(p, tmp_path / "m.cmw")
        assert (tmp_path / "m.cmw").stat().st_size == 4460
        assert cm.load(tmp_path / "m.cmw").flat().tobytes() == p.flat().tobytes()


class TestFeatureMaps:
    def test_shapes_and_ranges(self):
        p, x, _ = live_network(2)
        features, response, focus = cm.dump_feature_maps(p, x)
        assert features.shape == (8, 12, 14)
        assert response.shape == (8, 12, 3)
        assert focus.shape == (8, 12, 1)
        assert features.min() >= 0 and response.min() >= 0
        assert focus.min() == 0 and focus.max() == 1

    def test_focus_is_channel_mean(self):
        p, x, _ = live_network(3)
        _, response, focus = cm.dump_feature_maps(p, x)
        m = response.mean(axis=-1, keepdims=True).astype(np.float64)
        np.testing.assert_allclose(focus, (m - m.min()) / (m.max() - m.min()), atol=1e-6)

    def test_constant_input_interior_constant(self):
        p = cm.init_kaiming(5)
        x = np.ones((32, 48, 3)) * np.array([0.4, 0.7, 1.0])
        features, _, _ = cm.dump_feature_maps(p, x)
        # each pooled cell sees a window of the padded input; the interior is border-free
        interior = features[2:-2, 2:-2]
        np.testing.assert_allclose(interior, np.broadcast_to(interior[:1, :1], interior.shape), atol=1e-6)

    def test_flat_response_focus_zero(self):
        p = cm.CmParams(np.zeros((3, 3, 3, 7)), np.zeros((3, 3, 7, 14)), np.zeros((1, 1, 14, 3)))
        _, _, focus = cm.dump_feature_maps(p, random_image(0))
        assert not np.any(focus)
