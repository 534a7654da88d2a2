import numpy as np
import pytest

from oracles import brute_conv
from pagnet import autodiff as ad
from pagnet.autodiff import Tape
from pagnet.blocks import (
    BlockParams,
    ConvLayer,
    accumulate_ponder,
    count_flops,
    init_block,
    layer_skip_block,
    pag_block,
    standard_block,
    static_perforation_block,
)


def _reference_block(x, p):
    """Straight-line numpy composition of the bottleneck."""

    def unit(v, w, b, g, s, m, var, relu):
        y = brute_conv(v, w, b)
        y = (y - m[:, None, None]) / np.sqrt(var[:, None, None] + 1e-5) * g[:, None, None]
        y = y + s[:, None, None]
        return np.maximum(y, 0) if relu else y

    h = unit(x, p.w1, p.b1, p.g1, p.s1, p.m1, p.v1, True)
    h = unit(h, p.w2, p.b2, p.g2, p.s2, p.m2, p.v2, True)
    return x + unit(h, p.w3, p.b3, p.g3, p.s3, p.m3, p.v3, False)


class TestStandardBlock:
    def test_matches_reference_composition(self, block, rng):
        x = rng.normal(size=(8, 5, 6))
        np.testing.assert_allclose(standard_block(x, block).data, _reference_block(x, block),
                                   rtol=0, atol=1e-12)

    def test_zero_kernels_and_offsets_give_identity(self, rng):
        p = init_block(8, 2, rng)
        for k in ("w1", "w2", "w3"):
            setattr(p, k, np.zeros_like(getattr(p, k)))
        x = rng.normal(size=(8, 4, 4))
        np.testing.assert_array_equal(standard_block(x, p).data, x)

    def test_zero_kernels_propagate_bias_constant(self, rng):
        p = init_block(8, 2, rng)
        for k in ("w1", "w2", "w3"):
            setattr(p, k, np.zeros_like(getattr(p, k)))
        p.b3 = rng.normal(size=8)
        x = rng.normal(size=(8, 4, 4))
        delta = standard_block(x, p).data - x
        expected = p.b3 / np.sqrt(1.0 + 1e-5)
        np.testing.assert_allclose(delta, np.broadcast_to(expected[:, None, None], x.shape))

    def test_channel_mismatch_raises(self, block, rng):
        with pytest.raises(ValueError):
            standard_block(rng.normal(size=(4, 4, 4)), block)

    def test_inconsistent_params_raise(self, block):
        kw = block.arrays()
        kw["w2"] = np.zeros((3, 3, 3, 3))
        with pytest.raises(ValueError):
            BlockParams(**kw)

    def test_ratio_must_divide_channels(self, rng):
        with pytest.raises(ValueError):
            init_block(6, 4, rng)


class TestPagBlock:
    def test_all_on_is_bitwise_standard(self, block, rng):
        x = rng.normal(size=(8, 5, 5))
        out, _ = pag_block(x, block, mask=np.ones((5, 5)))
        np.testing.assert_array_equal(out.data, standard_block(x, block).data)

    def test_all_off_is_identity(self, block, rng):
        x = rng.normal(size=(8, 5, 5))
        out, _ = pag_block(x, block, mask=np.zeros((5, 5)))
        np.testing.assert_array_equal(out.data, x)

    @pytest.mark.parametrize("density", [0.2, 0.5, 0.8])
    def test_random_gate_selects_per_pixel(self, block, rng, density):
        x = rng.normal(size=(8, 7, 6))
        m = (rng.random((7, 6)) < density).astype(float)
        out, _ = pag_block(x, block, mask=m)
        want = np.where(m[None] > 0, standard_block(x, block).data, x)
        np.testing.assert_allclose(out.data, want, rtol=0, atol=1e-12)

    def test_training_path_has_same_forward(self, block, rng):
        x = rng.normal(size=(8, 6, 6))
        m = (rng.random((6, 6)) < 0.5).astype(float)
        a, _ = pag_block(x, block, mask=m, perforated=True)
        b, _ = pag_block(x, block, mask=m, perforated=False)
        np.testing.assert_allclose(a.data, b.data, rtol=0, atol=1e-12)

    def test_literal_mixing_variant_differs_off_mask(self, block, rng):
        # with F3 evaluated densely, skipped pixels see F3(F1(I)) added
        x = rng.normal(size=(8, 6, 6))
        m = np.zeros((6, 6))
        out, _ = pag_block(x, block, mask=m, dense_f3=True)
        assert not np.allclose(out.data, x)

    def test_gate_from_head_is_binary(self, block, rng):
        x = rng.normal(size=(8, 6, 6))
        _, g = pag_block(x, block, 0.5, rng)
        assert set(np.unique(g.data)) <= {0.0, 1.0}

    def test_forced_mask_size_checked(self, block, rng):
        with pytest.raises(ValueError):
            pag_block(rng.normal(size=(8, 4, 4)), block, mask=np.ones((3, 4)))

    def test_gate_head_gets_gradient_on_training_path(self, block, rng):
        x = rng.normal(size=(8, 5, 5))
        tape = Tape()
        p = block.watch(tape)
        out, _ = pag_block(x, p, 1.0, rng, perforated=False)
        tape.backward(ad.tsum(ad.square(out)))
        assert np.abs(tape.grad(p.gate_w)).sum() > 0

    def test_parameter_gradients_match_fd(self, block, rng):
        x = rng.normal(size=(8, 4, 4))
        m = (rng.random((4, 4)) < 0.5).astype(float)
        r = rng.normal(size=x.shape)
        for name in ("w2", "s3", "b1"):
            def f(t, name=name):
                kw = block.arrays()
                kw[name] = t
                out, _ = pag_block(x, BlockParams(**kw), mask=m)
                return ad.tsum(ad.mul(out, r))
            assert ad.grad_check(f, getattr(block, name)) < 1e-6


class TestBaselines:
    def test_layer_skip_on_matches_standard(self, block, rng):
        x = rng.normal(size=(8, 5, 5))
        out, _ = layer_skip_block(x, block, gate=1.0)
        np.testing.assert_array_equal(out.data, standard_block(x, block).data)

    def test_layer_skip_off_is_identity(self, block, rng):
        x = rng.normal(size=(8, 5, 5))
        out, g = layer_skip_block(x, block, gate=0.0)
        np.testing.assert_array_equal(out.data, x)
        assert g.shape == (1, 1)

    def test_static_mask_all_on(self, block, rng):
        x = rng.normal(size=(8, 5, 5))
        logits = np.stack([np.zeros((5, 5)), np.full((5, 5), 5.0)])
        out, g = static_perforation_block(x, block, logits)
        assert g.data.all()
        np.testing.assert_array_equal(out.data, standard_block(x, block).data)

    def test_static_rejects_other_sizes(self, block, rng):
        logits = np.zeros((2, 5, 5))
        with pytest.raises(ValueError):
            static_perforation_block(rng.normal(size=(8, 6, 5)), block, logits)


class TestPonder:
    def test_all_on_and_all_off(self):
        on = [np.ones((3, 4))] * 5
        assert (accumulate_ponder(on).values == 5).all()
        assert (accumulate_ponder([np.zeros((3, 4))] * 5).values == 0).all()

    def test_matches_elementwise_sum(self, rng):
        masks = [(rng.random((4, 4)) < 0.5).astype(float) for _ in range(6)]
        pm = accumulate_ponder(masks)
        np.testing.assert_array_equal(pm.values, np.sum(masks, axis=0))
        assert pm.layer_count == 6

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            accumulate_ponder([])


def _two_block_net():
    c, inner, h, w = 8, 4, 6, 6
    layers = []
    for b in ("block0", "block1"):
        layers += [
            ConvLayer(f"{b}.f1", h, w, c, inner, 1, 1, block=b),
            ConvLayer(f"{b}.gate", h, w, c, 2, 1, 1, block=b),
            ConvLayer(f"{b}.f2", h, w, inner, inner, 3, 3, block=b, gate_key=b),
            ConvLayer(f"{b}.f3", h, w, inner, c, 1, 1, block=b, gate_key=b),
        ]
    return layers


class TestFlops:
    def test_dense_cost_formula(self):
        assert ConvLayer("x", 5, 7, 3, 4, 3, 3).dense_flops == 2 * 5 * 7 * 3 * 4 * 9

    def test_all_on_ratio_is_one(self):
        rep = count_flops(_two_block_net(), {"block0": np.ones((6, 6)), "block1": 1.0})
        assert rep.ratio == 1.0

    def test_two_block_hand_count(self):
        # per block: F1 2*36*8*4 = 2304, gate 2*36*8*2 = 1152, F2 2*36*4*4*9 = 10368, F3 2304
        g = 0.25
        always = 2304 + 1152
        gated = 10368 + 2304
        want = (always + g * gated) / (always + gated)
        rep = count_flops(_two_block_net(), {"block0": g, "block1": g})
        assert rep.ratio == pytest.approx(want, rel=1e-12)
        assert rep.total_dense == 2 * (always + gated)

    def test_mask_densities_use_their_mean(self, rng):
        m = (rng.random((6, 6)) < 0.5).astype(float)
        a = count_flops(_two_block_net(), {"block0": m})
        b = count_flops(_two_block_net(), {"block0": float(m.mean())})
        assert a.total_gated == pytest.approx(b.total_gated)

    def test_truncating_half_a_homogeneous_stack(self):
        rep = count_flops(_two_block_net(), removed=["block1"])
        assert rep.total_gated == pytest.approx(rep.total_dense / 2)

    def test_bad_density_raises(self):
        with pytest.raises(ValueError):
            count_flops(_two_block_net(), {"block0": 1.5})
