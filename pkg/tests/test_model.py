import numpy as np
import pytest

from pagnet.blocks import count_flops
from pagnet.model import TASK_OUTPUTS, NetConfig, ToyNet

SMALL = dict(channels=8, depth=3, head_channels=4, rates=(0, 1, 2))


def _net(**kw):
    return ToyNet(NetConfig(**{**SMALL, **kw}))


class TestShapes:
    @pytest.mark.parametrize("task", sorted(TASK_OUTPUTS))
    def test_prediction_matches_input_size(self, task, rng):
        toy = _net(task=task)
        out = toy.forward(toy.init_params(rng), rng.normal(size=(3, 10, 12)))
        assert out.pred.shape == (TASK_OUTPUTS[task], 10, 12)

    def test_boundary_has_two_side_outputs(self, rng):
        toy = _net(task="shapes-boundary")
        out = toy.forward(toy.init_params(rng), rng.normal(size=(3, 8, 8)))
        assert [s.shape for s in out.side] == [(1, 8, 8)] * 2

    @pytest.mark.parametrize("hw", [(8, 8), (10, 14), (16, 12)])
    def test_pag_accepts_any_even_size(self, rng, hw):
        toy = _net(policy="PAG", gated=(0, 1, 2))
        out = toy.forward(toy.init_params(rng), rng.normal(size=(3, *hw)))
        assert out.pred.shape[1:] == hw
        assert all(m.shape == (hw[0] // 2, hw[1] // 2) for m in out.masks)

    def test_static_perforation_rejects_other_sizes(self, rng):
        toy = _net(policy="StaticPerforation", gated=(0,), static_hw=(4, 4))
        params = toy.init_params(rng)
        toy.forward(params, rng.normal(size=(3, 8, 8)))
        with pytest.raises(ValueError):
            toy.forward(params, rng.normal(size=(3, 10, 8)))


class TestParams:
    def test_extend_never_drops(self, rng):
        dense = _net().init_params(rng)
        gated = _net(policy="PAG", gated=(0, 1), multipool="hard").extend_params(dense, rng)
        assert set(dense) <= set(gated)
        for k in dense:
            assert gated[k] is dense[k]
        assert "mp.sel_w" in gated

    def test_required_names_cover_forward(self, rng):
        toy = _net(policy="LayerSkip", gated=(1,), multipool="soft")
        assert toy.required_names() == set(toy.init_params(rng))

    @pytest.mark.parametrize("kw", [dict(depth=0), dict(truncate=3), dict(gated=(5,)),
                                    dict(policy="Nope"), dict(multipool="both"),
                                    dict(policy="StaticPerforation", gated=(0,))])
    def test_bad_configs_raise(self, kw):
        with pytest.raises(ValueError):
            NetConfig(**{**SMALL, **kw})


class TestRouting:
    def test_all_on_pag_equals_dense(self, rng):
        dense = _net()
        params = dense.init_params(rng)
        pag = _net(policy="PAG", gated=(0, 1, 2))
        params = pag.extend_params(params, rng)
        img = rng.normal(size=(3, 8, 8))
        ones = {i: np.ones((4, 4)) for i in range(3)}
        a = pag.forward(params, img, forced_masks=ones).pred.data
        b = dense.forward(params, img).pred.data
        np.testing.assert_array_equal(a, b)

    def test_truncation_skips_trailing_blocks(self, rng):
        full = _net()
        params = full.init_params(rng)
        # zeroing the residual branch of the last block makes it an identity
        params["block2.w3"] = np.zeros_like(params["block2.w3"])
        params["block2.b3"] = np.zeros_like(params["block2.b3"])
        params["block2.s3"] = np.zeros_like(params["block2.s3"])
        img = rng.normal(size=(3, 8, 8))
        a = full.forward(params, img).pred.data
        b = _net(policy="Truncated", truncate=1).forward(params, img).pred.data
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_training_and_inference_paths_agree(self, rng):
        toy = _net(policy="PAG", gated=(0, 1, 2), multipool="hard")
        params = toy.init_params(rng)
        img = rng.normal(size=(3, 8, 8))
        a = toy.forward(params, img, training=True).pred.data
        b = toy.forward(params, img, training=False).pred.data
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-10)


class TestLayers:
    def test_dense_ratio_is_one(self):
        assert count_flops(_net().layers(8, 8)).ratio == 1.0

    def test_gated_layers_carry_block_keys(self):
        layers = _net(policy="PAG", gated=(1,)).layers(8, 8)
        keyed = {layer.name for layer in layers if layer.gate_key == "block1"}
        assert keyed == {"block1.f2", "block1.f3"}

    def test_truncated_blocks_removed(self):
        toy = _net(policy="Truncated", truncate=2)
        assert toy.removed_blocks() == ["block1", "block2"]
        rep = count_flops(toy.layers(8, 8), removed=toy.removed_blocks())
        assert rep.ratio < 1.0
