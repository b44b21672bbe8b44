import numpy as np
import pytest

from hyploc import tensorcore as tc
from hyploc.encoder3d import ga_layer
from hyploc.hypmath import BallConfig
from hyploc.fusion import (FusionStack, ModalInteraction, SpaceInteraction, merge, modal_interact, pool_tag,
                           space_interact)
from hyploc.tensorcore import Tensor, grad_check, grad_check_params

BALL = BallConfig(c=1.0)


def two_modalities(rng, n3d=2, grid=(1, 3), width=8, batch=None):
    shape = (lambda n: (batch, n, width)) if batch else (lambda n: (n, width))
    return {"3D": rng.normal(size=shape(n3d)), "sph": rng.normal(size=shape(grid[0] * grid[1]))}, {"sph": grid}


class TestMerge:
    def test_tags(self):
        feats, grids = two_modalities(np.random.default_rng(0))
        tokens = merge(feats, grids)
        assert tokens.tags == ["3D", "3D", "sph", "sph", "sph", "pool3D", "poolSph"]
        assert tokens.features.shape == (1, 7, 8)
        assert tokens.layout["sph"] == (2, 5)

    def test_pool_tags(self):
        assert pool_tag("3D") == "pool3D"
        assert pool_tag("bev") == "poolBev"

    def test_identical_rows_pool(self):
        row = np.random.default_rng(1).normal(size=(1, 4))
        tokens = merge({"3D": np.tile(row, (3, 1)), "sph": np.ones((2, 4))})
        np.testing.assert_allclose(tokens.rows("pool3D").data[0], tokens.rows("3D").data[0, :1], atol=1e-15)

    def test_unit_norm(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            feats, grids = two_modalities(rng, int(rng.integers(1, 9)), (2, 2), 6, batch=3)
            norms = np.linalg.norm(merge(feats, grids).features.data, axis=-1)
            np.testing.assert_allclose(norms, 1.0, atol=1e-9)

    def test_width_mismatch(self):
        with pytest.raises(ValueError, match="width"):
            merge({"3D": np.ones((2, 4)), "sph": np.ones((2, 5))})

    def test_decoupling_row_counts(self):
        feats, grids = two_modalities(np.random.default_rng(3), 5, (2, 3))
        tokens = merge(feats, grids)
        assert tokens.rows("3D").shape[1] == 5 and tokens.rows("sph").shape[1] == 6


class TestSpaceInteract:
    def test_zero_hyperbolic_weight(self):
        rng = np.random.default_rng(0)
        block = SpaceInteraction(rng, 8, 2)
        block.w_h.data[...] = 0.0
        block.w_e.data[...] = 1.7
        block.hyper.weight.data[...] = rng.normal(size=block.hyper.weight.shape) * 50
        tokens = merge(*two_modalities(rng))
        out = space_interact(tokens, block, BALL).features.data
        np.testing.assert_array_equal(out, 1.7 * block.euclid(tokens.features).data)

    def test_metric_degeneration(self):
        rng = np.random.default_rng(1)
        block = SpaceInteraction(rng, 8, 2, metric="free")
        block.w_h.data[...] = 0.0
        tokens = merge(*two_modalities(rng))
        out = space_interact(tokens, block, BALL).features.data
        block.euclid.metric = None
        plain = ga_layer(tokens.features, block.euclid).data
        np.testing.assert_allclose(out, plain, atol=1e-12)

    def test_zero_input_finite(self):
        rng = np.random.default_rng(2)
        block = SpaceInteraction(rng, 8, 2)
        for layer in (block.euclid, block.hyper):
            layer.bias.data[...] = 0.1 * rng.normal(size=layer.bias.shape)  # stays inside the ball
        tokens = merge({"3D": np.zeros((3, 8)), "sph": np.zeros((2, 8))})
        out = space_interact(tokens, block, BALL).features.data
        assert np.all(np.isfinite(out))
        expected = block.euclid.bias.data + block.hyper.bias.data
        np.testing.assert_allclose(out[0], np.broadcast_to(expected, out[0].shape), atol=1e-15)

    def test_ball_constraint(self):
        rng = np.random.default_rng(3)
        block = SpaceInteraction(rng, 8, 2)
        block.hyper.weight.data *= 40
        tokens = merge(*two_modalities(rng, 6, (2, 3), batch=2))
        space_interact(tokens, block, BALL)
        for pts in block.last_ball_points:
            assert np.all(BALL.c * np.sum(pts ** 2, axis=-1) < 1.0)

    def test_tags_unchanged(self):
        rng = np.random.default_rng(4)
        tokens = merge(*two_modalities(rng))
        out = space_interact(tokens, SpaceInteraction(rng, 8, 2), BALL)
        assert out.tags == tokens.tags and out.layout == tokens.layout

    def test_needs_a_branch(self):
        with pytest.raises(ValueError):
            SpaceInteraction(np.random.default_rng(0), 8, 2, euclidean=False, hyperbolic=False)

    def test_gradient_six_tokens(self):
        rng = np.random.default_rng(5)
        block = SpaceInteraction(rng, 4, 2, metric="free")
        for p in (block.euclid.metric.raw, block.hyper.metric.raw):
            p.data += 0.2 * rng.normal(size=p.shape)
        feats = {"3D": rng.normal(size=(2, 4)), "sph": rng.normal(size=(2, 4))}
        w = rng.normal(size=(1, 6, 4))

        def loss():
            return tc.tsum(space_interact(merge(feats), block, BALL).features * w)

        assert grad_check_params(loss, block.parameters()) < 1e-5
        f3 = feats["3D"]
        assert grad_check(lambda t: tc.tsum(space_interact(merge({"3D": t, "sph": feats["sph"]}), block, BALL)
                                            .features * w), f3) < 1e-5


class TestModalInteract:
    def test_zero_resblock_identity(self):
        rng = np.random.default_rng(0)
        block = ModalInteraction(rng, 8, 2, ["3D", "sph"])
        block.refiners["sph"].zero_()
        tokens = merge(*two_modalities(rng, 3, (2, 2)))
        out = modal_interact(tokens, block)
        np.testing.assert_array_equal(out["sph"].data, tokens.rows("sph").data)
        assert out["3D"].shape == (1, 3, 8)

    def test_missing_grid(self):
        rng = np.random.default_rng(1)
        block = ModalInteraction(rng, 8, 2, ["3D", "sph"])
        with pytest.raises(ValueError):
            modal_interact(merge({"3D": np.ones((2, 8)), "sph": np.ones((4, 8))}), block)

    def test_gradient_four_plus_four(self):
        rng = np.random.default_rng(2)
        block = ModalInteraction(rng, 4, 2, ["3D", "sph"])
        feats, grids = two_modalities(rng, 4, (2, 2), 4)
        w = {k: rng.normal(size=(1, 4, 4)) for k in feats}

        def loss():
            out = modal_interact(merge(feats, grids), block)
            return tc.tsum(out["3D"] * w["3D"]) + tc.tsum(out["sph"] * w["sph"])

        assert grad_check_params(loss, block.parameters()) < 1e-5


class TestStack:
    def test_shape_contract(self):
        rng = np.random.default_rng(0)
        stack = FusionStack(rng, 8, 2, ["3D", "sph"], num_blocks=2)
        for n3d in (3, 5):
            feats, grids = two_modalities(rng, n3d, (2, 2), batch=2)
            out = stack(feats, grids)
            assert out.features.shape == (2, n3d + 4 + 2, 8)
            assert out.tags == ["3D"] * n3d + ["sph"] * 4 + ["pool3D", "poolSph"]

    def test_three_modalities(self):
        rng = np.random.default_rng(1)
        stack = FusionStack(rng, 8, 2, ["3D", "sph", "bev"], num_blocks=1)
        feats = {"3D": rng.normal(size=(2, 8)), "sph": rng.normal(size=(4, 8)), "bev": rng.normal(size=(4, 8))}
        out = stack(feats, {"sph": (2, 2), "bev": (2, 2)})
        assert out.tags[-3:] == ["pool3D", "poolSph", "poolBev"]

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        stack = FusionStack(rng, 8, 2, ["3D", "sph"])
        feats, grids = two_modalities(rng, 3, (2, 2))
        a = stack(feats, grids).features.data
        b = stack(feats, grids).features.data
        assert a.tobytes() == b.tobytes()

    def test_rejects_zero_blocks(self):
        with pytest.raises(ValueError):
            FusionStack(np.random.default_rng(0), 8, 2, ["3D", "sph"], num_blocks=0)

    def test_gradient_to_inputs(self):
        rng = np.random.default_rng(3)
        stack = FusionStack(rng, 4, 2, ["3D", "sph"], num_blocks=1)
        feats, grids = two_modalities(rng, 3, (2, 2), 4)
        w = rng.normal(size=(1, 9, 4))
        err = grad_check(lambda t: tc.tsum(stack({"3D": t, "sph": Tensor(feats["sph"])}, grids).features * w),
                         feats["3D"])
        assert err < 1e-5
