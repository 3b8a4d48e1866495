from dataclasses import replace

import numpy as np
import pytest

from hwformer.errors import ConfigError, NumericError
from hwformer.model import (
    CO,
    HO,
    NESTED_ORDER,
    PROSE_ORDER,
    VE,
    HWformer,
    ModelConfig,
    ModelWeights,
    conv_flops,
    count_flops,
    count_params,
    directional_transformer_forward,
    expected_param_count,
    flops_breakdown,
    forward,
    gteblock_forward,
    head_forward,
    parameter_shapes,
    preset,
    tdeblock_forward,
)
from hwformer.tensor import Tensor, conv2d, finite_diff_check, no_grad
from hwformer.windows import HORIZONTAL, VERTICAL, roll


def perturbed(config, seed=0, scale=0.2):
    """Initialised weights with non-trivial norms and biases."""
    weights = ModelWeights.init(config, seed)
    rng = np.random.default_rng(seed + 1)
    for name, p in weights.named_parameters():
        if name.endswith(("bias", "beta", "rel_bias")):
            p.data = rng.standard_normal(p.shape) * 0.05
        elif name.endswith("gamma"):
            p.data = 1 + scale * rng.standard_normal(p.shape)
    return weights


class TestConfig:
    def test_defaults(self):
        cfg = ModelConfig()
        assert (cfg.gte_window, cfg.tde_window, cfg.patch, cfg.shift) == (96, 48, 6, 24)
        assert cfg.tde_sequence() == PROSE_ORDER

    def test_layer_positions(self):
        seq = ModelConfig().tde_sequence()
        assert [i + 1 for i, k in enumerate(seq) if k == HO] == [1, 4, 7]
        assert [i + 1 for i, k in enumerate(seq) if k == VE] == [2, 5, 8]
        assert [i + 1 for i, k in enumerate(seq) if k == CO] == [3, 6]

    def test_nested_order(self):
        assert preset("toy", tde_order="nested").tde_sequence() == NESTED_ORDER

    @pytest.mark.parametrize("bad", [
        dict(heads=3),
        dict(gte_window=15),
        dict(heads=0),
        dict(tde_order="spiral"),
        dict(precision="float16"),
    ])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            preset("toy", **bad)

    def test_dict_round_trip(self):
        cfg = preset("toy", precision="float64")
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset("huge")


class TestIdentity:
    @pytest.mark.parametrize("shape", [(16, 16), (41, 53), (96, 96)])
    def test_zero_model_is_identity(self, toy64, rng, shape):
        x = rng.random((1, 1, *shape))
        with no_grad():
            out = HWformer.zeros(toy64)(x).data
        np.testing.assert_array_equal(out, x)

    def test_zero_blocks_are_identity(self, toy64, rng):
        weights = ModelWeights.zeros(toy64)
        x = Tensor(rng.standard_normal((2, 8, 20, 24)))
        for b in range(2):
            np.testing.assert_array_equal(gteblock_forward(x, weights.gte(b), toy64).data, x.data)
        for i, kind in enumerate(toy64.tde_sequence()):
            out = directional_transformer_forward(x, kind, weights.tde(i), toy64)
            np.testing.assert_array_equal(out.data, x.data)
        np.testing.assert_array_equal(tdeblock_forward(x, weights, toy64).data, x.data)

    def test_head_skip(self, toy64, rng):
        weights = ModelWeights.init(toy64, 3)
        for i in range(1, 5):
            weights[f"head.{i}.weight"].data[:] = 0
            weights[f"head.{i}.bias"].data[:] = 0
        x = Tensor(rng.standard_normal((1, 1, 8, 8)))
        single = conv2d(x, weights["head.0.weight"], weights["head.0.bias"]).data
        np.testing.assert_array_equal(head_forward(x, weights.head()).data, single)

    def test_head_adds_first_conv_to_last(self, toy64, rng):
        weights = ModelWeights.init(toy64, 3)
        x = Tensor(rng.standard_normal((1, 1, 8, 8)))
        y = first = conv2d(x, weights["head.0.weight"], weights["head.0.bias"]).data
        for i in range(1, 5):
            y = conv2d(Tensor(np.maximum(y, 0)), weights[f"head.{i}.weight"], weights[f"head.{i}.bias"]).data
        np.testing.assert_allclose(head_forward(x, weights.head()).data, y + first, atol=1e-14)


class TestDirectional:
    def test_zero_shift_makes_all_kinds_equal(self, toy64, rng):
        cfg = replace(toy64, shift=0)
        weights = perturbed(cfg)
        x = Tensor(rng.standard_normal((1, 8, 16, 16)))
        outs = [directional_transformer_forward(x, k, weights.tde(0), cfg).data for k in (HO, VE, CO)]
        np.testing.assert_array_equal(outs[0], outs[2])
        np.testing.assert_array_equal(outs[1], outs[2])

    def test_shift_changes_output(self, toy64, rng):
        weights = perturbed(toy64)
        x = Tensor(rng.standard_normal((1, 8, 16, 16)))
        ho, ve, co = (directional_transformer_forward(x, k, weights.tde(0), toy64).data for k in (HO, VE, CO))
        assert not np.allclose(ho, co)
        assert not np.allclose(ve, co)
        assert not np.allclose(ho, ve)

    @pytest.mark.parametrize("kind,axis,dim", [(HO, HORIZONTAL, 3), (VE, VERTICAL, 2)])
    def test_shift_conjugation(self, toy64, rng, kind, axis, dim):
        weights = perturbed(toy64)
        x = Tensor(rng.standard_normal((1, 8, 16, 24)))
        s = toy64.shift
        out = directional_transformer_forward(x, kind, weights.tde(0), toy64).data
        conj = directional_transformer_forward(roll(x, axis, s), CO, weights.tde(0), toy64).data
        np.testing.assert_array_equal(out, np.roll(conj, -s, axis=dim))

    def test_window_translation_equivariance(self, toy64, rng):
        weights = perturbed(toy64)
        x = rng.standard_normal((1, 8, 16, 16))
        out = directional_transformer_forward(Tensor(x), CO, weights.tde(0), toy64).data
        shifted = directional_transformer_forward(Tensor(np.roll(x, 8, axis=3)), CO, weights.tde(0), toy64).data
        np.testing.assert_allclose(shifted, np.roll(out, 8, axis=3), atol=1e-12)

    def test_shift_wraps_on_small_inputs(self, rng):
        cfg = preset("toy", precision="float64", shift=7)
        weights = perturbed(cfg)
        x = Tensor(rng.standard_normal((1, 8, 6, 6)))
        out = directional_transformer_forward(x, HO, weights.tde(0), cfg)
        assert out.shape == x.shape and np.isfinite(out.data).all()


class TestForward:
    @pytest.mark.parametrize("shape", [(16, 16), (41, 53), (50, 70), (8, 9)])
    def test_shape_preserved(self, toy64, rng, shape):
        with no_grad():
            out = forward(Tensor(rng.random((2, 1, *shape))), perturbed(toy64))
        assert out.shape == (2, 1, *shape)
        assert np.isfinite(out.data).all()

    def test_rgb(self, rng):
        cfg = preset("toy", in_channels=3)
        out = HWformer(cfg).denoise(rng.random((1, 3, 12, 20)))
        assert out.shape == (1, 3, 12, 20) and out.dtype == np.float32

    def test_deterministic(self, toy64, rng):
        x = rng.random((1, 1, 20, 20))
        a = HWformer(toy64, seed=5).denoise(x)
        b = HWformer(toy64, seed=5).denoise(x)
        np.testing.assert_array_equal(a, b)

    def test_non_finite_input(self, toy64):
        x = np.zeros((1, 1, 8, 8))
        x[0, 0, 3, 3] = np.nan
        with pytest.raises(NumericError):
            HWformer(toy64).denoise(x)

    def test_too_small_for_window(self, toy64, rng):
        with pytest.raises(ConfigError):
            HWformer(toy64).denoise(rng.random((1, 1, 5, 7)))

    def test_channel_mismatch(self, toy64, rng):
        with pytest.raises(ConfigError):
            HWformer(toy64).denoise(rng.random((1, 3, 8, 8)))

    def test_input_gradient(self, toy64, rng):
        weights = perturbed(toy64, seed=2)
        probe = Tensor(rng.standard_normal((1, 1, 16, 16)))
        err = finite_diff_check(lambda t: (forward(t, weights) * probe).sum(),
                                rng.random((1, 1, 16, 16)), coords=rng.choice(256, 24, replace=False))
        assert err <= 1e-4

    @pytest.mark.parametrize("name", ["head.2.weight", "gte.1.q.weight", "gte.0.norm_v.gamma",
                                      "tde.2.rel_bias", "tde.5.fc1.weight", "tail.bias"])
    def test_parameter_gradient(self, toy64, rng, name):
        weights = perturbed(toy64, seed=4)
        x = Tensor(rng.random((1, 1, 16, 16)))
        probe = Tensor(rng.standard_normal((1, 1, 16, 16)))

        def loss(t):
            weights[name] = t
            return (forward(x, weights) * probe).sum()

        size = weights[name].size
        coords = rng.choice(size, min(size, 8), replace=False)
        assert finite_diff_check(loss, weights[name].data.copy(), coords=coords) <= 1e-4


class TestAccounting:
    @pytest.mark.parametrize("overrides", [{}, {"gte_rel_bias": True}, {"tde_rel_bias": False},
                                           {"in_channels": 3}, {"base_channels": 16, "heads": 4}])
    def test_registry_matches_closed_form(self, overrides):
        cfg = preset("toy", **overrides)
        assert count_params(ModelWeights.zeros(cfg)) == expected_param_count(cfg)
        assert sum(int(np.prod(s)) for s in parameter_shapes(cfg).values()) == expected_param_count(cfg)

    def test_toy_count(self):
        assert count_params(HWformer(preset("toy"))) == 128_857

    def test_paper_count_matches_closed_form(self):
        cfg = ModelConfig()
        assert sum(int(np.prod(s)) for s in parameter_shapes(cfg).values()) == expected_param_count(cfg)

    def test_single_conv_flops(self):
        assert conv_flops(96, 96, 64, 64) == 2 * 96 * 96 * 64 * 64 * 9 == 679_477_248

    def test_flops_breakdown_sums(self):
        fl = flops_breakdown(ModelConfig(), 96, 96)
        parts = [v for k, v in fl.items() if k not in ("attention", "total")]
        assert fl["total"] == sum(parts) == count_flops(ModelConfig(), 96, 96)
        assert fl["attention"] == fl["gte_attention"] + fl["tde_attention"]

    def test_attention_flops_grow_with_window(self):
        small = flops_breakdown(preset("toy", gte_window=8, tde_window=8), 32, 32)["attention"]
        large = flops_breakdown(preset("toy", gte_window=32, tde_window=32), 32, 32)["attention"]
        assert large > small

    def test_astype(self):
        w = ModelWeights.init(preset("toy"), 0).astype("float64")
        assert all(p.data.dtype == np.float64 for p in w.parameters())
        assert w.config.precision == "float64"

    def test_registry_rejects_wrong_shapes(self):
        cfg = preset("toy")
        params = dict(ModelWeights.zeros(cfg).params)
        params["tail.bias"] = Tensor(np.zeros(2))
        with pytest.raises(ConfigError):
            ModelWeights(cfg, params)
