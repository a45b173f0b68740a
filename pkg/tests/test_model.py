import numpy as np
import pytest

from metaformer.gradcheck import check_parameter_group
from metaformer.mixers import MixerConfig
from metaformer.model import (
    ConfigError,
    ModelConfig,
    build,
    drop_path_schedule,
    stage_grids,
    stage_plan,
)
from metaformer.tensor import InvalidArgument, Tensor, matmul

TINY = ModelConfig(dims=(16, 32, 64, 128), depths=(1, 1, 2, 1), num_classes=4,
                   input_size=32, drop_path=0.0)
MICRO = ModelConfig(dims=(8, 16, 32, 64), depths=(1, 1, 2, 1), num_classes=4,
                    input_size=32, drop_path=0.0, layer_scale_init=0.1)


# --------------------------------------------------------------- stage plan

def test_stage_plan_named_depths():
    assert stage_plan(12) == [2, 2, 6, 2]
    assert stage_plan(24) == [4, 4, 12, 4]
    assert stage_plan(36) == [6, 6, 18, 6]
    assert stage_plan(48) == [8, 8, 24, 8]


def test_stage_plan_rejects_indivisible():
    with pytest.raises(InvalidArgument, match="divisible by 6"):
        stage_plan(13)


# --------------------------------------------------------- drop path schedule

def test_drop_path_schedule_linear_ramp():
    rates = drop_path_schedule(0.1, 12)
    assert rates[0] == 0.0
    assert rates[-1] == 0.1
    assert rates[1] == pytest.approx(0.1 / 11)
    diffs = np.diff(rates)
    np.testing.assert_allclose(diffs, diffs[0])


def test_drop_path_schedule_degenerate_cases():
    assert drop_path_schedule(0.0, 5) == [0.0] * 5
    assert drop_path_schedule(0.3, 1) == [0.0]
    assert drop_path_schedule(0.25, 7)[-1] == 0.25


def test_drop_path_schedule_applied_by_global_block_index():
    cfg = ModelConfig(dims=(8, 8, 8, 8), depths=(2, 1, 2, 1), num_classes=4,
                      input_size=32, drop_path=0.3)
    model = build(cfg, seed=0)
    got = [blk.config.drop_path_rate for stage in model.stages for blk in stage]
    want = drop_path_schedule(0.3, 6)
    np.testing.assert_allclose(got, want)


# -------------------------------------------------------------- patch embeds

def test_stage_grids_for_224():
    assert stage_grids(224) == [56, 28, 14, 7]


def test_stage_grids_other_resolutions():
    assert stage_grids(448) == [112, 56, 28, 14]
    assert stage_grids(32) == [8, 4, 2, 1]
    # conv shape formula: floor((224 + 2*2 - 7)/4) + 1 = 56
    assert (224 + 4 - 7) // 4 + 1 == 56
    assert (56 + 2 - 3) // 2 + 1 == 28


def test_stage1_embed_parameter_count():
    model = build(ModelConfig.variant_named("S12"), seed=0)
    n = sum(t.data.size for _, t in model.embeds[0].named_parameters("e"))
    assert n == 3 * 64 * 49 + 64 == 9_472


# --------------------------------------------------------------------- build

def test_build_same_seed_is_bitwise_identical():
    a = build(TINY, seed=7)
    b = build(TINY, seed=7)
    for (na, ta), (nb, tb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        assert np.array_equal(ta.data, tb.data), na


def test_build_different_seeds_differ():
    a = build(TINY, seed=0)
    b = build(TINY, seed=1)
    assert not np.array_equal(a.head_weight.data, b.head_weight.data)


def test_build_initialization_contracts():
    model = build(TINY, seed=0)
    params = dict(model.named_parameters())
    # Truncated normal, std 0.02, bounded at +/- 2 sigma.
    w = params["embed1.weight"].data
    assert np.abs(w).max() <= 0.04 + 1e-12
    assert 0.01 < w.std() < 0.03
    np.testing.assert_array_equal(params["embed1.bias"].data, 0.0)
    np.testing.assert_array_equal(params["stage1.block0.norm1.gamma"].data, 1.0)
    np.testing.assert_array_equal(params["stage1.block0.ls1"].data, np.float32(TINY.layer_scale_init))


def test_named_variant_table():
    s12 = ModelConfig.variant_named("S12")
    assert s12.dims == (64, 128, 320, 512)
    assert s12.depths == (2, 2, 6, 2)
    assert s12.layer_scale_init == 1e-5 and s12.drop_path == 0.1
    m48 = ModelConfig.variant_named("M48")
    assert m48.dims == (96, 192, 384, 768)
    assert m48.depths == (8, 8, 24, 8)
    assert m48.layer_scale_init == 1e-6 and m48.drop_path == 0.4
    with pytest.raises(ConfigError, match="unknown name"):
        ModelConfig.variant_named("S18")


# ------------------------------------------------------------------- forward

def test_s12_forward_shape_at_224():
    model = build(ModelConfig.variant_named("S12"), seed=0)
    x = Tensor(np.random.default_rng(0).random((2, 3, 224, 224)).astype(np.float32))
    assert model.forward(x).shape == (2, 1000)


def test_pooling_model_accepts_multiple_resolutions():
    model = build(TINY, seed=0)
    for size in (32, 48, 64):
        x = Tensor(np.random.default_rng(1).random((1, 3, size, size)).astype(np.float32))
        assert model.forward(x).shape == (1, 4)


def test_tiny_forward_shape():
    model = build(TINY, seed=0)
    x = Tensor(np.random.default_rng(2).random((4, 3, 32, 32)).astype(np.float32))
    assert model.forward(x).shape == (4, 4)


def test_resolution_bound_model_rejects_other_sizes():
    cfg = ModelConfig(dims=(8, 8, 8, 8), depths=(1, 1, 1, 1), num_classes=4, input_size=32,
                      mixers=tuple(MixerConfig(kind="spatial_fc") for _ in range(4)))
    model = build(cfg, seed=0)
    x = Tensor(np.zeros((1, 3, 64, 64), dtype=np.float32))
    with pytest.raises(InvalidArgument, match="bound to 32x32"):
        model.forward(x)


def test_forward_rejects_tiny_inputs():
    model = build(TINY, seed=0)
    with pytest.raises(InvalidArgument, match=">= 32"):
        model.forward(Tensor(np.zeros((1, 3, 16, 16), dtype=np.float32)))


def test_head_is_permutation_invariant_over_final_tokens():
    # Global average pooling: permuting final-stage tokens leaves logits unchanged.
    cfg = ModelConfig(dims=(8, 8, 8, 8), depths=(1, 1, 1, 1), num_classes=4, input_size=64,
                      mixers=tuple(MixerConfig(kind="identity") for _ in range(4)),
                      norm="none", use_layer_scale=False, use_channel_mlp=False)
    model = build(cfg, seed=3)
    rng = np.random.default_rng(4)
    feats = rng.standard_normal((1, 8, 2, 2)).astype(np.float32)

    def head_path(f):
        x = model.final_norm(Tensor(f), "eval")
        pooled = x.mean(axis=(2, 3))
        return (matmul(pooled, model.head_weight.swapaxes(0, 1)) + model.head_bias.reshape(1, -1)).data

    base = head_path(feats)
    perm = feats.reshape(1, 8, 4)[:, :, [2, 0, 3, 1]].reshape(1, 8, 2, 2)
    np.testing.assert_allclose(head_path(np.ascontiguousarray(perm)), base, atol=1e-6)


def test_full_model_gradients_match_finite_differences():
    model = build(MICRO, seed=0, dtype="f64")
    rng = np.random.default_rng(5)
    x = Tensor(rng.standard_normal((2, 3, 32, 32)), dtype="f64")
    proj = Tensor(rng.standard_normal((2, 4)), dtype="f64")

    def loss():
        return (model.forward(x, mode="eval") * proj).sum()

    params = dict(model.named_parameters())
    report = check_parameter_group(loss, params, max_coords_per_tensor=3, seed=0)
    worst = max(report.values())
    assert worst < 1e-4, sorted(report.items(), key=lambda kv: -kv[1])[:3]


# -------------------------------------------------------------------- config

def test_config_json_roundtrip_variant():
    cfg = ModelConfig.variant_named("S24")
    assert cfg.to_json_dict() == {"variant": "S24"}
    back = ModelConfig.from_json_dict({"variant": "S24"})
    assert back == cfg


def test_config_json_roundtrip_custom():
    d = TINY.to_json_dict()
    assert "custom" in d
    back = ModelConfig.from_json_dict(d)
    assert back == TINY


def test_config_json_rejects_unknown_fields():
    with pytest.raises(ConfigError, match="unknown fields"):
        ModelConfig.from_json_dict({"variant": "S12", "extra": 1})
    with pytest.raises(ConfigError, match="unknown fields"):
        ModelConfig.from_json_dict({"custom": {"dims": [8, 8, 8, 8], "dropout": 0.5}})
    with pytest.raises(ConfigError, match="exactly one"):
        ModelConfig.from_json_dict({})


def test_config_validation_errors_carry_field_path():
    with pytest.raises(ConfigError, match="depths"):
        ModelConfig(depths=(0, 1, 1, 1)).validate()
    with pytest.raises(ConfigError, match="mixers\\[1\\]"):
        ModelConfig(mixers=(MixerConfig(), MixerConfig(pool_size=4), MixerConfig(), MixerConfig())).validate()
    with pytest.raises(ConfigError, match="drop_path"):
        ModelConfig(drop_path=1.0).validate()
    with pytest.raises(ConfigError, match="norm"):
        ModelConfig(norm="instance").validate()
