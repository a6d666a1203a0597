from dataclasses import replace

import numpy as np
import pytest

from conftest import numerical_grad, random_config
from cvt import functional as F
from cvt.analysis import count_params
from cvt.config import ModelConfig
from cvt.errors import ConfigError, DimensionError
from cvt.model import build_model
from cvt.presets import cvt13, get_preset
from cvt.tensor import Tensor, no_grad, precision


class TestConfig:
    def test_cls_token_only_in_last_stage(self, tiny_config):
        first = replace(tiny_config.stages[0], with_cls_token=True)
        with pytest.raises(ConfigError):
            replace(tiny_config, stages=(first,) + tiny_config.stages[1:])

    def test_heads_must_divide_dim(self, tiny_config):
        with pytest.raises(ConfigError) as info:
            replace(tiny_config.stages[1], num_heads=3)
        assert info.value.field == "num_heads"

    def test_yaml_round_trip(self):
        config = cvt13()
        assert ModelConfig.from_yaml(config.to_yaml()) == config

    def test_unknown_stage_key(self, tiny_config):
        data = tiny_config.to_dict()
        data["stages"][1]["heads"] = 2
        with pytest.raises(ConfigError) as info:
            ModelConfig.from_dict(data)
        assert info.value.field == "stages[1].heads"

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            get_preset("cvt99")

    def test_per_block_overrides(self, tiny_config):
        stage = replace(tiny_config.stages[2], stride_kv_per_block=(1, 2), mlp_ratio_per_block=(2.0, 4.0))
        assert stage.block_proj(0).stride_kv == 1
        assert stage.mlp_hidden(0) == 128 and stage.mlp_hidden(1) == 256

    def test_per_block_length_checked(self, tiny_config):
        with pytest.raises(ConfigError):
            replace(tiny_config.stages[2], stride_kv_per_block=(1,))


class TestForward:
    def test_logits_shape(self, tiny_config):
        model = build_model(tiny_config, seed=0)
        logits = model(np.zeros((2, 3, 32, 32), dtype=np.float32))
        assert logits.shape == (2, 4)

    def test_wrong_channel_count(self, tiny_config):
        model = build_model(tiny_config)
        with pytest.raises(DimensionError):
            model(np.zeros((1, 1, 32, 32), dtype=np.float32))

    def test_same_seed_same_parameters(self, tiny_config):
        a, b = build_model(tiny_config, seed=7), build_model(tiny_config, seed=7)
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_live_count_matches_analyzer(self, tiny_config, micro_config):
        for config in (tiny_config, micro_config):
            assert build_model(config).num_parameters() == count_params(config).total_params

    def test_live_count_matches_analyzer_on_random_configs(self):
        rng = np.random.default_rng(50)
        for _ in range(50):
            config = random_config(rng)
            assert build_model(config, seed=0).num_parameters() == count_params(config).total_params, config

    def test_analyzer_paths_are_live_paths(self, tiny_config):
        live = {name: p.size for name, p in build_model(tiny_config).named_parameters()}
        for record in count_params(tiny_config).records:
            under = sum(size for name, size in live.items() if name.startswith(record.path + "."))
            if record.kind in ("stage", "attn_qk", "attn_av"):
                continue
            if record.kind == "cls_token":
                under = live[record.path]
            assert under == record.params, record.path

    def test_eval_mode_is_deterministic(self, tiny_config, rng):
        model = build_model(tiny_config).eval()
        x = rng.standard_normal((3, 3, 32, 32)).astype(np.float32)
        with no_grad():
            np.testing.assert_array_equal(model(x).data, model(x).data)

    def test_train_mode_updates_running_stats(self, tiny_config, rng):
        model = build_model(tiny_config)
        bn = model.stages[0].blocks[0].attn.conv_proj_k.bn
        model(rng.standard_normal((2, 3, 32, 32)).astype(np.float32))
        assert not np.allclose(bn.running_mean, 0.0)

    def test_global_average_pool_without_cls(self, tiny_config):
        last = replace(tiny_config.stages[2], with_cls_token=False)
        config = replace(tiny_config, stages=tiny_config.stages[:2] + (last,))
        assert build_model(config)(np.zeros((1, 3, 32, 32), dtype=np.float32)).shape == (1, 4)

    def test_no_weight_decay_names(self, tiny_config):
        names = build_model(tiny_config).no_weight_decay()
        assert "stages.2.cls_token" in names
        assert "stages.0.blocks.0.attn.conv_proj_q.bn.weight" in names
        assert "head.weight" not in names

    @pytest.mark.slow
    @pytest.mark.parametrize("name", ["cvt13", "cvt21"])
    def test_presets_build(self, name):
        config = get_preset(name)
        assert build_model(config).num_parameters() == count_params(config).total_params


class TestGradients:
    def test_whole_model_gradient_check(self, micro_config, rng):
        with precision("float64"):
            model = build_model(micro_config, seed=3).eval()
        images = rng.standard_normal((2, 3, 8, 8))
        labels = [0, 2]

        def loss_of(x):
            return F.cross_entropy(model(x), labels)

        loss_of(Tensor(images, dtype=np.float64)).backward()
        # parameter gradients: spot-check a few entries of every tensor
        for name, p in model.named_parameters():
            flat = p.data.reshape(-1)
            for idx in np.linspace(0, flat.size - 1, num=min(3, flat.size), dtype=int):
                saved = flat[idx]
                values = []
                for delta in (1e-5, -1e-5):
                    flat[idx] = saved + delta
                    values.append(loss_of(Tensor(images, dtype=np.float64)).item())
                flat[idx] = saved
                numeric = (values[0] - values[1]) / 2e-5
                got = p.grad.reshape(-1)[idx]
                assert abs(got - numeric) <= 1e-6 + 1e-4 * max(abs(got), abs(numeric)), name

    def test_tiny_end_to_end_gradient_check(self, tiny_config, rng):
        with precision("float64"):
            model = build_model(tiny_config, seed=11).eval()
        images = rng.standard_normal((2, 3, 32, 32))
        labels = [1, 3]

        def loss_of():
            with no_grad():
                return F.cross_entropy(model(Tensor(images, dtype=np.float64)), labels).item()

        F.cross_entropy(model(Tensor(images, dtype=np.float64)), labels).backward()
        params = list(model.named_parameters())
        for _ in range(20):
            name, p = params[rng.integers(len(params))]
            idx = int(rng.integers(p.size))
            flat = p.data.reshape(-1)
            saved = flat[idx]
            flat[idx] = saved + 1e-5
            plus = loss_of()
            flat[idx] = saved - 1e-5
            minus = loss_of()
            flat[idx] = saved
            numeric = (plus - minus) / 2e-5
            got = p.grad.reshape(-1)[idx]
            assert abs(got - numeric) <= 1e-8 + 1e-3 * max(abs(got), abs(numeric)), name

    def test_input_gradient_check(self, micro_config, rng):
        with precision("float64"):
            model = build_model(micro_config, seed=5).eval()
        images = rng.standard_normal((1, 3, 8, 8))
        x = Tensor(images, requires_grad=True, dtype=np.float64)
        F.cross_entropy(model(x), [1]).backward()
        (numeric,) = numerical_grad(lambda t: F.cross_entropy(model(t), [1]), [images])
        np.testing.assert_allclose(x.grad, numeric, rtol=1e-4, atol=1e-7)


class TestPresets:
    def test_block_counts(self):
        assert get_preset("cvt13").total_blocks == 13
        assert get_preset("cvt21").total_blocks == 21

    def test_backward_reaches_every_parameter(self, tiny_config, rng):
        model = build_model(tiny_config, seed=1)
        logits = model(rng.standard_normal((4, 3, 32, 32)).astype(np.float32))
        assert np.all(np.isfinite(logits.data))
        F.cross_entropy(logits, [0, 1, 2, 3]).backward()

        # only the cls token reaches the head, and its query skips the depthwise step
        last = len(tiny_config.stages) - 1
        dead = f"stages.{last}.blocks.{tiny_config.stages[last].num_blocks - 1}.attn.conv_proj_q."
        dead_branch = (dead + "depthwise.", dead + "bn.")
        for name, p in model.named_parameters():
            if name.startswith(dead_branch):
                assert p.grad is None or not np.any(p.grad), name
            else:
                assert p.grad is not None and np.any(p.grad != 0), name

    @pytest.mark.slow
    def test_cvt13_forward_at_224(self, rng):
        model = build_model(cvt13()).eval()
        with no_grad():
            logits = model(rng.standard_normal((2, 3, 224, 224)).astype(np.float32))
        assert logits.shape == (2, 1000)

    @pytest.mark.slow
    def test_cvt13_runs_at_384_unchanged(self, rng):
        model = build_model(cvt13()).eval()
        with no_grad():
            logits = model(rng.standard_normal((1, 3, 384, 384)).astype(np.float32))
        assert logits.shape == (1, 1000)
