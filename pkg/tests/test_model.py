import pytest
import torch

from unlearnkit.errors import ConfigError, InputError, NumericalError
from unlearnkit.model import (
    LossTerm,
    OptimizerState,
    ViTConfig,
    build_model,
    clip_global_norm,
    compute_gradient,
    count_parameters,
    forward,
    gradient_of,
    load_checkpoint,
    mean_loss,
    optimizer_step,
    param_count_from_config,
    per_sample_loss,
    reinitialize_masked,
    save_checkpoint,
    set_trainable_last_k,
)


@pytest.mark.parametrize(
    "changes, needle",
    [
        ({"image_size": 10}, "patch_size"),
        ({"embed_dim": 15}, "heads"),
        ({"depth": 0}, "depth"),
        ({"task_kind": "regression"}, "task_kind"),
        ({"num_outputs": 0}, "num_outputs"),
    ],
)
def test_config_invariants_name_the_violation(changes, needle):
    base = dict(image_size=8, patch_size=4, depth=2, heads=2, embed_dim=16, num_outputs=4)
    base.update(changes)
    with pytest.raises(ConfigError, match=needle):
        ViTConfig(**base)


def test_unknown_config_key_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        ViTConfig.from_dict({"image_size": 8, "dropout": 0.1})


def test_same_seed_same_parameters(tiny_config):
    a, b = build_model(tiny_config, 5), build_model(tiny_config, 5)
    c = build_model(tiny_config, 6)
    assert all(torch.equal(a.params[n], b.params[n]) for n in a.params)
    assert not torch.equal(a.params["head.weight"], c.params["head.weight"])


def test_float64_build_matches_float32_values(tiny_config):
    a = build_model(tiny_config, 1)
    b = build_model(tiny_config, 1, dtype=torch.float64)
    for n in a.params:
        torch.testing.assert_close(a.params[n].double(), b.params[n], atol=1e-7, rtol=0)


def test_init_statistics(tiny_config):
    m = build_model(ViTConfig(image_size=16, patch_size=4, embed_dim=64, heads=4, depth=2), 0)
    w = m.params["blocks.0.mlp.fc1.weight"]
    assert w.abs().max() <= 0.04 + 1e-7
    assert abs(float(w.detach().std()) - 0.0176) < 0.003  # std of N(0, 0.02) truncated at 2 sigma
    assert torch.all(m.params["blocks.0.norm1.weight"] == 1)
    assert torch.all(m.params["head.bias"] == 0)


def test_parameter_count_formula(tiny_config):
    m = build_model(tiny_config, 0)
    assert count_parameters(m) == param_count_from_config(tiny_config) == 5396


def test_forward_shape_and_bad_input(tiny_model):
    out = forward(tiny_model, torch.randn(3, 3, 8, 8))
    assert out.shape == (3, 4)
    with pytest.raises(InputError, match="shape"):
        forward(tiny_model, torch.randn(3, 3, 9, 8))
    with pytest.raises(InputError):
        forward(tiny_model, torch.randn(3, 8, 8))


def test_per_sample_loss_multiclass_matches_manual():
    logits = torch.tensor([[2.0, 0.0], [0.0, 1.0]])
    labels = torch.tensor([0, 0])
    expected = -torch.log_softmax(logits, dim=1)[:, 0]
    torch.testing.assert_close(per_sample_loss(logits, labels, "multiclass"), expected)


def test_per_sample_loss_multilabel_is_mean_bce():
    logits = torch.tensor([[0.0, 2.0, -1.0]])
    labels = torch.tensor([[1.0, 0.0, 1.0]])
    p = torch.sigmoid(logits)
    manual = -(labels * p.log() + (1 - labels) * (1 - p).log()).mean(dim=1)
    torch.testing.assert_close(per_sample_loss(logits, labels, "multilabel"), manual)


def test_frozen_parameters_get_zero_gradient(tiny_model):
    set_trainable_last_k(tiny_model, 1)
    x, y = torch.randn(4, 3, 8, 8), torch.tensor([0, 1, 2, 3])
    g = gradient_of(tiny_model, mean_loss(tiny_model, x, y))
    assert torch.count_nonzero(g["blocks.0.attn.qkv.weight"]) == 0
    assert torch.count_nonzero(g["blocks.1.attn.qkv.weight"]) > 0


def test_compute_gradient_is_weighted_sum(tiny_model):
    x1, y1 = torch.randn(4, 3, 8, 8), torch.tensor([0, 1, 2, 3])
    x2, y2 = torch.randn(5, 3, 8, 8), torch.tensor([3, 2, 1, 0, 0])
    g = compute_gradient(tiny_model, [LossTerm(1.0, x1, y1), LossTerm(-0.5, x2, y2)])
    g1 = gradient_of(tiny_model, mean_loss(tiny_model, x1, y1))
    g2 = gradient_of(tiny_model, mean_loss(tiny_model, x2, y2))
    for n in g:
        torch.testing.assert_close(g[n], g1[n] - 0.5 * g2[n], atol=1e-6, rtol=1e-5)
    with pytest.raises(InputError, match="empty"):
        compute_gradient(tiny_model, [LossTerm(1.0, x1[:0], y1[:0])])


def test_adamw_first_step_moves_by_learning_rate(tiny_model):
    # with bias correction, Adam's first update is lr * sign(g) wherever |g| >> eps
    opt = OptimizerState(tiny_model, learning_rate=1e-2)
    before = tiny_model.snapshot()
    grad = {n: torch.full_like(p, 0.5) for n, p in tiny_model.params.items()}
    optimizer_step(tiny_model, opt, grad)
    for n, p in tiny_model.params.items():
        torch.testing.assert_close(before[n] - p.detach(), torch.full_like(p, 1e-2), atol=1e-6, rtol=0)
    assert opt.step_count == 1 and set(opt.first_moment) == set(before)


def test_weight_decay_is_decoupled(tiny_model):
    opt = OptimizerState(tiny_model, learning_rate=0.1, weight_decay=0.5)
    before = tiny_model.snapshot()
    zero = {n: torch.zeros_like(p) for n, p in tiny_model.params.items()}
    optimizer_step(tiny_model, opt, zero)
    torch.testing.assert_close(tiny_model.params["head.weight"].detach(), before["head.weight"] * (1 - 0.1 * 0.5))


def test_frozen_parameters_untouched_by_step(tiny_model):
    set_trainable_last_k(tiny_model, 0)
    opt = OptimizerState(tiny_model, learning_rate=0.1, weight_decay=0.1)
    before = tiny_model.snapshot()
    grad = {n: torch.ones_like(p) for n, p in tiny_model.params.items()}
    optimizer_step(tiny_model, opt, grad)
    assert torch.equal(before["blocks.0.mlp.fc1.weight"], tiny_model.params["blocks.0.mlp.fc1.weight"])
    assert not torch.equal(before["head.weight"], tiny_model.params["head.weight"])


def test_non_finite_gradient_names_tensor(tiny_model):
    opt = OptimizerState(tiny_model)
    grad = {n: torch.zeros_like(p) for n, p in tiny_model.params.items()}
    grad["head.bias"][0] = float("nan")
    with pytest.raises(NumericalError) as info:
        optimizer_step(tiny_model, opt, grad)
    assert info.value.tensor_name == "head.bias"


def test_clip_global_norm():
    g = {"a": torch.tensor([3.0]), "b": torch.tensor([4.0])}
    clipped = clip_global_norm(g, 1.0)
    torch.testing.assert_close(clipped["a"], torch.tensor([0.6]))
    assert clip_global_norm(g, 10.0) is g


def test_last_k_layout(tiny_model):
    set_trainable_last_k(tiny_model, 1)
    t = tiny_model.trainable
    assert not t["patch_embed.weight"] and not t["pos_embed"] and not t["blocks.0.norm1.weight"]
    assert t["blocks.1.attn.qkv.weight"] and t["norm.weight"] and t["head.weight"]
    set_trainable_last_k(tiny_model, 2)
    assert all(tiny_model.trainable.values())
    with pytest.raises(InputError):
        set_trainable_last_k(tiny_model, 3)


def test_reinitialize_masked(tiny_config):
    trained = build_model(tiny_config, 0)
    with torch.no_grad():
        for p in trained.net.parameters():
            p.add_(1.0)
    mask = {"head.weight": torch.zeros_like(trained.params["head.weight"], dtype=torch.bool)}
    mask["head.weight"][0, :3] = True
    out = reinitialize_masked(trained, mask, seed=7)
    fresh = build_model(tiny_config, 7).params["head.weight"]
    w = out.params["head.weight"]
    assert torch.equal(w[0, :3], fresh[0, :3])
    assert torch.equal(w[1:], trained.params["head.weight"][1:])
    assert torch.equal(out.params["head.bias"], trained.params["head.bias"])
    with pytest.raises(InputError, match="does not match"):
        reinitialize_masked(trained, {"head.weight": torch.ones(2, 2)}, 0)


def test_checkpoint_roundtrip(tmp_path, tiny_model):
    set_trainable_last_k(tiny_model, 1)
    save_checkpoint(tiny_model, tmp_path / "m.pt")
    back = load_checkpoint(tmp_path / "m.pt")
    assert back.config == tiny_model.config and back.trainable == tiny_model.trainable
    assert all(torch.equal(back.params[n], tiny_model.params[n]) for n in back.params)
    x = torch.randn(2, 3, 8, 8)
    assert torch.equal(forward(back, x), forward(tiny_model, x))
