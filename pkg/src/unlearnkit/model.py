"""Desk-scale Vision Transformer and the parameter-level primitives that the
unlearning algorithms are assembled from.

The network follows the usual ViT recipe: images are cut into square patches,
each patch is linearly projected, a learnable position embedding is added and
the token sequence runs through pre-norm transformer blocks. Tokens are
mean-pooled (there is no class token) before the classification head.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, InputError, NumericalError

TASK_KINDS = ("multiclass", "multilabel")
INIT_STD = 0.02

CHECKPOINT_FORMAT = "unlearnkit-checkpoint/1"


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 16
    patch_size: int = 4
    depth: int = 2
    heads: int = 2
    embed_dim: int = 32
    mlp_ratio: float = 2.0
    num_outputs: int = 8
    task_kind: str = "multiclass"
    channels: int = 3

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.patch_size < 1 or self.image_size < 1:
            raise ConfigError("image_size and patch_size must be positive")
        if self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"image_size mod patch_size = 0 violated: "
                f"{self.image_size} % {self.patch_size} = {self.image_size % self.patch_size}"
            )
        if self.heads < 1 or self.embed_dim % self.heads != 0:
            raise ConfigError(
                f"embed_dim mod heads = 0 violated: {self.embed_dim} % {self.heads}"
            )
        if self.depth < 1:
            raise ConfigError(f"depth >= 1 violated: depth={self.depth}")
        if self.num_outputs < 1:
            raise ConfigError(f"num_outputs >= 1 violated: num_outputs={self.num_outputs}")
        if self.task_kind not in TASK_KINDS:
            raise ConfigError(f"task_kind must be one of {TASK_KINDS}, got {self.task_kind!r}")
        if self.mlp_ratio <= 0 or self.channels < 1:
            raise ConfigError("mlp_ratio and channels must be positive")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_size**2

    @property
    def mlp_dim(self) -> int:
        return int(round(self.embed_dim * self.mlp_ratio))

    @classmethod
    def from_dict(cls, d: Mapping) -> "ViTConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = torch.softmax((q @ k.transpose(-2, -1)) * self.scale, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class MLP(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, hidden: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = MLP(dim, hidden)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class VisionTransformer(nn.Module):
    def __init__(self, config: ViTConfig):
        super().__init__()
        self.config = config
        dim = config.embed_dim
        self.patch_embed = nn.Linear(config.patch_dim, dim)
        self.pos_embed = nn.Parameter(torch.zeros(1, config.num_patches, dim))
        self.blocks = nn.ModuleList(
            Block(dim, config.heads, config.mlp_dim) for _ in range(config.depth)
        )
        self.norm = nn.LayerNorm(dim)
        self.head = nn.Linear(dim, config.num_outputs)

    def patchify(self, images: torch.Tensor) -> torch.Tensor:
        c, p = self.config.channels, self.config.patch_size
        b, _, h, w = images.shape
        x = images.reshape(b, c, h // p, p, w // p, p)
        return x.permute(0, 2, 4, 1, 3, 5).reshape(b, (h // p) * (w // p), c * p * p)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = self.patch_embed(self.patchify(images)) + self.pos_embed
        for block in self.blocks:
            x = block(x)
        return self.head(self.norm(x).mean(dim=1))


def _init_parameters(net: VisionTransformer, seed: int) -> None:
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in net.named_parameters():
            if _is_norm_param(name):
                p.fill_(1.0 if name.endswith("weight") else 0.0)
            elif name.endswith("bias"):
                p.zero_()
            else:
                # draw in float64 so float32 and float64 builds share values
                buf = torch.empty(p.shape, dtype=torch.float64)
                nn.init.trunc_normal_(buf, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD, generator=gen)
                p.copy_(buf)


def _is_norm_param(name: str) -> bool:
    return ".norm" in name or name.startswith("norm.")


@dataclass
class ModelState:
    """A ViT plus its trainability mask and the seed it was built from.

    The trainable mask lives on the parameters themselves (``requires_grad``).
    """

    config: ViTConfig
    net: VisionTransformer
    seed: int

    @property
    def params(self) -> dict[str, torch.Tensor]:
        return {name: p for name, p in self.net.named_parameters()}

    @property
    def trainable(self) -> dict[str, bool]:
        return {name: p.requires_grad for name, p in self.net.named_parameters()}

    @property
    def dtype(self) -> torch.dtype:
        return self.net.head.weight.dtype

    def clone(self) -> "ModelState":
        return copy.deepcopy(self)

    def snapshot(self) -> dict[str, torch.Tensor]:
        return {name: p.detach().clone() for name, p in self.net.named_parameters()}

    def load_snapshot(self, snapshot: Mapping[str, torch.Tensor]) -> None:
        with torch.no_grad():
            for name, p in self.net.named_parameters():
                p.copy_(snapshot[name])

    def set_trainable(self, names: Iterable[str] | None = None) -> None:
        """Make exactly ``names`` trainable (all parameters when None)."""
        keep = None if names is None else set(names)
        for name, p in self.net.named_parameters():
            p.requires_grad_(keep is None or name in keep)


def build_model(config: ViTConfig, seed: int, dtype: torch.dtype = torch.float32) -> ModelState:
    config.validate()
    net = VisionTransformer(config).to(dtype)
    _init_parameters(net, seed)
    net.eval()
    return ModelState(config=config, net=net, seed=int(seed))


def _check_images(config: ViTConfig, images: torch.Tensor) -> None:
    expected = (config.channels, config.image_size, config.image_size)
    if images.ndim != 4 or tuple(images.shape[1:]) != expected:
        raise InputError(f"expected images of shape (batch, {expected}), got {tuple(images.shape)}")


def forward(model: ModelState, images: torch.Tensor) -> torch.Tensor:
    _check_images(model.config, images)
    return model.net(images.to(model.dtype))


def per_sample_loss(logits: torch.Tensor, labels: torch.Tensor, task_kind: str) -> torch.Tensor:
    """Cross-entropy per sample; for multilabel tasks the mean binary
    cross-entropy over attributes."""
    if task_kind == "multiclass":
        if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
            raise InputError("multiclass labels must be a vector of class indices")
        if labels.numel() and (labels.min() < 0 or labels.max() >= logits.shape[1]):
            raise InputError(f"label out of range [0, {logits.shape[1]})")
        return F.cross_entropy(logits, labels.long(), reduction="none")
    if task_kind == "multilabel":
        if labels.shape != logits.shape:
            raise InputError(f"multilabel labels must have shape {tuple(logits.shape)}")
        if labels.numel() and not torch.all((labels == 0) | (labels == 1)):
            raise InputError("multilabel flags must be 0 or 1")
        bce = F.binary_cross_entropy_with_logits(logits, labels.to(logits.dtype), reduction="none")
        return bce.mean(dim=1)
    raise InputError(f"unknown task_kind {task_kind!r}")


def mean_loss(model: ModelState, images: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return per_sample_loss(forward(model, images), labels, model.config.task_kind).mean()


@dataclass
class LossTerm:
    """One ``weight * mean_loss(images, labels)`` summand of an objective.
    Negative weights turn the term into gradient ascent."""

    weight: float
    images: torch.Tensor
    labels: torch.Tensor


def gradient_of(model: ModelState, loss: torch.Tensor) -> dict[str, torch.Tensor]:
    """Gradient of a scalar loss, zero-filled for frozen parameters."""
    names = [n for n, p in model.net.named_parameters() if p.requires_grad]
    tensors = [p for p in model.net.parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss, tensors, allow_unused=True) if tensors else []
    by_name = dict(zip(names, grads))
    out = {}
    for name, p in model.net.named_parameters():
        g = by_name.get(name)
        out[name] = torch.zeros_like(p) if g is None else g.detach()
    return out


def compute_gradient(model: ModelState, objective: Sequence[LossTerm]) -> dict[str, torch.Tensor]:
    if not objective:
        raise InputError("objective has no terms")
    total = None
    for term in objective:
        if term.images.shape[0] == 0:
            raise InputError("empty batch in objective")
        value = term.weight * mean_loss(model, term.images, term.labels)
        total = value if total is None else total + value
    return gradient_of(model, total)


def clip_global_norm(gradient: dict[str, torch.Tensor], max_norm: float) -> dict[str, torch.Tensor]:
    norm = torch.sqrt(sum((g.double() ** 2).sum() for g in gradient.values()))
    scale = min(1.0, max_norm / (float(norm) + 1e-12))
    if scale >= 1.0:
        return gradient
    return {k: g * scale for k, g in gradient.items()}


class OptimizerState:
    """AdamW state for one model (torch's decoupled weight-decay Adam).

    Frozen parameters never receive a gradient, so torch skips them entirely:
    no moment update and no weight decay.
    """

    def __init__(
        self,
        model: ModelState,
        learning_rate: float = 1e-3,
        weight_decay: float = 0.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
        max_grad_norm: float | None = None,
    ):
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.epsilon = beta1, beta2, epsilon
        self.max_grad_norm = max_grad_norm
        self._names = {id(p): n for n, p in model.net.named_parameters()}
        self.torch_optimizer = torch.optim.AdamW(
            model.net.parameters(),
            lr=learning_rate,
            betas=(beta1, beta2),
            eps=epsilon,
            weight_decay=weight_decay,
            foreach=False,
        )
        self.step_count = 0

    def _moment(self, key: str) -> dict[str, torch.Tensor]:
        st = self.torch_optimizer.state
        return {self._names[id(p)]: st[p][key] for p in st if key in st[p]}

    @property
    def first_moment(self) -> dict[str, torch.Tensor]:
        return self._moment("exp_avg")

    @property
    def second_moment(self) -> dict[str, torch.Tensor]:
        return self._moment("exp_avg_sq")


def optimizer_step(
    model: ModelState, optimizer: OptimizerState, gradient: Mapping[str, torch.Tensor]
) -> tuple[ModelState, OptimizerState]:
    params = model.params
    for name, g in gradient.items():
        if name not in params:
            raise InputError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise InputError(f"gradient shape mismatch for {name}")
        if params[name].requires_grad and not torch.isfinite(g).all():
            raise NumericalError(f"non-finite gradient in {name}", tensor_name=name)
    gradient = dict(gradient)
    if optimizer.max_grad_norm is not None:
        live = {n: g for n, g in gradient.items() if params[n].requires_grad}
        gradient.update(clip_global_norm(live, optimizer.max_grad_norm))
    for name, p in params.items():
        p.grad = gradient[name].to(p.dtype).clone() if p.requires_grad and name in gradient else None
    optimizer.torch_optimizer.step()
    for p in params.values():
        p.grad = None
    optimizer.step_count += 1
    return model, optimizer


def block_index(name: str) -> int | None:
    if name.startswith("blocks."):
        return int(name.split(".")[1])
    return None


def set_trainable_last_k(model: ModelState, k: int) -> ModelState:
    """Freeze everything below the last ``k`` transformer blocks.

    The final norm and head always stay trainable. The patch projection and
    position embeddings sit below block 0, so they are only trainable when
    ``k == depth``.
    """
    depth = model.config.depth
    if not 0 <= k <= depth:
        raise InputError(f"k must lie in [0, {depth}], got {k}")
    first = depth - k
    for name, p in model.net.named_parameters():
        idx = block_index(name)
        if idx is not None:
            p.requires_grad_(idx >= first)
        elif name.startswith(("patch_embed", "pos_embed")):
            p.requires_grad_(k == depth)
        else:
            p.requires_grad_(True)
    return model


def reinitialize_masked(
    model: ModelState, mask: Mapping[str, torch.Tensor], seed: int
) -> ModelState:
    """Return a copy whose masked entries are redrawn as ``build_model(config, seed)``
    would draw them. Names missing from ``mask`` are left untouched."""
    params = model.params
    for name, m in mask.items():
        if name not in params:
            raise InputError(f"mask for unknown parameter {name!r}")
        if m.shape != params[name].shape:
            raise InputError(
                f"mask shape {tuple(m.shape)} does not match {name} {tuple(params[name].shape)}"
            )
    out = model.clone()
    fresh = build_model(model.config, seed, dtype=model.dtype).params
    with torch.no_grad():
        for name, p in out.net.named_parameters():
            if name in mask:
                p.copy_(torch.where(mask[name].bool(), fresh[name], p))
    return out


def count_parameters(model: ModelState) -> int:
    return sum(p.numel() for p in model.net.parameters())


def save_checkpoint(model: ModelState, path: str | Path) -> None:
    """Write a checkpoint with ``torch.save``.

    The container is a plain dict::

        {"format": "unlearnkit-checkpoint/1",
         "config": {ViTConfig fields},
         "params": {name: tensor},
         "trainable": {name: bool},
         "seed": int}
    """
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "config": asdict(model.config),
            "params": model.snapshot(),
            "trainable": model.trainable,
            "seed": model.seed,
        },
        str(path),
    )


def load_checkpoint(path: str | Path) -> ModelState:
    blob = torch.load(str(path), weights_only=True)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise InputError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    config = ViTConfig.from_dict(blob["config"])
    params = blob["params"]
    dtype = next(iter(params.values())).dtype
    model = build_model(config, blob["seed"], dtype=dtype)
    if set(params) != set(model.params) or set(blob["trainable"]) != set(params):
        raise InputError(f"{path}: parameter names do not match the config")
    model.load_snapshot(params)
    model.set_trainable(n for n, t in blob["trainable"].items() if t)
    return model


def param_count_from_config(config: ViTConfig) -> int:
    d, h, o = config.embed_dim, config.mlp_dim, config.num_outputs
    block = 4 * d + (3 * d * d + 3 * d) + (d * d + d) + (d * h + h) + (h * d + d)
    return (config.patch_dim * d + d) + config.num_patches * d + config.depth * block + 2 * d + d * o + o

