"""Unlearning algorithms behind one entry point, :func:`run_unlearning`.

Every method reads data only through a :class:`~unlearnkit.data.DataAccess`,
so the ids each phase touched can be audited afterwards. Batch orders are a
pure function of ``(cfg.seed, epoch)``, which makes every run deterministic.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterator, Mapping

import numpy as np
import torch
import torch.nn.functional as F

from .data import AccessEvent, DataAccess, DatasetBundle, batch_indices
from .errors import ConfigError, InputError
from .model import (
    LossTerm,
    ModelState,
    OptimizerState,
    ViTConfig,
    build_model,
    compute_gradient,
    forward,
    gradient_of,
    mean_loss,
    optimizer_step,
    per_sample_loss,
    reinitialize_masked,
    set_trainable_last_k,
)

METHODS = ("retrain", "finetune", "cf_k", "neggrad", "advneggrad", "unsir", "scrub", "aru")

# fields that belong to exactly one method
_METHOD_FIELDS = {
    "k": ("cf_k",),
    "coefficient": ("scrub",),
    "pruning_ratio": ("aru",),
    "noise_steps": ("unsir",),
    "noise_lr": ("unsir",),
}


@dataclass(frozen=True)
class UnlearnMethodConfig:
    method: str
    epochs: int = 30
    learning_rate: float = 1e-3
    batch_size: int = 64
    weight_decay: float = 0.0
    max_grad_norm: float | None = None
    seed: int = 0
    k: int | None = None
    coefficient: float | None = None
    pruning_ratio: float | None = None
    noise_steps: int | None = None
    noise_lr: float | None = None
    label: str | None = None

    def __post_init__(self):
        self.validate()

    @property
    def name(self) -> str:
        return self.label or self.method

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown unlearning method {self.method!r}; expected one of {METHODS}")
        for fname, owners in _METHOD_FIELDS.items():
            value = getattr(self, fname)
            if self.method in owners and value is None:
                raise ConfigError(f"{self.method} requires '{fname}'")
            if self.method not in owners and value is not None:
                raise ConfigError(f"'{fname}' is only valid for {', '.join(owners)}, not {self.method}")
        if self.epochs < 1:
            raise ConfigError(f"epochs >= 1 violated: {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size >= 1 violated: {self.batch_size}")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.pruning_ratio is not None and not 0.0 <= self.pruning_ratio <= 1.0:
            raise ConfigError(f"pruning_ratio must lie in [0, 1], got {self.pruning_ratio}")
        if self.k is not None and self.k < 0:
            raise ConfigError(f"k must be non-negative, got {self.k}")
        if self.noise_steps is not None and self.noise_steps < 1:
            raise ConfigError("noise_steps must be >= 1")

    @classmethod
    def from_dict(cls, d: Mapping) -> "UnlearnMethodConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown method config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    def replace(self, **changes) -> "UnlearnMethodConfig":
        d = asdict(self)
        d.update(changes)
        return UnlearnMethodConfig(**d)


@dataclass
class UnlearnRun:
    config: UnlearnMethodConfig
    model_config: ViTConfig
    checkpoints: list[dict[str, torch.Tensor]] = field(default_factory=list)
    telemetry: list[dict] = field(default_factory=list)
    # parameters after method-specific preparation, before the first step
    initial: dict[str, torch.Tensor] | None = None
    mask: dict[str, torch.Tensor] | None = None
    access_log: list[AccessEvent] = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.checkpoints)

    def model_at(self, epoch: int) -> ModelState:
        model = build_model(self.model_config, 0, dtype=next(iter(self.checkpoints[epoch].values())).dtype)
        model.load_snapshot(self.checkpoints[epoch])
        return model


class _Recorder:
    """Running means of named loss terms over the steps of one epoch."""

    def __init__(self):
        self.sums: dict[str, float] = {}
        self.steps = 0

    def add(self, **terms: float) -> None:
        for k, v in terms.items():
            self.sums[k] = self.sums.get(k, 0.0) + float(v)
        self.steps += 1

    def means(self) -> dict[str, float]:
        return {k: v / max(self.steps, 1) for k, v in self.sums.items()}


def _close_epoch(run: UnlearnRun, model: ModelState, epoch: int, rec: _Recorder, phase: str = "main") -> None:
    run.checkpoints.append(model.snapshot())
    entry = {"method": run.config.name, "epoch": epoch, "phase": phase, "steps": rec.steps}
    entry.update(rec.means())
    entry["checkpoint"] = f"epoch-{epoch:03d}"
    run.telemetry.append(entry)


def _optimizer(model: ModelState, cfg: UnlearnMethodConfig) -> OptimizerState:
    return OptimizerState(
        model,
        learning_rate=cfg.learning_rate,
        weight_decay=cfg.weight_decay,
        max_grad_norm=cfg.max_grad_norm,
    )


def _require(access: DataAccess, *splits: str) -> None:
    for s in splits:
        if access.size(s) == 0:
            raise InputError(f"{s} split is empty")


def descend_epoch(
    model: ModelState,
    opt: OptimizerState,
    access: DataAccess,
    split: str,
    batch_size: int,
    seed: int,
    epoch: int,
    rec: _Recorder,
) -> None:
    """One pass of plain loss descent over ``split``."""
    for images, labels in access.batches(split, batch_size, seed, epoch):
        loss = mean_loss(model, images, labels)
        grad = gradient_of(model, loss)
        optimizer_step(model, opt, grad)
        rec.add(**{f"{split}_loss": loss.item()})


def train_model(
    model: ModelState,
    access: DataAccess,
    split: str,
    epochs: int,
    learning_rate: float,
    batch_size: int,
    seed: int,
    weight_decay: float = 0.0,
    on_epoch: Callable[[int, ModelState, dict], None] | None = None,
) -> ModelState:
    """Ordinary supervised training in place; used to produce the original model."""
    opt = OptimizerState(model, learning_rate=learning_rate, weight_decay=weight_decay)
    for epoch in range(epochs):
        rec = _Recorder()
        descend_epoch(model, opt, access, split, batch_size, seed, epoch, rec)
        if on_epoch:
            on_epoch(epoch, model, rec.means())
    return model


def method_retrain(
    bundle: DatasetBundle,
    cfg: UnlearnMethodConfig,
    model_config: ViTConfig,
    dtype: torch.dtype = torch.float32,
    access: DataAccess | None = None,
) -> UnlearnRun:
    access = access or DataAccess(bundle)
    _require(access, "retain")
    model = build_model(model_config, cfg.seed, dtype=dtype)
    run = UnlearnRun(cfg, model_config, initial=model.snapshot(), access_log=access.log)
    opt = _optimizer(model, cfg)
    for epoch in range(cfg.epochs):
        rec = _Recorder()
        descend_epoch(model, opt, access, "retain", cfg.batch_size, cfg.seed, epoch, rec)
        _close_epoch(run, model, epoch, rec)
    return run


def _finetune_from(model: ModelState, run: UnlearnRun, access: DataAccess, cfg: UnlearnMethodConfig, first_epoch: int = 0, phase: str = "main") -> None:
    opt = _optimizer(model, cfg)
    for epoch in range(first_epoch, cfg.epochs):
        rec = _Recorder()
        descend_epoch(model, opt, access, "retain", cfg.batch_size, cfg.seed, epoch, rec)
        _close_epoch(run, model, epoch, rec, phase)


def method_finetune(theta0: ModelState, bundle: DatasetBundle, cfg: UnlearnMethodConfig, access: DataAccess | None = None) -> UnlearnRun:
    access = access or DataAccess(bundle)
    _require(access, "retain")
    model = theta0.clone()
    model.set_trainable()
    run = UnlearnRun(cfg, model.config, initial=model.snapshot(), access_log=access.log)
    _finetune_from(model, run, access, cfg)
    return run


def method_cf_k(theta0: ModelState, bundle: DatasetBundle, cfg: UnlearnMethodConfig, access: DataAccess | None = None) -> UnlearnRun:
    access = access or DataAccess(bundle)
    if cfg.k is None or not 0 <= cfg.k <= theta0.config.depth:
        raise ConfigError(f"cf_k needs 0 <= k <= depth={theta0.config.depth}, got {cfg.k}")
    _require(access, "retain")
    model = set_trainable_last_k(theta0.clone(), cfg.k)
    run = UnlearnRun(cfg, model.config, initial=model.snapshot(), access_log=access.log)
    run.extras["trainable"] = sorted(n for n, t in model.trainable.items() if t)
    _finetune_from(model, run, access, cfg)
    return run


def method_advneggrad(
    theta0: ModelState,
    bundle: DatasetBundle,
    cfg: UnlearnMethodConfig,
    ascent_only: bool = False,
    access: DataAccess | None = None,
) -> UnlearnRun:
    """Retain-set descent and forget-set ascent in the same step
    (objective ``CE(retain) - CE(forget)``); with ``ascent_only`` the retain
    term is dropped, which is plain NegGrad."""
    access = access or DataAccess(bundle)
    _require(access, *(("forget",) if ascent_only else ("retain", "forget")))
    model = theta0.clone()
    model.set_trainable()
    run = UnlearnRun(cfg, model.config, initial=model.snapshot(), access_log=access.log)
    opt = _optimizer(model, cfg)
    for epoch in range(cfg.epochs):
        rec = _Recorder()
        if ascent_only:
            for xf, yf in access.batches("forget", cfg.batch_size, cfg.seed, epoch):
                loss_f = mean_loss(model, xf, yf)
                optimizer_step(model, opt, gradient_of(model, -loss_f))
                rec.add(forget_loss=loss_f.item())
        else:
            forget_iter = access.cycle("forget", cfg.batch_size, cfg.seed + 1, epoch)
            for xr, yr in access.batches("retain", cfg.batch_size, cfg.seed, epoch):
                xf, yf = next(forget_iter)
                loss_r = mean_loss(model, xr, yr)
                loss_f = mean_loss(model, xf, yf)
                optimizer_step(model, opt, gradient_of(model, loss_r - loss_f))
                rec.add(retain_loss=loss_r.item(), forget_loss=loss_f.item())
        _close_epoch(run, model, epoch, rec)
    return run


def unsir_synthesize_noise(
    theta0: ModelState,
    labels: torch.Tensor,
    noise_steps: int,
    noise_lr: float,
    seed: int,
    pixel_range: tuple[torch.Tensor, torch.Tensor] | None = None,
) -> torch.Tensor:
    """Input-space noise that maximizes the frozen model's loss on ``labels``.

    Starts from seeded standard Gaussian images and runs ``noise_steps`` Adam
    ascent steps on the noise alone, clamping to ``pixel_range`` after each.
    """
    if noise_steps < 1:
        raise InputError("noise_steps must be >= 1")
    c, s = theta0.config.channels, theta0.config.image_size
    gen = torch.Generator().manual_seed(int(seed))
    noise = torch.randn((len(labels), c, s, s), generator=gen, dtype=torch.float64).to(theta0.dtype)
    lo, hi = pixel_range if pixel_range is not None else (None, None)
    if lo is not None:
        lo, hi = lo.to(noise.dtype), hi.to(noise.dtype)
        noise = torch.maximum(torch.minimum(noise, hi), lo)
    noise.requires_grad_(True)
    frozen = theta0.clone()
    frozen.set_trainable([])
    opt = torch.optim.Adam([noise], lr=noise_lr, maximize=True)
    for _ in range(noise_steps):
        opt.zero_grad()
        loss = per_sample_loss(forward(frozen, noise), labels, theta0.config.task_kind).mean()
        loss.backward()
        opt.step()
        if lo is not None:
            with torch.no_grad():
                noise.copy_(torch.maximum(torch.minimum(noise, hi), lo))
    return noise.detach()


def method_unsir(theta0: ModelState, bundle: DatasetBundle, cfg: UnlearnMethodConfig, access: DataAccess | None = None) -> UnlearnRun:
    """Impair for one epoch on retain batches mixed with loss-maximizing noise
    carrying the forget labels, then repair by finetuning on retain."""
    access = access or DataAccess(bundle)
    _require(access, "retain", "forget")
    model = theta0.clone()
    model.set_trainable()
    run = UnlearnRun(cfg, model.config, initial=model.snapshot(), access_log=access.log)

    access.phase = "impair"
    forget_labels = access.labels("forget")
    noise = unsir_synthesize_noise(
        theta0, forget_labels, cfg.noise_steps, cfg.noise_lr, cfg.seed, bundle.pixel_range
    )
    with torch.no_grad():
        run.extras["noise_loss"] = float(mean_loss(theta0, noise, forget_labels))
    opt = _optimizer(model, cfg)
    rec = _Recorder()
    noise_batches = _cycle_indices(len(noise), cfg.batch_size, cfg.seed + 1)
    for xr, yr in access.batches("retain", cfg.batch_size, cfg.seed, 0):
        idx = next(noise_batches)
        loss_r = mean_loss(model, xr, yr)
        loss_n = mean_loss(model, noise[idx], forget_labels[idx])
        optimizer_step(model, opt, gradient_of(model, loss_r + loss_n))
        rec.add(retain_loss=loss_r.item(), noise_loss=loss_n.item())
    _close_epoch(run, model, 0, rec, phase="impair")
    run.extras["repair_start_epoch"] = 1

    access.phase = "repair"
    opt = _optimizer(model, cfg)
    for epoch in range(1, cfg.epochs):
        rec = _Recorder()
        descend_epoch(model, opt, access, "retain", cfg.batch_size, cfg.seed, epoch, rec)
        _close_epoch(run, model, epoch, rec, phase="repair")
    return run


def _cycle_indices(n: int, batch_size: int, seed: int) -> Iterator[np.ndarray]:
    sub = 0
    while True:
        yield from batch_indices(n, batch_size, seed, sub)
        sub += 1


def distill_kl(student_logits: torch.Tensor, teacher_logits: torch.Tensor, task_kind: str) -> torch.Tensor:
    """Mean KL(teacher || student) between output distributions at temperature 1.

    Multilabel outputs are treated as independent Bernoullis and averaged
    over attributes.
    """
    if task_kind == "multilabel":
        ls_pos, ls_neg = F.logsigmoid(student_logits), F.logsigmoid(-student_logits)
        lt_pos, lt_neg = F.logsigmoid(teacher_logits), F.logsigmoid(-teacher_logits)
        kl = lt_pos.exp() * (lt_pos - ls_pos) + lt_neg.exp() * (lt_neg - ls_neg)
        return kl.mean()
    log_s = F.log_softmax(student_logits, dim=1)
    log_t = F.log_softmax(teacher_logits, dim=1)
    return F.kl_div(log_s, log_t, reduction="batchmean", log_target=True)


def scrub_terms(
    student: ModelState,
    teacher: ModelState,
    retain_batch: tuple[torch.Tensor, torch.Tensor],
    forget_images: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(CE on retain, KL on retain, KL on forget) for one SCRUB step."""
    xr, yr = retain_batch
    task = student.config.task_kind
    s_r = forward(student, xr)
    s_f = forward(student, forget_images)
    with torch.no_grad():
        t_r = forward(teacher, xr)
        t_f = forward(teacher, forget_images)
    ce = per_sample_loss(s_r, yr, task).mean()
    return ce, distill_kl(s_r, t_r, task), distill_kl(s_f, t_f, task)


def method_scrub(theta0: ModelState, bundle: DatasetBundle, cfg: UnlearnMethodConfig, access: DataAccess | None = None) -> UnlearnRun:
    """Student starts at the original model and minimizes
    ``CE(retain) + KL(retain) - coefficient * KL(forget)`` against the frozen
    original as teacher."""
    if cfg.coefficient is None:
        raise ConfigError("scrub requires 'coefficient'")
    access = access or DataAccess(bundle)
    _require(access, "retain", "forget")
    teacher = theta0.clone()
    teacher.set_trainable([])
    student = theta0.clone()
    student.set_trainable()
    run = UnlearnRun(cfg, student.config, initial=student.snapshot(), access_log=access.log)
    opt = _optimizer(student, cfg)
    for epoch in range(cfg.epochs):
        rec = _Recorder()
        forget_iter = access.cycle("forget", cfg.batch_size, cfg.seed + 1, epoch)
        for xr, yr in access.batches("retain", cfg.batch_size, cfg.seed, epoch):
            xf, _ = next(forget_iter)
            ce, kd_r, kd_f = scrub_terms(student, teacher, (xr, yr), xf)
            if "initial_kd_retain" not in run.extras:
                run.extras["initial_kd_retain"] = kd_r.item()
                run.extras["initial_kd_forget"] = kd_f.item()
            objective = ce + kd_r - cfg.coefficient * kd_f
            optimizer_step(student, opt, gradient_of(student, objective))
            rec.add(retain_loss=ce.item(), kd_retain=kd_r.item(), kd_forget=kd_f.item())
        _close_epoch(run, student, epoch, rec)
    return run


def aru_eligible(name: str) -> bool:
    """Parameters ARU may reset: everything but normalization and position embeddings."""
    return not (name == "pos_embed" or ".norm" in name or name.startswith("norm."))


def select_smallest(
    discrepancy: Mapping[str, torch.Tensor], ratio: float, eligible: Callable[[str], bool] = lambda _: True
) -> dict[str, torch.Tensor]:
    """Mask the ``round(ratio * n)`` eligible scalars with the smallest
    discrepancy (half rounds up). Ties go to the earlier scalar in parameter
    order, then row-major order within a tensor."""
    if not 0.0 <= ratio <= 1.0:
        raise InputError(f"ratio must lie in [0, 1], got {ratio}")
    names = [n for n in discrepancy if eligible(n)]
    flat = torch.cat([discrepancy[n].detach().reshape(-1).double() for n in names]) if names else torch.empty(0)
    count = int(math.floor(ratio * flat.numel() + 0.5))
    chosen = np.zeros(flat.numel(), dtype=bool)
    if count:
        order = np.argsort(flat.numpy(), kind="stable")
        chosen[order[:count]] = True
    mask, offset = {}, 0
    for n, d in discrepancy.items():
        if n in names:
            size = d.numel()
            mask[n] = torch.from_numpy(chosen[offset : offset + size].copy()).reshape(d.shape)
            offset += size
        else:
            mask[n] = torch.zeros(d.shape, dtype=torch.bool)
    return mask


def _full_gradient(model: ModelState, images: torch.Tensor, labels: torch.Tensor, chunk: int = 256) -> dict[str, torch.Tensor]:
    """Gradient of the mean loss over all of ``images``, accumulated in chunks."""
    total: dict[str, torch.Tensor] | None = None
    n = len(images)
    for i in range(0, n, chunk):
        xb, yb = images[i : i + chunk], labels[i : i + chunk]
        g = compute_gradient(model, [LossTerm(len(xb) / n, xb, yb)])
        total = g if total is None else {k: total[k] + g[k] for k in total}
    return total


def aru_compute_mask(
    theta0: ModelState,
    forget: tuple[torch.Tensor, torch.Tensor],
    pruning_ratio: float,
    seed: int,
) -> dict[str, torch.Tensor]:
    """Mask the parameters whose forget-set gradient is least distinguishable
    from their gradient on seeded Gaussian noise images with the same labels."""
    images, labels = forget
    model = theta0.clone()
    model.set_trainable()
    gen = torch.Generator().manual_seed(int(seed))
    noise = torch.randn(images.shape, generator=gen, dtype=torch.float64).to(images.dtype)
    g_real = _full_gradient(model, images, labels)
    g_noise = _full_gradient(model, noise, labels)
    discrepancy = {k: (g_real[k] - g_noise[k]).abs() for k in g_real}
    return select_smallest(discrepancy, pruning_ratio, aru_eligible)


def method_aru(theta0: ModelState, bundle: DatasetBundle, cfg: UnlearnMethodConfig, access: DataAccess | None = None) -> UnlearnRun:
    """Reset the parameters picked by :func:`aru_compute_mask` to fresh
    initial values, then finetune on retain."""
    access = access or DataAccess(bundle)
    _require(access, "retain", "forget")
    access.phase = "attack"
    mask = aru_compute_mask(theta0, access.full("forget"), cfg.pruning_ratio, cfg.seed)
    model = reinitialize_masked(theta0, mask, cfg.seed)
    model.set_trainable()
    run = UnlearnRun(cfg, model.config, initial=model.snapshot(), mask=mask, access_log=access.log)
    run.extras["reset_count"] = int(sum(int(m.sum()) for m in mask.values()))
    access.phase = "finetune"
    _finetune_from(model, run, access, cfg)
    return run


def run_unlearning(
    theta0: ModelState,
    bundle: DatasetBundle,
    cfg: UnlearnMethodConfig,
    access: DataAccess | None = None,
) -> UnlearnRun:
    """Apply ``cfg.method`` to the original model and return the per-epoch trajectory."""
    if not isinstance(cfg, UnlearnMethodConfig):
        raise ConfigError("cfg must be an UnlearnMethodConfig")
    access = access or DataAccess(bundle)
    m = cfg.method
    if m == "retrain":
        return method_retrain(bundle, cfg, theta0.config, theta0.dtype, access)
    if m == "finetune":
        return method_finetune(theta0, bundle, cfg, access)
    if m == "cf_k":
        return method_cf_k(theta0, bundle, cfg, access)
    if m in ("neggrad", "advneggrad"):
        return method_advneggrad(theta0, bundle, cfg, ascent_only=(m == "neggrad"), access=access)
    if m == "unsir":
        return method_unsir(theta0, bundle, cfg, access)
    if m == "scrub":
        return method_scrub(theta0, bundle, cfg, access)
    if m == "aru":
        return method_aru(theta0, bundle, cfg, access)
    raise ConfigError(f"unknown unlearning method {m!r}")
