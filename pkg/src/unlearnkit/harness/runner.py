"""Multi-seed orchestration: original model per seed, every method per seed,
per-epoch evaluation, best-epoch selection and aggregation."""
from __future__ import annotations

import json
import logging
import statistics
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import torch

from ..data import DataAccess, DatasetBundle, validate_bundle
from ..errors import ConfigError, ValidationError
from ..evaluate import EvalReport, evaluate, select_best_epoch
from ..model import ModelState, build_model, load_checkpoint, save_checkpoint
from ..unlearn import _METHOD_FIELDS, UnlearnMethodConfig, run_unlearning, train_model
from .config import ExperimentConfig

log = logging.getLogger(__name__)

METRICS = ("utility_pct", "forget_pct", "nomus_pct")
PRETRAINED = "Pre-trained"
# epoch index carried by reports of the original model
PRETRAINED_EPOCH = -1
SEED_POLICY = "each seed initializes and pre-trains the original model and also seeds every unlearning run"
GENERIC_GRID_PARAMS = ("epochs", "learning_rate", "batch_size", "weight_decay")


@dataclass(frozen=True)
class Aggregate:
    mean: float
    std: float
    n: int

    @property
    def single(self) -> bool:
        # sample std is undefined for one value; it is reported as 0
        return self.n == 1

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "n": self.n, "std_defined": not self.single}


def aggregate(values: Sequence[float]) -> Aggregate:
    """Arithmetic mean and sample (n-1) standard deviation."""
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("aggregate needs at least one value")
    std = statistics.stdev(vals) if len(vals) > 1 else 0.0
    return Aggregate(statistics.fmean(vals), std, len(vals))


def aggregate_reports(reports: Sequence[EvalReport]) -> dict[str, Aggregate]:
    return {m: aggregate([getattr(r, m) for r in reports]) for m in METRICS}


@dataclass
class CellResult:
    method: str
    seed: int
    reports: list[EvalReport] = field(default_factory=list)
    best: EvalReport | None = None
    telemetry: list[dict] = field(default_factory=list)
    error: str | None = None
    extras: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.error is None and self.best is not None

    @property
    def trajectory_file(self) -> str:
        return f"trajectories/{self.method}__seed{self.seed}.json"

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "error": self.error,
            "best": self.best.to_dict() if self.best else None,
            "reports": [r.to_dict() for r in self.reports],
            "telemetry": self.telemetry,
            "extras": self.extras,
        }


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    pretrained: dict[int, EvalReport]
    cells: dict[tuple[str, int], CellResult]
    pretrain_errors: dict[int, str] = field(default_factory=dict)

    @property
    def methods(self) -> list[str]:
        return self.config.method_names

    @property
    def seeds(self) -> list[int]:
        return list(self.config.seeds)

    @property
    def single_seed(self) -> bool:
        return len(self.config.seeds) == 1

    def completed(self, method: str) -> list[CellResult]:
        return [c for s in self.seeds if (c := self.cells[(method, s)]).ok]

    def failed(self, method: str | None = None) -> list[CellResult]:
        return [c for c in self.cells.values() if not c.ok and (method is None or c.method == method)]

    def aggregates(self, method: str) -> dict[str, Aggregate] | None:
        done = self.completed(method)
        return aggregate_reports([c.best for c in done]) if done else None

    def pretrained_aggregates(self) -> dict[str, Aggregate] | None:
        reps = [self.pretrained[s] for s in self.seeds if s in self.pretrained]
        return aggregate_reports(reps) if reps else None

    def epoch_records(self) -> list[dict]:
        """One flat record per evaluated epoch; the original model comes first per seed."""
        out = []
        for s in self.seeds:
            if s in self.pretrained:
                out.append({"method": PRETRAINED, "seed": s, **self.pretrained[s].to_dict()})
        for m in self.methods:
            for s in self.seeds:
                cell = self.cells[(m, s)]
                out.extend(cell_records(cell))
        return out


def cell_records(cell: CellResult) -> list[dict]:
    tel = {t["epoch"]: t for t in cell.telemetry}
    records = []
    for r in cell.reports:
        rec = {"method": cell.method, "seed": cell.seed, **r.to_dict()}
        rec["telemetry"] = {k: v for k, v in tel.get(r.epoch, {}).items() if k not in ("method", "epoch")}
        records.append(rec)
    return records


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _pretrain(config: ExperimentConfig, bundle: DatasetBundle, seed: int) -> ModelState:
    spec = config.pretrain
    ckpt = Path(spec.checkpoint.format(seed=seed)) if spec.checkpoint else None
    if ckpt is not None and ckpt.exists():
        model = load_checkpoint(ckpt)
        if model.config != config.model:
            raise ConfigError(f"{ckpt}: checkpoint model config differs from the experiment's")
        log.info("seed %d: loaded original model from %s", seed, ckpt)
        return model
    model = build_model(config.model, seed)
    train_model(model, DataAccess(bundle), "train", spec.epochs, spec.learning_rate, spec.batch_size, seed, spec.weight_decay)
    if ckpt is not None:
        ckpt.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, ckpt)
    return model


def _run_cell(
    theta0: ModelState,
    bundle: DatasetBundle,
    method: UnlearnMethodConfig,
    seed: int,
    folds: int,
    checkpoint_dir: Path | None,
) -> CellResult:
    cfg = method.replace(seed=seed)
    run = run_unlearning(theta0, bundle, cfg)
    reports = []
    for epoch in range(len(run)):
        model = run.model_at(epoch)
        reports.append(evaluate(model, bundle, epoch, folds=folds, seed=seed))
        if checkpoint_dir is not None:
            checkpoint_dir.mkdir(parents=True, exist_ok=True)
            save_checkpoint(model, checkpoint_dir / f"epoch-{epoch:03d}.pt")
    extras = {k: v for k, v in run.extras.items() if isinstance(v, (int, float, str, bool))}
    return CellResult(method.name, seed, reports, select_best_epoch(reports), run.telemetry, extras=extras)


def run_experiment(
    config: ExperimentConfig,
    output_dir: str | Path | None = None,
    bundle: DatasetBundle | None = None,
    on_cell: Callable[[CellResult], None] | None = None,
    originals: dict[int, ModelState] | None = None,
) -> ExperimentResult:
    """Run every configured method for every seed.

    A failing (method, seed) cell is recorded with its diagnostic and the run
    moves on; aggregates then cover completed cells only. When ``output_dir``
    is given, per-epoch records stream to ``epochs.jsonl`` and each cell's
    trajectory goes to ``trajectories/``. ``originals`` caches the original
    model per seed; missing seeds are trained and added to it.
    """
    torch.set_num_threads(config.threads)
    if bundle is None:
        bundle = config.load_dataset()
    report = validate_bundle(bundle)
    if not report.passed:
        raise ValidationError("dataset failed validation:\n" + report.to_text())

    out = Path(output_dir) if output_dir is not None else None
    stream = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        stream = open(out / "epochs.jsonl", "w")

    pretrained: dict[int, EvalReport] = {}
    pretrain_errors: dict[int, str] = {}
    cells: dict[tuple[str, int], CellResult] = {}
    try:
        for seed in config.seeds:
            try:
                if originals is not None and seed in originals:
                    theta0 = originals[seed]
                else:
                    theta0 = _pretrain(config, bundle, seed)
                    if originals is not None:
                        originals[seed] = theta0
                pretrained[seed] = evaluate(theta0, bundle, PRETRAINED_EPOCH, folds=config.folds, seed=seed)
            except Exception as exc:  # noqa: BLE001 - isolate per seed
                theta0 = None
                pretrain_errors[seed] = f"{type(exc).__name__}: {exc}"
                log.error("seed %d: original model failed: %s", seed, pretrain_errors[seed])
            if stream and seed in pretrained:
                stream.write(json.dumps({"method": PRETRAINED, "seed": seed, **pretrained[seed].to_dict()}) + "\n")
            for method in config.methods:
                if theta0 is None:
                    cell = CellResult(method.name, seed, error=f"original model unavailable: {pretrain_errors[seed]}")
                else:
                    ckdir = out / "checkpoints" / method.name / f"seed{seed}" if out is not None and config.save_checkpoints else None
                    try:
                        cell = _run_cell(theta0, bundle, method, seed, config.folds, ckdir)
                    except Exception as exc:  # noqa: BLE001 - isolate per cell
                        log.debug("%s", traceback.format_exc())
                        cell = CellResult(method.name, seed, error=f"{type(exc).__name__}: {exc}")
                cells[(method.name, seed)] = cell
                if cell.ok:
                    log.info(
                        "seed %d %-12s best epoch %d: utility %.2f forget %.2f NoMUS %.2f",
                        seed, method.name, cell.best.epoch, cell.best.utility_pct, cell.best.forget_pct, cell.best.nomus_pct,
                    )
                else:
                    log.error("seed %d %s failed: %s", seed, method.name, cell.error)
                if out is not None:
                    _write_json(out / cell.trajectory_file, cell.to_dict())
                    for rec in cell_records(cell):
                        stream.write(json.dumps(rec) + "\n")
                    stream.flush()
                if on_cell:
                    on_cell(cell)
    finally:
        if stream:
            stream.close()
    return ExperimentResult(config, pretrained, cells, pretrain_errors)


def _grid_base(config: ExperimentConfig, method: str, parameter: str) -> dict:
    """Fields shared by every grid variant, before the swept value is set."""
    owners = _METHOD_FIELDS.get(parameter)
    if owners is not None and method not in owners:
        raise ConfigError(f"parameter {parameter!r} does not apply to {method}; it belongs to {', '.join(owners)}")
    if owners is None and parameter not in GENERIC_GRID_PARAMS:
        raise ConfigError(
            f"cannot sweep {parameter!r}; choose one of {sorted(set(_METHOD_FIELDS) | set(GENERIC_GRID_PARAMS))}"
        )
    for m in config.methods:
        if m.method == method:
            return m.to_dict()
    # borrow the schedule of the first configured method
    base = {k: v for k, v in config.methods[0].to_dict().items() if k not in _METHOD_FIELDS and k != "label"}
    base["method"] = method
    return base


@dataclass
class GridResult:
    method: str
    parameter: str
    values: list
    results: list[ExperimentResult]

    @property
    def labels(self) -> list[str]:
        return [grid_label(self.method, self.parameter, v) for v in self.values]


def grid_label(method: str, parameter: str, value) -> str:
    return f"{method}[{parameter}={value}]"


def run_ablation_grid(
    config: ExperimentConfig,
    method: str,
    parameter: str,
    values: Sequence,
    output_dir: str | Path | None = None,
) -> GridResult:
    """One full multi-seed experiment per grid value."""
    if not values:
        raise ConfigError("grid needs at least one value")
    if len(set(values)) != len(values):
        raise ConfigError(f"grid values must be distinct, got {list(values)}")
    base = _grid_base(config, method, parameter)
    variants = []
    for v in values:
        if parameter == "k" and not 0 <= int(v) <= config.model.depth:
            raise ConfigError(f"k={v} is outside [0, depth={config.model.depth}]")
        variants.append(UnlearnMethodConfig(**{**base, parameter: v, "label": grid_label(method, parameter, v)}))
    bundle = config.load_dataset()
    # the original model does not depend on the swept value, so train it once per seed
    originals: dict[int, ModelState] = {}
    results = []
    for v, variant in zip(values, variants):
        sub = config.with_changes(methods=(variant,))
        sub_dir = Path(output_dir) / f"{parameter}={v}" if output_dir is not None else None
        results.append(run_experiment(sub, sub_dir, bundle=bundle, originals=originals))
    return GridResult(method, parameter, list(values), results)
