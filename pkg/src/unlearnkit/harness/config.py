"""Experiment configuration.

An experiment file is YAML (JSON also parses) with this layout::

    name: desk                    # used for the default output directory
    output_dir: runs/desk         # optional; relative paths honour UNLEARNKIT_OUTPUT_ROOT
    seeds: [0, 1, 2]              # each seed drives both the original model and unlearning
    threads: 1
    dataset:
      synthetic: {num_classes: 8, image_size: 16, ...}
      # or
      manifest: data/manifest.csv
      image_root: data/images     # optional
    model: {image_size: 16, patch_size: 4, depth: 2, heads: 2, embed_dim: 32, num_outputs: 8}
    pretrain: {epochs: 40, learning_rate: 0.003, batch_size: 64}
    defaults: {epochs: 15, learning_rate: 0.001, batch_size: 64}
    methods:
      - {method: finetune}
      - {method: cf_k, k: 1}
    evaluation: {folds: 5}

``defaults`` are merged into every method entry; keys on the entry win.
"""
from __future__ import annotations

import copy
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from ..data import DatasetBundle, SyntheticSpec, generate_synthetic, load_manifest
from ..errors import ConfigError
from ..model import ViTConfig
from ..unlearn import UnlearnMethodConfig

OUTPUT_ROOT_ENV = "UNLEARNKIT_OUTPUT_ROOT"
_TOP_KEYS = {
    "name", "output_dir", "seeds", "threads", "dataset", "model", "pretrain",
    "defaults", "methods", "evaluation", "save_checkpoints",
}


@dataclass(frozen=True)
class PretrainSpec:
    """Ordinary training that produces the original model for each seed."""

    epochs: int = 40
    learning_rate: float = 3e-3
    batch_size: int = 64
    weight_decay: float = 0.0
    # optional path template such as "ckpt/theta0-{seed}.pt", relative to the
    # config file; loaded when present, written after training otherwise
    checkpoint: str | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"pretrain epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"pretrain batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ConfigError("pretrain learning_rate must be non-negative")

    @classmethod
    def from_dict(cls, d: Mapping) -> "PretrainSpec":
        _reject_unknown("pretrain", d, {f.name for f in fields(cls)})
        return cls(**d)


@dataclass(frozen=True)
class ExperimentConfig:
    model: ViTConfig
    methods: tuple[UnlearnMethodConfig, ...]
    seeds: tuple[int, ...]
    synthetic: SyntheticSpec | None = None
    manifest: str | None = None
    image_root: str | None = None
    pretrain: PretrainSpec = field(default_factory=PretrainSpec)
    name: str = "experiment"
    output_dir: str | None = None
    folds: int = 5
    threads: int = 1
    save_checkpoints: bool = False

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be a non-empty list")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be distinct, got {list(self.seeds)}")
        if (self.synthetic is None) == (self.manifest is None):
            raise ConfigError("dataset needs exactly one of 'manifest' or 'synthetic'")
        if not self.methods:
            raise ConfigError("at least one unlearning method is required")
        names = [m.name for m in self.methods]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ConfigError(f"method names must be unique; give duplicates a 'label': {dupes}")
        for m in self.methods:
            if m.k is not None and m.k > self.model.depth:
                raise ConfigError(f"{m.name}: k={m.k} exceeds model depth {self.model.depth}")
        if self.folds < 2:
            raise ConfigError("evaluation folds must be >= 2")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    @property
    def method_names(self) -> list[str]:
        return [m.name for m in self.methods]

    def resolve_output_dir(self, override: str | Path | None = None) -> Path:
        """Explicit override, else ``output_dir`` (default ``runs/<name>``).
        Relative paths are placed under $UNLEARNKIT_OUTPUT_ROOT when it is set."""
        out = Path(override) if override is not None else Path(self.output_dir or f"runs/{self.name}")
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out

    def load_dataset(self) -> DatasetBundle:
        if self.synthetic is not None:
            return generate_synthetic(self.synthetic)
        return load_manifest(self.manifest, self.image_root)

    def with_changes(self, **changes) -> "ExperimentConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(changes)
        return ExperimentConfig(**d)

    def to_dict(self) -> dict[str, Any]:
        """Echo used in summaries; leaves out the output location so that
        reruns into different directories stay byte-identical."""
        dataset: dict[str, Any]
        if self.synthetic is not None:
            dataset = {"synthetic": asdict(self.synthetic)}
        else:
            dataset = {"manifest": self.manifest, "image_root": self.image_root}
        return {
            "name": self.name,
            "seeds": list(self.seeds),
            "dataset": dataset,
            "model": asdict(self.model),
            "pretrain": asdict(self.pretrain),
            "methods": [m.to_dict() for m in self.methods],
            "evaluation": {"folds": self.folds},
        }

    @classmethod
    def from_dict(cls, raw: Mapping, base_dir: str | Path | None = None) -> "ExperimentConfig":
        if not isinstance(raw, Mapping):
            raise ConfigError("experiment config must be a mapping")
        _reject_unknown("experiment", raw, _TOP_KEYS)
        base = Path(base_dir) if base_dir is not None else None

        ds = raw.get("dataset") or {}
        _reject_unknown("dataset", ds, {"synthetic", "manifest", "image_root"})
        synthetic = SyntheticSpec.from_dict(ds["synthetic"]) if "synthetic" in ds else None
        manifest = _relative_to(ds.get("manifest"), base)
        image_root = _relative_to(ds.get("image_root"), base)

        try:
            model = ViTConfig.from_dict(raw.get("model") or {})
        except TypeError as exc:
            raise ConfigError(f"bad model section: {exc}") from None

        defaults = dict(raw.get("defaults") or {})
        if "seed" in defaults:
            raise ConfigError("'seed' is set by the top-level seeds list, not in defaults")
        methods = []
        for entry in raw.get("methods") or []:
            if isinstance(entry, str):
                entry = {"method": entry}
            if "seed" in entry:
                raise ConfigError("'seed' is set by the top-level seeds list, not per method")
            merged = copy.deepcopy(defaults)
            merged.update(entry)
            methods.append(UnlearnMethodConfig.from_dict(merged))

        ev = raw.get("evaluation") or {}
        _reject_unknown("evaluation", ev, {"folds"})
        seeds = raw.get("seeds", [0])
        if not isinstance(seeds, (list, tuple)) or not all(isinstance(s, int) for s in seeds):
            raise ConfigError("seeds must be a list of integers")
        return cls(
            model=model,
            methods=tuple(methods),
            seeds=tuple(seeds),
            synthetic=synthetic,
            manifest=manifest,
            image_root=image_root,
            pretrain=_pretrain_spec(raw.get("pretrain") or {}, base),
            name=str(raw.get("name", "experiment")),
            output_dir=raw.get("output_dir"),
            folds=int(ev.get("folds", 5)),
            threads=int(raw.get("threads", 1)),
            save_checkpoints=bool(raw.get("save_checkpoints", False)),
        )


def _reject_unknown(section: str, d: Mapping, known: set[str]) -> None:
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {section} keys: {sorted(unknown)}")


def _relative_to(path: str | None, base: Path | None) -> str | None:
    if path is None or base is None or Path(path).is_absolute():
        return path
    return str(base / path)


def _pretrain_spec(d: Mapping, base: Path | None) -> PretrainSpec:
    d = dict(d)
    if d.get("checkpoint"):
        d["checkpoint"] = _relative_to(d["checkpoint"], base)
    return PretrainSpec.from_dict(d)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    return ExperimentConfig.from_dict(raw or {}, base_dir=path.parent)
