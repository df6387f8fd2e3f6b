"""Five-split unlearning datasets: train = retain + forget, plus test and unseen.

Manifests are delimited text with the header ``id,path,labels,split,forget``.
Optional ``# key: value`` lines before the header carry metadata::

    # task_kind: multilabel
    # num_outputs: 3
    # image_size: 128
    # mean: 0.5,0.5,0.5
    # std: 0.25,0.25,0.25
    id,path,labels,split,forget
    a001,img/a001.png,1;0;1,train,1

Multilabel attribute flags are joined by ``;``. Pixels are scaled to [0, 1]
and then standardized per channel with ``mean``/``std``.
"""
from __future__ import annotations

import csv
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
import torch

from .errors import ConfigError, ImageReadError, InputError, ValidationError

SPLITS = ("train", "test", "unseen")
BUNDLE_SPLITS = ("train", "retain", "forget", "test", "unseen")
MANIFEST_COLUMNS = ["id", "path", "labels", "split", "forget"]


@dataclass(frozen=True)
class SampleRecord:
    id: str
    image: np.ndarray | str
    label: int | tuple[int, ...]
    split: str
    forget_flag: bool = False

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValidationError(f"{self.id}: unknown split {self.split!r}")
        if self.forget_flag and self.split != "train":
            raise ValidationError(f"{self.id}: forget flag set on a {self.split} record")


@dataclass(frozen=True)
class DatasetBundle:
    train: tuple[SampleRecord, ...]
    retain: tuple[SampleRecord, ...]
    forget: tuple[SampleRecord, ...]
    test: tuple[SampleRecord, ...]
    unseen: tuple[SampleRecord, ...]
    task_kind: str
    num_outputs: int
    mean: tuple[float, ...] = (0.0, 0.0, 0.0)
    std: tuple[float, ...] = (1.0, 1.0, 1.0)
    image_root: str | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_records(cls, records: Sequence[SampleRecord], **kwargs) -> "DatasetBundle":
        train = tuple(r for r in records if r.split == "train")
        return cls(
            train=train,
            retain=tuple(r for r in train if not r.forget_flag),
            forget=tuple(r for r in train if r.forget_flag),
            test=tuple(r for r in records if r.split == "test"),
            unseen=tuple(r for r in records if r.split == "unseen"),
            **kwargs,
        )

    def split(self, name: str) -> tuple[SampleRecord, ...]:
        if name not in BUNDLE_SPLITS:
            raise InputError(f"unknown split {name!r}")
        return getattr(self, name)

    def counts(self) -> dict[str, int]:
        return {name: len(self.split(name)) for name in BUNDLE_SPLITS}

    def ids(self, name: str) -> frozenset[str]:
        return frozenset(r.id for r in self.split(name))

    @property
    def channels(self) -> int:
        return len(self.mean)

    @property
    def pixel_range(self) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-channel (low, high) bounds of standardized pixel values."""
        mean = torch.tensor(self.mean).view(-1, 1, 1)
        std = torch.tensor(self.std).view(-1, 1, 1)
        return (0.0 - mean) / std, (1.0 - mean) / std

    def arrays(self, name: str) -> tuple[torch.Tensor, torch.Tensor]:
        """Standardized image tensor and label tensor for a split (cached)."""
        if name not in self._cache:
            records = self.split(name)
            self._cache[name] = (self._stack_images(records), self._stack_labels(records))
        return self._cache[name]

    def _stack_images(self, records: Sequence[SampleRecord]) -> torch.Tensor:
        if not records:
            return torch.empty(0)
        pixels = np.stack([self._pixels(r) for r in records]).astype(np.float32)
        mean = np.asarray(self.mean, dtype=np.float32).reshape(1, -1, 1, 1)
        std = np.asarray(self.std, dtype=np.float32).reshape(1, -1, 1, 1)
        return torch.from_numpy((pixels - mean) / std)

    def _pixels(self, record: SampleRecord) -> np.ndarray:
        if isinstance(record.image, np.ndarray):
            return record.image
        from PIL import Image

        path = Path(record.image)
        if self.image_root and not path.is_absolute():
            path = Path(self.image_root) / path
        mode = "RGB" if self.channels == 3 else "L"
        with Image.open(path) as im:
            arr = np.asarray(im.convert(mode), dtype=np.float32) / 255.0
        if arr.ndim == 2:
            arr = arr[None]
        else:
            arr = arr.transpose(2, 0, 1)
        return arr

    def _stack_labels(self, records: Sequence[SampleRecord]) -> torch.Tensor:
        if self.task_kind == "multilabel":
            return torch.tensor([list(r.label) for r in records], dtype=torch.float32).reshape(
                len(records), self.num_outputs
            )
        return torch.tensor([int(r.label) for r in records], dtype=torch.long)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list[Check]
    warnings: list[str]
    counts: dict[str, int]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "counts": self.counts,
            "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks],
            "warnings": list(self.warnings),
        }

    def to_text(self) -> str:
        lines = ["counts: " + ", ".join(f"{k}={v}" for k, v in self.counts.items())]
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            lines.append(f"[{status}] {c.name}" + (f": {c.detail}" if c.detail else ""))
        lines += [f"[WARN] {w}" for w in self.warnings]
        lines.append("result: " + ("valid" if self.passed else "INVALID"))
        return "\n".join(lines)


def _overlap_check(name: str, a: frozenset, b: frozenset) -> Check:
    common = sorted(a & b)
    if common:
        shown = ", ".join(common[:10]) + (" ..." if len(common) > 10 else "")
        return Check(name, False, f"{len(common)} shared ids: {shown}")
    return Check(name, True)


def validate_bundle(bundle: DatasetBundle) -> ValidationReport:
    counts = bundle.counts()
    checks = []
    warnings = []

    for name in BUNDLE_SPLITS:
        ids = [r.id for r in bundle.split(name)]
        dup = sorted(k for k, v in Counter(ids).items() if v > 1)
        checks.append(Check(f"unique ids in {name}", not dup, ", ".join(dup[:10])))

    train, retain, forget = bundle.ids("train"), bundle.ids("retain"), bundle.ids("forget")
    checks.append(_overlap_check("retain and forget disjoint", retain, forget))
    missing = sorted(train - (retain | forget))
    extra = sorted((retain | forget) - train)
    checks.append(
        Check(
            "retain union forget equals train",
            not missing and not extra,
            (f"missing from retain/forget: {missing[:10]} " if missing else "")
            + (f"not in train: {extra[:10]}" if extra else ""),
        )
    )
    size_ok = counts["retain"] + counts["forget"] == counts["train"]
    checks.append(
        Check(
            "retain + forget = train",
            size_ok,
            f"{counts['retain']} + {counts['forget']} = {counts['retain'] + counts['forget']} vs {counts['train']}",
        )
    )
    test, unseen = bundle.ids("test"), bundle.ids("unseen")
    checks.append(_overlap_check("train and test disjoint", train, test))
    checks.append(_overlap_check("train and unseen disjoint", train, unseen))
    checks.append(_overlap_check("test and unseen disjoint", test, unseen))

    bad_flags = sorted(r.id for r in bundle.forget if not r.forget_flag or r.split != "train")
    checks.append(Check("forget records are flagged train records", not bad_flags, ", ".join(bad_flags[:10])))

    shapes = {
        tuple(r.image.shape)
        for name in ("train", "test", "unseen")
        for r in bundle.split(name)
        if isinstance(r.image, np.ndarray)
    }
    has_refs = any(
        not isinstance(r.image, np.ndarray) for name in ("train", "test", "unseen") for r in bundle.split(name)
    )
    detail = ", ".join(str(s) for s in sorted(shapes))
    if has_refs:
        detail = (detail + "; " if detail else "") + "file references checked at decode time"
    checks.append(Check("single image resolution", len(shapes) <= 1, detail))

    if counts["forget"] == 0:
        warnings.append("degenerate unlearning task: forget set is empty")
    if counts["unseen"] == 0:
        warnings.append("unseen split is empty: forgetting cannot be scored")
    return ValidationReport(checks=checks, warnings=warnings, counts=counts)


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(" ", "").split(",") if x)


def load_manifest(path: str | Path, image_root: str | Path | None = None) -> DatasetBundle:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    root = Path(image_root) if image_root is not None else path.parent

    meta: dict[str, str] = {}
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body_start = 0
    for i, line in enumerate(lines):
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            meta[key.strip()] = value.strip()
            body_start = i + 1
        elif not line.strip():
            body_start = i + 1
        else:
            break
    reader = csv.reader(lines[body_start:])
    header = next(reader, None)
    if header != MANIFEST_COLUMNS:
        raise ValidationError(f"manifest header must be {','.join(MANIFEST_COLUMNS)}, got {header}")
    rows = [r for r in reader if r]
    if any(len(r) != len(MANIFEST_COLUMNS) for r in rows):
        raise ValidationError(f"every manifest row needs {len(MANIFEST_COLUMNS)} fields")

    counts = Counter(r[0] for r in rows)
    dups = sorted(k for k, v in counts.items() if v > 1)
    if dups:
        raise ValidationError(f"duplicate ids in manifest: {dups[:10]}")

    multilabel = meta.get("task_kind", "multilabel" if any(";" in r[2] for r in rows) else "multiclass")
    multilabel = multilabel == "multilabel"
    records = []
    bad_forget = []
    for rid, rpath, rlabels, rsplit, rforget in rows:
        try:
            label = tuple(map(int, rlabels.split(";"))) if multilabel else int(rlabels)
        except ValueError:
            raise ValidationError(f"{rid}: unparseable labels {rlabels!r}") from None
        forget = rforget.strip().lower() in ("1", "true", "yes")
        if forget and rsplit != "train":
            bad_forget.append(rid)
            continue
        records.append(SampleRecord(rid, rpath, label, rsplit, forget))
    if bad_forget:
        raise ValidationError(f"forget records outside the train split: {bad_forget[:10]}")

    # many records may share a file, so resolve each distinct path once
    readable: dict[str, bool] = {}
    unreadable = []
    for r in records:
        if r.image not in readable:
            p = Path(r.image)
            p = p if p.is_absolute() else root / p
            readable[r.image] = p.is_file() and os.access(p, os.R_OK)
        if not readable[r.image]:
            unreadable.append(r.id)
    if unreadable:
        raise ImageReadError(f"unreadable image references for ids: {unreadable[:20]}", unreadable)

    if multilabel:
        widths = {len(r.label) for r in records}
        if len(widths) > 1:
            raise ValidationError(f"inconsistent attribute counts: {sorted(widths)}")
        num_outputs = int(meta.get("num_outputs", widths.pop() if widths else 1))
    else:
        num_outputs = int(meta.get("num_outputs", max((r.label for r in records), default=0) + 1))
    channels = int(meta.get("channels", 3))
    mean = _parse_floats(meta["mean"]) if "mean" in meta else (0.0,) * channels
    std = _parse_floats(meta["std"]) if "std" in meta else (1.0,) * channels

    bundle = DatasetBundle.from_records(
        records,
        task_kind="multilabel" if multilabel else "multiclass",
        num_outputs=num_outputs,
        mean=mean,
        std=std,
        image_root=str(root),
    )
    report = validate_bundle(bundle)
    if not report.passed:
        raise ValidationError("manifest failed validation:\n" + report.to_text())
    return bundle


def write_manifest(path: str | Path, records: Sequence[SampleRecord], meta: Mapping[str, object] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in (meta or {}).items():
            if isinstance(v, (tuple, list)):
                v = ",".join(str(x) for x in v)
            fh.write(f"# {k}: {v}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for r in records:
            label = ";".join(str(x) for x in r.label) if isinstance(r.label, tuple) else str(r.label)
            writer.writerow([r.id, r.image, label, r.split, int(r.forget_flag)])


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a deterministic stand-in corpus.

    Each image is a class template (or a sum of signed attribute templates)
    plus an instance signature and pixel noise. ``class_strength`` controls
    how learnable the task is and therefore the train/test generalization gap.
    """

    num_classes: int = 8
    per_split_counts: Mapping[str, int] = field(
        default_factory=lambda: {"train": 400, "forget": 100, "test": 200, "unseen": 100}
    )
    image_size: int = 16
    seed: int = 0
    channels: int = 3
    task_kind: str = "multiclass"
    class_strength: float = 0.12
    instance_strength: float = 0.2
    noise: float = 0.05

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synthetic dataset keys: {sorted(unknown)}")
        return cls(**dict(d))


def _smooth_templates(rng: np.random.Generator, n: int, channels: int, size: int) -> np.ndarray:
    # low-frequency patterns: random coarse grid upsampled to full resolution
    coarse = max(2, size // 4)
    grid = rng.standard_normal((n, channels, coarse, coarse))
    reps = -(-size // coarse)
    up = np.repeat(np.repeat(grid, reps, axis=2), reps, axis=3)[:, :, :size, :size]
    return up / np.abs(up).max(axis=(1, 2, 3), keepdims=True)


def generate_synthetic(spec: SyntheticSpec) -> DatasetBundle:
    counts = dict(spec.per_split_counts)
    n_train, n_forget = counts.get("train", 0), counts.get("forget", 0)
    n_test, n_unseen = counts.get("test", 0), counts.get("unseen", 0)
    if n_forget > n_train:
        raise InputError("forget count exceeds train count")
    if spec.task_kind not in ("multiclass", "multilabel"):
        raise InputError(f"unknown task_kind {spec.task_kind!r}")
    rng = np.random.default_rng(spec.seed)
    c, s, k = spec.channels, spec.image_size, spec.num_classes
    templates = _smooth_templates(rng, k, c, s)

    def make(split: str, n: int) -> tuple[np.ndarray, list]:
        if spec.task_kind == "multiclass":
            labels = np.arange(n) % k
            rng.shuffle(labels)
            signal = templates[labels]
            label_list = [int(x) for x in labels]
        else:
            flags = rng.integers(0, 2, size=(n, k))
            signal = np.einsum("nk,kchw->nchw", 2 * flags - 1, templates) / np.sqrt(k)
            label_list = [tuple(int(x) for x in row) for row in flags]
        signature = rng.standard_normal((n, c, s, s))
        noise = rng.standard_normal((n, c, s, s))
        img = 0.5 + spec.class_strength * signal + spec.instance_strength * signature * 0.5 + spec.noise * noise
        return np.clip(img, 0.0, 1.0).astype(np.float32), label_list

    records: list[SampleRecord] = []
    train_imgs, train_labels = make("train", n_train)
    forget_idx = _stratified_pick(train_labels, n_forget, rng, spec.task_kind)
    for i in range(n_train):
        records.append(SampleRecord(f"train-{i:05d}", train_imgs[i], train_labels[i], "train", i in forget_idx))
    for split, n in (("test", n_test), ("unseen", n_unseen)):
        imgs, labels = make(split, n)
        records += [SampleRecord(f"{split}-{i:05d}", imgs[i], labels[i], split) for i in range(n)]

    return DatasetBundle.from_records(
        records,
        task_kind=spec.task_kind,
        num_outputs=k,
        mean=(0.5,) * c,
        std=(0.25,) * c,
    )


def _stratified_pick(labels: list, n: int, rng: np.random.Generator, task_kind: str) -> set[int]:
    """Choose ``n`` train indices spread round-robin over classes so the forget
    set spans many labels (instance-based, not class-based, forgetting)."""
    if n == 0:
        return set()
    keys = labels if task_kind == "multiclass" else [sum(v << j for j, v in enumerate(lab)) for lab in labels]
    groups: dict[int, list[int]] = {}
    for i, key in enumerate(keys):
        groups.setdefault(key, []).append(i)
    queues = []
    for key in sorted(groups):
        members = np.array(groups[key])
        rng.shuffle(members)
        queues.append(list(members))
    picked: list[int] = []
    while len(picked) < n:
        for q in queues:
            if q and len(picked) < n:
                picked.append(int(q.pop(0)))
    return set(picked)


def batch_indices(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    if batch_size < 1:
        raise InputError("batch_size must be >= 1")
    if n == 0:
        raise InputError("cannot batch an empty record set")
    order = np.random.default_rng([int(seed), int(epoch)]).permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def batch_iterator(records: Sequence, batch_size: int, seed: int, epoch: int) -> list[list]:
    """Shuffle ``records`` as a pure function of (seed, epoch) and cut batches;
    the final partial batch is kept."""
    return [[records[i] for i in idx] for idx in batch_indices(len(records), batch_size, seed, epoch)]


@dataclass(frozen=True)
class AccessEvent:
    phase: str
    split: str
    kind: str  # "images" or "labels"
    ids: tuple[str, ...]


class DataAccess:
    """The only path through which unlearning code reads a bundle. Every read
    is appended to ``log`` so tests can audit which ids a method touched."""

    def __init__(self, bundle: DatasetBundle, log: list[AccessEvent] | None = None):
        self.bundle = bundle
        self.log = log if log is not None else []
        self.phase = "main"

    def _record(self, split: str, kind: str, idx: np.ndarray | None) -> None:
        records = self.bundle.split(split)
        ids = tuple(r.id for r in records) if idx is None else tuple(records[i].id for i in idx)
        self.log.append(AccessEvent(self.phase, split, kind, ids))

    def size(self, split: str) -> int:
        return len(self.bundle.split(split))

    def batches(self, split: str, batch_size: int, seed: int, epoch: int) -> Iterator[tuple[torch.Tensor, torch.Tensor]]:
        images, labels = self.bundle.arrays(split)
        for idx in batch_indices(len(labels), batch_size, seed, epoch):
            self._record(split, "images", idx)
            yield images[idx], labels[idx]

    def cycle(self, split: str, batch_size: int, seed: int, epoch: int) -> Iterator[tuple[torch.Tensor, torch.Tensor]]:
        """Endless batches; each pass reshuffles with a fresh sub-epoch."""
        sub = 0
        while True:
            yield from self.batches(split, batch_size, seed, epoch * 1_000_003 + sub)
            sub += 1

    def full(self, split: str) -> tuple[torch.Tensor, torch.Tensor]:
        images, labels = self.bundle.arrays(split)
        self._record(split, "images", None)
        return images, labels

    def labels(self, split: str) -> torch.Tensor:
        self._record(split, "labels", None)
        return self.bundle.arrays(split)[1]

    def ids_read(self, kind: str | None = None, phase: str | None = None) -> set[str]:
        out: set[str] = set()
        for ev in self.log:
            if (kind is None or ev.kind == kind) and (phase is None or ev.phase == phase):
                out.update(ev.ids)
        return out
