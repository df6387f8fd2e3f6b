"""Fixture builders shared by several test modules."""
from pathlib import Path

import numpy as np
from PIL import Image

from unlearnkit.data import SampleRecord, write_manifest

# (train, test, forget, retain, unseen)
MUFAC_COUNTS = (10_025, 1_539, 1_500, 8_525, 1_504)
MUCAC_COUNTS = (25_846, 2_053, 10_135, 15_711, 2_001)


def write_images(root: Path, n: int = 4, size: int = 8) -> list[str]:
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(0)
    names = []
    for i in range(n):
        arr = (rng.random((size, size, 3)) * 255).astype(np.uint8)
        Image.fromarray(arr).save(root / f"img{i}.png")
        names.append(f"{root.name}/img{i}.png")
    return names


def table_manifest(tmp: Path, counts, multilabel: bool = False, image_size: int = 8) -> Path:
    """Manifest with the given split sizes; every row points at one of a few
    shared image files so the fixture stays small."""
    train, test, forget, retain, unseen = counts
    assert retain + forget == train
    names = write_images(tmp / "images", size=image_size)
    records = []

    def label(i):
        return (i % 2, (i // 2) % 2, (i // 4) % 2) if multilabel else i % 8

    for i in range(train):
        records.append(SampleRecord(f"tr{i:06d}", names[i % len(names)], label(i), "train", i < forget))
    for i in range(test):
        records.append(SampleRecord(f"te{i:06d}", names[i % len(names)], label(i), "test"))
    for i in range(unseen):
        records.append(SampleRecord(f"un{i:06d}", names[i % len(names)], label(i), "unseen"))
    meta = {"task_kind": "multilabel" if multilabel else "multiclass", "num_outputs": 3 if multilabel else 8}
    path = tmp / "manifest.csv"
    write_manifest(path, records, meta)
    return path
