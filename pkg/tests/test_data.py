import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import MUCAC_COUNTS, MUFAC_COUNTS, table_manifest, write_images
from unlearnkit.data import (
    DataAccess,
    DatasetBundle,
    SampleRecord,
    SyntheticSpec,
    batch_indices,
    batch_iterator,
    generate_synthetic,
    load_manifest,
    validate_bundle,
    write_manifest,
)
from unlearnkit.errors import ConfigError, ImageReadError, InputError, ValidationError


def _counts_tuple(bundle):
    c = bundle.counts()
    return (c["train"], c["test"], c["forget"], c["retain"], c["unseen"])


@pytest.mark.parametrize("counts, multilabel", [(MUFAC_COUNTS, False), (MUCAC_COUNTS, True)])
def test_table_sized_manifests(tmp_path, counts, multilabel):
    bundle = load_manifest(table_manifest(tmp_path, counts, multilabel))
    assert _counts_tuple(bundle) == counts
    report = validate_bundle(bundle)
    assert report.passed, report.to_text()
    assert bundle.task_kind == ("multilabel" if multilabel else "multiclass")


def test_manifest_images_decode_and_standardize(tmp_path):
    path = table_manifest(tmp_path, (6, 2, 2, 4, 2))
    bundle = load_manifest(path)
    x, y = bundle.arrays("forget")
    assert x.shape == (2, 3, 8, 8) and x.dtype == torch.float32
    assert 0.0 <= float(x.min()) and float(x.max()) <= 1.0  # identity mean/std
    assert y.tolist() == [0, 1]


def _rows(tmp_path, body: str, header="id,path,labels,split,forget"):
    write_images(tmp_path / "images", n=1)
    p = tmp_path / "m.csv"
    p.write_text(header + "\n" + body)
    return p


def test_duplicate_id_rejected(tmp_path):
    p = _rows(tmp_path, "a,images/img0.png,0,train,0\na,images/img0.png,1,test,0\n")
    with pytest.raises(ValidationError, match="duplicate"):
        load_manifest(p)


def test_forget_outside_train_rejected(tmp_path):
    p = _rows(tmp_path, "a,images/img0.png,0,train,0\nb,images/img0.png,1,test,1\n")
    with pytest.raises(ValidationError, match="outside the train split"):
        load_manifest(p)


def test_unreadable_image_lists_ids(tmp_path):
    p = _rows(tmp_path, "a,images/img0.png,0,train,0\nb,images/missing.png,1,test,0\n")
    with pytest.raises(ImageReadError) as info:
        load_manifest(p)
    assert info.value.ids == ["b"]


def test_bad_header_rejected(tmp_path):
    p = _rows(tmp_path, "a,images/img0.png,0,train\n", header="id,path,labels,split")
    with pytest.raises(ValidationError, match="header"):
        load_manifest(p)


def test_metadata_lines(tmp_path):
    write_images(tmp_path / "images", n=1)
    p = tmp_path / "m.csv"
    p.write_text(
        "# task_kind: multiclass\n# num_outputs: 10\n# mean: 0.5,0.5,0.5\n# std: 0.25,0.25,0.25\n"
        "id,path,labels,split,forget\na,images/img0.png,0,train,1\nb,images/img0.png,1,unseen,0\n"
    )
    b = load_manifest(p)
    assert b.num_outputs == 10 and b.mean == (0.5, 0.5, 0.5)
    x, _ = b.arrays("forget")
    assert float(x.min()) >= -2.0 - 1e-6 and float(x.max()) <= 2.0 + 1e-6


def test_roundtrip_write_manifest(tmp_path):
    write_images(tmp_path / "images", n=1)
    recs = [
        SampleRecord("a", "images/img0.png", (1, 0, 1), "train", True),
        SampleRecord("b", "images/img0.png", (0, 0, 1), "train"),
        SampleRecord("c", "images/img0.png", (1, 1, 1), "unseen"),
    ]
    write_manifest(tmp_path / "m.csv", recs, {"task_kind": "multilabel"})
    b = load_manifest(tmp_path / "m.csv")
    assert [r.label for r in b.train] == [(1, 0, 1), (0, 0, 1)]
    assert b.ids("forget") == {"a"} and b.num_outputs == 3


def _arr(size=4):
    return np.zeros((3, size, size), dtype=np.float32)


def test_validation_catches_structural_faults():
    r = [SampleRecord("a", _arr(), 0, "train", True), SampleRecord("b", _arr(), 0, "train")]
    good = DatasetBundle.from_records(r + [SampleRecord("u", _arr(), 0, "unseen")], task_kind="multiclass", num_outputs=2)
    assert validate_bundle(good).passed

    overlap = DatasetBundle(
        train=tuple(r), retain=tuple(r), forget=(r[0],), test=(), unseen=(),
        task_kind="multiclass", num_outputs=2,
    )
    rep = validate_bundle(overlap)
    failed = {c.name for c in rep.failures}
    assert {"retain and forget disjoint", "retain + forget = train"} <= failed

    leak = DatasetBundle.from_records(r + [SampleRecord("a", _arr(), 0, "test")], task_kind="multiclass", num_outputs=2)
    assert "train and test disjoint" in {c.name for c in validate_bundle(leak).failures}

    mixed = DatasetBundle.from_records(r + [SampleRecord("t", _arr(8), 0, "test")], task_kind="multiclass", num_outputs=2)
    assert "single image resolution" in {c.name for c in validate_bundle(mixed).failures}


def test_empty_forget_warns_but_passes():
    r = [SampleRecord("a", _arr(), 0, "train"), SampleRecord("u", _arr(), 0, "unseen")]
    rep = validate_bundle(DatasetBundle.from_records(r, task_kind="multiclass", num_outputs=1))
    assert rep.passed
    assert any("degenerate" in w for w in rep.warnings)
    assert "[WARN] degenerate" in rep.to_text()


def test_forget_flag_only_on_train():
    with pytest.raises(ValidationError):
        SampleRecord("x", _arr(), 0, "test", True)


def test_synthetic_is_deterministic_and_consistent():
    spec = SyntheticSpec(num_classes=4, image_size=8, per_split_counts={"train": 40, "forget": 12, "test": 10, "unseen": 12})
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    assert a.counts() == {"train": 40, "retain": 28, "forget": 12, "test": 10, "unseen": 12}
    assert torch.equal(a.arrays("train")[0], b.arrays("train")[0])
    assert validate_bundle(a).passed
    # stratified forget pick covers every class
    assert set(a.arrays("forget")[1].tolist()) == {0, 1, 2, 3}


def test_synthetic_multilabel():
    spec = SyntheticSpec(num_classes=3, image_size=8, task_kind="multilabel", per_split_counts={"train": 20, "forget": 5, "test": 5, "unseen": 5})
    b = generate_synthetic(spec)
    assert b.arrays("test")[1].shape == (5, 3)


def test_synthetic_rejects_bad_spec():
    with pytest.raises(InputError):
        generate_synthetic(SyntheticSpec(per_split_counts={"train": 5, "forget": 6}))
    with pytest.raises(ConfigError):
        SyntheticSpec.from_dict({"classes": 3})


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 300), bs=st.integers(1, 64), seed=st.integers(0, 10**6), epoch=st.integers(0, 50))
def test_batches_partition_each_epoch(n, bs, seed, epoch):
    batches = batch_indices(n, bs, seed, epoch)
    flat = np.concatenate(batches)
    assert sorted(flat.tolist()) == list(range(n))
    assert all(len(b) == bs for b in batches[:-1]) and 1 <= len(batches[-1]) <= bs
    assert all(np.array_equal(x, y) for x, y in zip(batches, batch_indices(n, bs, seed, epoch)))


def test_batch_iterator_errors_and_partial_batch():
    assert [len(b) for b in batch_iterator(list(range(10)), 4, 0, 0)] == [4, 4, 2]
    with pytest.raises(InputError):
        batch_iterator([], 4, 0, 0)


def test_data_access_logs_reads(small_bundle):
    access = DataAccess(small_bundle)
    list(access.batches("retain", 16, 0, 0))
    access.phase = "other"
    access.labels("forget")
    assert access.ids_read("images") == small_bundle.ids("retain")
    assert access.ids_read("labels", phase="other") == small_bundle.ids("forget")
    assert not access.ids_read("images") & small_bundle.ids("forget")
