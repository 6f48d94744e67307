import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import balanced_dataset, write_tiny_files
from modbias.data import (
    Dataset,
    Sample,
    Split,
    SplitSpec,
    apply_split,
    kshot_subset,
    load_dataset,
    load_split,
    save_dataset,
    save_split,
    split_from_samples,
    stratified_split,
)
from modbias.errors import DataError
from modbias.modality import COMBO_T
from modbias.synth import SynthConfig, synth_generate


# ---------------------------------------------------------------------------
# Loading and saving

def test_load_tiny_fixture(tmp_path, tiny_dataset):
    base = write_tiny_files(tmp_path)
    ds = load_dataset(base)
    assert len(ds) == 3
    assert ds.audio_dim == 2 and ds.video_dim == 2
    assert ds.labels == ("Thank", "Taunt")
    assert ds.samples[0].id == "a1" and ds.samples[0].label == 0
    assert ds.samples[1].split is Split.DEV
    assert np.allclose(ds.samples[2].audio, [0.5, 0.6])


def test_load_accepts_meta_or_body_path(tmp_path):
    base = write_tiny_files(tmp_path)
    assert load_dataset(f"{base}.meta.json") == load_dataset(f"{base}.jsonl") == load_dataset(base)


def test_dimension_mismatch_names_sample(tmp_path):
    base = write_tiny_files(tmp_path)
    body = tmp_path / "tiny.jsonl"
    body.write_text(
        '{"id": "bad1", "text": "x", "label": "Thank", "audio": [1.0, 2.0, 3.0], "video": [0.0, 0.0], "split": null}\n',
        encoding="utf-8",
    )
    with pytest.raises(DataError, match="bad1"):
        load_dataset(base)


def test_empty_body_is_valid(tmp_path):
    base = write_tiny_files(tmp_path)
    (tmp_path / "tiny.jsonl").write_text("", encoding="utf-8")
    ds = load_dataset(base)
    assert len(ds) == 0


def test_malformed_json_reports_line_number(tmp_path):
    base = write_tiny_files(tmp_path)
    body = tmp_path / "tiny.jsonl"
    text = body.read_text(encoding="utf-8").splitlines()
    text[1] = "{not json"
    body.write_text("\n".join(text) + "\n", encoding="utf-8")
    with pytest.raises(DataError, match=r"tiny\.jsonl:2"):
        load_dataset(base)


def test_unknown_label_rejected(tmp_path):
    base = write_tiny_files(tmp_path)
    (tmp_path / "tiny.jsonl").write_text(
        '{"id": "a1", "text": "x", "label": "Nope", "audio": [0.0, 0.0], "video": [0.0, 0.0], "split": null}\n',
        encoding="utf-8",
    )
    with pytest.raises(DataError, match="Nope"):
        load_dataset(base)


def test_duplicate_id_rejected(tmp_path):
    base = write_tiny_files(tmp_path)
    body = tmp_path / "tiny.jsonl"
    line = body.read_text(encoding="utf-8").splitlines()[0]
    body.write_text(line + "\n" + line + "\n", encoding="utf-8")
    with pytest.raises(DataError, match="duplicate"):
        load_dataset(base)


def test_round_trip_tiny(tmp_path, tiny_dataset):
    save_dataset(tiny_dataset, tmp_path / "out")
    assert load_dataset(tmp_path / "out") == tiny_dataset


def test_round_trip_synthetic_corpus(tmp_path):
    config = SynthConfig(
        num_labels=10, samples_per_label=200, audio_dim=6, video_dim=6, noise=0.3
    )
    ds, _ = synth_generate(config, seed=123)
    assert len(ds) == 2000
    save_dataset(ds, tmp_path / "big")
    loaded = load_dataset(tmp_path / "big")
    assert loaded.name == ds.name
    assert loaded.labels == ds.labels
    for a, b in zip(loaded.samples, ds.samples):
        assert a == b  # field-by-field incl. bit-exact float vectors
    assert loaded == ds


def test_save_to_unwritable_path_errors(tmp_path):
    # A regular file in the middle of the target path defeats even root.
    blocker = tmp_path / "blocker"
    blocker.write_text("", encoding="utf-8")
    ds = load_dataset(write_tiny_files(tmp_path))
    with pytest.raises(DataError):
        save_dataset(ds, blocker / "sub" / "x")


# ---------------------------------------------------------------------------
# Stratified splitting

def _dataset_2224() -> Dataset:
    # 19 labels of 115 samples (multiples of 5 split exactly) plus one of 39,
    # so the global sizes land on the 3:1:1 allocation of 2224.
    samples = []
    idx = 0
    sizes = [115] * 19 + [39]
    for label, size in enumerate(sizes):
        for _ in range(size):
            samples.append(Sample(f"s{idx:05d}", f"w{label}", np.zeros(1), np.zeros(1), label))
            idx += 1
    return Dataset("m1-sized", tuple(f"L{i}" for i in range(20)), 1, 1, tuple(samples))


def test_split_sizes_match_published_totals():
    ds = _dataset_2224()
    assert len(ds) == 2224
    spec = stratified_split(ds, (0.6, 0.2, 0.2), seed=11)
    sizes = spec.sizes()
    assert sizes[Split.TRAIN] == 1334
    assert sizes[Split.DEV] == 445
    assert sizes[Split.TEST] == 445


def test_split_all_train():
    ds = balanced_dataset(2, 5)
    spec = stratified_split(ds, (1.0, 0.0, 0.0), seed=0)
    assert spec.sizes()[Split.TRAIN] == 10
    assert spec.sizes()[Split.DEV] == 0


def test_split_exact_fractions_9304():
    ds = balanced_dataset(1, 9304)
    ratios = (6165 / 9304, 1106 / 9304, 2033 / 9304)
    spec = stratified_split(ds, ratios, seed=2)
    sizes = spec.sizes()
    assert (sizes[Split.TRAIN], sizes[Split.DEV], sizes[Split.TEST]) == (6165, 1106, 2033)


def test_split_invalid_ratios():
    ds = balanced_dataset(2, 5)
    with pytest.raises(DataError, match="sum to 1"):
        stratified_split(ds, (0.5, 0.2, 0.2), seed=0)
    with pytest.raises(DataError, match="non-negative"):
        stratified_split(ds, (1.2, -0.1, -0.1), seed=0)


def test_split_order_independent(tmp_path):
    ds = balanced_dataset(3, 30)
    reversed_ds = Dataset(ds.name, ds.labels, 1, 1, tuple(reversed(ds.samples)))
    a = stratified_split(ds, (0.6, 0.2, 0.2), seed=9).assignment
    b = stratified_split(reversed_ds, (0.6, 0.2, 0.2), seed=9).assignment
    assert a == b


@settings(max_examples=40, deadline=None)
@given(
    sizes=st.lists(st.integers(min_value=1, max_value=40), min_size=1, max_size=6),
    seed=st.integers(min_value=0, max_value=2**32),
)
def test_split_partition_and_stratification(sizes, seed):
    samples = []
    idx = 0
    for label, size in enumerate(sizes):
        for _ in range(size):
            samples.append(Sample(f"p{idx:04d}", "t", np.zeros(1), np.zeros(1), label))
            idx += 1
    ds = Dataset("prop", tuple(f"L{i}" for i in range(len(sizes))), 1, 1, tuple(samples))
    ratios = (0.6, 0.2, 0.2)
    spec = stratified_split(ds, ratios, seed)

    # Partition: total cover, no overlap (assignment is a total function).
    assert set(spec.assignment) == {s.id for s in ds.samples}

    # Stratification: per-label deviation from the exact allocation < 1.
    for label, size in enumerate(sizes):
        ids = [s.id for s in ds.samples if s.label == label]
        for part, ratio in zip((Split.TRAIN, Split.DEV, Split.TEST), ratios):
            got = sum(1 for i in ids if spec.assignment[i] is part)
            assert abs(got - size * ratio) < 1

    # Determinism.
    again = stratified_split(ds, ratios, seed)
    assert again.assignment == spec.assignment


# ---------------------------------------------------------------------------
# k-shot subsetting

def _kshot_base():
    ds = balanced_dataset(20, 20)
    spec = stratified_split(ds, (0.6, 0.2, 0.2), seed=4)
    return ds, spec


def test_kshot_counts():
    ds, spec = _kshot_base()
    sub = kshot_subset(ds, spec, k=10, seed=1)
    assert len(sub) == 200
    per_label = {}
    for s in sub.samples:
        per_label[s.label] = per_label.get(s.label, 0) + 1
    assert all(v == 10 for v in per_label.values())
    train_ids = {i for i, p in spec.assignment.items() if p is Split.TRAIN}
    assert all(s.id in train_ids for s in sub.samples)


def test_kshot_zero_shot():
    ds, spec = _kshot_base()
    assert len(kshot_subset(ds, spec, k=0, seed=1)) == 0


def test_kshot_min_rule():
    ds = balanced_dataset(2, 10)
    # Label 1 only has 7 train samples.
    assignment = {}
    label1_seen = 0
    for s in ds.samples:
        if s.label == 1:
            label1_seen += 1
            assignment[s.id] = Split.TRAIN if label1_seen <= 7 else Split.TEST
        else:
            assignment[s.id] = Split.TRAIN
    spec = SplitSpec(assignment)
    sub = kshot_subset(ds, spec, k=10, seed=0)
    counts = {0: 0, 1: 0}
    for s in sub.samples:
        counts[s.label] += 1
    assert counts == {0: 10, 1: 7}


def test_kshot_deterministic():
    ds, spec = _kshot_base()
    a = kshot_subset(ds, spec, k=3, seed=7)
    b = kshot_subset(ds, spec, k=3, seed=7)
    assert a == b
    c = kshot_subset(ds, spec, k=3, seed=8)
    assert {s.id for s in a.samples} != {s.id for s in c.samples}


def test_kshot_negative_k_rejected():
    ds, spec = _kshot_base()
    with pytest.raises(DataError):
        kshot_subset(ds, spec, k=-1, seed=0)


# ---------------------------------------------------------------------------
# Split files and helpers

def test_split_tsv_round_trip(tmp_path):
    ds = balanced_dataset(3, 10)
    spec = stratified_split(ds, (0.6, 0.2, 0.2), seed=5)
    save_split(spec, tmp_path / "split.tsv")
    loaded = load_split(tmp_path / "split.tsv")
    assert loaded.assignment == spec.assignment
    raw = (tmp_path / "split.tsv").read_bytes()
    assert b"\r" not in raw and raw.decode("utf-8").count("\t") == len(ds)


def test_apply_split_and_recover():
    ds = balanced_dataset(2, 6)
    spec = stratified_split(ds, (0.5, 0.25, 0.25), seed=1)
    tagged = apply_split(ds, spec)
    assert all(s.split is spec.assignment[s.id] for s in tagged.samples)
    recovered = split_from_samples(tagged)
    assert recovered.assignment == spec.assignment


def test_split_from_samples_requires_tags(tiny_dataset):
    with pytest.raises(DataError, match="no split tag"):
        split_from_samples(tiny_dataset)
