"""Dataset model, JSONL+header file formats, deterministic splitting, k-shot subsetting."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError


class Split(enum.Enum):
    TRAIN = "train"
    DEV = "dev"
    TEST = "test"


@dataclass(frozen=True, eq=False)
class Sample:
    """One utterance: text plus fixed-width audio/video feature vectors."""

    id: str
    text: str
    audio: np.ndarray
    video: np.ndarray
    label: int
    split: Split | None = None

    def __post_init__(self):
        object.__setattr__(self, "audio", np.asarray(self.audio, dtype=np.float64))
        object.__setattr__(self, "video", np.asarray(self.video, dtype=np.float64))
        self.audio.setflags(write=False)
        self.video.setflags(write=False)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Sample)
            and self.id == other.id
            and self.text == other.text
            and self.label == other.label
            and self.split == other.split
            and np.array_equal(self.audio, other.audio)
            and np.array_equal(self.video, other.video)
        )

    def with_split(self, split: Split | None) -> "Sample":
        return Sample(self.id, self.text, self.audio, self.video, self.label, split)

    def with_label(self, label: int) -> "Sample":
        return Sample(self.id, self.text, self.audio, self.video, label, self.split)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered samples plus the label vocabulary and feature dimensions."""

    name: str
    labels: tuple[str, ...]
    audio_dim: int
    video_dim: int
    samples: tuple[Sample, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "samples", tuple(self.samples))
        self.validate()

    def validate(self) -> None:
        if len(set(self.labels)) != len(self.labels):
            raise DataError(f"dataset {self.name!r}: duplicate label names")
        if self.audio_dim < 0 or self.video_dim < 0:
            raise DataError(f"dataset {self.name!r}: negative feature dimension")
        seen: set[str] = set()
        for s in self.samples:
            if s.id in seen:
                raise DataError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)
            if not (0 <= s.label < len(self.labels)):
                raise DataError(f"sample {s.id!r}: label index {s.label} out of range")
            if s.audio.shape != (self.audio_dim,):
                raise DataError(
                    f"sample {s.id!r}: audio length {s.audio.shape[0]} != declared {self.audio_dim}"
                )
            if s.video.shape != (self.video_dim,):
                raise DataError(
                    f"sample {s.id!r}: video length {s.video.shape[0]} != declared {self.video_dim}"
                )

    def __len__(self) -> int:
        return len(self.samples)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Dataset)
            and self.name == other.name
            and self.labels == other.labels
            and self.audio_dim == other.audio_dim
            and self.video_dim == other.video_dim
            and self.samples == other.samples
        )

    def by_id(self) -> dict[str, Sample]:
        return {s.id: s for s in self.samples}

    def label_index(self, name: str) -> int:
        try:
            return self.labels.index(name)
        except ValueError:
            raise DataError(f"unknown label name {name!r}") from None

    def subset(self, ids: Iterable[str], name: str | None = None) -> "Dataset":
        """Samples with the given ids, in original dataset order."""
        wanted = set(ids)
        missing = wanted - {s.id for s in self.samples}
        if missing:
            raise DataError(f"unknown sample ids: {sorted(missing)[:5]}")
        kept = tuple(s for s in self.samples if s.id in wanted)
        return Dataset(name or self.name, self.labels, self.audio_dim, self.video_dim, kept)

    def replace_samples(self, samples: Sequence[Sample], name: str | None = None) -> "Dataset":
        return Dataset(name or self.name, self.labels, self.audio_dim, self.video_dim, tuple(samples))


@dataclass(frozen=True)
class SplitSpec:
    """Total assignment of sample ids to train/dev/test parts.

    ``seed`` and ``ratios`` record provenance when the split was computed here;
    they are None for specs loaded from a TSV file.
    """

    assignment: Mapping[str, Split]
    seed: int | None = None
    ratios: tuple[float, float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "assignment", dict(self.assignment))

    def part_ids(self, part: Split) -> list[str]:
        return [i for i, p in self.assignment.items() if p is part]

    def part_samples(self, dataset: Dataset, part: Split) -> list[Sample]:
        self.check_total(dataset)
        return [s for s in dataset.samples if self.assignment[s.id] is part]

    def check_total(self, dataset: Dataset) -> None:
        ids = {s.id for s in dataset.samples}
        missing = ids - self.assignment.keys()
        if missing:
            raise DataError(f"split does not cover ids: {sorted(missing)[:5]}")

    def sizes(self) -> dict[Split, int]:
        out = {p: 0 for p in Split}
        for p in self.assignment.values():
            out[p] += 1
        return out


def apply_split(dataset: Dataset, spec: SplitSpec) -> Dataset:
    """Bake the split assignment into each sample's ``split`` field."""
    spec.check_total(dataset)
    samples = tuple(s.with_split(spec.assignment[s.id]) for s in dataset.samples)
    return dataset.replace_samples(samples)


def split_from_samples(dataset: Dataset) -> SplitSpec:
    """Recover a SplitSpec from per-sample split fields (all must be set)."""
    assignment = {}
    for s in dataset.samples:
        if s.split is None:
            raise DataError(f"sample {s.id!r} carries no split tag")
        assignment[s.id] = s.split
    return SplitSpec(assignment)


# ---------------------------------------------------------------------------
# File formats: <name>.meta.json header + <name>.jsonl body; split TSV.

def _resolve_pair(path: str | Path) -> tuple[Path, Path]:
    p = Path(path)
    if p.name.endswith(".meta.json"):
        base = p.with_name(p.name[: -len(".meta.json")])
    elif p.suffix == ".jsonl":
        base = p.with_suffix("")
    else:
        base = p
    return base.with_name(base.name + ".meta.json"), base.with_name(base.name + ".jsonl")


def load_dataset(path: str | Path) -> Dataset:
    """Load a dataset from its header + JSONL body pair.

    ``path`` may point at either file or at the common base path.
    """
    meta_path, body_path = _resolve_pair(path)
    if not meta_path.exists():
        raise DataError(f"header file not found: {meta_path}")
    if not body_path.exists():
        raise DataError(f"body file not found: {body_path}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"{meta_path}: malformed header JSON: {e}") from None
    for key in ("name", "labels", "audio_dim", "video_dim"):
        if key not in meta:
            raise DataError(f"{meta_path}: missing header key {key!r}")
    labels = tuple(meta["labels"])
    label_index = {l: i for i, l in enumerate(labels)}
    audio_dim, video_dim = int(meta["audio_dim"]), int(meta["video_dim"])

    samples = []
    with body_path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{body_path}:{lineno}: malformed JSON: {e}") from None
            try:
                label_name = obj["label"]
                if label_name not in label_index:
                    raise DataError(
                        f"{body_path}:{lineno}: unknown label name {label_name!r}"
                    )
                split = Split(obj["split"]) if obj.get("split") is not None else None
                samples.append(
                    Sample(
                        id=str(obj["id"]),
                        text=str(obj["text"]),
                        audio=np.asarray(obj["audio"], dtype=np.float64),
                        video=np.asarray(obj["video"], dtype=np.float64),
                        label=label_index[label_name],
                        split=split,
                    )
                )
            except KeyError as e:
                raise DataError(f"{body_path}:{lineno}: missing field {e}") from None
            except ValueError as e:
                raise DataError(f"{body_path}:{lineno}: {e}") from None
    return Dataset(str(meta["name"]), labels, audio_dim, video_dim, tuple(samples))


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write the header + JSONL body pair; round-trips through load_dataset."""
    meta_path, body_path = _resolve_pair(path)
    meta = {
        "name": dataset.name,
        "labels": list(dataset.labels),
        "audio_dim": dataset.audio_dim,
        "video_dim": dataset.video_dim,
    }
    try:
        meta_path.parent.mkdir(parents=True, exist_ok=True)
        meta_path.write_text(json.dumps(meta, ensure_ascii=False) + "\n", encoding="utf-8")
        with body_path.open("w", encoding="utf-8", newline="\n") as fh:
            for s in dataset.samples:
                obj = {
                    "id": s.id,
                    "text": s.text,
                    "label": dataset.labels[s.label],
                    "audio": [float(x) for x in s.audio],
                    "video": [float(x) for x in s.video],
                    "split": s.split.value if s.split is not None else None,
                }
                fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
    except OSError as e:
        raise DataError(f"cannot write dataset to {path}: {e}") from None


def save_split(spec: SplitSpec, path: str | Path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    try:
        with p.open("w", encoding="utf-8", newline="\n") as fh:
            for sid, part in spec.assignment.items():
                fh.write(f"{sid}\t{part.value}\n")
    except OSError as e:
        raise DataError(f"cannot write split to {path}: {e}") from None


def load_split(path: str | Path) -> SplitSpec:
    p = Path(path)
    if not p.exists():
        raise DataError(f"split file not found: {p}")
    assignment: dict[str, Split] = {}
    with p.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{p}:{lineno}: expected id<TAB>split")
            sid, name = parts
            try:
                part = Split(name)
            except ValueError:
                raise DataError(f"{p}:{lineno}: unknown split {name!r}") from None
            if sid in assignment:
                raise DataError(f"{p}:{lineno}: duplicate id {sid!r}")
            assignment[sid] = part
    return SplitSpec(assignment)


# ---------------------------------------------------------------------------
# Splitting and subsetting.

def _label_rng(seed: int, stream: int) -> np.random.Generator:
    # Counter-based Philox keyed on (seed, stream): per-label streams are
    # independent of each other and of sample file order.
    return np.random.Generator(np.random.Philox(key=np.array([seed & 0xFFFFFFFFFFFFFFFF, stream], dtype=np.uint64)))


def _largest_remainder(n: int, ratios: Sequence[float]) -> list[int]:
    exact = [n * r for r in ratios]
    counts = [int(np.floor(q)) for q in exact]
    leftover = n - sum(counts)
    remainders = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in range(leftover):
        counts[remainders[i]] += 1
    return counts


def stratified_split(
    dataset: Dataset, ratios: Sequence[float], seed: int
) -> SplitSpec:
    """Per-label proportional train/dev/test assignment.

    Uses largest-remainder rounding within each label so per-label part sizes
    deviate from the exact proportional allocation by less than one sample.
    Ids are sorted before shuffling, making the result independent of sample
    order in the file.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise DataError(f"ratios must be three non-negative reals, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"ratios must sum to 1, got sum={sum(ratios)!r}")

    per_label: dict[int, list[str]] = {}
    for s in dataset.samples:
        per_label.setdefault(s.label, []).append(s.id)
    if len(dataset) == 0:
        raise DataError("cannot split an empty dataset")
    for li in range(len(dataset.labels)):
        if li not in per_label:
            raise DataError(f"label {dataset.labels[li]!r} has no samples")

    assignment: dict[str, Split] = {}
    parts = (Split.TRAIN, Split.DEV, Split.TEST)
    for li in sorted(per_label):
        ids = sorted(per_label[li])
        rng = _label_rng(seed, li)
        order = rng.permutation(len(ids))
        shuffled = [ids[i] for i in order]
        counts = _largest_remainder(len(ids), ratios)
        pos = 0
        for part, count in zip(parts, counts):
            for sid in shuffled[pos : pos + count]:
                assignment[sid] = part
            pos += count
    # Preserve dataset order in the assignment mapping for stable file output.
    ordered = {s.id: assignment[s.id] for s in dataset.samples}
    return SplitSpec(ordered, seed=seed, ratios=ratios)


def kshot_subset(dataset: Dataset, split: SplitSpec, k: int, seed: int) -> Dataset:
    """At most k train samples per label, chosen deterministically per seed.

    k=0 yields an empty training set (zero-shot protocol).
    """
    if k < 0:
        raise DataError(f"k must be >= 0, got {k}")
    split.check_total(dataset)
    per_label: dict[int, list[str]] = {}
    for s in dataset.samples:
        if split.assignment[s.id] is Split.TRAIN:
            per_label.setdefault(s.label, []).append(s.id)
    chosen: set[str] = set()
    for li in sorted(per_label):
        ids = sorted(per_label[li])
        rng = _label_rng(seed, li)
        order = rng.permutation(len(ids))
        chosen.update(ids[i] for i in order[: min(k, len(ids))])
    kept = tuple(s.with_split(Split.TRAIN) for s in dataset.samples if s.id in chosen)
    return Dataset(
        f"{dataset.name}-{k}shot", dataset.labels, dataset.audio_dim, dataset.video_dim, kept
    )
