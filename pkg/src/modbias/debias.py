"""Round-robin bias detection, debiased dataset construction, and the
size-matched random control.

Three text-driven detectors vote on every sample: a unigram text classifier,
a unigram+bigram text classifier, and a fusion model trained with audio and
video masked. A sample correctly classified by at least two of the three on a
fold where it was held out is flagged as textually biased.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset, Sample, Split, SplitSpec
from .errors import DataError, ModbiasError
from .learner import (
    FeatureBlockLayout,
    TrainConfig,
    build_vocab,
    featurize_all,
    predict,
    train,
)
from .modality import COMBO_T

_N_PARTS = 5


@dataclass(frozen=True)
class Fold:
    train_parts: tuple[int, int, int]
    dev_part: int
    test_part: int


@dataclass(frozen=True)
class RoundRobinFolds:
    """Five disjoint parts (three train thirds, the dev part, the test part)
    and five fold arrangements in which each part is tested exactly once."""

    parts: tuple[tuple[str, ...], ...]
    folds: tuple[Fold, ...]
    seed: int

    def __post_init__(self):
        if len(self.parts) != _N_PARTS or len(self.folds) != _N_PARTS:
            raise DataError("round-robin folds need exactly 5 parts and 5 folds")
        test_parts = sorted(f.test_part for f in self.folds)
        if test_parts != list(range(_N_PARTS)):
            raise DataError("each part must be tested exactly once")
        for f in self.folds:
            used = sorted((*f.train_parts, f.dev_part, f.test_part))
            if used != list(range(_N_PARTS)):
                raise DataError(f"fold indices must be a permutation of 0..4, got {used}")


def build_folds(
    dataset: Dataset,
    split: SplitSpec,
    seed: int,
    dev_policy: str = "rotate",
) -> RoundRobinFolds:
    """Cut the train part into thirds (sizes within 1) and rotate test duty.

    ``dev_policy``: "rotate" picks part (k+1) mod 5 as dev in fold k; "fixed"
    keeps the original dev part (part 3) except when it is under test, where
    the original test part stands in.
    """
    split.check_total(dataset)
    train_ids = sorted(i for i, p in split.assignment.items() if p is Split.TRAIN)
    dev_ids = [s.id for s in dataset.samples if split.assignment[s.id] is Split.DEV]
    test_ids = [s.id for s in dataset.samples if split.assignment[s.id] is Split.TEST]

    rng = np.random.Generator(
        np.random.Philox(key=np.array([seed & 0xFFFFFFFFFFFFFFFF, 7], dtype=np.uint64))
    )
    order = rng.permutation(len(train_ids))
    shuffled = [train_ids[i] for i in order]
    n = len(shuffled)
    base, extra = divmod(n, 3)
    thirds = []
    pos = 0
    for i in range(3):
        size = base + (1 if i < extra else 0)
        thirds.append(tuple(shuffled[pos : pos + size]))
        pos += size
    parts = (*thirds, tuple(dev_ids), tuple(test_ids))
    if any(len(p) == 0 for p in parts):
        sizes = [len(p) for p in parts]
        raise DataError(f"every fold part must be non-empty, got sizes {sizes}")

    folds = []
    for k in range(_N_PARTS):
        if dev_policy == "rotate":
            dev = (k + 1) % _N_PARTS
        elif dev_policy == "fixed":
            dev = 3 if k != 3 else 4
        else:
            raise DataError(f"unknown dev policy {dev_policy!r}")
        train_parts = tuple(i for i in range(_N_PARTS) if i not in (k, dev))
        folds.append(Fold(train_parts=train_parts, dev_part=dev, test_part=k))
    return RoundRobinFolds(parts=parts, folds=tuple(folds), seed=seed)


@dataclass(frozen=True)
class VoteRecord:
    sample_id: str
    fold: int
    votes: tuple[bool, bool, bool]  # (text A, text B, text-combo fusion)

    @property
    def biased(self) -> bool:
        return sum(self.votes) >= 2


@dataclass(frozen=True)
class DetectorConfig:
    text_a: TrainConfig = field(default_factory=TrainConfig)
    text_b: TrainConfig = field(default_factory=TrainConfig)
    fusion: TrainConfig = field(default_factory=TrainConfig)


def _fold_votes(
    fold_no: int,
    fold: Fold,
    dataset: Dataset,
    parts: Sequence[Sequence[str]],
    config: DetectorConfig,
) -> list[VoteRecord]:
    by_id = dataset.by_id()
    train_samples = [by_id[i] for part in fold.train_parts for i in parts[part]]
    dev_samples = [by_id[i] for i in parts[fold.dev_part]]
    test_samples = [by_id[i] for i in parts[fold.test_part]]
    num_labels = len(dataset.labels)
    train_y = np.array([s.label for s in train_samples])
    dev_y = np.array([s.label for s in dev_samples])
    test_y = np.array([s.label for s in test_samples])
    train_texts = [s.text for s in train_samples]

    try:
        verdicts = []
        # Detectors A/B: unigram and unigram+bigram text-only classifiers.
        for cfg, ngram in ((config.text_a, 1), (config.text_b, 2)):
            vocab = build_vocab(train_texts, min_df=cfg.min_df, ngram_max=ngram)
            layout = FeatureBlockLayout(vocab.size, 0, 0)
            stripped = [
                Sample(s.id, s.text, np.zeros(0), np.zeros(0), s.label, s.split)
                for s in train_samples + dev_samples + test_samples
            ]
            nt, nd = len(train_samples), len(dev_samples)
            x_all = featurize_all(stripped, vocab, layout)
            model = train(
                x_all[:nt], train_y, x_all[nt : nt + nd], dev_y,
                layout, COMBO_T, num_labels, cfg,
            )
            verdicts.append(predict(model, x_all[nt + nd :]) == test_y)
        # Detector C: fusion model with audio and video masked.
        vocab = build_vocab(train_texts, min_df=config.fusion.min_df)
        layout = FeatureBlockLayout(vocab.size, dataset.audio_dim, dataset.video_dim)
        model = train(
            featurize_all(train_samples, vocab, layout), train_y,
            featurize_all(dev_samples, vocab, layout), dev_y,
            layout, COMBO_T, num_labels, config.fusion,
        )
        verdicts.append(predict(model, featurize_all(test_samples, vocab, layout)) == test_y)
    except ModbiasError as e:
        raise type(e)(f"fold {fold_no}: {e}") from e

    return [
        VoteRecord(s.id, fold_no, (bool(verdicts[0][i]), bool(verdicts[1][i]), bool(verdicts[2][i])))
        for i, s in enumerate(test_samples)
    ]


def detect_bias(
    dataset: Dataset,
    folds: RoundRobinFolds,
    config: DetectorConfig | None = None,
    jobs: int = 1,
) -> list[VoteRecord]:
    """One vote record per sample, produced by the fold where it is held out.

    Records come back sorted by sample id.
    """
    config = config or DetectorConfig()
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_fold_votes, k, fold, dataset, folds.parts, config)
                for k, fold in enumerate(folds.folds)
            ]
            chunks = [f.result() for f in futures]
    else:
        chunks = [
            _fold_votes(k, fold, dataset, folds.parts, config)
            for k, fold in enumerate(folds.folds)
        ]
    records = [r for chunk in chunks for r in chunk]
    seen = {r.sample_id for r in records}
    expected = {s.id for s in dataset.samples}
    if seen != expected or len(records) != len(expected):
        raise DataError("fold coverage broken: every sample needs exactly one vote")
    return sorted(records, key=lambda r: r.sample_id)


# ---------------------------------------------------------------------------
# Debiased dataset construction.

def _round2(x: float) -> float:
    return float(Decimal(str(x)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def percent_reduction(before: int, after: int) -> float:
    if after > before:
        raise DataError(f"after ({after}) exceeds before ({before})")
    if before == 0:
        return 0.0
    return _round2(100.0 * (before - after) / before)


@dataclass(frozen=True)
class LabelReduction:
    label: str
    before: int
    after: int  # surviving the bias filter, before the category filter
    removed_as_category: bool

    @property
    def pct_reduction(self) -> float:
        return percent_reduction(self.before, self.after)


@dataclass(frozen=True)
class ReductionReport:
    rows: tuple[LabelReduction, ...]
    total_before: int
    total_after: int

    @property
    def removed_labels(self) -> tuple[str, ...]:
        return tuple(r.label for r in self.rows if r.removed_as_category)

    @property
    def total_pct_reduction(self) -> float:
        return percent_reduction(self.total_before, self.total_after)


def build_debiased(
    dataset: Dataset,
    votes: Sequence[VoteRecord],
    min_per_label: int = 10,
    split: SplitSpec | None = None,
) -> tuple[Dataset, ReductionReport]:
    """Drop biased samples, then drop labels left with too few samples.

    A label is also dropped when, given split information (explicit ``split``
    or per-sample tags), any part ends up with no samples of it. The returned
    dataset is re-indexed against the surviving label list (original name
    strings preserved); the report's per-label "after" counts are taken before
    the category filter, matching how reduction statistics are usually quoted.
    """
    vote_by_id = {v.sample_id: v for v in votes}
    ids = {s.id for s in dataset.samples}
    if set(vote_by_id) != ids:
        raise DataError("need exactly one vote record per dataset sample")

    def part_of(s: Sample) -> Split | None:
        if split is not None:
            return split.assignment.get(s.id)
        return s.split

    unbiased = [s for s in dataset.samples if not vote_by_id[s.id].biased]
    before_counts = {l: 0 for l in dataset.labels}
    for s in dataset.samples:
        before_counts[dataset.labels[s.label]] += 1
    after_counts = {l: 0 for l in dataset.labels}
    part_counts: dict[str, dict[Split, int]] = {l: {p: 0 for p in Split} for l in dataset.labels}
    have_split = split is not None or all(s.split is not None for s in dataset.samples)
    for s in unbiased:
        name = dataset.labels[s.label]
        after_counts[name] += 1
        p = part_of(s)
        if p is not None:
            part_counts[name][p] += 1

    removed: set[str] = set()
    for name in dataset.labels:
        if after_counts[name] < min_per_label:
            removed.add(name)
        elif have_split and any(part_counts[name][p] == 0 for p in Split):
            removed.add(name)

    surviving = tuple(l for l in dataset.labels if l not in removed)
    if not surviving:
        raise DataError("all samples removed: no label survives the filters")
    new_index = {l: i for i, l in enumerate(surviving)}
    kept = tuple(
        s.with_label(new_index[dataset.labels[s.label]])
        for s in unbiased
        if dataset.labels[s.label] not in removed
    )
    if not kept:
        raise DataError("all samples removed")
    debiased = Dataset(
        f"{dataset.name}-debiased", surviving, dataset.audio_dim, dataset.video_dim, kept
    )
    rows = tuple(
        LabelReduction(
            label=name,
            before=before_counts[name],
            after=after_counts[name],
            removed_as_category=name in removed,
        )
        for name in dataset.labels
    )
    report = ReductionReport(
        rows=rows, total_before=len(dataset), total_after=len(unbiased)
    )
    return debiased, report


def random_control(dataset: Dataset, debiased: Dataset, seed: int) -> Dataset:
    """Uniform subset of the original data, size-matched per split to the
    debiased dataset and restricted to its surviving labels."""
    debiased_ids = {s.id for s in debiased.samples}
    original_ids = {s.id for s in dataset.samples}
    if not debiased_ids <= original_ids:
        raise DataError("debiased dataset is not a subset of the original")
    surviving = set(debiased.labels)
    unknown = surviving - set(dataset.labels)
    if unknown:
        raise DataError(f"debiased labels missing from the original: {sorted(unknown)}")

    def quota_key(s: Sample) -> Split | None:
        return s.split

    quotas: dict[Split | None, int] = {}
    for s in debiased.samples:
        quotas[quota_key(s)] = quotas.get(quota_key(s), 0) + 1

    pools: dict[Split | None, list[str]] = {}
    for s in dataset.samples:
        if dataset.labels[s.label] in surviving:
            pools.setdefault(quota_key(s), []).append(s.id)

    rng = np.random.Generator(
        np.random.Philox(key=np.array([seed & 0xFFFFFFFFFFFFFFFF, 11], dtype=np.uint64))
    )
    chosen: set[str] = set()
    for part in sorted(quotas, key=lambda p: (p is None, p.value if p else "")):
        want = quotas[part]
        pool = sorted(pools.get(part, []))
        if part is not None and part not in pools and None in pools:
            raise DataError(
                "debiased samples carry split tags but the original dataset does not; "
                "apply the same split to the original first"
            )
        if len(pool) < want:
            raise DataError(
                f"insufficient candidates for part {part.value if part else 'unsplit'}: "
                f"need {want}, have {len(pool)}"
            )
        picks = rng.permutation(len(pool))[:want]
        chosen.update(pool[i] for i in picks)

    new_index = {l: i for i, l in enumerate(debiased.labels)}
    kept = tuple(
        s.with_label(new_index[dataset.labels[s.label]])
        for s in dataset.samples
        if s.id in chosen
    )
    return Dataset(
        f"{dataset.name}-control", debiased.labels, dataset.audio_dim, dataset.video_dim, kept
    )


# ---------------------------------------------------------------------------
# TSV files.

def save_votes(votes: Sequence[VoteRecord], path: str | Path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("id\tfold\tvote_a\tvote_b\tvote_fusion\tbiased\n")
        for v in sorted(votes, key=lambda r: r.sample_id):
            a, b, c = ("true" if x else "false" for x in v.votes)
            fh.write(f"{v.sample_id}\t{v.fold}\t{a}\t{b}\t{c}\t{'true' if v.biased else 'false'}\n")


def load_votes(path: str | Path) -> list[VoteRecord]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"vote file not found: {p}")
    votes = []
    with p.open(encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["id", "fold", "vote_a", "vote_b", "vote_fusion", "biased"]:
            raise DataError(f"{p}: unexpected vote header {header}")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise DataError(f"{p}:{lineno}: expected 6 columns")
            votes.append(
                VoteRecord(
                    parts[0],
                    int(parts[1]),
                    (parts[2] == "true", parts[3] == "true", parts[4] == "true"),
                )
            )
    return votes


def save_reduction(report: ReductionReport, path: str | Path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    rows = sorted(report.rows, key=lambda r: (-r.pct_reduction, r.label))
    with p.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("label\tbefore\tafter\tpct_reduction\n")
        for r in rows:
            fh.write(f"{r.label}\t{r.before}\t{r.after}\t{r.pct_reduction:.2f}\n")
        fh.write(
            f"TOTAL\t{report.total_before}\t{report.total_after}\t{report.total_pct_reduction:.2f}\n"
        )
        fh.write(f"# removed_labels: {','.join(report.removed_labels)}\n")
