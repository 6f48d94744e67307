"""Per-combination ablation runs, minimal-combo annotation, and share aggregates.

One fusion model is trained per modality combination (masking applied in both
training and inference); every evaluation sample then gets seven outcomes, from
which the smallest sufficient combination is derived.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset, Sample, Split, SplitSpec
from .errors import DataError
from .learner import (
    FeatureBlockLayout,
    FusionModel,
    TrainConfig,
    build_vocab,
    featurize_all,
    predict_proba,
    train,
)
from .modality import A, CANONICAL_COMBOS, ModalityCombo, T, V


@dataclass(frozen=True)
class ComboOutcome:
    p_gold: float
    predicted: int
    correct: bool


@dataclass(frozen=True)
class AblationRecord:
    sample_id: str
    gold: int
    outcomes: Mapping[ModalityCombo, ComboOutcome]

    def __post_init__(self):
        object.__setattr__(self, "outcomes", dict(self.outcomes))
        if set(self.outcomes) != set(CANONICAL_COMBOS):
            raise DataError(f"record {self.sample_id!r}: need all 7 combos")
        for combo, out in self.outcomes.items():
            if not (0.0 < out.p_gold < 1.0):
                raise DataError(
                    f"record {self.sample_id!r}, combo {combo.name}: p_gold out of (0,1)"
                )
            if out.correct != (out.predicted == self.gold):
                raise DataError(
                    f"record {self.sample_id!r}, combo {combo.name}: correctness flag inconsistent"
                )


@dataclass(frozen=True)
class ComboAnnotation:
    sample_id: str
    combo: ModalityCombo
    resolved_by: str  # "correctness" | "max_probability"


def annotate_minimal(record: AblationRecord) -> ComboAnnotation:
    """Smallest combination that classifies the sample correctly, or the one
    with the highest gold-label probability when none does.

    Canonical order (T, V, A, T+V, T+A, V+A, T+V+A) already sorts by
    cardinality, so the first correct combo in that order is the minimal one
    and ties at equal cardinality resolve to the earlier row.
    """
    for combo in CANONICAL_COMBOS:
        if record.outcomes[combo].correct:
            return ComboAnnotation(record.sample_id, combo, "correctness")
    best = max(
        CANONICAL_COMBOS,
        key=lambda c: (record.outcomes[c].p_gold, -len(c), -c.canonical_index),
    )
    return ComboAnnotation(record.sample_id, best, "max_probability")


def _round2(x: float) -> float:
    return float(Decimal(str(x)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class ComboStats:
    """Per-combo sample shares (percent) plus the sigma aggregates: the total
    share of samples whose minimal combination includes a given modality."""

    percentages: Mapping[ModalityCombo, float]
    sigma_t: float
    sigma_v: float
    sigma_a: float

    def __post_init__(self):
        object.__setattr__(self, "percentages", dict(self.percentages))
        total = sum(self.percentages.values())
        if abs(total - 100.0) > 0.05:
            raise DataError(f"combo percentages sum to {total}, expected 100")

    @classmethod
    def from_counts(cls, counts: Mapping[ModalityCombo, int]) -> "ComboStats":
        total = sum(counts.get(c, 0) for c in CANONICAL_COMBOS)
        if total == 0:
            raise DataError("no annotations to aggregate")
        pct = {c: _round2(100.0 * counts.get(c, 0) / total) for c in CANONICAL_COMBOS}
        sigmas = []
        for m in (T, V, A):
            raw = sum(counts.get(c, 0) for c in CANONICAL_COMBOS if m in c)
            sigmas.append(_round2(100.0 * raw / total))
        return cls(pct, *sigmas)

    @classmethod
    def from_percentages(cls, pct: Mapping[ModalityCombo, float]) -> "ComboStats":
        missing = [c.name for c in CANONICAL_COMBOS if c not in pct]
        if missing:
            raise DataError(f"missing combo percentages: {missing}")
        sigmas = [
            _round2(sum(pct[c] for c in CANONICAL_COMBOS if m in c)) for m in (T, V, A)
        ]
        rounded = {c: _round2(pct[c]) for c in CANONICAL_COMBOS}
        return cls(rounded, *sigmas)


def aggregate_stats(annotations: Sequence[ComboAnnotation]) -> ComboStats:
    if not annotations:
        raise DataError("cannot aggregate an empty annotation list")
    counts: dict[ModalityCombo, int] = {c: 0 for c in CANONICAL_COMBOS}
    for ann in annotations:
        counts[ann.combo] += 1
    return ComboStats.from_counts(counts)


# ---------------------------------------------------------------------------
# Running the seven-way ablation.

def _train_combo_model(
    combo: ModalityCombo,
    train_x: np.ndarray,
    train_y: np.ndarray,
    dev_x: np.ndarray,
    dev_y: np.ndarray,
    layout: FeatureBlockLayout,
    num_labels: int,
    config: TrainConfig,
) -> FusionModel:
    return train(train_x, train_y, dev_x, dev_y, layout, combo, num_labels, config)


def train_combo_models(
    dataset: Dataset,
    train_samples: Sequence[Sample],
    dev_samples: Sequence[Sample],
    config: TrainConfig,
    jobs: int = 1,
):
    """Train one fusion model per combination on shared features.

    Returns (models dict, vocab, layout); all seven trainings use the same
    seed and config.
    """
    if not train_samples or not dev_samples:
        raise DataError("ablation needs non-empty train and dev parts")
    vocab = build_vocab([s.text for s in train_samples], min_df=config.min_df)
    layout = FeatureBlockLayout(vocab.size, dataset.audio_dim, dataset.video_dim)
    train_x = featurize_all(train_samples, vocab, layout)
    train_y = np.array([s.label for s in train_samples])
    dev_x = featurize_all(dev_samples, vocab, layout)
    dev_y = np.array([s.label for s in dev_samples])
    num_labels = len(dataset.labels)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(
                    _train_combo_model, combo, train_x, train_y, dev_x, dev_y,
                    layout, num_labels, config,
                )
                for combo in CANONICAL_COMBOS
            ]
            models = {combo: f.result() for combo, f in zip(CANONICAL_COMBOS, futures)}
    else:
        models = {
            combo: _train_combo_model(
                combo, train_x, train_y, dev_x, dev_y, layout, num_labels, config
            )
            for combo in CANONICAL_COMBOS
        }
    return models, vocab, layout


def _records_for(
    samples: Sequence[Sample],
    models: Mapping[ModalityCombo, FusionModel],
    vocab,
    layout,
) -> list[AblationRecord]:
    if not samples:
        return []
    x = featurize_all(samples, vocab, layout)
    probs = {combo: predict_proba(models[combo], x) for combo in CANONICAL_COMBOS}
    records = []
    for i, s in enumerate(samples):
        outcomes = {}
        for combo in CANONICAL_COMBOS:
            p = probs[combo][i]
            pred = int(np.argmax(p))
            outcomes[combo] = ComboOutcome(
                p_gold=float(p[s.label]), predicted=pred, correct=pred == s.label
            )
        records.append(AblationRecord(s.id, s.label, outcomes))
    return records


def run_ablation(
    dataset: Dataset,
    split: SplitSpec,
    config: TrainConfig,
    jobs: int = 1,
) -> list[AblationRecord]:
    """Seven-way ablation over the split's test part."""
    train_samples = split.part_samples(dataset, Split.TRAIN)
    dev_samples = split.part_samples(dataset, Split.DEV)
    eval_samples = split.part_samples(dataset, Split.TEST)
    models, vocab, layout = train_combo_models(dataset, train_samples, dev_samples, config, jobs)
    return _records_for(eval_samples, models, vocab, layout)


def run_ablation_rotated(
    dataset: Dataset,
    folds,
    config: TrainConfig,
    jobs: int = 1,
) -> list[AblationRecord]:
    """Annotate every sample by rotating over round-robin folds: each fold's
    models score only that fold's held-out test part, so no sample is scored
    by a model trained on it. Records come back in dataset order."""
    by_id = dataset.by_id()
    records: dict[str, AblationRecord] = {}
    for fold in folds.folds:
        train_samples = [by_id[i] for part in fold.train_parts for i in folds.parts[part]]
        dev_samples = [by_id[i] for i in folds.parts[fold.dev_part]]
        test_samples = [by_id[i] for i in folds.parts[fold.test_part]]
        models, vocab, layout = train_combo_models(
            dataset, train_samples, dev_samples, config, jobs
        )
        for rec in _records_for(test_samples, models, vocab, layout):
            records[rec.sample_id] = rec
    return [records[s.id] for s in dataset.samples]


# ---------------------------------------------------------------------------
# TSV files.

def save_records(records: Sequence[AblationRecord], path: str | Path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("id\tcombo\tp_gold\tpred\tcorrect\n")
        for rec in records:
            for combo in CANONICAL_COMBOS:
                out = rec.outcomes[combo]
                fh.write(
                    f"{rec.sample_id}\t{combo.name}\t{out.p_gold!r}\t{out.predicted}\t"
                    f"{'true' if out.correct else 'false'}\n"
                )


def load_records(path: str | Path, golds: Mapping[str, int]) -> list[AblationRecord]:
    """Rebuild records from TSV; ``golds`` maps sample id to its gold label."""
    p = Path(path)
    if not p.exists():
        raise DataError(f"ablation record file not found: {p}")
    rows: dict[str, dict[ModalityCombo, ComboOutcome]] = {}
    order: list[str] = []
    with p.open(encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["id", "combo", "p_gold", "pred", "correct"]:
            raise DataError(f"{p}: unexpected record header {header}")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise DataError(f"{p}:{lineno}: expected 5 columns")
            sid, combo_name, p_gold, pred, correct = parts
            if sid not in rows:
                rows[sid] = {}
                order.append(sid)
            rows[sid][ModalityCombo.parse(combo_name)] = ComboOutcome(
                p_gold=float(p_gold), predicted=int(pred), correct=correct == "true"
            )
    records = []
    for sid in order:
        if sid not in golds:
            raise DataError(f"{p}: no gold label known for sample {sid!r}")
        records.append(AblationRecord(sid, golds[sid], rows[sid]))
    return records


def save_annotations(annotations: Sequence[ComboAnnotation], path: str | Path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("id\tminimal_combo\tresolved_by\n")
        for ann in annotations:
            fh.write(f"{ann.sample_id}\t{ann.combo.name}\t{ann.resolved_by}\n")


def load_annotations(path: str | Path) -> list[ComboAnnotation]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"annotation file not found: {p}")
    annotations = []
    with p.open(encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["id", "minimal_combo", "resolved_by"]:
            raise DataError(f"{p}: unexpected annotation header {header}")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{p}:{lineno}: expected 3 columns")
            annotations.append(ComboAnnotation(parts[0], ModalityCombo.parse(parts[1]), parts[2]))
    return annotations


def save_stats(stats: ComboStats, path: str | Path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("combo\tpercent\n")
        for combo in CANONICAL_COMBOS:
            fh.write(f"{combo.name}\t{stats.percentages[combo]:.2f}\n")
        fh.write(f"sigma_T\t{stats.sigma_t:.2f}\n")
        fh.write(f"sigma_V\t{stats.sigma_v:.2f}\n")
        fh.write(f"sigma_A\t{stats.sigma_a:.2f}\n")
