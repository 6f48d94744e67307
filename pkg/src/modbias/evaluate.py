"""Accuracy / macro-F1 metrics, free-text label matching, and comparison reports."""
from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Mapping, Sequence

from .errors import DataError
from .learner import tokenize


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    macro_f1: float
    per_label_accuracy: Mapping[str, float]
    n: int

    def __post_init__(self):
        object.__setattr__(self, "per_label_accuracy", dict(self.per_label_accuracy))


def compute_metrics(
    gold: Sequence[int],
    predicted: Sequence[int],
    labels: Sequence[str],
    macro_over_present_only: bool = False,
) -> Metrics:
    """Accuracy, per-gold-label accuracy, and macro F1.

    Per-label F1 uses the F1=0 convention when precision+recall is zero. By
    default the macro average runs over the full label set, counting labels
    absent from both gold and predictions as 0; ``macro_over_present_only``
    restricts it to labels with gold or predicted support.
    """
    if len(gold) != len(predicted):
        raise DataError(f"gold/predicted length mismatch: {len(gold)} vs {len(predicted)}")
    if len(gold) == 0:
        raise DataError("cannot compute metrics on an empty list")
    n_labels = len(labels)
    for v in list(gold) + list(predicted):
        if not (0 <= v < n_labels):
            raise DataError(f"label index {v} out of range for {n_labels} labels")

    correct = sum(1 for g, p in zip(gold, predicted) if g == p)
    tp = [0] * n_labels
    gold_count = [0] * n_labels
    pred_count = [0] * n_labels
    for g, p in zip(gold, predicted):
        gold_count[g] += 1
        pred_count[p] += 1
        if g == p:
            tp[g] += 1

    f1s = []
    for i in range(n_labels):
        if macro_over_present_only and gold_count[i] == 0 and pred_count[i] == 0:
            continue
        precision = tp[i] / pred_count[i] if pred_count[i] else 0.0
        recall = tp[i] / gold_count[i] if gold_count[i] else 0.0
        f1s.append(2 * precision * recall / (precision + recall) if precision + recall else 0.0)
    per_label = {
        labels[i]: (tp[i] / gold_count[i] if gold_count[i] else 0.0)
        for i in range(n_labels)
        if gold_count[i]
    }
    return Metrics(
        accuracy=correct / len(gold),
        macro_f1=sum(f1s) / len(f1s) if f1s else 0.0,
        per_label_accuracy=per_label,
        n=len(gold),
    )


@dataclass(frozen=True)
class LabelMatch:
    raw: str
    label: str
    label_index: int
    score: float
    exact: bool


def _token_f1(a: Sequence[str], b: Sequence[str]) -> float:
    if not a or not b:
        return 0.0
    counts: dict[str, int] = {}
    for t in a:
        counts[t] = counts.get(t, 0) + 1
    overlap = 0
    for t in b:
        if counts.get(t, 0) > 0:
            counts[t] -= 1
            overlap += 1
    return 2.0 * overlap / (len(a) + len(b))


def match_label(output: str, labels: Sequence[str]) -> LabelMatch:
    """Map a free-text model output onto the closest label.

    A verbatim label (up to tokenize-and-join normalization) matches exactly;
    otherwise the label with the highest token-level F1 overlap wins, ties
    going to the lower label index.
    """
    if not labels:
        raise DataError("label set must be non-empty")
    out_tokens = tokenize(output)
    norm = " ".join(out_tokens)
    for i, label in enumerate(labels):
        if norm == " ".join(tokenize(label)):
            return LabelMatch(output, label, i, 1.0, True)
    best_i, best_score = 0, -1.0
    for i, label in enumerate(labels):
        score = _token_f1(out_tokens, tokenize(label))
        if score > best_score:
            best_i, best_score = i, score
    return LabelMatch(output, labels[best_i], best_i, max(best_score, 0.0), False)


# ---------------------------------------------------------------------------
# Before/after comparison.

_REMOVED = "Removed"


@dataclass(frozen=True)
class ComparisonRow:
    name: str
    before: float | None
    after: float | None
    removed: bool = False

    @property
    def delta(self) -> float | None:
        if self.removed or self.before is None or self.after is None:
            return None
        return self.after - self.before


def compare_runs(
    before: Metrics,
    after: Metrics,
    labels_before: Sequence[str],
    labels_after: Sequence[str],
) -> list[ComparisonRow]:
    """Per-label accuracy rows plus overall accuracy / macro-F1 rows; labels
    absent after debiasing are marked removed."""
    after_set = set(labels_after)
    rows = []
    for label in labels_before:
        b = before.per_label_accuracy.get(label)
        if label not in after_set:
            rows.append(ComparisonRow(label, b, None, removed=True))
        else:
            rows.append(ComparisonRow(label, b, after.per_label_accuracy.get(label)))
    rows.append(ComparisonRow("Overall Acc", before.accuracy, after.accuracy))
    rows.append(ComparisonRow("Overall F1", before.macro_f1, after.macro_f1))
    return rows


def _pct(x: float | None) -> str:
    if x is None:
        return "-"
    return f"{float(Decimal(str(100.0 * x)).quantize(Decimal('0.01'), rounding=ROUND_HALF_UP)):.2f}"


def render_comparison(rows: Sequence[ComparisonRow], fmt: str = "tsv") -> str:
    """Render comparison rows as TSV or a GitHub-flavored Markdown table."""
    if fmt == "tsv":
        lines = ["label\tbefore\tafter\tdelta"]
        for r in rows:
            if r.removed:
                lines.append(f"{r.name}\t{_pct(r.before)}\t{_REMOVED}\t{_REMOVED}")
            else:
                lines.append(f"{r.name}\t{_pct(r.before)}\t{_pct(r.after)}\t{_pct(r.delta)}")
        return "\n".join(lines) + "\n"
    if fmt == "md":
        lines = ["| label | before | after | delta |", "| --- | --- | --- | --- |"]
        for r in rows:
            if r.removed:
                lines.append(f"| {r.name} | {_pct(r.before)} | {_REMOVED} | {_REMOVED} |")
            else:
                lines.append(f"| {r.name} | {_pct(r.before)} | {_pct(r.after)} | {_pct(r.delta)} |")
        return "\n".join(lines) + "\n"
    raise DataError(f"unknown report format {fmt!r}")


# ---------------------------------------------------------------------------
# Metrics JSON files.

def save_metrics(metrics: Metrics, labels: Sequence[str], path: str | Path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    obj = {
        "accuracy": metrics.accuracy,
        "macro_f1": metrics.macro_f1,
        "per_label_accuracy": dict(metrics.per_label_accuracy),
        "labels": list(labels),
        "n": metrics.n,
    }
    p.write_text(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8")


def load_metrics(path: str | Path) -> tuple[Metrics, list[str]]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"metrics file not found: {p}")
    obj = json.loads(p.read_text(encoding="utf-8"))
    metrics = Metrics(
        accuracy=float(obj["accuracy"]),
        macro_f1=float(obj["macro_f1"]),
        per_label_accuracy={k: float(v) for k, v in obj["per_label_accuracy"].items()},
        n=int(obj["n"]),
    )
    return metrics, list(obj["labels"])
