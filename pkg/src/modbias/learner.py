"""Bag-of-words featurization and gradient-trained softmax fusion classifiers.

The fusion model concatenates a text block (token counts), the raw audio block,
and the raw video block; modalities outside the model's training combo are
zeroed in both training and inference, so a model trained on combo C is
constant in features it never saw.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import Sample
from .errors import DataError, TrainingDivergedError
from .modality import A, COMBO_TVA, Modality, ModalityCombo, T, V

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercased maximal alphanumeric runs; everything else separates."""
    return _TOKEN_RE.findall(text.lower())


def ngram_tokens(tokens: Sequence[str], ngram_max: int) -> list[str]:
    out = list(tokens)
    for n in range(2, ngram_max + 1):
        out += ["_".join(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]
    return out


@dataclass(frozen=True)
class Vocabulary:
    index: dict[str, int]
    min_df: int
    ngram_max: int = 1
    idf: tuple[float, ...] | None = None

    @property
    def size(self) -> int:
        return len(self.index)

    def expand(self, text: str) -> list[str]:
        return ngram_tokens(tokenize(text), self.ngram_max)


def build_vocab(
    texts: Iterable[str], min_df: int = 1, ngram_max: int = 1, tfidf: bool = False
) -> Vocabulary:
    """Tokens (and n-grams up to ngram_max) appearing in >= min_df documents,
    indexed in first-appearance order."""
    if min_df < 1:
        raise DataError(f"min_df must be >= 1, got {min_df}")
    texts = list(texts)
    first_seen: dict[str, int] = {}
    df: dict[str, int] = {}
    n_docs = 0
    any_token = False
    for text in texts:
        n_docs += 1
        toks = ngram_tokens(tokenize(text), ngram_max)
        if toks:
            any_token = True
        for tok in dict.fromkeys(toks):
            df[tok] = df.get(tok, 0) + 1
            if tok not in first_seen:
                first_seen[tok] = len(first_seen)
    if n_docs == 0 or not any_token:
        raise DataError("cannot build a vocabulary from an empty corpus")
    kept = [t for t in sorted(first_seen, key=first_seen.get) if df[t] >= min_df]
    index = {t: i for i, t in enumerate(kept)}
    idf = None
    if tfidf:
        idf = tuple(float(np.log((1 + n_docs) / (1 + df[t])) + 1.0) for t in kept)
    return Vocabulary(index=index, min_df=min_df, ngram_max=ngram_max, idf=idf)


@dataclass(frozen=True)
class FeatureBlockLayout:
    """Block widths and offsets of the concatenated [text | audio | video] vector."""

    text_dim: int
    audio_dim: int
    video_dim: int

    def __post_init__(self):
        if min(self.text_dim, self.audio_dim, self.video_dim) < 0:
            raise DataError("block dimensions must be non-negative")

    @property
    def total_dim(self) -> int:
        return self.text_dim + self.audio_dim + self.video_dim

    def block_slice(self, modality: Modality) -> slice:
        if modality is T:
            return slice(0, self.text_dim)
        if modality is A:
            return slice(self.text_dim, self.text_dim + self.audio_dim)
        return slice(self.text_dim + self.audio_dim, self.total_dim)

    def to_json(self) -> dict:
        return {
            "text_dim": self.text_dim,
            "audio_dim": self.audio_dim,
            "video_dim": self.video_dim,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureBlockLayout":
        return cls(int(obj["text_dim"]), int(obj["audio_dim"]), int(obj["video_dim"]))


def featurize(sample: Sample, vocab: Vocabulary, layout: FeatureBlockLayout) -> np.ndarray:
    """Token counts (OOV dropped), then raw audio, then raw video."""
    if layout.text_dim != vocab.size:
        raise DataError(f"layout text_dim {layout.text_dim} != vocab size {vocab.size}")
    if sample.audio.shape[0] != layout.audio_dim or sample.video.shape[0] != layout.video_dim:
        raise DataError(f"sample {sample.id!r}: feature dims do not match layout")
    x = np.zeros(layout.total_dim)
    for tok in vocab.expand(sample.text):
        j = vocab.index.get(tok)
        if j is not None:
            x[j] += 1.0
    if vocab.idf is not None:
        x[: vocab.size] *= np.asarray(vocab.idf)
    x[layout.block_slice(A)] = sample.audio
    x[layout.block_slice(V)] = sample.video
    return x


def featurize_all(
    samples: Sequence[Sample], vocab: Vocabulary, layout: FeatureBlockLayout
) -> np.ndarray:
    if not samples:
        return np.zeros((0, layout.total_dim))
    return np.stack([featurize(s, vocab, layout) for s in samples])


def mask_features(
    x: np.ndarray, layout: FeatureBlockLayout, combo: ModalityCombo
) -> np.ndarray:
    """Zero the blocks of modalities outside ``combo``; works on vectors or matrices."""
    if x.shape[-1] != layout.total_dim:
        raise DataError(f"feature length {x.shape[-1]} != layout total {layout.total_dim}")
    out = np.array(x, copy=True)
    for m in (T, A, V):
        if m not in combo:
            out[..., layout.block_slice(m)] = 0.0
    return out


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    max_epochs: int = 200
    patience: int = 10
    l2: float = 1e-4
    seed: int = 0
    batch_size: int | None = None  # None = full batch
    min_df: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DataError("learning_rate must be positive")
        if self.max_epochs < 1 or self.patience < 1:
            raise DataError("max_epochs and patience must be positive")
        if self.l2 < 0:
            raise DataError("l2 must be non-negative")
        if self.batch_size is not None and self.batch_size < 1:
            raise DataError("batch_size must be positive")


@dataclass(frozen=True, eq=False)
class FusionModel:
    layout: FeatureBlockLayout
    trained_combo: ModalityCombo
    num_labels: int
    weights: np.ndarray  # (num_labels, total_dim)
    bias: np.ndarray  # (num_labels,)
    history: tuple[dict, ...] = field(default_factory=tuple, compare=False)

    def __post_init__(self):
        if self.weights.shape != (self.num_labels, self.layout.total_dim):
            raise DataError("weight shape inconsistent with layout / label count")
        if self.bias.shape != (self.num_labels,):
            raise DataError("bias shape inconsistent with label count")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise DataError("model parameters must be finite")
        self.weights.setflags(write=False)
        self.bias.setflags(write=False)


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grad(
    weights: np.ndarray,
    bias: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    l2: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean softmax cross-entropy plus (l2/2)*||W||^2, with analytic gradients."""
    n = x.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):  # divergence -> non-finite loss
        probs = softmax(x @ weights.T + bias)
        logp = np.log(np.clip(probs[np.arange(n), y], 1e-300, None))
        loss = -logp.mean() + 0.5 * l2 * float((weights * weights).sum())
    delta = probs
    delta[np.arange(n), y] -= 1.0
    grad_w = delta.T @ x / n + l2 * weights
    grad_b = delta.sum(axis=0) / n
    return float(loss), grad_w, grad_b


def train(
    train_x: np.ndarray,
    train_y: np.ndarray,
    dev_x: np.ndarray | None,
    dev_y: np.ndarray | None,
    layout: FeatureBlockLayout,
    combo: ModalityCombo,
    num_labels: int,
    config: TrainConfig,
) -> FusionModel:
    """Deterministic gradient descent with best-dev-accuracy early stopping.

    Inputs are masked to ``combo`` before optimization; the returned model
    carries the parameters of the best dev epoch (final epoch when no dev set
    is given).
    """
    if train_x.shape[0] < 1:
        raise DataError("need at least one training sample")
    train_x = mask_features(train_x, layout, combo)
    have_dev = dev_x is not None and dev_x.shape[0] > 0
    if have_dev:
        dev_x = mask_features(dev_x, layout, combo)

    rng = np.random.default_rng(config.seed)
    w = np.zeros((num_labels, layout.total_dim))
    b = np.zeros(num_labels)
    best = (w.copy(), b.copy())
    best_acc = -1.0
    stale = 0
    history = []
    n = train_x.shape[0]
    batch = config.batch_size or n

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n) if batch < n else np.arange(n)
        epoch_loss = 0.0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            loss, gw, gb = loss_and_grad(w, b, train_x[idx], train_y[idx], config.l2)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}; learning_rate={config.learning_rate}"
                )
            w = w - config.learning_rate * gw
            b = b - config.learning_rate * gb
            epoch_loss += loss * len(idx)
        epoch_loss /= n
        if have_dev:
            dev_acc = float(np.mean(np.argmax(dev_x @ w.T + b, axis=1) == dev_y))
            if dev_acc > best_acc:
                best_acc = dev_acc
                best = (w.copy(), b.copy())
                stale = 0
            else:
                stale += 1
            history.append({"epoch": epoch, "loss": epoch_loss, "dev_acc": dev_acc, "best_dev_acc": best_acc})
            if stale >= config.patience:
                break
        else:
            history.append({"epoch": epoch, "loss": epoch_loss})
    if not have_dev:
        best = (w, b)
    if not np.isfinite(best[0]).all() or not np.isfinite(best[1]).all():
        raise TrainingDivergedError(f"non-finite parameters; learning_rate={config.learning_rate}")
    return FusionModel(
        layout=layout,
        trained_combo=combo,
        num_labels=num_labels,
        weights=best[0],
        bias=best[1],
        history=tuple(history),
    )


def predict_proba(model: FusionModel, x: np.ndarray) -> np.ndarray:
    """softmax(W . mask(x) + b); masking always uses the model's trained combo."""
    if x.shape[-1] != model.layout.total_dim:
        raise DataError(f"feature length {x.shape[-1]} != model total {model.layout.total_dim}")
    masked = mask_features(x, model.layout, model.trained_combo)
    return softmax(masked @ model.weights.T + model.bias)


def predict(model: FusionModel, x: np.ndarray) -> np.ndarray:
    # argmax ties resolve to the lowest label index.
    return np.argmax(predict_proba(model, x), axis=-1)


# ---------------------------------------------------------------------------
# Model + vocabulary files.

def save_model(model: FusionModel, path: str | Path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    obj = {
        "layout": model.layout.to_json(),
        "combo": model.trained_combo.name,
        "labels": model.num_labels,
        "weights": [[float(v) for v in row] for row in model.weights],
        "bias": [float(v) for v in model.bias],
    }
    p.write_text(json.dumps(obj, ensure_ascii=False) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> FusionModel:
    p = Path(path)
    if not p.exists():
        raise DataError(f"model file not found: {p}")
    obj = json.loads(p.read_text(encoding="utf-8"))
    return FusionModel(
        layout=FeatureBlockLayout.from_json(obj["layout"]),
        trained_combo=ModalityCombo.parse(obj["combo"]),
        num_labels=int(obj["labels"]),
        weights=np.asarray(obj["weights"], dtype=np.float64),
        bias=np.asarray(obj["bias"], dtype=np.float64),
    )


def save_vocab(vocab: Vocabulary, path: str | Path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    tokens = sorted(vocab.index, key=vocab.index.get)
    obj = {
        "tokens": tokens,
        "min_df": vocab.min_df,
        "ngram_max": vocab.ngram_max,
        "idf": list(vocab.idf) if vocab.idf is not None else None,
    }
    p.write_text(json.dumps(obj, ensure_ascii=False) + "\n", encoding="utf-8")


def load_vocab(path: str | Path) -> Vocabulary:
    p = Path(path)
    if not p.exists():
        raise DataError(f"vocabulary file not found: {p}")
    obj = json.loads(p.read_text(encoding="utf-8"))
    return Vocabulary(
        index={t: i for i, t in enumerate(obj["tokens"])},
        min_df=int(obj["min_df"]),
        ngram_max=int(obj["ngram_max"]),
        idf=tuple(obj["idf"]) if obj.get("idf") is not None else None,
    )
