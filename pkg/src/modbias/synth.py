"""Synthetic corpus generator with per-sample planted modality requirements.

Plants come in three flavors:

* singleton combos: the planted modality carries the full label signal and the
  other two carry label-independent noise;
* pair/triple combos: every planted modality carries a weak gold signal plus a
  stronger per-sample decoy signal, calibrated so that evidence summed over the
  whole planted set ranks gold first while any smaller overlapping set ranks a
  decoy first (additive signals alone cannot make a multi-modality set minimal);
* XOR parity mode: two labels, label = parity of three per-modality latent
  bits, so no proper subset of T+V+A carries any label information.

Evidence-based oracle helpers re-derive the planted prototypes from
(config, seed) and score any modality combination; zero-information inputs
resolve argmax ties to label 0, so combos disjoint from the plant are
"correct" for label-0 samples. Computed margins flag every other knife-edge.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset, Sample
from .errors import DataError
from .modality import (
    A,
    CANONICAL_COMBOS,
    COMBO_TVA,
    Modality,
    ModalityCombo,
    T,
    V,
)

_STREAM_AUDIO_PROTO = 101
_STREAM_VIDEO_PROTO = 102
_STREAM_BODY = 103


@dataclass(frozen=True)
class SynthConfig:
    num_labels: int
    samples_per_label: int
    audio_dim: int
    video_dim: int
    noise: float = 0.0
    plant_dist: tuple[tuple[ModalityCombo, float], ...] = ((COMBO_TVA, 1.0),)
    label_vocab: int = 3
    tokens_per_signal: int = 3
    filler_vocab: int = 6
    filler_tokens: int = 2
    signal_scale: float = 3.0
    pair_scales: tuple[float, float] = (2.0, 3.0)
    triple_scales: tuple[float, float] = (2.0, 5.0)
    xor_parity: bool = False
    name: str = "synth"

    def __post_init__(self):
        object.__setattr__(self, "plant_dist", tuple((c, float(p)) for c, p in self.plant_dist))
        self.validate()

    def validate(self) -> None:
        if self.num_labels < 2:
            raise DataError("need at least 2 labels")
        if self.samples_per_label < 1:
            raise DataError("need at least 1 sample per label")
        if self.audio_dim < 1 or self.video_dim < 1:
            raise DataError("audio_dim and video_dim must be >= 1")
        if self.noise < 0:
            raise DataError("noise must be non-negative")
        total = sum(p for _, p in self.plant_dist)
        if abs(total - 1.0) > 1e-9:
            raise DataError(f"plant distribution must sum to 1, got {total!r}")
        if any(p < 0 for _, p in self.plant_dist):
            raise DataError("plant probabilities must be non-negative")
        combos = [c for c, _ in self.plant_dist]
        if len(set(combos)) != len(combos):
            raise DataError("duplicate combo in plant distribution")
        for combo, p in self.plant_dist:
            if p == 0:
                continue
            if len(combo) == 2 and self.num_labels < 3:
                raise DataError("pair plants need >= 3 labels for distinct decoys")
            if len(combo) == 3 and not self.xor_parity and self.num_labels < 4:
                raise DataError("triple plants need >= 4 labels for distinct decoys")
        if self.xor_parity:
            if self.num_labels != 2:
                raise DataError("XOR parity mode requires exactly 2 labels")
            if self.plant_dist != ((COMBO_TVA, 1.0),):
                raise DataError("XOR parity mode plants 100% T+V+A")
        b, d = self.pair_scales
        if not (b < d < 2 * b):
            raise DataError("pair scales need beta < delta < 2*beta")
        b, d = self.triple_scales
        if not (2 * b < d < 3 * b):
            raise DataError("triple scales need 2*beta < delta < 3*beta")

    def label_names(self) -> tuple[str, ...]:
        return tuple(f"label{i:02d}" for i in range(self.num_labels))

    def label_tokens(self, label: int) -> tuple[str, ...]:
        return tuple(f"sig{label:02d}w{j}" for j in range(self.label_vocab))

    def filler_pool(self) -> tuple[str, ...]:
        return tuple(f"fill{j}" for j in range(self.filler_vocab))


@dataclass
class SynthPlant:
    """Ground truth for a generated corpus: the per-sample minimal combo plus
    the realized evidence margin guarding it (0 = knife-edge, excluded from
    margin-clearing checks)."""

    config: SynthConfig
    seed: int
    combos: dict[str, ModalityCombo]
    margins: dict[str, float] = field(default_factory=dict)


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(key=np.array([seed & 0xFFFFFFFFFFFFFFFF, stream], dtype=np.uint64))
    )


def prototype_matrix(config: SynthConfig, seed: int, modality: Modality) -> np.ndarray:
    """Per-label prototype directions for a continuous modality.

    One-hot rows when the dimension allows, otherwise random unit rows drawn
    from a dedicated stream so oracles can re-derive them from (config, seed).
    """
    if modality is T:
        raise ValueError("text has token-count evidence, not prototypes")
    dim = config.audio_dim if modality is A else config.video_dim
    stream = _STREAM_AUDIO_PROTO if modality is A else _STREAM_VIDEO_PROTO
    n = config.num_labels
    if dim >= n:
        protos = np.zeros((n, dim))
        protos[np.arange(n), np.arange(n)] = 1.0
        return protos
    rng = _rng(seed, stream)
    protos = rng.standard_normal((n, dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    return protos


def _largest_remainder_counts(n: int, probs: Sequence[float]) -> list[int]:
    exact = [n * p for p in probs]
    counts = [int(np.floor(q)) for q in exact]
    leftover = n - sum(counts)
    order = sorted(range(len(probs)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in range(leftover):
        counts[order[i]] += 1
    return counts


def _scales_for(config: SynthConfig, combo: ModalityCombo) -> tuple[float, float]:
    if len(combo) == 2:
        return config.pair_scales
    return config.triple_scales


def synth_generate(config: SynthConfig, seed: int) -> tuple[Dataset, SynthPlant]:
    """Deterministically generate a corpus and its plant for a given seed.

    Plant combos are allocated within each label by largest-remainder counts,
    so every label sees the same plant mix.
    """
    rng = _rng(seed, _STREAM_BODY)
    protos = {
        A: prototype_matrix(config, seed, A),
        V: prototype_matrix(config, seed, V),
    }
    dims = {A: config.audio_dim, V: config.video_dim}
    filler_pool = config.filler_pool()
    combo_list = [c for c, _ in config.plant_dist]
    combo_probs = [p for _, p in config.plant_dist]

    samples: list[Sample] = []
    combos: dict[str, ModalityCombo] = {}
    idx = 0
    for label in range(config.num_labels):
        counts = _largest_remainder_counts(config.samples_per_label, combo_probs)
        assigned: list[ModalityCombo] = []
        for combo, count in zip(combo_list, counts):
            assigned.extend([combo] * count)
        rng.shuffle(assigned)
        for combo in assigned:
            sid = f"s{idx:05d}"
            idx += 1
            if config.xor_parity:
                sample = _gen_xor_sample(sid, label, config, rng)
            else:
                sample = _gen_sample(sid, label, combo, config, protos, dims, filler_pool, rng)
            samples.append(sample)
            combos[sid] = combo

    dataset = Dataset(
        config.name,
        config.label_names(),
        config.audio_dim,
        config.video_dim,
        tuple(samples),
    )
    plant = SynthPlant(config=config, seed=seed, combos=combos)
    plant.margins = {
        s.id: (0.0 if config.xor_parity else sample_margin(config, seed, s, combos[s.id], protos))
        for s in samples
    }
    return dataset, plant


def _gen_sample(sid, label, combo, config, protos, dims, filler_pool, rng) -> Sample:
    decoys: dict[Modality, int] = {}
    if len(combo) >= 2:
        others = [l for l in range(config.num_labels) if l != label]
        picks = rng.choice(len(others), size=len(combo), replace=False)
        for m, p in zip(combo, picks):
            decoys[m] = others[p]

    tokens: list[str] = []
    if T in combo:
        vocab = config.label_tokens(label)
        if len(combo) == 1:
            tokens += [vocab[j % len(vocab)] for j in range(config.tokens_per_signal)]
        else:
            beta, delta = _scales_for(config, combo)
            dvocab = config.label_tokens(decoys[T])
            tokens += [vocab[j % len(vocab)] for j in range(int(round(beta)))]
            tokens += [dvocab[j % len(dvocab)] for j in range(int(round(delta)))]
    tokens += [filler_pool[rng.integers(len(filler_pool))] for _ in range(config.filler_tokens)]
    rng.shuffle(tokens)

    vecs: dict[Modality, np.ndarray] = {}
    for m in (A, V):
        x = np.zeros(dims[m])
        if m in combo:
            if len(combo) == 1:
                x = config.signal_scale * protos[m][label].copy()
            else:
                beta, delta = _scales_for(config, combo)
                x = beta * protos[m][label] + delta * protos[m][decoys[m]]
        if config.noise > 0:
            x = x + config.noise * rng.standard_normal(dims[m])
        vecs[m] = x

    return Sample(id=sid, text=" ".join(tokens), audio=vecs[A], video=vecs[V], label=label)


def _gen_xor_sample(sid, label, config, rng) -> Sample:
    bit_t = int(rng.integers(2))
    bit_v = int(rng.integers(2))
    bit_a = label ^ bit_t ^ bit_v
    text = "xorone" if bit_t else "xorzero"
    audio = np.zeros(config.audio_dim)
    audio[0] = (2 * bit_a - 1) * config.signal_scale
    video = np.zeros(config.video_dim)
    video[0] = (2 * bit_v - 1) * config.signal_scale
    if config.noise > 0:
        audio = audio + config.noise * rng.standard_normal(config.audio_dim)
        video = video + config.noise * rng.standard_normal(config.video_dim)
    return Sample(id=sid, text=text, audio=audio, video=video, label=label)


# ---------------------------------------------------------------------------
# Evidence oracle.

def _text_evidence(text: str, config: SynthConfig) -> np.ndarray:
    from .learner import tokenize

    ev = np.zeros(config.num_labels)
    token_owner = {
        tok: label
        for label in range(config.num_labels)
        for tok in config.label_tokens(label)
    }
    for tok in tokenize(text):
        owner = token_owner.get(tok)
        if owner is not None:
            ev[owner] += 1.0
    return ev


def oracle_evidence(
    sample: Sample,
    combo: ModalityCombo,
    config: SynthConfig,
    seed: int,
    protos: Mapping[Modality, np.ndarray] | None = None,
) -> np.ndarray:
    """Summed per-label evidence for a sample restricted to ``combo``."""
    if protos is None:
        protos = {A: prototype_matrix(config, seed, A), V: prototype_matrix(config, seed, V)}
    ev = np.zeros(config.num_labels)
    if T in combo:
        ev += _text_evidence(sample.text, config)
    if A in combo:
        ev += protos[A] @ sample.audio
    if V in combo:
        ev += protos[V] @ sample.video
    return ev


def oracle_predict(
    sample: Sample,
    combo: ModalityCombo,
    config: SynthConfig,
    seed: int,
    protos: Mapping[Modality, np.ndarray] | None = None,
) -> int:
    # Ties resolve to the lowest label index, mirroring model argmax.
    return int(np.argmax(oracle_evidence(sample, combo, config, seed, protos)))


def oracle_minimal_combo(
    sample: Sample,
    config: SynthConfig,
    seed: int,
    protos: Mapping[Modality, np.ndarray] | None = None,
) -> ModalityCombo:
    """Minimal sufficient combo under the evidence oracle, using the same
    rule as the model-based annotation: first correct combo in canonical
    order, else the combo with the highest softmax probability of gold."""
    if protos is None:
        protos = {A: prototype_matrix(config, seed, A), V: prototype_matrix(config, seed, V)}
    best_fallback = None
    for combo in CANONICAL_COMBOS:
        ev = oracle_evidence(sample, combo, config, seed, protos)
        if int(np.argmax(ev)) == sample.label:
            return combo
        shifted = np.exp(ev - ev.max())
        p_gold = shifted[sample.label] / shifted.sum()
        if best_fallback is None or p_gold > best_fallback[0]:
            best_fallback = (p_gold, combo)
    return best_fallback[1]


def _harmful_combos(planted: ModalityCombo):
    """Combos the annotation rule prefers over the plant."""
    idx = planted.canonical_index
    return [c for c in CANONICAL_COMBOS if c.canonical_index < idx]


def sample_margin(
    config: SynthConfig,
    seed: int,
    sample: Sample,
    planted: ModalityCombo,
    protos: Mapping[Modality, np.ndarray] | None = None,
) -> float:
    """Realized evidence margin guarding the planted annotation.

    Minimum of the gold win gap at the planted combo and, over every earlier
    combo that overlaps the plant, the gap by which gold stays beaten there.
    Combos disjoint from the plant see no planted evidence and are excluded;
    their residual tie risk (label 0 at noise 0, 1/num_labels otherwise) is
    budgeted by callers rather than folded into the margin.
    """
    if protos is None:
        protos = {A: prototype_matrix(config, seed, A), V: prototype_matrix(config, seed, V)}
    gold = sample.label
    gaps: list[float] = []
    ev = oracle_evidence(sample, planted, config, seed, protos)
    others = np.delete(ev, gold)
    gaps.append(float(ev[gold] - others.max()))
    for combo in _harmful_combos(planted):
        if not combo.members & planted.members:
            continue
        ev = oracle_evidence(sample, combo, config, seed, protos)
        others = np.delete(ev, gold)
        gaps.append(float(others.max() - ev[gold]))
    return max(0.0, min(gaps))


# ---------------------------------------------------------------------------
# Plant file: TSV id<TAB>combo<TAB>margin.

def save_plant(plant: SynthPlant, path: str | Path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("id\tcombo\tmargin\n")
        for sid in plant.combos:
            margin = plant.margins.get(sid, 0.0)
            fh.write(f"{sid}\t{plant.combos[sid].name}\t{margin!r}\n")


def load_plant_combos(path: str | Path) -> tuple[dict[str, ModalityCombo], dict[str, float]]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"plant file not found: {p}")
    combos: dict[str, ModalityCombo] = {}
    margins: dict[str, float] = {}
    with p.open(encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["id", "combo", "margin"]:
            raise DataError(f"{p}: unexpected plant header {header}")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{p}:{lineno}: expected 3 columns")
            combos[parts[0]] = ModalityCombo.parse(parts[1])
            margins[parts[0]] = float(parts[2])
    return combos, margins
