from itertools import product

import numpy as np
import pytest

from modbias.data import Split, stratified_split
from modbias.errors import DataError
from modbias.learner import (
    FeatureBlockLayout,
    TrainConfig,
    build_vocab,
    featurize_all,
    predict,
    train,
)
from modbias.modality import (
    A,
    CANONICAL_COMBOS,
    COMBO_A,
    COMBO_T,
    COMBO_TA,
    COMBO_TV,
    COMBO_TVA,
    COMBO_V,
    COMBO_VA,
    T,
    V,
)
from modbias.synth import (
    SynthConfig,
    load_plant_combos,
    oracle_minimal_combo,
    prototype_matrix,
    sample_margin,
    save_plant,
    synth_generate,
)


def test_generation_is_deterministic():
    cfg = SynthConfig(num_labels=4, samples_per_label=25, audio_dim=4, video_dim=4, noise=0.2)
    a, pa = synth_generate(cfg, seed=77)
    b, pb = synth_generate(cfg, seed=77)
    assert a == b
    assert pa.combos == pb.combos and pa.margins == pb.margins
    c, _ = synth_generate(cfg, seed=78)
    assert a != c


def test_text_plant_learnable_audio_at_chance():
    cfg = SynthConfig(
        num_labels=2, samples_per_label=100, audio_dim=2, video_dim=2,
        noise=0.0, plant_dist=((COMBO_T, 1.0),),
    )
    ds, _ = synth_generate(cfg, seed=7)
    spec = stratified_split(ds, (0.6, 0.2, 0.2), seed=1)
    tr = spec.part_samples(ds, Split.TRAIN)
    de = spec.part_samples(ds, Split.DEV)
    te = spec.part_samples(ds, Split.TEST)
    vocab = build_vocab([s.text for s in tr])
    layout = FeatureBlockLayout(vocab.size, 2, 2)
    xs = [featurize_all(p, vocab, layout) for p in (tr, de, te)]
    ys = [np.array([s.label for s in p]) for p in (tr, de, te)]
    text_model = train(xs[0], ys[0], xs[1], ys[1], layout, COMBO_T, 2, TrainConfig())
    audio_model = train(xs[0], ys[0], xs[1], ys[1], layout, COMBO_A, 2, TrainConfig())
    assert float(np.mean(predict(text_model, xs[2]) == ys[2])) == 1.0
    assert abs(float(np.mean(predict(audio_model, xs[2]) == ys[2])) - 0.5) < 0.15


def test_xor_parity_proper_subsets_at_chance():
    cfg = SynthConfig(
        num_labels=2, samples_per_label=300, audio_dim=3, video_dim=3,
        noise=0.0, plant_dist=((COMBO_TVA, 1.0),), xor_parity=True,
    )
    ds, _ = synth_generate(cfg, seed=5)

    def bits(s):
        return (
            1 if s.text == "xorone" else 0,
            1 if s.video[0] > 0 else 0,
            1 if s.audio[0] > 0 else 0,
        )

    for s in ds.samples:
        bt, bv, ba = bits(s)
        assert (bt ^ bv ^ ba) == s.label

    # Bayes-optimal prediction by enumerating hidden bits; ties to label 0.
    def bayes_accuracy(combo):
        correct = 0
        for s in ds.samples:
            bt, bv, ba = bits(s)
            obs = [(T, bt), (V, bv), (A, ba)]
            post = [0, 0]
            for ht, hv, ha in product((0, 1), repeat=3):
                hidden = dict(((T, ht), (V, hv), (A, ha)))
                if any(hidden[m] != val for m, val in obs if m in combo):
                    continue
                post[ht ^ hv ^ ha] += 1
            correct += int(np.argmax(post)) == s.label
        return correct / len(ds)

    for combo in CANONICAL_COMBOS[:-1]:
        assert bayes_accuracy(combo) == 0.5
    assert bayes_accuracy(COMBO_TVA) == 1.0


def test_oracle_reproduces_plant_on_noise_free_corpus():
    # Zero-information combos predict label 0 on ties, so label-0 samples of
    # plants missing a modality annotate wrong; this mix keeps that under 1%.
    dist = (
        (COMBO_T, 0.63), (COMBO_V, 0.02), (COMBO_A, 0.02), (COMBO_TV, 0.01),
        (COMBO_TA, 0.01), (COMBO_VA, 0.01), (COMBO_TVA, 0.30),
    )
    cfg = SynthConfig(
        num_labels=10, samples_per_label=100, audio_dim=10, video_dim=10,
        noise=0.0, plant_dist=dist,
    )
    ds, plant = synth_generate(cfg, seed=19)
    protos = {A: prototype_matrix(cfg, 19, A), V: prototype_matrix(cfg, 19, V)}
    match = sum(
        oracle_minimal_combo(s, cfg, 19, protos) == plant.combos[s.id] for s in ds.samples
    )
    assert match / len(ds) >= 0.99


def test_noise_free_margins_match_construction():
    dist = tuple((c, 1.0 / 7.0) for c in CANONICAL_COMBOS)
    # Exact scales: singleton win gap = signal_scale; pair/triple gaps = 1.
    cfg = SynthConfig(
        num_labels=6, samples_per_label=14, audio_dim=6, video_dim=6,
        noise=0.0, plant_dist=dist,
    )
    ds, plant = synth_generate(cfg, seed=3)
    for s in ds.samples:
        expected = 3.0 if len(plant.combos[s.id]) == 1 else 1.0
        assert plant.margins[s.id] == pytest.approx(expected)


def test_sample_margin_recomputable():
    cfg = SynthConfig(
        num_labels=5, samples_per_label=20, audio_dim=5, video_dim=5, noise=0.1,
        plant_dist=((COMBO_T, 0.5), (COMBO_TVA, 0.5)),
    )
    ds, plant = synth_generate(cfg, seed=21)
    for s in ds.samples[:20]:
        again = sample_margin(cfg, 21, s, plant.combos[s.id])
        assert again == pytest.approx(plant.margins[s.id])


def test_plant_distribution_is_stratified_per_label():
    dist = ((COMBO_T, 0.7), (COMBO_V, 0.1), (COMBO_TVA, 0.2))
    cfg = SynthConfig(num_labels=5, samples_per_label=50, audio_dim=5, video_dim=5, plant_dist=dist)
    ds, plant = synth_generate(cfg, seed=2)
    for label in range(5):
        ids = [s.id for s in ds.samples if s.label == label]
        counts = {c: 0 for c in (COMBO_T, COMBO_V, COMBO_TVA)}
        for i in ids:
            counts[plant.combos[i]] += 1
        assert counts == {COMBO_T: 35, COMBO_V: 5, COMBO_TVA: 10}


def test_plant_file_round_trip(tmp_path):
    cfg = SynthConfig(num_labels=4, samples_per_label=10, audio_dim=4, video_dim=4)
    _, plant = synth_generate(cfg, seed=1)
    save_plant(plant, tmp_path / "plant.tsv")
    combos, margins = load_plant_combos(tmp_path / "plant.tsv")
    assert combos == plant.combos
    assert margins == pytest.approx(plant.margins)


@pytest.mark.parametrize(
    "kwargs, message",
    [
        (dict(num_labels=1), "at least 2 labels"),
        (dict(samples_per_label=0), "at least 1 sample"),
        (dict(audio_dim=0), "must be >= 1"),
        (dict(noise=-0.5), "non-negative"),
        (dict(plant_dist=((COMBO_T, 0.5),)), "sum to 1"),
        (dict(plant_dist=((COMBO_TV, 1.0),), num_labels=2), "pair plants"),
        (dict(plant_dist=((COMBO_TVA, 1.0),), num_labels=3), "triple plants"),
        (dict(xor_parity=True, num_labels=4), "exactly 2 labels"),
        (dict(pair_scales=(2.0, 5.0)), "pair scales"),
        (dict(triple_scales=(2.0, 3.0)), "triple scales"),
    ],
)
def test_invalid_configs_rejected(kwargs, message):
    base = dict(num_labels=4, samples_per_label=5, audio_dim=4, video_dim=4)
    base.update(kwargs)
    with pytest.raises(DataError, match=message):
        SynthConfig(**base)
