"""Command-line front end: one subcommand per pipeline stage plus a config-driven
end-to-end run that writes a content-hash manifest.

Exit codes: 0 success, 1 usage error, 2 data/validation error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import ablation as abl
from . import debias as deb
from . import evaluate as ev
from . import learner as lrn
from . import router as rt
from . import synth as syn
from .data import (
    Dataset,
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
from .errors import DataError, ModbiasError
from .modality import CANONICAL_COMBOS, ModalityCombo

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _parse_ratios(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise DataError(f"ratios must be three comma-separated numbers, got {text!r}")
    return tuple(float(p) for p in parts)  # type: ignore[return-value]


def _parse_plant(text: str):
    dist = []
    for item in text.split(","):
        if ":" not in item:
            raise DataError(f"plant entries look like COMBO:PROB, got {item!r}")
        combo, prob = item.rsplit(":", 1)
        dist.append((ModalityCombo.parse(combo), float(prob)))
    return tuple(dist)


def _add_train_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--train-seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--min-df", type=int, default=1)


def _train_config(args) -> lrn.TrainConfig:
    return lrn.TrainConfig(
        learning_rate=args.lr,
        max_epochs=args.epochs,
        patience=args.patience,
        l2=args.l2,
        seed=args.train_seed,
        batch_size=args.batch_size,
        min_df=args.min_df,
    )


def _require_split(dataset: Dataset, split_path: str | None) -> SplitSpec:
    if split_path:
        spec = load_split(split_path)
        spec.check_total(dataset)
        return spec
    return split_from_samples(dataset)


def _labeled_xy(dataset, samples, vocab, layout):
    x = lrn.featurize_all(samples, vocab, layout)
    y = np.array([s.label for s in samples], dtype=int)
    return x, y


def _train_on_split(dataset, spec, combo, config, ngram=1):
    train_samples = spec.part_samples(dataset, Split.TRAIN)
    dev_samples = spec.part_samples(dataset, Split.DEV)
    if not train_samples:
        raise DataError("train part is empty")
    vocab = lrn.build_vocab([s.text for s in train_samples], min_df=config.min_df, ngram_max=ngram)
    layout = lrn.FeatureBlockLayout(vocab.size, dataset.audio_dim, dataset.video_dim)
    tx, ty = _labeled_xy(dataset, train_samples, vocab, layout)
    dx, dy = _labeled_xy(dataset, dev_samples, vocab, layout)
    model = lrn.train(tx, ty, dx if len(dev_samples) else None, dy, layout, combo,
                      len(dataset.labels), config)
    return model, vocab


def _vocab_path(model_path: str | Path) -> Path:
    p = Path(model_path)
    return p.with_name(p.stem + ".vocab.json")


# ---------------------------------------------------------------------------
# Subcommands.

def cmd_synth(args) -> int:
    dist = _parse_plant(args.plant) if args.plant else ((syn.COMBO_TVA, 1.0),)
    config = syn.SynthConfig(
        num_labels=args.labels,
        samples_per_label=args.per_label,
        audio_dim=args.audio_dim,
        video_dim=args.video_dim,
        noise=args.noise,
        plant_dist=dist,
        xor_parity=args.xor,
        name=args.name,
    )
    dataset, plant = syn.synth_generate(config, args.seed)
    out = Path(args.out)
    save_dataset(dataset, out / dataset.name)
    syn.save_plant(plant, out / f"{dataset.name}.plant.tsv")
    print(f"synth: wrote {len(dataset)} samples, {len(dataset.labels)} labels to {out}")
    return EXIT_OK


def cmd_split(args) -> int:
    dataset = load_dataset(args.data)
    spec = stratified_split(dataset, _parse_ratios(args.ratios), args.seed)
    save_split(spec, args.out)
    sizes = spec.sizes()
    print(
        f"split: train={sizes[Split.TRAIN]} dev={sizes[Split.DEV]} test={sizes[Split.TEST]} -> {args.out}"
    )
    return EXIT_OK


def cmd_kshot(args) -> int:
    dataset = load_dataset(args.data)
    spec = _require_split(dataset, args.split)
    subset = kshot_subset(dataset, spec, args.k, args.seed)
    save_dataset(subset, args.out)
    print(f"kshot: k={args.k} -> {len(subset)} samples -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    dataset = load_dataset(args.data)
    spec = _require_split(dataset, args.split)
    combo = ModalityCombo.parse(args.combo)
    model, vocab = _train_on_split(dataset, spec, combo, _train_config(args), args.ngram)
    lrn.save_model(model, args.out)
    lrn.save_vocab(vocab, _vocab_path(args.out))
    best = max((h.get("dev_acc", 0.0) for h in model.history), default=0.0)
    print(f"train: combo={combo.name} dev_acc={best:.4f} -> {args.out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    dataset = load_dataset(args.data)
    spec = _require_split(dataset, args.split)
    config = _train_config(args)
    if args.all_samples:
        folds = deb.build_folds(dataset, spec, args.fold_seed, args.dev_policy)
        records = abl.run_ablation_rotated(dataset, folds, config, jobs=args.jobs)
    else:
        records = abl.run_ablation(dataset, spec, config, jobs=args.jobs)
    abl.save_records(records, args.out)
    print(f"ablate: {len(records)} records x 7 combos -> {args.out}")
    return EXIT_OK


def cmd_annotate(args) -> int:
    dataset = load_dataset(args.data)
    golds = {s.id: s.label for s in dataset.samples}
    records = abl.load_records(args.records, golds)
    annotations = [abl.annotate_minimal(r) for r in records]
    abl.save_annotations(annotations, args.out)
    msg = f"annotate: {len(annotations)} annotations -> {args.out}"
    if args.stats:
        stats = abl.aggregate_stats(annotations)
        abl.save_stats(stats, args.stats)
        msg += f"; sigma_T={stats.sigma_t:.2f} -> {args.stats}"
    print(msg)
    return EXIT_OK


def cmd_debias(args) -> int:
    dataset = load_dataset(args.data)
    spec = _require_split(dataset, args.split)
    dataset = apply_split(dataset, spec)
    config = _train_config(args)
    detector = deb.DetectorConfig(text_a=config, text_b=config, fusion=config)
    folds = deb.build_folds(dataset, spec, args.seed, args.dev_policy)
    votes = deb.detect_bias(dataset, folds, detector, jobs=args.jobs)
    debiased, report = deb.build_debiased(dataset, votes, args.min_per_label, spec)
    out = Path(args.out)
    deb.save_votes(votes, out / "votes.tsv")
    deb.save_reduction(report, out / "reduction.tsv")
    save_dataset(debiased, out / debiased.name)
    frac = sum(v.biased for v in votes) / len(votes)
    print(
        f"debias: biased {frac:.4f}, kept {len(debiased)}/{len(dataset)} samples, "
        f"{len(debiased.labels)}/{len(dataset.labels)} labels -> {out}"
    )
    return EXIT_OK


def cmd_control(args) -> int:
    dataset = load_dataset(args.data)
    if args.split:
        dataset = apply_split(dataset, _require_split(dataset, args.split))
    debiased = load_dataset(args.debiased)
    control = deb.random_control(dataset, debiased, args.seed)
    save_dataset(control, args.out)
    print(f"control: {len(control)} samples -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    dataset = load_dataset(args.data)
    model = lrn.load_model(args.model)
    vocab = lrn.load_vocab(args.vocab or _vocab_path(args.model))
    if args.split or all(s.split is not None for s in dataset.samples):
        spec = _require_split(dataset, args.split)
        samples = spec.part_samples(dataset, Split(args.part))
    else:
        samples = list(dataset.samples)
    if not samples:
        raise DataError(f"no samples in part {args.part!r}")
    x, y = _labeled_xy(dataset, samples, vocab, model.layout)
    predicted = lrn.predict(model, x)
    metrics = ev.compute_metrics(list(y), [int(p) for p in predicted], dataset.labels)
    ev.save_metrics(metrics, dataset.labels, args.out)
    print(f"eval: n={metrics.n} acc={metrics.accuracy:.4f} macro_f1={metrics.macro_f1:.4f} -> {args.out}")
    return EXIT_OK


def cmd_route(args) -> int:
    dataset = load_dataset(args.data)
    spec = _require_split(dataset, args.split)
    annotations = {a.sample_id: a for a in abl.load_annotations(args.annotations)}
    targets = {sid: rt.route_target(a.combo).value for sid, a in annotations.items()}

    # Train on whatever subset carries annotations (use `ablate --all-samples`
    # for full coverage); routing itself covers every sample.
    train_samples = [s for s in spec.part_samples(dataset, Split.TRAIN) if s.id in targets]
    dev_samples = [s for s in spec.part_samples(dataset, Split.DEV) if s.id in targets]
    if not train_samples:
        raise DataError("no annotated samples in the train part; run ablate --all-samples")
    vocab = lrn.build_vocab([s.text for s in train_samples], min_df=args.min_df)
    layout = lrn.FeatureBlockLayout(vocab.size, dataset.audio_dim, dataset.video_dim)
    tx = lrn.featurize_all(train_samples, vocab, layout)
    ty = np.array([targets[s.id] for s in train_samples])
    dx = lrn.featurize_all(dev_samples, vocab, layout)
    dy = np.array([targets[s.id] for s in dev_samples])
    config = rt.RouterConfig(
        width=args.width, learning_rate=args.lr, max_epochs=args.epochs,
        patience=args.patience, l2=args.l2, seed=args.train_seed,
    )
    model = rt.train_router(tx, ty, dx if len(dev_samples) else None, dy, layout, config)
    out = Path(args.out)
    rt.save_router(model, out / "router.json")
    lrn.save_vocab(vocab, out / "router.vocab.json")
    all_x = lrn.featurize_all(dataset.samples, vocab, layout)
    scores = rt.route_proba(model, all_x)
    classes = [rt.ROUTE_CLASSES[int(i)] for i in np.argmax(scores, axis=1)]
    rt.save_routes([s.id for s in dataset.samples], classes, scores, out / "routes.tsv")
    judged = [
        (c, targets[s.id]) for c, s in zip(classes, dataset.samples) if s.id in targets
    ]
    agree = float(np.mean([c.value == t for c, t in judged])) if judged else float("nan")
    print(f"route: {len(classes)} samples routed, target agreement {agree:.4f} -> {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    before, labels_before = ev.load_metrics(args.before)
    after, labels_after = ev.load_metrics(args.after)
    rows = ev.compare_runs(before, after, labels_before, labels_after)
    text = ev.render_comparison(rows, args.format)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"report: {len(rows)} rows -> {args.out}")
    else:
        print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Pipeline.

_STAGES = ("ablate", "debias", "eval")


def _stage_config(cfg: dict, stage: str) -> lrn.TrainConfig:
    base = dict(cfg.get("train", {}))
    base.update(cfg.get("stages", {}).get(stage, {}))
    allowed = {"learning_rate", "max_epochs", "patience", "l2", "seed", "batch_size", "min_df"}
    unknown = set(base) - allowed
    if unknown:
        raise DataError(f"unknown train options for stage {stage!r}: {sorted(unknown)}")
    return lrn.TrainConfig(**base)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def run_pipeline(config_path: str | Path, out_override: str | None = None, jobs: int | None = None) -> Path:
    """split -> ablate -> annotate -> stats -> debias -> control -> retrain/eval
    -> reports, with every artifact listed in a sha256 manifest."""
    cfg_path = Path(config_path)
    if not cfg_path.exists():
        raise DataError(f"pipeline config not found: {cfg_path}")
    try:
        cfg = json.loads(cfg_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"{cfg_path}: malformed JSON: {e}") from None
    for key in ("dataset", "out", "seed"):
        if key not in cfg:
            raise DataError(f"pipeline config missing {key!r} (explicit seeds required)")
    out = Path(out_override or cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    seed = int(cfg["seed"])
    ratios = tuple(cfg.get("ratios", (0.6, 0.2, 0.2)))
    min_per_label = int(cfg.get("min_per_label", 10))
    dev_policy = cfg.get("dev_policy", "rotate")
    n_jobs = int(jobs if jobs is not None else cfg.get("jobs", 1))

    dataset = load_dataset(cfg["dataset"])
    artifacts: list[Path] = []

    def emit(path: Path) -> Path:
        artifacts.append(path)
        return path

    # 1. split
    spec = stratified_split(dataset, ratios, seed)
    save_split(spec, emit(out / "split.tsv"))
    dataset = apply_split(dataset, spec)

    # 2-4. ablation, annotation, stats over the evaluation part
    ablate_cfg = _stage_config(cfg, "ablate")
    records = abl.run_ablation(dataset, spec, ablate_cfg, jobs=n_jobs)
    abl.save_records(records, emit(out / "ablation.tsv"))
    annotations = [abl.annotate_minimal(r) for r in records]
    abl.save_annotations(annotations, emit(out / "annotations.tsv"))
    abl.save_stats(abl.aggregate_stats(annotations), emit(out / "stats.tsv"))

    # 5. debias
    debias_cfg = _stage_config(cfg, "debias")
    detector = deb.DetectorConfig(text_a=debias_cfg, text_b=debias_cfg, fusion=debias_cfg)
    folds = deb.build_folds(dataset, spec, seed, dev_policy)
    votes = deb.detect_bias(dataset, folds, detector, jobs=n_jobs)
    deb.save_votes(votes, emit(out / "votes.tsv"))
    debiased, report = deb.build_debiased(dataset, votes, min_per_label, spec)
    deb.save_reduction(report, emit(out / "reduction.tsv"))
    save_dataset(debiased, out / "debiased")
    artifacts += [out / "debiased.meta.json", out / "debiased.jsonl"]

    # 6. control
    control = deb.random_control(dataset, debiased, seed)
    save_dataset(control, out / "control")
    artifacts += [out / "control.meta.json", out / "control.jsonl"]

    # 7. retrain + evaluate text-only and full-fusion models on each variant
    eval_cfg = _stage_config(cfg, "eval")
    variants = {"original": dataset, "debiased": debiased, "control": control}
    metrics: dict[tuple[str, str], ev.Metrics] = {}
    for vname, vds in variants.items():
        vspec = split_from_samples(vds)
        for mname, combo in (("text", CANONICAL_COMBOS[0]), ("fusion", CANONICAL_COMBOS[6])):
            model, vocab = _train_on_split(vds, vspec, combo, eval_cfg)
            test_samples = vspec.part_samples(vds, Split.TEST)
            if not test_samples:
                raise DataError(f"variant {vname!r} has an empty test part")
            layout = model.layout
            x, y = _labeled_xy(vds, test_samples, vocab, layout)
            m = ev.compute_metrics(
                list(y), [int(p) for p in lrn.predict(model, x)], vds.labels
            )
            metrics[(vname, mname)] = m
            ev.save_metrics(m, vds.labels, emit(out / f"metrics_{vname}_{mname}.json"))

    # 8. before/after reports (text model), TSV + Markdown
    for tag, pair in (
        ("debiased", ("original", "debiased")),
        ("control", ("control", "debiased")),
    ):
        b, a = pair
        rows = ev.compare_runs(
            metrics[(b, "text")], metrics[(a, "text")],
            variants[b].labels, variants[a].labels,
        )
        for fmt in ("tsv", "md"):
            path = emit(out / f"report_{tag}_text.{fmt}")
            path.write_text(ev.render_comparison(rows, fmt), encoding="utf-8")

    # 9. manifest
    manifest = out / "manifest.tsv"
    lines = []
    for path in sorted(set(artifacts)):
        lines.append(f"{path.relative_to(out)}\t{_sha256(path)}")
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def cmd_pipeline(args) -> int:
    manifest = run_pipeline(args.config, args.out, args.jobs)
    n = len(manifest.read_text(encoding="utf-8").splitlines())
    print(f"pipeline: {n} artifacts -> {manifest}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser assembly.

def build_parser() -> _Parser:
    parser = _Parser(prog="modbias", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a synthetic planted corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--name", default="synth")
    p.add_argument("--labels", type=int, required=True)
    p.add_argument("--per-label", type=int, required=True)
    p.add_argument("--audio-dim", type=int, default=8)
    p.add_argument("--video-dim", type=int, default=8)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--plant", default=None, help='e.g. "T:0.7,V:0.1,T+V+A:0.2"')
    p.add_argument("--xor", action="store_true")
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="stratified train/dev/test split")
    p.add_argument("--data", required=True)
    p.add_argument("--ratios", default="0.6,0.2,0.2")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("kshot", help="k training samples per label")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_kshot)

    p = sub.add_parser("train", help="train one fusion model")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--combo", default="T+V+A")
    p.add_argument("--ngram", type=int, default=1)
    _add_train_opts(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="train all 7 combos and record outcomes")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--all-samples", action="store_true",
                   help="annotate every sample via round-robin fold rotation")
    p.add_argument("--fold-seed", type=int, default=0)
    p.add_argument("--dev-policy", choices=("rotate", "fixed"), default="rotate")
    p.add_argument("--jobs", type=int, default=1)
    _add_train_opts(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("annotate", help="minimal-combo annotation from ablation records")
    p.add_argument("--data", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stats", default=None)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("debias", help="majority-vote bias detection and filtering")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--min-per-label", type=int, default=10)
    p.add_argument("--dev-policy", choices=("rotate", "fixed"), default="rotate")
    p.add_argument("--jobs", type=int, default=1)
    _add_train_opts(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_debias)

    p = sub.add_parser("control", help="size-matched random control subset")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default=None,
                   help="split to apply to the original data when it lacks split tags")
    p.add_argument("--debiased", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_control)

    p = sub.add_parser("eval", help="evaluate a saved model on a dataset part")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--part", choices=("train", "dev", "test"), default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("route", help="train the modality router on annotations")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--annotations", required=True)
    p.add_argument("--width", type=int, default=16)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=600)
    p.add_argument("--patience", type=int, default=100)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--train-seed", type=int, default=0)
    p.add_argument("--min-df", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("report", help="before/after comparison table")
    p.add_argument("--before", required=True)
    p.add_argument("--after", required=True)
    p.add_argument("--format", choices=("tsv", "md"), default="tsv")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="run the full pipeline from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ModbiasError as e:
        print(f"modbias: error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"modbias: error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
