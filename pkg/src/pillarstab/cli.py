"""Command-line interface.

Subcommands: ``label`` (safety factors + expanded labels to CSV), ``synth``
(synthetic dataset CSV), ``train`` (one network), ``ensemble`` (one bagging
ensemble), ``experiment`` (the full evaluation matrix), and ``report``
(re-render tables and the chart from a per-trial CSV).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
divergence across all trials.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .data_pipeline import (
    ConfigurationError,
    InsufficientDataError,
    ParseError,
    PUBLISHED_THRESHOLDS,
    SMOTE_DEFAULT_K,
    SplitSpec,
    Thresholds,
    class_counts,
    compute_thresholds,
    label_records,
    parse_csv,
    safety_factor,
    smote,
    split,
    standardize_partitions,
    stratified_partition,
    write_labeled_csv,
    write_raw_csv,
)
from .ensemble import EnsembleConfig, save_ensemble, train_ensemble, ensemble_predict_batch
from .experiment import (
    PROPORTION_SPLITS,
    AllTrialsDivergedError,
    ExperimentConfig,
    read_trials_csv,
    run_experiment,
    write_reports,
)
from .metrics import accuracy, confusion_matrix
from .network import (
    Activation,
    DivergenceError,
    MlpConfig,
    Monitor,
    TrainConfig,
    init,
    predict_batch,
    save_mlp,
    train,
)
from .seeds import TAG_DATA, TAG_INIT, TAG_SHUFFLE, TAG_SPLIT, mix64
from .synthetic import GenerationError, SyntheticSpec, generate_synthetic

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


def _add_data_flags(parser: argparse.ArgumentParser, required: bool = True) -> None:
    group = parser.add_mutually_exclusive_group(required=required)
    group.add_argument("--data", type=Path, help="input CSV of raw case records")
    group.add_argument("--synthetic", action="store_true", help="generate synthetic data instead")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pillarstab",
        description="Four-class coal pillar stability classification pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_label = sub.add_parser("label", help="compute safety factors and expanded labels")
    p_label.add_argument("--data", type=Path, required=True)
    p_label.add_argument("--thresholds", choices=("published", "recompute"), default="published")
    p_label.add_argument("--out", type=Path, default=Path("out"))

    p_synth = sub.add_parser("synth", help="generate a synthetic raw-record CSV")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", type=Path, default=Path("out"))

    p_train = sub.add_parser("train", help="train and save a single network")
    _add_data_flags(p_train)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--proportion", type=int, choices=sorted(PROPORTION_SPLITS), default=1)
    p_train.add_argument("--activation", choices=[a.value for a in Activation], default="relu")
    p_train.add_argument("--smote-stage", choices=("pre-split", "train-only"), default="pre-split")
    p_train.add_argument("--thresholds", choices=("published", "recompute"), default="published")
    p_train.add_argument("--max-epochs", type=int, default=400)
    p_train.add_argument("--out", type=Path, default=Path("out"))

    p_ens = sub.add_parser("ensemble", help="train and save a bagging ensemble")
    _add_data_flags(p_ens)
    p_ens.add_argument("--seed", type=int, default=0)
    p_ens.add_argument("--proportion", type=int, choices=sorted(PROPORTION_SPLITS), default=1)
    p_ens.add_argument("--bootstrap", type=float, default=0.7)
    p_ens.add_argument("--smote-stage", choices=("pre-split", "train-only"), default="pre-split")
    p_ens.add_argument("--thresholds", choices=("published", "recompute"), default="published")
    p_ens.add_argument("--max-epochs", type=int, default=400)
    p_ens.add_argument("--out", type=Path, default=Path("out"))

    p_exp = sub.add_parser("experiment", help="run the full evaluation matrix")
    _add_data_flags(p_exp, required=False)
    p_exp.add_argument("--config", type=Path, help="JSON file mirroring ExperimentConfig fields")
    p_exp.add_argument("--seed", type=int, default=None)
    p_exp.add_argument("--trials", type=int, default=None)
    p_exp.add_argument(
        "--proportion", type=int, action="append", choices=sorted(PROPORTION_SPLITS),
        help="repeatable; default all four",
    )
    p_exp.add_argument("--bootstrap", type=float, action="append", help="repeatable; default 0.7 0.8 0.9")
    p_exp.add_argument("--smote-stage", choices=("pre-split", "train-only"), default=None)
    p_exp.add_argument("--thresholds", choices=("published", "recompute"), default=None)
    p_exp.add_argument("--max-epochs", type=int, default=None, help="cap training epochs (CI convenience)")
    p_exp.add_argument("--jobs", type=int, default=1, help="parallel cell workers")
    p_exp.add_argument("--out", type=Path, default=None)

    p_rep = sub.add_parser("report", help="re-render tables and chart from a trials CSV")
    p_rep.add_argument("--data", type=Path, required=True, help="path to trials.csv")
    p_rep.add_argument("--out", type=Path, default=Path("out"))

    return parser


def _load_raws(args: argparse.Namespace):
    if getattr(args, "synthetic", False):
        return generate_synthetic(SyntheticSpec(seed=mix64(args.seed, TAG_DATA)))
    return parse_csv(args.data)


def _resolve_thresholds(mode: str, raws) -> Thresholds:
    if mode == "published":
        return PUBLISHED_THRESHOLDS
    return compute_thresholds((raw.outcome, safety_factor(raw)) for raw in raws)


def cmd_label(args: argparse.Namespace) -> int:
    raws = parse_csv(args.data)
    thresholds = _resolve_thresholds(args.thresholds, raws)
    records = label_records(raws, thresholds)
    args.out.mkdir(parents=True, exist_ok=True)
    out_path = args.out / "labeled.csv"
    write_labeled_csv(raws, records, out_path)
    counts = class_counts(records)
    print(f"thresholds: t_failed={thresholds.t_failed:.6g} t_intact={thresholds.t_intact:.6g}")
    print("counts: " + " ".join(f"{label.name}={counts[label]}" for label in sorted(counts)))
    print(f"wrote {out_path}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    records = generate_synthetic(SyntheticSpec(seed=args.seed))
    args.out.mkdir(parents=True, exist_ok=True)
    out_path = args.out / "synthetic.csv"
    write_raw_csv(records, out_path)
    print(f"wrote {out_path} ({len(records)} records)")
    return EXIT_OK


def _build_bundle(args: argparse.Namespace):
    raws = _load_raws(args)
    thresholds = _resolve_thresholds(args.thresholds, raws)
    records = label_records(raws, thresholds)
    fracs = PROPORTION_SPLITS[args.proportion]
    spec = SplitSpec(*fracs, seed=mix64(args.seed, TAG_SPLIT, args.proportion, 0))
    if args.smote_stage == "pre-split":
        records = smote(records, k=SMOTE_DEFAULT_K, seed=mix64(args.seed, 2))
        return split(records, spec)
    train_part, val_part, test_part = stratified_partition(records, spec)
    train_part = smote(train_part, k=SMOTE_DEFAULT_K, seed=mix64(args.seed, 2, args.proportion))
    return standardize_partitions(train_part, val_part, test_part)


def cmd_train(args: argparse.Namespace) -> int:
    bundle = _build_bundle(args)
    monitor = Monitor.VAL_LOSS if bundle.validation is not None else Monitor.TRAIN_ACCURACY
    arch = MlpConfig(
        activation=Activation(args.activation),
        init_seed=mix64(args.seed, TAG_INIT, args.proportion, 0, 0),
    )
    tc = TrainConfig(
        max_epochs=args.max_epochs,
        monitor=monitor,
        shuffle_seed=mix64(args.seed, TAG_SHUFFLE, args.proportion, 0, 0),
    )
    model = init(arch)
    result = train(model, bundle, tc)
    import numpy as np

    X_test = np.array([record.features for record in bundle.test])
    y_test = np.array([record.class_code for record in bundle.test])
    test_acc = accuracy(confusion_matrix(y_test, predict_batch(model, X_test)))
    args.out.mkdir(parents=True, exist_ok=True)
    out_path = args.out / f"model_{args.activation}.npz"
    save_mlp(model, out_path, bundle.feature_means, bundle.feature_stds)
    print(
        f"trained {args.activation}: epochs={result.epochs_run} "
        f"stop={result.stop_reason.value} test_accuracy={test_acc:.4f}"
    )
    print(f"wrote {out_path}")
    return EXIT_OK


def cmd_ensemble(args: argparse.Namespace) -> int:
    bundle = _build_bundle(args)
    monitor = Monitor.VAL_LOSS if bundle.validation is not None else Monitor.TRAIN_ACCURACY
    ecfg = EnsembleConfig(
        bootstrap_frac=args.bootstrap,
        base_train=TrainConfig(max_epochs=args.max_epochs, monitor=monitor),
        base_arch=MlpConfig(),
        master_seed=mix64(args.seed, 101, args.proportion, 0, int(round(args.bootstrap * 100))),
    )
    model = train_ensemble(bundle, ecfg)
    import numpy as np

    X_test = np.array([record.features for record in bundle.test])
    y_test = np.array([record.class_code for record in bundle.test])
    test_acc = accuracy(confusion_matrix(y_test, ensemble_predict_batch(model, X_test)))
    out_dir = args.out / f"ensemble_{int(round(args.bootstrap * 100))}"
    save_ensemble(model, out_dir, bundle.feature_means, bundle.feature_stds)
    print(f"trained ensemble (bootstrap {args.bootstrap}): test_accuracy={test_acc:.4f}")
    print(f"wrote {out_dir}/")
    return EXIT_OK


_CONFIG_FIELDS = {field.name for field in dataclasses.fields(ExperimentConfig)}


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    values: dict = {}
    if args.config is not None:
        try:
            loaded = json.loads(args.config.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config file: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigurationError("config file must contain a JSON object")
        unknown = set(loaded) - _CONFIG_FIELDS
        if unknown:
            raise ConfigurationError(f"unknown config key(s): {sorted(unknown)}")
        values.update(loaded)
    if args.synthetic:
        values["data_source"] = "synthetic"
    elif args.data is not None:
        values["data_source"] = str(args.data)
    if args.seed is not None:
        values["master_seed"] = args.seed
    if args.trials is not None:
        values["trials"] = args.trials
    if args.proportion:
        values["proportions"] = tuple(dict.fromkeys(args.proportion))
    if args.bootstrap:
        values["bootstrap_fracs"] = tuple(dict.fromkeys(args.bootstrap))
    if args.smote_stage is not None:
        values["smote_stage"] = args.smote_stage
    if args.thresholds is not None:
        values["thresholds_mode"] = args.thresholds
    if args.out is not None:
        values["output_dir"] = str(args.out)
    return ExperimentConfig(**values)


def cmd_experiment(args: argparse.Namespace) -> int:
    cfg = _experiment_config(args)
    base_train = TrainConfig(max_epochs=args.max_epochs) if args.max_epochs else None
    summary = run_experiment(cfg, base_train=base_train, jobs=args.jobs)
    print(
        f"experiment done: {len(summary.rows)} result rows, "
        f"{len(summary.diverged)} diverged cell(s), reports in {summary.output_dir}/"
    )
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    rows = read_trials_csv(args.data)
    meta = []
    with open(args.data, "r", encoding="utf-8") as handle:
        for line in handle:
            if line.startswith("#"):
                meta.append(line.rstrip("\n"))
            else:
                break
    written = write_reports(rows, args.out, meta)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


_COMMANDS = {
    "label": cmd_label,
    "synth": cmd_synth,
    "train": cmd_train,
    "ensemble": cmd_ensemble,
    "experiment": cmd_experiment,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, InsufficientDataError, GenerationError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AllTrialsDivergedError as exc:
        print(f"training divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except DivergenceError as exc:
        print(f"training divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
