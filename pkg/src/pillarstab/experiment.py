"""Seeded experiment matrix and report generation.

Runs every requested (data proportion, trial) cell: three single networks
plus one bagging ensemble per bootstrap fraction, all evaluated on the test
partition. Emits a per-trial CSV, aggregate markdown tables (mean accuracy,
accuracy standard deviation, per-class F1 per proportion), a machine-readable
F2 comparison CSV, and a grouped-bar SVG chart of the F2 scores.

Outputs are byte-deterministic for a fixed config: every stochastic stage
derives its own seed from the master seed (see ``seeds``), cells may run in
parallel without changing results, and no timestamps are written.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .data_pipeline import (
    ConfigurationError,
    DatasetBundle,
    Label,
    PillarRecord,
    PUBLISHED_THRESHOLDS,
    RawRecord,
    SMOTE_DEFAULT_K,
    SplitSpec,
    Thresholds,
    compute_thresholds,
    label_records,
    parse_csv,
    safety_factor,
    smote,
    split,
    standardize_partitions,
    stratified_partition,
)
from .ensemble import EnsembleConfig, train_ensemble, ensemble_predict_batch
from .metrics import (
    F2_BETA,
    TRIAL_CSV_COLUMNS,
    accuracy,
    aggregate,
    class_metrics,
    confusion_matrix,
    f_beta,
)
from .network import (
    Activation,
    DivergenceError,
    Mlp,
    MlpConfig,
    Monitor,
    TrainConfig,
    init,
    predict_batch,
    train,
)
from .seeds import TAG_DATA, TAG_INIT, TAG_SHUFFLE, TAG_SMOTE, TAG_SPLIT, mix64
from .synthetic import SyntheticSpec, generate_synthetic

#: Data proportion id -> (train, validation, test) fractions.
PROPORTION_SPLITS = {
    1: (0.80, 0.00, 0.20),
    2: (0.70, 0.00, 0.30),
    3: (0.80, 0.10, 0.10),
    4: (0.70, 0.15, 0.15),
}

SMOTE_STAGES = ("pre-split", "train-only")
THRESHOLD_MODES = ("published", "recompute")

SINGLE_MODELS = tuple(activation.value for activation in Activation)
ENSEMBLE_MODEL = "ensemble"

# Per-ensemble seed domain inside a cell; members mix their index on top.
_TAG_ENSEMBLE = 101


class AllTrialsDivergedError(RuntimeError):
    """Every (proportion, trial) cell failed with a training divergence."""


@dataclass
class ExperimentConfig:
    data_source: str = "synthetic"  # CSV path or the literal "synthetic"
    proportions: tuple[int, ...] = (1, 2, 3, 4)
    trials: int = 10
    bootstrap_fracs: tuple[float, ...] = (0.7, 0.8, 0.9)
    master_seed: int = 0
    smote_stage: str = "pre-split"
    thresholds_mode: str = "published"
    output_dir: str = "out"
    fixed_split: bool = False  # reuse trial 0's split seed for every trial

    def __post_init__(self) -> None:
        self.proportions = tuple(self.proportions)
        self.bootstrap_fracs = tuple(self.bootstrap_fracs)
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if not self.proportions:
            raise ConfigurationError("at least one data proportion is required")
        unknown = [p for p in self.proportions if p not in PROPORTION_SPLITS]
        if unknown:
            raise ConfigurationError(f"unknown data proportion(s) {unknown}; valid: 1-4")
        if any(not 0 < frac <= 1 for frac in self.bootstrap_fracs):
            raise ConfigurationError("bootstrap fractions must lie in (0, 1]")
        if self.smote_stage not in SMOTE_STAGES:
            raise ConfigurationError(f"smote_stage must be one of {SMOTE_STAGES}")
        if self.thresholds_mode not in THRESHOLD_MODES:
            raise ConfigurationError(f"thresholds_mode must be one of {THRESHOLD_MODES}")


@dataclass
class TrialRow:
    """One evaluated model in one (proportion, trial) cell."""

    model: str  # "relu" | "elu" | "gelu" | "ensemble"
    proportion: int
    bootstrap: float | None  # None for single models
    trial: int
    accuracy: float
    f1: tuple[float, float, float, float]  # per class code 0..3
    f2_f1: float  # F2 score of class F1 (code 1)


@dataclass
class ExperimentSummary:
    rows: list[TrialRow]
    diverged: list[tuple[int, int, str]]  # (proportion, trial, message)
    output_dir: Path
    thresholds: Thresholds


def load_records(cfg: ExperimentConfig) -> list[RawRecord]:
    if cfg.data_source == "synthetic":
        return generate_synthetic(SyntheticSpec(seed=mix64(cfg.master_seed, TAG_DATA)))
    return parse_csv(cfg.data_source)


def resolve_thresholds(cfg: ExperimentConfig, raws: Sequence[RawRecord]) -> Thresholds:
    if cfg.thresholds_mode == "published":
        return PUBLISHED_THRESHOLDS
    return compute_thresholds((raw.outcome, safety_factor(raw)) for raw in raws)


def _prepare_records(cfg: ExperimentConfig) -> tuple[list[PillarRecord], Thresholds]:
    raws = load_records(cfg)
    thresholds = resolve_thresholds(cfg, raws)
    records = label_records(raws, thresholds)
    if cfg.smote_stage == "pre-split":
        records = smote(records, k=SMOTE_DEFAULT_K, seed=mix64(cfg.master_seed, TAG_SMOTE))
    return records, thresholds


def _cell_bundle(
    records: Sequence[PillarRecord], cfg: ExperimentConfig, proportion: int, trial: int
) -> DatasetBundle:
    split_trial = 0 if cfg.fixed_split else trial
    spec = SplitSpec(
        *PROPORTION_SPLITS[proportion],
        seed=mix64(cfg.master_seed, TAG_SPLIT, proportion, split_trial),
    )
    if cfg.smote_stage == "train-only":
        train_part, val_part, test_part = stratified_partition(records, spec)
        train_part = smote(
            train_part,
            k=SMOTE_DEFAULT_K,
            seed=mix64(cfg.master_seed, TAG_SMOTE, proportion, trial),
        )
        return standardize_partitions(train_part, val_part, test_part)
    return split(records, spec)


def _score(name: str, proportion: int, bootstrap: float | None, trial: int,
           y_true: np.ndarray, y_pred: np.ndarray) -> TrialRow:
    cm = confusion_matrix(y_true, y_pred)
    per_class = class_metrics(cm, beta=F2_BETA)
    return TrialRow(
        model=name,
        proportion=proportion,
        bootstrap=bootstrap,
        trial=trial,
        accuracy=accuracy(cm),
        f1=tuple(float(v) for v in per_class.f1),
        f2_f1=f_beta(cm, int(Label.F1), F2_BETA),
    )


def run_cell(
    records: Sequence[PillarRecord],
    cfg: ExperimentConfig,
    base_arch: MlpConfig,
    base_train: TrainConfig,
    proportion: int,
    trial: int,
) -> list[TrialRow]:
    """Train and evaluate all models of one (proportion, trial) cell."""
    bundle = _cell_bundle(records, cfg, proportion, trial)
    monitor = Monitor.VAL_LOSS if bundle.validation is not None else Monitor.TRAIN_ACCURACY
    X_test = np.array([record.features for record in bundle.test], dtype=float)
    y_test = np.array([record.class_code for record in bundle.test], dtype=np.int64)

    rows: list[TrialRow] = []
    for index, activation in enumerate(Activation):
        arch = replace(
            base_arch,
            activation=activation,
            init_seed=mix64(cfg.master_seed, TAG_INIT, proportion, trial, index),
        )
        tc = replace(
            base_train,
            monitor=monitor,
            shuffle_seed=mix64(cfg.master_seed, TAG_SHUFFLE, proportion, trial, index),
        )
        model = init(arch)
        train(model, bundle, tc)
        rows.append(
            _score(activation.value, proportion, None, trial, y_test, predict_batch(model, X_test))
        )

    for frac in cfg.bootstrap_fracs:
        ecfg = EnsembleConfig(
            bootstrap_frac=frac,
            base_train=replace(base_train, monitor=monitor),
            base_arch=base_arch,
            master_seed=mix64(
                cfg.master_seed, _TAG_ENSEMBLE, proportion, trial, int(round(frac * 100))
            ),
        )
        ens = train_ensemble(bundle, ecfg)
        rows.append(
            _score(ENSEMBLE_MODEL, proportion, frac, trial, y_test, ensemble_predict_batch(ens, X_test))
        )
    return rows


def _run_cell_task(args) -> tuple[int, int, list[TrialRow] | None, str | None]:
    records, cfg, base_arch, base_train, proportion, trial = args
    try:
        return proportion, trial, run_cell(records, cfg, base_arch, base_train, proportion, trial), None
    except DivergenceError as exc:
        return proportion, trial, None, str(exc)


def _meta_lines(cfg: ExperimentConfig) -> list[str]:
    config = asdict(cfg)
    config["output_dir"] = str(config["output_dir"])
    return [
        f"# pillarstab={__version__}",
        f"# master_seed={cfg.master_seed}",
        f"# config={json.dumps(config, sort_keys=True)}",
    ]


def _fmt_bootstrap(bootstrap: float | None) -> str:
    return "" if bootstrap is None else repr(bootstrap)


def write_trials_csv(rows: Sequence[TrialRow], path: str | Path, meta: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for line in meta:
            handle.write(line + "\n")
        handle.write(",".join(TRIAL_CSV_COLUMNS) + "\n")
        for row in rows:
            cells = [
                row.model,
                str(row.proportion),
                _fmt_bootstrap(row.bootstrap),
                str(row.trial),
                repr(row.accuracy),
                *[repr(v) for v in row.f1],
                repr(row.f2_f1),
            ]
            handle.write(",".join(cells) + "\n")


def read_trials_csv(path: str | Path) -> list[TrialRow]:
    rows: list[TrialRow] = []
    with open(path, "r", encoding="utf-8") as handle:
        header_seen = False
        for line in handle:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if not header_seen:
                if tuple(line.split(",")) != TRIAL_CSV_COLUMNS:
                    raise ValueError(f"unexpected trial CSV header in {path}")
                header_seen = True
                continue
            cells = line.split(",")
            rows.append(
                TrialRow(
                    model=cells[0],
                    proportion=int(cells[1]),
                    bootstrap=float(cells[2]) if cells[2] else None,
                    trial=int(cells[3]),
                    accuracy=float(cells[4]),
                    f1=tuple(float(v) for v in cells[5:9]),
                    f2_f1=float(cells[9]),
                )
            )
    if not header_seen:
        raise ValueError(f"no trial rows found in {path}")
    return rows


def _model_key(row: TrialRow) -> tuple[str, float | None]:
    return (row.model, row.bootstrap)


def _model_order(rows: Sequence[TrialRow]) -> list[tuple[str, float | None]]:
    """Single models first (ReLU, ELU, GELU), then ensembles by fraction."""
    keys = {_model_key(row) for row in rows}
    singles = [(name, None) for name in SINGLE_MODELS if (name, None) in keys]
    fracs = sorted(frac for (name, frac) in keys if name == ENSEMBLE_MODEL)
    return singles + [(ENSEMBLE_MODEL, frac) for frac in fracs]


def _display_name(key: tuple[str, float | None]) -> str:
    name, frac = key
    if name == ENSEMBLE_MODEL:
        return f"Ensemble ({int(round(frac * 100))}%)"
    return {"relu": "ReLU", "elu": "ELU", "gelu": "GELU"}[name]


def _group(rows: Sequence[TrialRow]) -> dict[tuple[int, str, float | None], list[TrialRow]]:
    grouped: dict[tuple[int, str, float | None], list[TrialRow]] = {}
    for row in rows:
        grouped.setdefault((row.proportion, row.model, row.bootstrap), []).append(row)
    return grouped


def _markdown_table(title: str, meta: Sequence[str], header: Sequence[str],
                    body: Sequence[Sequence[str]]) -> str:
    lines = [f"# {title}", ""]
    lines += [line.lstrip("# ") for line in meta]
    lines.append("")
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "|".join(["---"] * len(header)) + "|")
    for row in body:
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def _pct(value: float | None) -> str:
    return "-" if value is None else f"{100.0 * value:.2f}%"


def write_reports(rows: Sequence[TrialRow], out_dir: str | Path, meta: Sequence[str]) -> list[Path]:
    """Render aggregate tables, the F2 CSV, and the F2 chart from trial rows."""
    if not rows:
        raise ValueError("no trial rows to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grouped = _group(rows)
    order = _model_order(rows)
    proportions = sorted({row.proportion for row in rows})
    written: list[Path] = []

    def cell_rows(proportion: int, key: tuple[str, float | None]) -> list[TrialRow]:
        return grouped.get((proportion, key[0], key[1]), [])

    header = ["Data proportion"] + [_display_name(key) for key in order]
    acc_mean_body = []
    acc_std_body = []
    for proportion in proportions:
        mean_cells = [str(proportion)]
        std_cells = [str(proportion)]
        for key in order:
            cell = cell_rows(proportion, key)
            if cell:
                agg = aggregate([row.accuracy for row in cell])
                mean_cells.append(_pct(agg.mean))
                std_cells.append(_pct(agg.std))
            else:
                mean_cells.append("-")
                std_cells.append("-")
        acc_mean_body.append(mean_cells)
        acc_std_body.append(std_cells)

    path = out_dir / "accuracy_mean.md"
    path.write_text(
        _markdown_table("Mean test accuracy", meta, header, acc_mean_body), encoding="utf-8"
    )
    written.append(path)
    path = out_dir / "accuracy_std.md"
    path.write_text(
        _markdown_table(
            "Standard deviation of test accuracy", meta, header, acc_std_body
        ),
        encoding="utf-8",
    )
    written.append(path)

    for proportion in proportions:
        body = []
        for label in Label:
            cells = [label.name]
            for key in order:
                cell = cell_rows(proportion, key)
                if cell:
                    agg = aggregate([row.f1[int(label)] for row in cell])
                    cells.append(_pct(agg.mean))
                else:
                    cells.append("-")
            body.append(cells)
        path = out_dir / f"f1_prop{proportion}.md"
        path.write_text(
            _markdown_table(
                f"Mean F1 score per class, data proportion {proportion}",
                meta,
                ["Label"] + [_display_name(key) for key in order],
                body,
            ),
            encoding="utf-8",
        )
        written.append(path)

    f2_table: dict[int, list[tuple[tuple[str, float | None], float]]] = {}
    for proportion in proportions:
        entries = []
        for key in order:
            cell = cell_rows(proportion, key)
            if cell:
                entries.append((key, aggregate([row.f2_f1 for row in cell]).mean))
        f2_table[proportion] = entries

    path = out_dir / "f2_comparison.csv"
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for line in meta:
            handle.write(line + "\n")
        handle.write("proportion,model,bootstrap,f2_F1_mean\n")
        for proportion in proportions:
            for (name, frac), value in f2_table[proportion]:
                handle.write(f"{proportion},{name},{_fmt_bootstrap(frac)},{value!r}\n")
    written.append(path)

    path = out_dir / "f2_comparison.svg"
    emit_f2_chart(f2_table, path)
    written.append(path)
    return written


_BAR_COLORS = {
    ("relu", None): "#4c72b0",
    ("elu", None): "#dd8452",
    ("gelu", None): "#55a868",
    (ENSEMBLE_MODEL, 0.7): "#c44e52",
    (ENSEMBLE_MODEL, 0.8): "#8172b3",
    (ENSEMBLE_MODEL, 0.9): "#937860",
}
_FALLBACK_COLOR = "#64b5cd"


def emit_f2_chart(
    f2_table: dict[int, list[tuple[tuple[str, float | None], float]]],
    path: str | Path,
) -> None:
    """Write a grouped-bar SVG: one group per proportion, one bar per model.

    The y axis spans 0-100%. Each bar carries data-* attributes with its
    model, proportion, and raw fractional value so reports can be checked by
    parsing the file. The output is plain static SVG, byte-deterministic.
    """
    if not f2_table or all(not entries for entries in f2_table.values()):
        raise ValueError("empty F2 report")

    proportions = sorted(f2_table)
    n_models = max(len(entries) for entries in f2_table.values())
    bar_w, bar_gap, group_gap = 26, 6, 40
    group_w = n_models * (bar_w + bar_gap) - bar_gap
    margin_l, margin_r, margin_t, margin_b = 64, 20, 36, 76
    plot_h = 280.0
    width = margin_l + len(proportions) * (group_w + group_gap) + margin_r
    height = margin_t + plot_h + margin_b
    baseline = margin_t + plot_h

    parts: list[str] = []
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}" font-family="sans-serif" font-size="11">'
    )
    parts.append(
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">'
        "F2 score of class F1 by model and data proportion</text>"
    )
    for tick in range(0, 101, 20):
        y = baseline - plot_h * tick / 100.0
        parts.append(
            f'<line x1="{margin_l}" y1="{y:.2f}" x2="{width - margin_r:.0f}" y2="{y:.2f}" '
            'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{margin_l - 6}" y="{y + 4:.2f}" text-anchor="end">{tick}%</text>'
        )
    parts.append(
        f'<line x1="{margin_l}" y1="{baseline:.2f}" x2="{width - margin_r:.0f}" '
        f'y2="{baseline:.2f}" stroke="#333333" stroke-width="1"/>'
    )

    legend_keys: list[tuple[str, float | None]] = []
    for group_index, proportion in enumerate(proportions):
        group_x = margin_l + group_gap / 2 + group_index * (group_w + group_gap)
        for bar_index, (key, value) in enumerate(f2_table[proportion]):
            if key not in legend_keys:
                legend_keys.append(key)
            x = group_x + bar_index * (bar_w + bar_gap)
            bar_h = plot_h * max(0.0, min(1.0, value))
            color = _BAR_COLORS.get(key, _FALLBACK_COLOR)
            name, frac = key
            parts.append(
                f'<rect x="{x:.2f}" y="{baseline - bar_h:.2f}" width="{bar_w}" '
                f'height="{bar_h:.2f}" fill="{color}" data-model="{name}" '
                f'data-bootstrap="{_fmt_bootstrap(frac)}" data-proportion="{proportion}" '
                f'data-value="{value!r}"/>'
            )
        parts.append(
            f'<text x="{group_x + group_w / 2:.2f}" y="{baseline + 16:.2f}" '
            f'text-anchor="middle">proportion {proportion}</text>'
        )

    legend_y = baseline + 36
    legend_x = float(margin_l)
    for key in legend_keys:
        color = _BAR_COLORS.get(key, _FALLBACK_COLOR)
        label = _display_name(key)
        parts.append(
            f'<rect x="{legend_x:.2f}" y="{legend_y - 9:.2f}" width="10" height="10" fill="{color}"/>'
        )
        parts.append(f'<text x="{legend_x + 14:.2f}" y="{legend_y:.2f}">{label}</text>')
        legend_x += 14 + 7.2 * len(label) + 16
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


def run_experiment(
    cfg: ExperimentConfig,
    base_arch: MlpConfig | None = None,
    base_train: TrainConfig | None = None,
    jobs: int = 1,
) -> ExperimentSummary:
    """Run the full matrix and write all report files under cfg.output_dir.

    ``base_arch`` and ``base_train`` default to the standard architecture and
    training settings; overriding them (smaller nets, fewer epochs) is meant
    for quick runs and CI. ``jobs`` > 1 runs cells in parallel processes;
    results are identical either way because each cell derives its own seeds.
    """
    base_arch = base_arch if base_arch is not None else MlpConfig()
    base_train = base_train if base_train is not None else TrainConfig()
    records, thresholds = _prepare_records(cfg)

    tasks = [
        (records, cfg, base_arch, base_train, proportion, trial)
        for proportion in sorted(cfg.proportions)
        for trial in range(cfg.trials)
    ]
    results: dict[tuple[int, int], list[TrialRow]] = {}
    diverged: list[tuple[int, int, str]] = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_cell_task, tasks))
    else:
        outcomes = [_run_cell_task(task) for task in tasks]
    for proportion, trial, rows, error in outcomes:
        if error is None:
            results[(proportion, trial)] = rows
        else:
            diverged.append((proportion, trial, error))

    all_rows: list[TrialRow] = []
    for key in sorted(results):
        all_rows.extend(results[key])
    if not all_rows:
        raise AllTrialsDivergedError(
            f"all {len(tasks)} cells diverged; first: {diverged[0][2]}"
        )

    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = _meta_lines(cfg)
    write_trials_csv(all_rows, out_dir / "trials.csv", meta)
    write_reports(all_rows, out_dir, meta)
    if diverged:
        print(f"warning: {len(diverged)} of {len(tasks)} cells diverged and were excluded")
        for proportion, trial, message in diverged:
            print(f"  proportion {proportion}, trial {trial}: {message}")
    return ExperimentSummary(
        rows=all_rows, diverged=diverged, output_dir=out_dir, thresholds=thresholds
    )
