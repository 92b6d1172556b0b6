"""Ingestion and preparation of coal pillar case histories.

Raw records (pillar geometry plus a field outcome, intact or failed) are
turned into five-feature classification records: a safety factor is computed
from the geometry, the two-way outcome is expanded into a four-way label by
comparing the safety factor against per-outcome thresholds, minority classes
are rebalanced with SMOTE, and the result is split into standardized
train / validation / test partitions.

Feature order is fixed everywhere:
``(pillar_width, mining_height, bord_width, depth, ratio)`` with
``ratio = pillar_width / mining_height``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from enum import Enum, IntEnum
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

COAL_STRENGTH_MPA = 5.47      # strength of the coal material, MPa
WIDTH_EXPONENT = 0.8          # exponent on pillar width in the strength formula
OVERBURDEN_KPA_PER_M = 25.0   # overburden density times gravity, kPa per meter of depth
KPA_PER_MPA = 1000.0

CSV_HEADER = ("depth_m", "mining_height_m", "bord_width_m", "pillar_width_m", "outcome")
FEATURE_NAMES = ("pillar_width", "mining_height", "bord_width", "depth", "ratio")
N_FEATURES = 5
N_CLASSES = 4
SMOTE_DEFAULT_K = 5


class ParseError(ValueError):
    """Malformed input data: bad number, unknown outcome, or missing column."""


class InsufficientDataError(ValueError):
    """An operation needs more records per class than were supplied."""


class ConfigurationError(ValueError):
    """Invalid combination of configuration values."""


class Outcome(Enum):
    INTACT = "intact"
    FAILED = "failed"


class Label(IntEnum):
    """Four-way stability label; the integer value is the class code."""

    F0 = 0  # failed, safety factor agrees
    F1 = 1  # failed, safety factor disagrees
    I0 = 2  # intact, safety factor agrees
    I1 = 3  # intact, safety factor disagrees


def encode_label(label: Label) -> int:
    return int(label)


def decode_label(code: int) -> Label:
    return Label(code)


@dataclass(frozen=True)
class RawRecord:
    """One mining case as ingested: geometry in meters plus the field outcome."""

    depth_m: float
    mining_height_m: float
    bord_width_m: float
    pillar_width_m: float
    outcome: Outcome

    def validate(self) -> None:
        if not self.depth_m > 0:
            raise ValueError("depth_m must be > 0")
        if not self.mining_height_m > 0:
            raise ValueError("mining_height_m must be > 0")
        if not self.pillar_width_m > 0:
            raise ValueError("pillar_width_m must be > 0")
        if self.bord_width_m < 0:
            raise ValueError("bord_width_m must be >= 0")


@dataclass(eq=False)
class PillarRecord:
    """A labeled case: feature vector, safety factor, label, and class code."""

    features: np.ndarray  # (pillar_width, mining_height, bord_width, depth, ratio)
    sf: float
    label: Label
    class_code: int


@dataclass(frozen=True)
class Thresholds:
    """Safety-factor boundaries separating agreeing from disagreeing labels."""

    t_failed: float  # largest SF at which a failed pillar still counts as F0
    t_intact: float  # smallest SF at which an intact pillar still counts as I0
    alpha: float = 1.0

    def __post_init__(self) -> None:
        if not self.t_failed > 0:
            raise ValueError("t_failed must be > 0")
        if not self.t_intact > 0:
            raise ValueError("t_intact must be > 0")


#: Default boundaries; recompute from data with :func:`compute_thresholds`.
PUBLISHED_THRESHOLDS = Thresholds(t_failed=2.48, t_intact=1.42, alpha=1.0)


def pillar_strength(pillar_width_m: float, mining_height_m: float) -> float:
    """Pillar strength in MPa: 5.47 * w^0.8 / h."""
    if not pillar_width_m > 0:
        raise ValueError("pillar_width_m must be > 0")
    if not mining_height_m > 0:
        raise ValueError("mining_height_m must be > 0")
    return COAL_STRENGTH_MPA * pillar_width_m**WIDTH_EXPONENT / mining_height_m


def pillar_stress(depth_m: float, pillar_width_m: float, bord_width_m: float) -> float:
    """Average pillar stress in MPa: 25 * H * C^2 / w^2 kPa, C = w + bord.

    The kPa result is divided by 1000 so strength and stress share units.
    """
    if not depth_m > 0:
        raise ValueError("depth_m must be > 0")
    if not pillar_width_m > 0:
        raise ValueError("pillar_width_m must be > 0")
    if bord_width_m < 0:
        raise ValueError("bord_width_m must be >= 0")
    center_spacing = pillar_width_m + bord_width_m
    stress_kpa = OVERBURDEN_KPA_PER_M * depth_m * center_spacing**2 / pillar_width_m**2
    return stress_kpa / KPA_PER_MPA


def safety_factor(record: RawRecord) -> float:
    """Strength over stress, both in MPa."""
    strength = pillar_strength(record.pillar_width_m, record.mining_height_m)
    stress = pillar_stress(record.depth_m, record.pillar_width_m, record.bord_width_m)
    return strength / stress


def compute_thresholds(
    outcome_sf_pairs: Iterable[tuple[Outcome, float]],
    alpha: float = 1.0,
    sample_std: bool = True,
    intact_plus_std: bool = False,
) -> Thresholds:
    """Derive per-outcome safety-factor boundaries from data.

    t_failed is mean + alpha*std over failed cases; t_intact is
    mean - alpha*std over intact cases (flip the sign with
    ``intact_plus_std``). ``sample_std`` selects the n-1 divisor.
    """
    grouped: dict[Outcome, list[float]] = {Outcome.FAILED: [], Outcome.INTACT: []}
    for outcome, sf in outcome_sf_pairs:
        grouped[outcome].append(sf)
    for outcome, values in grouped.items():
        if len(values) < 2:
            raise InsufficientDataError(
                f"need at least 2 {outcome.value} records to compute thresholds, "
                f"got {len(values)}"
            )
    ddof = 1 if sample_std else 0
    failed = np.asarray(grouped[Outcome.FAILED], dtype=float)
    intact = np.asarray(grouped[Outcome.INTACT], dtype=float)
    t_failed = float(failed.mean() + alpha * failed.std(ddof=ddof))
    sign = 1.0 if intact_plus_std else -1.0
    t_intact = float(intact.mean() + sign * alpha * intact.std(ddof=ddof))
    return Thresholds(t_failed=t_failed, t_intact=t_intact, alpha=alpha)


def expand_label(outcome: Outcome, sf: float, thresholds: Thresholds) -> Label:
    """Map (outcome, safety factor) to the four-way label.

    Failed cases are F0 when sf <= t_failed, else F1; intact cases are I0
    when sf >= t_intact, else I1.
    """
    if not sf > 0:
        raise ValueError("sf must be > 0")
    if outcome is Outcome.FAILED:
        return Label.F0 if sf <= thresholds.t_failed else Label.F1
    return Label.I0 if sf >= thresholds.t_intact else Label.I1


def label_record(raw: RawRecord, thresholds: Thresholds) -> PillarRecord:
    """Compute features, safety factor, and expanded label for one raw case."""
    raw.validate()
    sf = safety_factor(raw)
    label = expand_label(raw.outcome, sf, thresholds)
    features = np.array(
        [
            raw.pillar_width_m,
            raw.mining_height_m,
            raw.bord_width_m,
            raw.depth_m,
            raw.pillar_width_m / raw.mining_height_m,
        ],
        dtype=float,
    )
    return PillarRecord(features=features, sf=sf, label=label, class_code=int(label))


def label_records(
    raws: Sequence[RawRecord], thresholds: Thresholds
) -> list[PillarRecord]:
    return [label_record(raw, thresholds) for raw in raws]


def parse_csv(source: str | Path | IO[str] | IO[bytes]) -> list[RawRecord]:
    """Read raw case records from CSV.

    Expects the exact header ``depth_m,mining_height_m,bord_width_m,
    pillar_width_m,outcome``; outcome tokens are case-insensitive ``intact``
    or ``failed``. Errors name the offending 1-based data row and column.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8", newline="") as handle:
            return parse_csv(handle)
    if isinstance(source, io.BufferedIOBase) or (
        hasattr(source, "read") and isinstance(source.read(0), bytes)
    ):
        source = io.TextIOWrapper(source, encoding="utf-8", newline="")

    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty input: missing header row") from None
    header = [column.strip() for column in header]
    if tuple(header) != CSV_HEADER:
        missing = [column for column in CSV_HEADER if column not in header]
        if missing:
            raise ParseError(f"missing column {missing[0]!r} in header")
        raise ParseError(
            f"unexpected header {header!r}; expected {','.join(CSV_HEADER)}"
        )

    records: list[RawRecord] = []
    for row_number, row in enumerate(reader, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(CSV_HEADER):
            raise ParseError(
                f"expected {len(CSV_HEADER)} columns at row {row_number}, got {len(row)}"
            )
        values: dict[str, float] = {}
        for column, cell in zip(CSV_HEADER[:4], row[:4]):
            try:
                values[column] = float(cell)
            except ValueError:
                raise ParseError(
                    f"invalid number for {column} at row {row_number}: {cell.strip()!r}"
                ) from None
        token = row[4].strip().lower()
        try:
            outcome = Outcome(token)
        except ValueError:
            raise ParseError(f"unknown outcome {row[4].strip()!r} at row {row_number}") from None
        record = RawRecord(
            depth_m=values["depth_m"],
            mining_height_m=values["mining_height_m"],
            bord_width_m=values["bord_width_m"],
            pillar_width_m=values["pillar_width_m"],
            outcome=outcome,
        )
        try:
            record.validate()
        except ValueError as exc:
            raise ParseError(f"{exc} at row {row_number}") from None
        records.append(record)
    return records


def write_raw_csv(records: Sequence[RawRecord], path: str | Path) -> None:
    """Write raw records in the ingestion CSV schema."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(",".join(CSV_HEADER) + "\n")
        for record in records:
            handle.write(
                f"{record.depth_m:.10g},{record.mining_height_m:.10g},"
                f"{record.bord_width_m:.10g},{record.pillar_width_m:.10g},"
                f"{record.outcome.value}\n"
            )


def write_labeled_csv(
    raws: Sequence[RawRecord],
    records: Sequence[PillarRecord],
    path: str | Path,
) -> None:
    """Write the labeled-output CSV: input columns plus ratio, sf, label, code.

    ``raws`` and ``records`` must be aligned by index. The safety factor is
    printed with 6 significant digits.
    """
    if len(raws) != len(records):
        raise ValueError("raws and records must have equal length")
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(",".join(CSV_HEADER) + ",ratio,sf,label,class_code\n")
        for raw, record in zip(raws, records):
            ratio = raw.pillar_width_m / raw.mining_height_m
            handle.write(
                f"{raw.depth_m:.10g},{raw.mining_height_m:.10g},"
                f"{raw.bord_width_m:.10g},{raw.pillar_width_m:.10g},"
                f"{raw.outcome.value},{ratio:.6g},{record.sf:.6g},"
                f"{record.label.name},{record.class_code}\n"
            )


def class_counts(records: Sequence[PillarRecord]) -> dict[Label, int]:
    counts = {label: 0 for label in Label}
    for record in records:
        counts[record.label] += 1
    return counts


def feature_matrix(records: Sequence[PillarRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Stack records into (features [n,5], class codes [n])."""
    X = np.array([record.features for record in records], dtype=float)
    y = np.array([record.class_code for record in records], dtype=np.int64)
    return X, y


def smote(
    records: Sequence[PillarRecord],
    k: int = SMOTE_DEFAULT_K,
    seed: int = 0,
) -> list[PillarRecord]:
    """Oversample every class up to the majority-class count.

    Each synthetic record interpolates between a random class member ``x``
    and one of its ``k`` nearest same-class neighbors ``x_nn`` (Euclidean
    distance on the raw feature vectors): ``x + u * (x_nn - x)`` with ``u``
    uniform on [0, 1]. ``k`` is clamped to class size - 1 for tiny classes.

    Originals are returned unchanged (input order) with synthetics appended.
    Synthetic records inherit the class label; their safety factor is
    recomputed from the interpolated geometry columns for bookkeeping only,
    and the interpolated ratio column is kept as-is.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    groups: dict[int, list[PillarRecord]] = {}
    for record in records:
        groups.setdefault(record.class_code, []).append(record)
    for code, members in groups.items():
        if len(members) < 2:
            raise InsufficientDataError(
                f"class {Label(code).name} has {len(members)} record(s); "
                "SMOTE needs at least 2 per class"
            )

    target = max(len(members) for members in groups.values())
    out = list(records)
    rng = np.random.default_rng(seed)
    for code in sorted(groups):
        members = groups[code]
        need = target - len(members)
        if need == 0:
            continue
        n = len(members)
        k_eff = min(k, n - 1)
        X = np.array([member.features for member in members], dtype=float)
        distances = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=2)
        np.fill_diagonal(distances, np.inf)
        neighbors = np.argsort(distances, axis=1, kind="stable")[:, :k_eff]
        for _ in range(need):
            i = int(rng.integers(n))
            j = int(neighbors[i, int(rng.integers(k_eff))])
            u = float(rng.random())
            features = X[i] + u * (X[j] - X[i])
            sf = safety_factor(
                RawRecord(
                    depth_m=float(features[3]),
                    mining_height_m=float(features[1]),
                    bord_width_m=float(features[2]),
                    pillar_width_m=float(features[0]),
                    outcome=Outcome.FAILED if code < 2 else Outcome.INTACT,
                )
            )
            out.append(
                PillarRecord(
                    features=features,
                    sf=sf,
                    label=Label(code),
                    class_code=code,
                )
            )
    return out


@dataclass(frozen=True)
class SplitSpec:
    """Partition fractions and the seed driving the stratified shuffle."""

    train_frac: float
    val_frac: float
    test_frac: float
    seed: int = 0

    def __post_init__(self) -> None:
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(f < 0 for f in fracs):
            raise ConfigurationError("split fractions must be >= 0")
        if not self.train_frac > 0:
            raise ConfigurationError("train_frac must be > 0")
        if not self.test_frac > 0:
            raise ConfigurationError("test_frac must be > 0")
        if abs(sum(fracs) - 1.0) > 1e-12:
            raise ConfigurationError("split fractions must sum to 1")


@dataclass
class DatasetBundle:
    """Partitioned dataset plus the feature scaling fitted on train only."""

    train: list[PillarRecord]
    validation: list[PillarRecord] | None
    test: list[PillarRecord]
    feature_means: np.ndarray
    feature_stds: np.ndarray


def _allocate(n: int, fracs: Sequence[float]) -> list[int]:
    """Largest-remainder allocation of n items; each count is floor or ceil."""
    quotas = [f * n for f in fracs]
    counts = [int(np.floor(q)) for q in quotas]
    leftover = n - sum(counts)
    by_remainder = sorted(range(len(fracs)), key=lambda i: quotas[i] - counts[i], reverse=True)
    for i in by_remainder[:leftover]:
        counts[i] += 1
    return counts


def stratified_partition(
    records: Sequence[PillarRecord], spec: SplitSpec
) -> tuple[list[PillarRecord], list[PillarRecord], list[PillarRecord]]:
    """Shuffle each class independently and slice it by the spec fractions."""
    groups: dict[int, list[int]] = {}
    for index, record in enumerate(records):
        groups.setdefault(record.class_code, []).append(index)

    rng = np.random.default_rng(spec.seed)
    train_idx: list[int] = []
    val_idx: list[int] = []
    test_idx: list[int] = []
    for code in sorted(groups):
        indices = np.array(groups[code])
        indices = indices[rng.permutation(len(indices))]
        n_train, n_val, _ = _allocate(
            len(indices), (spec.train_frac, spec.val_frac, spec.test_frac)
        )
        train_idx.extend(indices[:n_train])
        val_idx.extend(indices[n_train : n_train + n_val])
        test_idx.extend(indices[n_train + n_val :])

    if spec.val_frac > 0:
        for name, part in (("train", train_idx), ("validation", val_idx), ("test", test_idx)):
            present = {records[i].class_code for i in part}
            missing = set(groups) - present
            if missing:
                raise ConfigurationError(
                    f"class {Label(min(missing)).name} is empty in the {name} partition; "
                    "use a larger dataset or different fractions"
                )

    train = [records[i] for i in sorted(train_idx)]
    val = [records[i] for i in sorted(val_idx)]
    test = [records[i] for i in sorted(test_idx)]
    return train, val, test


def _rescale(records: Sequence[PillarRecord], means: np.ndarray, stds: np.ndarray) -> list[PillarRecord]:
    return [replace(r, features=(r.features - means) / stds) for r in records]


def standardize_partitions(
    train: Sequence[PillarRecord],
    validation: Sequence[PillarRecord],
    test: Sequence[PillarRecord],
    standardize: bool = True,
) -> DatasetBundle:
    """Fit z-score scaling on train and apply it to every partition.

    Constant feature dimensions keep their raw scale (std treated as 1).
    With ``standardize=False`` the identity transform is recorded instead.
    """
    if standardize:
        X_train, _ = feature_matrix(train)
        means = X_train.mean(axis=0)
        stds = X_train.std(axis=0)
        stds = np.where(stds == 0.0, 1.0, stds)
    else:
        means = np.zeros(N_FEATURES)
        stds = np.ones(N_FEATURES)
    return DatasetBundle(
        train=_rescale(train, means, stds),
        validation=_rescale(validation, means, stds) if validation else None,
        test=_rescale(test, means, stds),
        feature_means=means,
        feature_stds=stds,
    )


def split(
    records: Sequence[PillarRecord],
    spec: SplitSpec,
    standardize: bool = True,
) -> DatasetBundle:
    """Stratified split plus train-fitted standardization in one step."""
    train, val, test = stratified_partition(records, spec)
    return standardize_partitions(train, val, test, standardize=standardize)
