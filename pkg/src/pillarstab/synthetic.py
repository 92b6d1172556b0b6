"""Synthetic stand-in dataset generator.

Draws pillar geometry uniformly from plausible (non-physical) ranges and
rejection-samples until each four-way class reaches its target count. The
assigned outcome together with the recomputed safety factor always satisfies
the target label under the supplied thresholds, so the generated data
exercises the full labeling pipeline at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data_pipeline import (
    Label,
    Outcome,
    PUBLISHED_THRESHOLDS,
    RawRecord,
    Thresholds,
    expand_label,
    safety_factor,
)

#: Uniform sampling ranges, meters: (low, high).
PILLAR_WIDTH_RANGE = (2.0, 25.0)
MINING_HEIGHT_RANGE = (1.0, 6.0)
BORD_WIDTH_RANGE = (4.0, 8.0)
DEPTH_RANGE = (20.0, 250.0)

#: Pre-balancing class sizes of the reference case-history corpus.
DEFAULT_COUNTS = {Label.F0: 70, Label.F1: 16, Label.I0: 312, Label.I1: 25}

MAX_DRAWS_PER_CLASS = 10**6


class GenerationError(RuntimeError):
    """A class target was not reached within the draw budget."""


@dataclass
class SyntheticSpec:
    seed: int = 0
    counts: dict[Label, int] = field(default_factory=lambda: dict(DEFAULT_COUNTS))

    def __post_init__(self) -> None:
        if any(count < 0 for count in self.counts.values()):
            raise ValueError("class counts must be >= 0")


def _draw_candidate(rng: np.random.Generator) -> tuple[float, float, float, float]:
    return (
        float(rng.uniform(*PILLAR_WIDTH_RANGE)),
        float(rng.uniform(*MINING_HEIGHT_RANGE)),
        float(rng.uniform(*BORD_WIDTH_RANGE)),
        float(rng.uniform(*DEPTH_RANGE)),
    )


def generate_synthetic(
    spec: SyntheticSpec,
    thresholds: Thresholds = PUBLISHED_THRESHOLDS,
    max_draws_per_class: int = MAX_DRAWS_PER_CLASS,
) -> list[RawRecord]:
    """Generate raw records meeting the per-class targets, deterministically.

    Classes are filled in code order (F0, F1, I0, I1); records of one class
    are contiguous in the output.
    """
    rng = np.random.default_rng(spec.seed)
    records: list[RawRecord] = []
    for label in sorted(spec.counts, key=int):
        target = spec.counts[label]
        outcome = Outcome.FAILED if label in (Label.F0, Label.F1) else Outcome.INTACT
        produced = 0
        draws = 0
        while produced < target:
            if draws >= max_draws_per_class:
                raise GenerationError(
                    f"could not generate {target} {label.name} records within "
                    f"{max_draws_per_class} draws; geometry bounds too narrow"
                )
            draws += 1
            w, h, bord, depth = _draw_candidate(rng)
            candidate = RawRecord(
                depth_m=depth,
                mining_height_m=h,
                bord_width_m=bord,
                pillar_width_m=w,
                outcome=outcome,
            )
            if expand_label(outcome, safety_factor(candidate), thresholds) is label:
                records.append(candidate)
                produced += 1
    return records
