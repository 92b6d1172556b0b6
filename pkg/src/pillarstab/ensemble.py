"""Bagging over the three activation variants of the base network.

Each ensemble holds exactly three members in fixed order (ReLU, ELU, GELU),
trained independently on bootstrap resamples of the training partition.
Prediction is a majority vote; a three-way disagreement falls back to the
smallest class code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data_pipeline import DatasetBundle, PillarRecord
from .network import (
    Activation,
    DivergenceError,
    Mlp,
    MlpConfig,
    TrainConfig,
    init,
    load_mlp,
    predict,
    predict_batch,
    save_mlp,
    train,
)
from .seeds import TAG_BOOTSTRAP, TAG_INIT, TAG_SHUFFLE, mix64

MEMBER_ACTIVATIONS = (Activation.RELU, Activation.ELU, Activation.GELU)


@dataclass
class EnsembleConfig:
    bootstrap_frac: float
    base_train: TrainConfig
    base_arch: MlpConfig
    master_seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.bootstrap_frac <= 1:
            raise ValueError("bootstrap_frac must lie in (0, 1]")


@dataclass
class MemberProvenance:
    activation: Activation
    bootstrap_seed: int
    sample_size: int


@dataclass
class EnsembleModel:
    members: list[Mlp]  # fixed order: ReLU, ELU, GELU
    provenance: list[MemberProvenance]
    bootstrap_frac: float


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def bootstrap_sample(
    train: Sequence[PillarRecord], frac: float, seed: int
) -> list[PillarRecord]:
    """Draw round(frac * len(train)) records uniformly with replacement."""
    if not train:
        raise ValueError("cannot bootstrap from an empty training set")
    if not 0 < frac <= 1:
        raise ValueError("frac must lie in (0, 1]")
    size = _round_half_up(frac * len(train))
    rng = np.random.default_rng(seed)
    indices = rng.integers(0, len(train), size=size)
    return [train[i] for i in indices]


def majority_vote(preds: Sequence[int]) -> int:
    """Two or more agreeing votes win; a full disagreement returns the minimum."""
    a, b, c = preds
    if a == b or a == c:
        return a
    if b == c:
        return b
    return min(a, b, c)


def train_ensemble(bundle: DatasetBundle, cfg: EnsembleConfig) -> EnsembleModel:
    """Train the three members on independent bootstrap resamples.

    Member seeds are derived by mixing the config master seed with the member
    index, so members differ from each other but the whole ensemble is
    reproducible. Validation and test partitions are never resampled.
    """
    members: list[Mlp] = []
    provenance: list[MemberProvenance] = []
    for index, activation in enumerate(MEMBER_ACTIVATIONS):
        boot_seed = mix64(cfg.master_seed, TAG_BOOTSTRAP, index)
        sample = bootstrap_sample(bundle.train, cfg.bootstrap_frac, boot_seed)
        member_bundle = DatasetBundle(
            train=sample,
            validation=bundle.validation,
            test=bundle.test,
            feature_means=bundle.feature_means,
            feature_stds=bundle.feature_stds,
        )
        arch = replace(
            cfg.base_arch,
            activation=activation,
            init_seed=mix64(cfg.master_seed, TAG_INIT, index),
        )
        tc = replace(cfg.base_train, shuffle_seed=mix64(cfg.master_seed, TAG_SHUFFLE, index))
        model = init(arch)
        try:
            train(model, member_bundle, tc)
        except DivergenceError as exc:
            raise DivergenceError(f"{activation.value} member: {exc}") from exc
        members.append(model)
        provenance.append(
            MemberProvenance(
                activation=activation,
                bootstrap_seed=boot_seed,
                sample_size=len(sample),
            )
        )
    return EnsembleModel(members=members, provenance=provenance, bootstrap_frac=cfg.bootstrap_frac)


def ensemble_predict(model: EnsembleModel, features: np.ndarray) -> int:
    return majority_vote([predict(member, features) for member in model.members])


def ensemble_predict_batch(model: EnsembleModel, X: np.ndarray) -> np.ndarray:
    votes = np.stack([predict_batch(member, X) for member in model.members], axis=1)
    return np.array([majority_vote(row) for row in votes], dtype=np.int64)


def save_ensemble(
    model: EnsembleModel,
    directory: str | Path,
    feature_means: np.ndarray,
    feature_stds: np.ndarray,
) -> None:
    """Write one file per member plus a provenance manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for member, prov in zip(model.members, model.provenance):
        save_mlp(member, directory / f"{prov.activation.value}.npz", feature_means, feature_stds)
    manifest = {
        "format": "pillarstab-ensemble",
        "version": 1,
        "bootstrap_frac": model.bootstrap_frac,
        "members": [
            {
                "activation": prov.activation.value,
                "bootstrap_seed": prov.bootstrap_seed,
                "sample_size": prov.sample_size,
            }
            for prov in model.provenance
        ],
    }
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_ensemble(directory: str | Path) -> tuple[EnsembleModel, np.ndarray, np.ndarray]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("format") != "pillarstab-ensemble":
        raise ValueError(f"{directory} does not contain an ensemble manifest")
    members: list[Mlp] = []
    provenance: list[MemberProvenance] = []
    means = stds = None
    for entry in manifest["members"]:
        activation = Activation(entry["activation"])
        member, means, stds = load_mlp(directory / f"{activation.value}.npz")
        members.append(member)
        provenance.append(
            MemberProvenance(
                activation=activation,
                bootstrap_seed=int(entry["bootstrap_seed"]),
                sample_size=int(entry["sample_size"]),
            )
        )
    model = EnsembleModel(
        members=members,
        provenance=provenance,
        bootstrap_frac=float(manifest["bootstrap_frac"]),
    )
    return model, means, stds
