"""Late fusion: hard-label voting over several trained models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import WindowSet
from .models import ModelParams, check_registry, predict_proba
from .train import Metrics, metrics_from_predictions

MIN_VOTERS = 3


class PanelError(ValueError):
    pass


@dataclass(frozen=True)
class Vote:
    model_id: str
    prediction: int
    proba: tuple[float, ...]


@dataclass(frozen=True)
class VotePanel:
    """One window's votes. Needs at least three voters sharing a class count."""

    votes: tuple[Vote, ...]

    def __post_init__(self):
        if len(self.votes) < MIN_VOTERS:
            raise PanelError(f"late fusion needs at least triple predictions, got {len(self.votes)} voter(s)")
        sizes = {len(v.proba) for v in self.votes}
        if len(sizes) != 1:
            raise PanelError(f"voters disagree on the class count: {sorted(sizes)}")
        n = sizes.pop()
        for v in self.votes:
            if not 0 <= v.prediction < n:
                raise PanelError(f"voter {v.model_id!r} predicts class {v.prediction} of {n}")

    @property
    def n_classes(self) -> int:
        return len(self.votes[0].proba)

    @classmethod
    def from_probabilities(cls, probas: Sequence[Sequence[float]], model_ids: Sequence[str] | None = None) -> "VotePanel":
        """Each voter predicts the argmax of its own probability vector."""
        ids = list(model_ids) if model_ids is not None else [f"m{i}" for i in range(len(probas))]
        return cls(tuple(Vote(i, int(np.argmax(p)), tuple(float(x) for x in p)) for i, p in zip(ids, probas)))


def majority_vote(panel: VotePanel) -> int:
    """Most votes wins; ties go to the larger summed probability, then to
    the lowest class index."""
    n = panel.n_classes
    counts = np.zeros(n, dtype=np.int64)
    mass = np.zeros(n)
    for v in panel.votes:
        counts[v.prediction] += 1
        mass += np.asarray(v.proba)
    tied = np.flatnonzero(counts == counts.max())
    if len(tied) == 1:
        return int(tied[0])
    best = mass[tied].max()
    return int(tied[mass[tied] == best][0])


def fused_predictions(models: Sequence[ModelParams], windows: WindowSet) -> np.ndarray:
    if len(models) < MIN_VOTERS:
        raise PanelError(f"late fusion needs at least triple predictions, got {len(models)} model(s)")
    for m in models:
        check_registry(m, windows.registry)
    probas = [predict_proba(m, windows) for m in models]
    ids = [f"m{i}" for i in range(len(models))]
    return np.array(
        [majority_vote(VotePanel.from_probabilities([p[w] for p in probas], ids)) for w in range(len(windows))],
        dtype=np.int64,
    )


def late_fuse_evaluate(models: Sequence[ModelParams], windows: WindowSet) -> Metrics:
    if len(windows) == 0:
        raise ValueError("cannot evaluate on an empty window set")
    preds = fused_predictions(models, windows)
    return metrics_from_predictions(preds, windows.labels, models[0].dims.N)
