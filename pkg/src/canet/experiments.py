"""Synthetic end-to-end runs shared by scripts/ and the acceptance suite."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .data import Segment, SyntheticSpec, WindowSet, burst_mask, make_windows, split_by_segment, synthesize_segments
from .models import ModelParams, predict_proba, project_windows, forward
from .train import History, TrainConfig, fit

TEST_FRACTION = 22 / 152


@dataclass
class SyntheticRun:
    spec: SyntheticSpec
    config: TrainConfig
    params: ModelParams
    history: History
    train: WindowSet
    test: WindowSet
    segments: dict[str, Segment]
    seconds: float

    @property
    def test_accuracy(self) -> float:
        return self.history.final["accuracy"]


def synthetic_run(spec: SyntheticSpec, config: TrainConfig, test_fraction: float = TEST_FRACTION, callback=None) -> SyntheticRun:
    """Generate, split by segment (seeded by ``config.seed``), window, train.

    ``seconds`` covers everything from generation to the final evaluation.
    """
    start = time.perf_counter()
    segments = synthesize_segments(spec)
    train_segs, test_segs = split_by_segment(segments, test_fraction, config.seed)
    train, test = make_windows(train_segs), make_windows(test_segs)
    params, history = fit(config, train, test, callback=callback)
    return SyntheticRun(
        spec.resolved(), config, params, history, train, test, {s.id: s for s in segments},
        time.perf_counter() - start,
    )


def seeded(spec: SyntheticSpec, config: TrainConfig, seed: int) -> tuple[SyntheticSpec, TrainConfig]:
    return replace(spec, seed=seed), replace(config, seed=seed)


@dataclass
class BurstContrast:
    burst_mean: float  # mean temporal attention on burst frames
    rest_mean: float  # ... and on the other frames of the same windows
    windows: int

    @property
    def localized(self) -> bool:
        return self.burst_mean > self.rest_mean


def burst_attention_contrast(run: SyntheticRun, windows: WindowSet | None = None, batch_size: int = 256) -> BurstContrast:
    """Temporal attention of the informative component on burst versus
    non-burst frames, pooled over every burst-carrying window."""
    windows = run.test if windows is None else windows
    column = run.params.component_names.index(run.spec.informative_component)
    on, off = [], []
    projected = project_windows(run.params, windows)
    for s in range(0, len(windows), batch_size):
        idx = np.arange(s, min(s + batch_size, len(windows)))
        _, attn = forward(run.params, projected.subset(idx))
        for row, i in enumerate(idx):
            w = windows[int(i)]
            mask = burst_mask(w, run.segments[w.segment_id].meta.get("bursts", []))
            if mask.any():
                a = attn.temporal[row, :, column]
                on.append(a[mask])
                off.append(a[~mask])
    if not on:
        raise ValueError("no window contains a burst")
    return BurstContrast(float(np.concatenate(on).mean()), float(np.concatenate(off).mean()), len(on))


def accuracy(params: ModelParams, windows: WindowSet) -> float:
    return float((predict_proba(params, windows).argmax(axis=1) == windows.labels).mean())
