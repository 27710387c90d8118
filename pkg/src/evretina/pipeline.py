"""Glue between event streams, spike tensors and training records."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .emulator import EmulatorConfig, emulate, pattern_bank_specs, synth_pattern_bank
from .events import POLARITY_MERGE, POLARITY_SPLIT, EventStream, denoise, downsample, window
from .training import TrainRecord


def stream_records(
    stream: EventStream,
    targets: np.ndarray,
    window_ms: float = 33.0,
    steps: int = 20,
    group: int = 0,
    hop_ms: float | None = None,
    start_us: int = 0,
    polarity: str = POLARITY_MERGE,
) -> list[TrainRecord]:
    """Cut ``stream`` into prediction windows paired with target rows.

    ``targets`` is either one vector (same target for every window) or
    ``[n_windows, n_cells]``. ``hop_ms`` defaults to the window span
    (back-to-back windows).
    """
    targets = np.asarray(targets, dtype=np.float64)
    span_us = steps * int(round(window_ms * 1000))
    hop_us = span_us if hop_ms is None else int(round(hop_ms * 1000))
    if hop_us <= 0:
        raise ValueError("hop_ms must be positive")
    n = available_windows(stream, window_ms, steps, hop_ms, start_us)
    if targets.ndim == 2:
        n = min(n, len(targets))
    out = []
    for k in range(n):
        y = targets if targets.ndim == 1 else targets[k]
        out.append(TrainRecord(window(stream, window_ms, steps, start_us + k * hop_us, polarity), y, group))
    return out


def available_windows(
    stream: EventStream, window_ms: float, steps: int, hop_ms: float | None = None, start_us: int = 0
) -> int:
    """Windows that fit the stream, allowing the last one to end at most one
    step past the final event (same tolerance as :func:`window`)."""
    w_us = int(round(window_ms * 1000))
    span_us = steps * w_us
    hop_us = span_us if hop_ms is None else int(round(hop_ms * 1000))
    room = stream.duration_us + w_us - start_us - span_us
    return 0 if room < 0 else room // hop_us + 1


def polarity_for(channels: int) -> str:
    if channels not in (1, 2):
        raise ValueError(f"input must have 1 or 2 channels, got {channels}")
    return POLARITY_MERGE if channels == 1 else POLARITY_SPLIT


def prepare_stream(stream: EventStream, input_hw: tuple[int, int], denoise_events: bool = True) -> EventStream:
    if denoise_events:
        stream = denoise(stream)
    return downsample(stream, input_hw[1], input_hw[0])


@dataclass
class SyntheticDataset:
    records: list[TrainRecord]
    scene_targets: np.ndarray  # [n_scenes, n_cells]
    streams: list[EventStream]


def scene_target_rates(n_scenes: int, n_cells: int, seed: int, low: float = 0.5, high: float = 5.0) -> np.ndarray:
    """Per-scene expected spike counts; every cell gets a different value per scene."""
    rng = np.random.default_rng(seed)
    while True:
        t = rng.uniform(low, high, size=(n_scenes, n_cells))
        if n_scenes < 2 or (np.ptp(t, axis=0) > 0.1 * (high - low)).all():
            return t


def synthetic_dataset(
    n_scenes: int = 4,
    n_cells: int = 4,
    seed: int = 0,
    geometry: tuple[int, int] = (64, 64),
    input_hw: tuple[int, int] = (16, 16),
    duration_s: float = 6.6,
    fps: float = 200.0,
    window_ms: float = 33.0,
    steps: int = 20,
    hop_ms: float | None = None,
    emulator: EmulatorConfig = EmulatorConfig(),
) -> SyntheticDataset:
    """Emulated pattern-bank scenes, each labeled with its own target vector.

    Scene ``i`` becomes record group ``i`` so temporal validation splits hold
    out the tail of every scene.
    """
    scenes = synth_pattern_bank(n_scenes, geometry, seed, duration_s=duration_s, fps=fps)
    targets = scene_target_rates(n_scenes, n_cells, seed)
    records, streams = [], []
    for i, frames in enumerate(scenes):
        ev = prepare_stream(emulate(frames, emulator), input_hw)
        streams.append(ev)
        records += stream_records(ev, targets[i], window_ms, steps, group=i, hop_ms=hop_ms)
    return SyntheticDataset(records, targets, streams)


__all__ = [
    "SyntheticDataset",
    "pattern_bank_specs",
    "prepare_stream",
    "scene_target_rates",
    "stream_records",
    "synthetic_dataset",
]
