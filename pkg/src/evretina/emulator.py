"""Frame-sequence to DVS event conversion and synthetic test scenes.

The emulator follows the usual log-intensity contrast model: each pixel keeps
a reference log intensity and emits one event per threshold ``theta`` crossed,
with timestamps interpolated linearly between the two frames bracketing the
crossing.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EvretinaError
from .events import EventStream, read_pgm, write_pgm


class GeometryMismatch(EvretinaError, ValueError):
    pass


class DotOutOfBounds(EvretinaError, ValueError):
    pass


@dataclass(frozen=True)
class FrameSequence:
    frames: np.ndarray  # [N, H, W] float intensities, nominally 0..255
    fps: float

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim != 3:
            raise GeometryMismatch(f"frames must be [N, H, W], got shape {f.shape}")
        if f.shape[0] < 2:
            raise ValueError("a frame sequence needs at least 2 frames")
        if not self.fps > 0:
            raise ValueError("fps must be > 0")
        if (f < 0).any() or not np.isfinite(f).all():
            raise ValueError("intensities must be finite and non-negative")
        f.flags.writeable = False
        object.__setattr__(self, "frames", f)

    @classmethod
    def from_list(cls, frames: list[np.ndarray], fps: float) -> "FrameSequence":
        shapes = {np.shape(f) for f in frames}
        if len(shapes) > 1:
            raise GeometryMismatch(f"frames have differing shapes: {sorted(shapes)}")
        return cls(np.stack(frames), fps)

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def duration_us(self) -> int:
        return int(round((len(self.frames) - 1) * 1e6 / self.fps))


@dataclass(frozen=True)
class EmulatorConfig:
    contrast_threshold: float = 0.2
    log_eps: float = 1.0
    refractory_us: int = 100

    def __post_init__(self):
        if not self.contrast_threshold > 0:
            raise ValueError("contrast_threshold must be > 0")
        if not self.log_eps > 0:
            raise ValueError("log_eps must be > 0")
        if self.refractory_us < 0:
            raise ValueError("refractory_us must be >= 0")


def emulate(frames: FrameSequence, cfg: EmulatorConfig = EmulatorConfig()) -> EventStream:
    log_frames = np.log(frames.frames + cfg.log_eps)
    return emulate_log(log_frames, frames.fps, cfg.contrast_threshold, cfg.refractory_us)


def emulate_log(
    log_frames: np.ndarray, fps: float, theta: float, refractory_us: int = 0
) -> EventStream:
    """Core of :func:`emulate` operating on precomputed log intensities."""
    L = np.asarray(log_frames, dtype=np.float64)
    n, h, w = L.shape
    dt_us = 1e6 / fps
    ref = L[0].copy()
    cols: list[tuple[np.ndarray, ...]] = []
    for k in range(1, n):
        prev, cur = L[k - 1], L[k]
        delta = cur - ref
        count = np.floor(np.abs(delta) / theta).astype(np.int64)
        pix = np.flatnonzero(count.ravel())
        if not len(pix):
            continue
        cnt = count.ravel()[pix]
        sign = np.sign(delta.ravel()[pix])
        # one row per emitted level crossing
        rep = np.repeat(pix, cnt)
        starts = np.repeat(np.cumsum(cnt) - cnt, cnt)
        level = (np.arange(len(rep)) - starts + 1).astype(np.float64)
        s = np.repeat(sign, cnt)
        crossing = np.repeat(ref.ravel()[pix], cnt) + s * level * theta
        p0 = prev.ravel()[rep]
        span = cur.ravel()[rep] - p0
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(span != 0, (crossing - p0) / span, 1.0)
        frac = np.clip(frac, 0.0, 1.0)
        t = np.floor((k - 1) * dt_us + frac * dt_us).astype(np.int64)
        ref.ravel()[pix] += sign * cnt * theta
        cols.append((t, rep, s.astype(np.int8)))
    if not cols:
        return EventStream.empty(w, h, int(round((n - 1) * dt_us)))
    t = np.concatenate([c[0] for c in cols])
    pix = np.concatenate([c[1] for c in cols])
    pol = np.concatenate([c[2] for c in cols])
    order = np.lexsort((pix, t))
    t, pix, pol = t[order], pix[order], pol[order]
    if refractory_us > 0:
        keep = _refractory_mask(t, pix, refractory_us)
        t, pix, pol = t[keep], pix[keep], pol[keep]
    return EventStream(
        w, h, t, pix % w, pix // w, pol, int(round((n - 1) * dt_us))
    )


def _refractory_mask(t: np.ndarray, pix: np.ndarray, gap: int) -> np.ndarray:
    # per-pixel greedy scan in time order; stable sort keeps time order within a pixel
    keep = np.zeros(len(t), dtype=bool)
    order = np.argsort(pix, kind="stable")
    tp = t[order].tolist()
    pp = pix[order].tolist()
    prev_pix, prev_t = -1, 0
    for j, (ti, pi) in enumerate(zip(tp, pp)):
        if pi != prev_pix or ti - prev_t >= gap:
            keep[order[j]] = True
            prev_pix, prev_t = pi, ti
    return keep


# ----------------------------------------------------------------- scenes


def _disc(h: int, w: int, cx: float, cy: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    return ((xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2 <= r * r).astype(np.float64)


def synth_rotating_dot(
    radius_px: float,
    orbit_px: float,
    rps: float,
    duration_s: float,
    fps: float,
    geometry: tuple[int, int],
    intensity: float = 255.0,
) -> FrameSequence:
    """White dot circling the frame center on a black background.

    ``geometry`` is ``(width, height)``; ``round(duration_s * fps) + 1`` frames
    are produced so the last frame sits exactly at ``duration_s``.
    """
    w, h = geometry
    cx, cy = w / 2.0, h / 2.0
    if orbit_px + radius_px > min(cx, cy):
        raise DotOutOfBounds(
            f"orbit {orbit_px} + radius {radius_px} exceeds half-size of {w}x{h}"
        )
    n = int(round(duration_s * fps)) + 1
    frames = np.empty((n, h, w))
    for k in range(n):
        turns = (rps * k / fps) % 1.0
        a = 2 * math.pi * turns
        frames[k] = intensity * _disc(h, w, cx + orbit_px * math.cos(a), cy + orbit_px * math.sin(a), radius_px)
    return FrameSequence(frames, fps)


@dataclass(frozen=True)
class MotionSpec:
    kind: str  # "bar" or "dot"
    direction_deg: float
    speed_pps: float  # pixels per second
    size_px: float


_DIRECTIONS = tuple(range(0, 360, 45))
_SPEEDS = (20.0, 40.0, 80.0)
_KINDS = ("bar", "dot")


def _render_motion(spec: MotionSpec, geometry: tuple[int, int], duration_s: float, fps: float) -> np.ndarray:
    w, h = geometry
    n = int(round(duration_s * fps)) + 1
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    a = math.radians(spec.direction_deg)
    ux, uy = math.cos(a), math.sin(a)
    frames = np.zeros((n, h, w))
    for k in range(n):
        d = spec.speed_pps * k / fps
        if spec.kind == "bar":
            # periodic bars perpendicular to the motion direction
            period = max(w, h) / 2.0
            phase = (xx * ux + yy * uy - d) % period
            frames[k] = 255.0 * (phase < spec.size_px)
        else:
            # dot bouncing inside the frame (triangle-wave reflection)
            r = spec.size_px
            px = _reflect(w / 2.0 + d * ux - r, w - 2 * r) + r
            py = _reflect(h / 2.0 + d * uy - r, h - 2 * r) + r
            frames[k] = 255.0 * ((xx - px) ** 2 + (yy - py) ** 2 <= r * r)
    return frames


def _reflect(v: float, span: float) -> float:
    m = v % (2 * span)
    return m if m <= span else 2 * span - m


def pattern_bank_specs(n_patterns: int, seed: int) -> list[MotionSpec]:
    if n_patterns < 1:
        raise ValueError("n_patterns must be >= 1")
    combos = [(k, d, s) for k in _KINDS for d in _DIRECTIONS for s in _SPEEDS]
    if n_patterns > len(combos):
        raise ValueError(f"at most {len(combos)} distinct patterns available")
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(combos), size=n_patterns, replace=False)
    out = []
    for i in pick:
        kind, d, s = combos[int(i)]
        out.append(MotionSpec(kind, float(d), s, 3.0 if kind == "bar" else 4.0))
    return out


def synth_pattern_bank(
    n_patterns: int,
    geometry: tuple[int, int],
    seed: int,
    duration_s: float = 2.0,
    fps: float = 200.0,
) -> list[FrameSequence]:
    """Moving-bar / bouncing-dot scenes with pairwise-distinct motion parameters."""
    return [
        FrameSequence(_render_motion(spec, geometry, duration_s, fps), fps)
        for spec in pattern_bank_specs(n_patterns, seed)
    ]


# -------------------------------------------------------------------- I/O


def save_frames(seq: FrameSequence, directory: str | os.PathLike) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    digits = max(5, len(str(len(seq.frames))))
    for k, frame in enumerate(seq.frames):
        write_pgm(d / f"frame_{k:0{digits}d}.pgm", frame)
    (d / "frames.json").write_text(json.dumps({"fps": seq.fps, "count": len(seq.frames)}, sort_keys=True))


def load_frames(directory: str | os.PathLike, fps: float | None = None) -> FrameSequence:
    """Read every ``*.pgm`` in ``directory`` (sorted by name).

    ``fps`` falls back to ``frames.json`` when present.
    """
    d = Path(directory)
    paths = sorted(d.glob("*.pgm"))
    if not paths:
        raise FileNotFoundError(f"no .pgm frames in {d}")
    if fps is None:
        meta = d / "frames.json"
        if not meta.exists():
            raise ValueError(f"fps not given and {meta} missing")
        fps = float(json.loads(meta.read_text())["fps"])
    return FrameSequence.from_list([read_pgm(p) for p in paths], fps)
