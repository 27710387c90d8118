"""DVS event data model, binary codec and preprocessing.

Events live in column form (``t``, ``x``, ``y``, ``p`` numpy arrays) inside an
immutable :class:`EventStream`. Preprocessing is a chain of pure functions:

    stream = load_events("rec.spk")
    stream = denoise(stream)
    stream = downsample(stream, 80, 80)
    spikes = window(stream, window_ms=33.0, steps=20)

File format (little-endian): ``b"SPK1"``, u16 width, u16 height, u32 reserved
(= 0), then 16-byte records ``u64 t_us, u16 x, u16 y, i8 polarity, 3 x pad``.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import EvretinaError

MAGIC = b"SPK1"
HEADER = struct.Struct("<4sHHI")
HEADER_SIZE = HEADER.size  # 12
RECORD_DTYPE = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "V3")]
)
RECORD_SIZE = RECORD_DTYPE.itemsize  # 16

POLARITY_MERGE = "merge"
POLARITY_SPLIT = "split"


class EventFormatError(EvretinaError, ValueError):
    pass


class BadMagic(EventFormatError):
    pass


class TruncatedRecord(EventFormatError):
    pass


class IndexedEventError(EventFormatError):
    def __init__(self, index: int, msg: str = ""):
        self.index = index
        super().__init__(f"event {index}: {msg}" if msg else f"event {index}")


class OutOfBoundsEvent(IndexedEventError):
    pass


class NonMonotoneTimestamp(IndexedEventError):
    pass


class InvalidPolarity(IndexedEventError):
    pass


class MalformedRecord(IndexedEventError):
    """Nonzero padding bytes; the format requires them to be zero."""


class InvalidTarget(EvretinaError, ValueError):
    pass


class WindowTooLong(EvretinaError, ValueError):
    pass


class IndexOutOfRange(EvretinaError, IndexError):
    pass


class DvsEvent(NamedTuple):
    t: int
    x: int
    y: int
    polarity: int


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class EventStream:
    """Time-sorted DVS events with sensor geometry.

    ``duration_us`` defaults to the last timestamp (0 when empty).
    """

    width: int
    height: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    duration_us: int = field(default=-1)

    def __post_init__(self):
        t = np.ascontiguousarray(self.t, dtype=np.uint64)
        x = np.ascontiguousarray(self.x, dtype=np.uint16)
        y = np.ascontiguousarray(self.y, dtype=np.uint16)
        p = np.ascontiguousarray(self.p, dtype=np.int8)
        if not (t.ndim == x.ndim == y.ndim == p.ndim == 1):
            raise ValueError("event columns must be 1-D")
        if not (len(t) == len(x) == len(y) == len(p)):
            raise ValueError("event columns differ in length")
        if not (0 < self.width < 1 << 16 and 0 < self.height < 1 << 16):
            raise ValueError(f"invalid geometry {self.width}x{self.height}")
        _validate(t, x, y, p, self.width, self.height)
        last = int(t[-1]) if len(t) else 0
        duration = last if self.duration_us < 0 else int(self.duration_us)
        if duration < last:
            raise ValueError(f"duration_us={duration} precedes last event t={last}")
        object.__setattr__(self, "t", _frozen(t))
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "p", _frozen(p))
        object.__setattr__(self, "duration_us", duration)

    @classmethod
    def empty(cls, width: int, height: int, duration_us: int = 0) -> "EventStream":
        z = np.zeros(0)
        return cls(width, height, z, z, z, z, duration_us)

    @classmethod
    def from_events(
        cls, width: int, height: int, events: Sequence[DvsEvent], duration_us: int = -1
    ) -> "EventStream":
        if not events:
            return cls.empty(width, height, max(duration_us, 0))
        t = np.array([e[0] for e in events], dtype=np.uint64)
        rest = np.array([e[1:] for e in events], dtype=np.int64).T
        return cls(width, height, t, rest[0], rest[1], rest[2], duration_us)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> DvsEvent:
        return DvsEvent(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def __iter__(self) -> Iterator[DvsEvent]:
        for i in range(len(self)):
            yield self[i]

    @property
    def events(self) -> list[DvsEvent]:
        return list(self)

    def select(self, mask_or_index: np.ndarray) -> "EventStream":
        """Subsequence of events (order preserved), same geometry and duration."""
        return EventStream(
            self.width,
            self.height,
            self.t[mask_or_index],
            self.x[mask_or_index],
            self.y[mask_or_index],
            self.p[mask_or_index],
            self.duration_us,
        )

    def same_events(self, other: "EventStream") -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )


def _validate(t, x, y, p, width, height) -> None:
    if len(t) == 0:
        return
    bad = np.flatnonzero((x >= width) | (y >= height))
    if len(bad):
        i = int(bad[0])
        raise OutOfBoundsEvent(i, f"({x[i]}, {y[i]}) outside {width}x{height}")
    bad = np.flatnonzero((p != 1) & (p != -1))
    if len(bad):
        raise InvalidPolarity(int(bad[0]), f"polarity {p[bad[0]]}")
    bad = np.flatnonzero(t[1:] < t[:-1])
    if len(bad):
        raise NonMonotoneTimestamp(int(bad[0]) + 1)


# --------------------------------------------------------------------- codec


def encode_events(stream: EventStream) -> bytes:
    rec = np.zeros(len(stream), dtype=RECORD_DTYPE)
    rec["t"] = stream.t
    rec["x"] = stream.x
    rec["y"] = stream.y
    rec["p"] = stream.p
    return HEADER.pack(MAGIC, stream.width, stream.height, 0) + rec.tobytes()


def decode_events(data: bytes) -> EventStream:
    if len(data) < HEADER_SIZE:
        raise BadMagic(f"file shorter than the {HEADER_SIZE}-byte header")
    magic, width, height, reserved = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, got {magic!r}")
    if reserved != 0:
        raise BadMagic(f"reserved header field is {reserved}, expected 0")
    if width == 0 or height == 0:
        raise BadMagic(f"header geometry {width}x{height} is empty")
    body = len(data) - HEADER_SIZE
    if body % RECORD_SIZE:
        raise TruncatedRecord(
            f"body of {body} bytes is not a multiple of {RECORD_SIZE} "
            f"(record {body // RECORD_SIZE} truncated)"
        )
    rec = np.frombuffer(data, dtype=RECORD_DTYPE, offset=HEADER_SIZE)
    if len(rec):
        raw = np.frombuffer(data, dtype=np.uint8, offset=HEADER_SIZE).reshape(-1, RECORD_SIZE)
        nz = np.flatnonzero(raw[:, RECORD_SIZE - 3 :].any(axis=1))
        if len(nz):
            raise MalformedRecord(int(nz[0]), "nonzero padding")
    return EventStream(width, height, rec["t"], rec["x"], rec["y"], rec["p"])


def load_events(path: str | os.PathLike) -> EventStream:
    with open(path, "rb") as f:
        return decode_events(f.read())


def save_events(stream: EventStream, path: str | os.PathLike) -> None:
    with open(path, "wb") as f:
        f.write(encode_events(stream))


# ----------------------------------------------------------- preprocessing


def denoise(
    stream: EventStream, neighborhood_radius: int = 1, support_window_us: int = 5000
) -> EventStream:
    """Background-activity filter.

    An event survives if some earlier event (in stream order, filtered or not)
    hit a different pixel within Chebyshev distance ``neighborhood_radius`` no
    more than ``support_window_us`` before it.
    """
    if neighborhood_radius < 1:
        raise ValueError("neighborhood_radius must be >= 1")
    if support_window_us <= 0:
        raise ValueError("support_window_us must be > 0")
    n = len(stream)
    if n == 0:
        return stream
    r = int(neighborhood_radius)
    win = int(support_window_us)
    w, h = stream.width, stream.height
    # last timestamp seen per pixel, padded so neighborhood slices never clip
    never = -(1 << 62)
    last = [[never] * (w + 2 * r) for _ in range(h + 2 * r)]
    keep = np.zeros(n, dtype=bool)
    ts = stream.t.tolist()
    xs = stream.x.tolist()
    ys = stream.y.tolist()
    offsets = [
        (dy, dx)
        for dy in range(-r, r + 1)
        for dx in range(-r, r + 1)
        if (dy, dx) != (0, 0)
    ]
    for i in range(n):
        t, px, py = ts[i], xs[i] + r, ys[i] + r
        for dy, dx in offsets:
            if t - last[py + dy][px + dx] <= win:
                keep[i] = True
                break
        last[py][px] = t
    return stream.select(keep)


def crop_box(src_w: int, src_h: int, target_w: int, target_h: int) -> tuple[int, int, int, int]:
    """Largest centered (x0, y0, crop_w, crop_h) with the target aspect ratio."""
    if src_w * target_h >= src_h * target_w:
        crop_h = src_h
        crop_w = src_h * target_w // target_h
    else:
        crop_w = src_w
        crop_h = src_w * target_h // target_w
    return (src_w - crop_w) // 2, (src_h - crop_h) // 2, crop_w, crop_h


def downsample(stream: EventStream, target_w: int, target_h: int) -> EventStream:
    """Center-crop to the target aspect ratio, then floor-scale coordinates.

    Events that land on the same ``(t, x', y')`` collapse to the first one.
    """
    if not (0 < target_w <= stream.width and 0 < target_h <= stream.height):
        raise InvalidTarget(
            f"target {target_w}x{target_h} invalid for source {stream.width}x{stream.height}"
        )
    if (target_w, target_h) == (stream.width, stream.height):
        return stream
    x0, y0, cw, ch = crop_box(stream.width, stream.height, target_w, target_h)
    x = stream.x.astype(np.int64) - x0
    y = stream.y.astype(np.int64) - y0
    inside = (x >= 0) & (x < cw) & (y >= 0) & (y < ch)
    idx = np.flatnonzero(inside)
    xs = x[idx] * target_w // cw
    ys = y[idx] * target_h // ch
    ts = stream.t[idx]
    if len(idx):
        # stream is t-sorted, so duplicates of (t, x', y') share a t-run
        key = (ts.astype(np.uint64), (ys * target_w + xs).astype(np.uint64))
        order = np.lexsort((np.arange(len(idx)), key[1], key[0]))
        k0, k1 = key[0][order], key[1][order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = (k0[1:] != k0[:-1]) | (k1[1:] != k1[:-1])
        keep = np.sort(order[first])
        idx, xs, ys, ts = idx[keep], xs[keep], ys[keep], ts[keep]
    return EventStream(
        target_w, target_h, ts, xs, ys, stream.p[idx], stream.duration_us
    )


# ------------------------------------------------------------- spike tensor


@dataclass(frozen=True)
class SpikeTensor:
    """Binary occupancy ``values[t, c, y, x]`` with one step = ``window_ms``."""

    values: np.ndarray
    window_ms: float

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.uint8)
        if v.ndim != 4:
            raise ValueError(f"SpikeTensor needs 4 dims [T,C,H,W], got shape {v.shape}")
        if v.size and v.max() > 1:
            raise ValueError("SpikeTensor values must be binary")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def steps(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[2]

    @property
    def width(self) -> int:
        return self.values.shape[3]

    @property
    def span_ms(self) -> float:
        return self.steps * self.window_ms


def window(
    stream: EventStream,
    window_ms: float,
    steps: int,
    start_us: int = 0,
    polarity: str = POLARITY_MERGE,
) -> SpikeTensor:
    """Bin ``steps`` consecutive windows starting at ``start_us`` into a SpikeTensor.

    Cell ``(t, c, y, x)`` is 1 iff at least one event falls in
    ``[start + t*w, start + (t+1)*w)`` at that pixel.
    """
    w_us = int(round(window_ms * 1000))
    if w_us <= 0 or steps < 1:
        raise ValueError("window_ms and steps must be positive")
    end = start_us + steps * w_us
    if end > stream.duration_us + w_us:
        raise WindowTooLong(
            f"{steps} x {window_ms} ms from {start_us} us exceeds stream duration "
            f"{stream.duration_us} us"
        )
    if polarity == POLARITY_MERGE:
        channels = 1
    elif polarity == POLARITY_SPLIT:
        channels = 2
    else:
        raise ValueError(f"unknown polarity policy {polarity!r}")
    out = np.zeros((steps, channels, stream.height, stream.width), dtype=np.uint8)
    lo, hi = np.searchsorted(stream.t, [start_us, end], side="left")
    if hi > lo:
        step = (stream.t[lo:hi] - np.uint64(start_us)) // np.uint64(w_us)
        ch = 0 if channels == 1 else (stream.p[lo:hi] < 0).astype(np.intp)
        out[step.astype(np.intp), ch, stream.y[lo:hi], stream.x[lo:hi]] = 1
    return SpikeTensor(out, float(window_ms))


def count_windows(stream: EventStream, window_ms: float, steps: int) -> int:
    """Number of whole, back-to-back ``steps``-step windows covered by the stream."""
    span = steps * int(round(window_ms * 1000))
    return stream.duration_us // span


def to_binary_frame(tensor: SpikeTensor, step: int) -> np.ndarray:
    """H x W image of one time step, OR-ed over channels."""
    if not 0 <= step < tensor.steps:
        raise IndexOutOfRange(f"step {step} outside [0, {tensor.steps})")
    return tensor.values[step].max(axis=0)


# ----------------------------------------------------------------------- PGM


def write_pgm(path: str | os.PathLike, image: np.ndarray, binary_scale: bool = False) -> None:
    """Write a P5 (8-bit) PGM. ``binary_scale`` maps {0,1} to {0,255}."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM image must be 2-D")
    if binary_scale:
        img = img * 255
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace before raster
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raw = np.frombuffer(data, dtype=">u2", count=w * h, offset=pos)
    else:
        raw = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return raw.reshape(h, w).astype(np.float64)
