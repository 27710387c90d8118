import numpy as np
import pytest

from evretina.emulator import EmulatorConfig, emulate, synth_rotating_dot
from evretina.events import EventStream


def random_stream(rng: np.random.Generator, n: int, width: int = 32, height: int = 24) -> EventStream:
    t = np.sort(rng.integers(0, 1 << 40, size=n, dtype=np.uint64))
    x = rng.integers(0, width, size=n)
    y = rng.integers(0, height, size=n)
    p = rng.choice(np.array([-1, 1], dtype=np.int8), size=n)
    return EventStream(width, height, t, x, y, p)


@pytest.fixture(scope="session")
def dot_stream() -> EventStream:
    """One revolution of a rotating dot on the 346x240 sensor geometry."""
    frames = synth_rotating_dot(4.0, 40.0, 1.0, 1.0, 1000.0, geometry=(346, 240))
    return emulate(frames, EmulatorConfig())


def with_noise(stream: EventStream, n_noise: int, seed: int) -> tuple[EventStream, np.ndarray]:
    """Merge uniform random events into ``stream``; returns (mixture, is_noise)."""
    rng = np.random.default_rng(seed)
    t = rng.integers(0, stream.duration_us + 1, size=n_noise).astype(np.uint64)
    x = rng.integers(0, stream.width, size=n_noise)
    y = rng.integers(0, stream.height, size=n_noise)
    p = rng.choice(np.array([-1, 1], dtype=np.int8), size=n_noise)
    tt = np.concatenate([stream.t, t])
    label = np.concatenate([np.zeros(len(stream), bool), np.ones(n_noise, bool)])
    order = np.argsort(tt, kind="stable")
    mixed = EventStream(
        stream.width, stream.height, tt[order],
        np.concatenate([stream.x, x])[order], np.concatenate([stream.y, y])[order],
        np.concatenate([stream.p, p])[order], stream.duration_us,
    )
    return mixed, label[order]


def denoise_scores(stream: EventStream, is_noise: np.ndarray, **kw) -> tuple[float, float]:
    """(fraction of noise removed, fraction of signal kept) after denoising."""
    from evretina.events import denoise

    # denoise returns an ordered subsequence, so a greedy match recovers which events survived
    out = denoise(stream, **kw)
    keys_in = list(zip(stream.t.tolist(), stream.x.tolist(), stream.y.tolist(), stream.p.tolist()))
    keys_out = list(zip(out.t.tolist(), out.x.tolist(), out.y.tolist(), out.p.tolist()))
    kept = np.zeros(len(stream), bool)
    j = 0
    for i, k in enumerate(keys_in):
        if j < len(keys_out) and keys_out[j] == k:
            kept[i] = True
            j += 1
    assert j == len(keys_out), "denoise output is not an ordered subsequence"
    removed_noise = 1.0 - kept[is_noise].mean()
    kept_signal = kept[~is_noise].mean()
    return float(removed_noise), float(kept_signal)


def naive_conv(x: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Loop-based multiply-accumulate cross-correlation, independent of the package."""
    cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((cout, ho, wo))
    for o in range(cout):
        for yy in range(ho):
            for xx in range(wo):
                acc = 0.0
                for c in range(cin):
                    for i in range(k):
                        for j in range(k):
                            sy, sx = yy * stride - pad + i, xx * stride - pad + j
                            if 0 <= sy < h and 0 <= sx < wd:
                                acc += x[c, sy, sx] * w[o, c, i, j]
                out[o, yy, xx] = acc
    return out


SPIKING_PASSES = {"count": 0, "multiplications": 0}


@pytest.fixture(autouse=True)
def _no_multiplications_in_spiking_passes(monkeypatch):
    """Every spike-driven forward pass anywhere in the suite must be multiplication-free."""
    from evretina import srnn, training

    real = srnn.simulate
    offenders = []

    def checked(net, x, record=False):
        rates, traces, cache = real(net, x, record)
        if net.mode == srnn.SPIKING:
            mults = sum(tr.synaptic_multiplications for tr in traces)
            SPIKING_PASSES["count"] += 1
            SPIKING_PASSES["multiplications"] += mults
            if mults:
                offenders.append(mults)
        return rates, traces, cache

    monkeypatch.setattr(srnn, "simulate", checked)
    monkeypatch.setattr(training, "simulate", checked)
    yield
    assert not offenders, f"spiking forward passes performed {offenders} synaptic multiplications"
