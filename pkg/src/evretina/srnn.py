"""Spiking recurrent network: LIF spike layers, MP_LIF recurrent blocks, readout.

Spike-driven synaptic input is computed by gather-accumulate: for every output
neuron the kernel weights at active input positions are summed, never
multiplied. Operation counts for every synaptic path are recorded per time
step in a :class:`StepTrace`.
"""

from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, EvretinaError, NonFiniteInput, ShapeMismatch
from .events import SpikeTensor


class InconsistentSpec(EvretinaError, ValueError):
    pass


class StateNotInitialized(EvretinaError, RuntimeError):
    pass


SPIKING = "spiking"
SMOOTH = "smooth"

# gather chunks are sized to keep the boolean/float temporaries below this
_GATHER_BUDGET = 1 << 22


# ------------------------------------------------------------------ neurons


@dataclass(frozen=True)
class NeuronConfig:
    tau: float = 2.0
    v_threshold: float = 1.0
    v_reset: float = 0.0

    def __post_init__(self):
        if not self.tau >= 1:
            raise ConfigError(f"tau must be >= 1, got {self.tau}")
        if not self.v_threshold > self.v_reset:
            raise ConfigError("v_threshold must exceed v_reset")

    @property
    def decay(self) -> float:
        return 1.0 - 1.0 / self.tau


@dataclass
class LayerState:
    v: np.ndarray

    @classmethod
    def zeros(cls, shape) -> "LayerState":
        return cls(np.zeros(shape))


def _check_step_input(state: LayerState, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != state.v.shape:
        raise ShapeMismatch(f"input {x.shape} vs state {state.v.shape}")
    if not np.isfinite(x).all():
        raise NonFiniteInput("input current contains NaN or inf")
    return x


def leak_integrate(v_prev: np.ndarray, x: np.ndarray, tau: float) -> np.ndarray:
    return (1.0 - 1.0 / tau) * v_prev + (1.0 / tau) * x


def lif_step(
    state: LayerState, input_current: np.ndarray, cfg: NeuronConfig
) -> tuple[np.ndarray, LayerState]:
    """One LIF update: leak-integrate, fire where ``V >= v_threshold``, hard reset."""
    x = _check_step_input(state, input_current)
    v = leak_integrate(state.v, x, cfg.tau)
    spikes = v >= cfg.v_threshold
    return spikes.astype(np.uint8), LayerState(np.where(spikes, cfg.v_reset, v))


def mplif_step(
    state: LayerState, input_current: np.ndarray, cfg: NeuronConfig
) -> tuple[np.ndarray, LayerState]:
    """MP_LIF update; the output is the new membrane potential itself."""
    x = _check_step_input(state, input_current)
    v = leak_integrate(state.v, x, cfg.tau)
    return v, LayerState(v)


# -------------------------------------------------------------- convolution


def conv_output_size(n: int, kernel: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - kernel) // stride + 1


def _windows(x: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    """[C, Ho, Wo, k, k] strided view of the zero-padded input."""
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    return sliding_window_view(x, (kernel, kernel), axis=(1, 2))[:, ::stride, ::stride]


def _check_conv(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> tuple[int, int]:
    if x.ndim != 3 or w.ndim != 4 or x.shape[0] != w.shape[1]:
        raise ShapeMismatch(f"input {x.shape} incompatible with kernel {w.shape}")
    k = w.shape[2]
    ho = conv_output_size(x.shape[1], k, stride, padding)
    wo = conv_output_size(x.shape[2], k, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"kernel {k} larger than padded input {x.shape[1:]}")
    return ho, wo


def gather_accumulate(spikes: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Sum of kernel weights at active input taps, per output neuron.

    ``spikes`` is binary [C_in, H, W]; ``w`` is [C_out, C_in, k, k]. Only
    selection and addition are used.
    """
    active = np.asarray(spikes).astype(bool)
    ho, wo = _check_conv(active, w, stride, padding)
    cout = w.shape[0]
    out = np.zeros((cout, ho, wo))
    if not active.any():
        return out
    win = _windows(active, w.shape[2], stride, padding)  # [Cin, Ho, Wo, k, k]
    taps = w.shape[1] * w.shape[2] * w.shape[3]
    wflat = w.reshape(cout, 1, taps)
    rows = max(1, _GATHER_BUDGET // max(1, cout * wo * taps))
    for r0 in range(0, ho, rows):
        r1 = min(ho, r0 + rows)
        m = win[:, r0:r1].transpose(1, 2, 0, 3, 4).reshape(1, (r1 - r0) * wo, taps)
        out[:, r0:r1] = np.where(m, wflat, 0.0).sum(axis=2).reshape(cout, r1 - r0, wo)
    return out


def scatter_accumulate(spikes: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Event-driven variant: each input spike adds its kernel slice to its receivers."""
    active = np.asarray(spikes).astype(bool)
    ho, wo = _check_conv(active, w, stride, padding)
    k = w.shape[2]
    out = np.zeros((w.shape[0], ho, wo))
    for c, y, x in zip(*np.nonzero(active)):
        oy, ky = _receivers(int(y), k, stride, padding, ho)
        ox, kx = _receivers(int(x), k, stride, padding, wo)
        if len(oy) and len(ox):
            out[:, oy[:, None], ox[None, :]] += w[:, c, ky[:, None], kx[None, :]]
    return out


def _receivers(i: int, k: int, s: int, p: int, n_out: int) -> tuple[np.ndarray, np.ndarray]:
    # output positions o with o*s - p + kk == i for some tap kk in [0, k)
    lo = max(0, -(-(i + p - k + 1) // s))
    hi = min(n_out - 1, (i + p) // s)
    o = np.arange(lo, hi + 1)
    return o, i + p - o * s


def dense_conv(x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Ordinary multiply-accumulate cross-correlation (real-valued input)."""
    x = np.asarray(x, dtype=np.float64)
    _check_conv(x, w, stride, padding)
    return np.einsum("cyxij,ocij->oyx", _windows(x, w.shape[2], stride, padding), w, optimize=True)


def count_accumulations(nonzero: np.ndarray, kernel: int, stride: int, padding: int, out_channels: int) -> int:
    """Synaptic events: for every output neuron, the number of nonzero inputs in its field."""
    win = _windows(np.asarray(nonzero).astype(np.int64), kernel, stride, padding)
    return int(win.sum()) * out_channels


def is_binary(x: np.ndarray) -> bool:
    x = np.asarray(x)
    if x.dtype == bool:
        return True
    return bool(((x == 0) | (x == 1)).all())


def spike_conv(spikes_in: np.ndarray, layer: "SpikeLayer", method: str = "gather") -> np.ndarray:
    if not is_binary(spikes_in):
        raise ValueError("spike_conv requires binary input")
    fn = gather_accumulate if method == "gather" else scatter_accumulate
    return fn(spikes_in, layer.weights, layer.stride, layer.padding)


def synaptic_input(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> tuple[np.ndarray, int, int]:
    """Route an input through the synaptic path; returns (current, ACs, multiplications).

    Binary inputs take the accumulate-only path. Anything else (smooth mode,
    real-valued taps) needs a multiply per synaptic event and is counted as such.
    """
    nz = np.asarray(x) != 0
    events = count_accumulations(nz, w.shape[2], stride, padding, w.shape[0])
    if is_binary(x):
        return gather_accumulate(x, w, stride, padding), events, 0
    return dense_conv(x, w, stride, padding), events, events


# ------------------------------------------------------------ architecture


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class RecurrentSpec:
    """Conv + MP_LIF block reading layer ``source`` (0 = network input).

    Its feedback is added to layer ``source + 1`` at the next time step.
    """

    kernel: int
    stride: int = 1
    padding: int = 0
    source: int = 1
    channels: int = 2


@dataclass(frozen=True)
class ArchSpec:
    input_shape: tuple[int, int, int] = (1, 80, 80)
    layers: tuple[ConvSpec, ...] = ()
    recurrent: tuple[RecurrentSpec, ...] = ()
    n_cells: int = 38
    lif: NeuronConfig = NeuronConfig()
    mplif_tau: float = 2.0
    expected_counts: tuple[int, ...] | None = None
    weight_gain: float = 3.0
    feedback_gain: float = 0.1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        d["layers"] = [asdict(l) for l in self.layers]
        d["recurrent"] = [asdict(r) for r in self.recurrent]
        if self.expected_counts is not None:
            d["expected_counts"] = list(self.expected_counts)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown architecture keys: {sorted(unknown)}")
        d = dict(d)
        if "input_shape" in d:
            d["input_shape"] = tuple(d["input_shape"])
        if "layers" in d:
            d["layers"] = tuple(ConvSpec(**l) for l in d["layers"])
        if "recurrent" in d:
            d["recurrent"] = tuple(RecurrentSpec(**r) for r in d["recurrent"])
        if "lif" in d and isinstance(d["lif"], dict):
            d["lif"] = NeuronConfig(**d["lif"])
        if d.get("expected_counts") is not None:
            d["expected_counts"] = tuple(d["expected_counts"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def full_arch(**overrides) -> ArchSpec:
    """Full-size geometry: 1x80x80 input, three 32@25x25 layers, two 2-channel blocks.

    Strides/paddings are the small-integer values that reproduce the layer
    sizes 100352 / 32768 / 128 and two 2x8x8 recurrent blocks.
    """
    base = dict(
        input_shape=(1, 80, 80),
        layers=(ConvSpec(32, 25, 1, 0), ConvSpec(32, 25, 1, 0), ConvSpec(32, 25, 7, 0)),
        recurrent=(RecurrentSpec(30, 7, 0, source=0), RecurrentSpec(25, 4, 0, source=1)),
        n_cells=38,
        expected_counts=(100352, 32768, 128, 128, 128),
    )
    base.update(overrides)
    return ArchSpec(**base)


def full_arch_downstream_feedback(**overrides) -> ArchSpec:
    """Same layers; block i reads spike layer i and feeds layer i+1."""
    base = dict(
        recurrent=(RecurrentSpec(30, 4, 1, source=1), RecurrentSpec(25, 1, 0, source=2)),
    )
    base.update(overrides)
    return full_arch(**base)


def reduced_arch(**overrides) -> ArchSpec:
    """Desk-scale network: 1x16x16 input, 4-channel 5x5 layers, 4 output cells."""
    base = dict(
        input_shape=(1, 16, 16),
        layers=(ConvSpec(4, 5, 1, 0), ConvSpec(4, 5, 1, 0), ConvSpec(4, 5, 3, 0)),
        recurrent=(RecurrentSpec(4, 4, 0, source=0), RecurrentSpec(3, 3, 0, source=1)),
        n_cells=4,
        expected_counts=(576, 256, 16, 32, 32),
    )
    base.update(overrides)
    return ArchSpec(**base)


PRESETS = {
    "full": full_arch,
    "full-downstream-feedback": full_arch_downstream_feedback,
    "reduced": reduced_arch,
}


# --------------------------------------------------------------- network


@dataclass
class SpikeLayer:
    weights: np.ndarray
    stride: int = 1
    padding: int = 0
    neuron: NeuronConfig = NeuronConfig()
    state: LayerState | None = None
    out_shape: tuple[int, int, int] = (0, 0, 0)

    @property
    def n_neurons(self) -> int:
        return int(np.prod(self.out_shape))


@dataclass
class RecurrentBlock:
    weights: np.ndarray
    gain: np.ndarray  # one per target-layer channel
    stride: int = 1
    padding: int = 0
    neuron: NeuronConfig = NeuronConfig(v_threshold=math.inf)
    state: LayerState | None = None
    source: int = 1
    out_shape: tuple[int, int, int] = (0, 0, 0)
    target_hw: tuple[int, int] = (0, 0)

    @property
    def n_neurons(self) -> int:
        return int(np.prod(self.out_shape))

    @property
    def target(self) -> int:
        return self.source + 1


def upsample_index(src: int, dst: int) -> np.ndarray:
    return (np.arange(dst) * src) // dst


def feedback_map(block: RecurrentBlock, potential: np.ndarray) -> np.ndarray:
    """Channel-mean of the block potential, nearest-upsampled, times per-channel gain.

    Returns [C_target, H_target, W_target].
    """
    m = potential.mean(axis=0)
    iy = upsample_index(m.shape[0], block.target_hw[0])
    ix = upsample_index(m.shape[1], block.target_hw[1])
    return block.gain[:, None, None] * m[iy][:, ix][None]


def recurrent_block_step(block: RecurrentBlock, spikes_in: np.ndarray) -> np.ndarray:
    """Advance the block by one step on ``spikes_in``; return the feedback current.

    The caller adds the result to the target layer's input at the next step.
    """
    if block.state is None:
        raise StateNotInitialized("recurrent block state not initialized")
    current = spike_conv(spikes_in, block)
    v, block.state = mplif_step(block.state, current, block.neuron)
    return feedback_map(block, v)


def _shape_chain(arch: ArchSpec):
    c, h, w = arch.input_shape
    if len(arch.layers) != 3:
        raise InconsistentSpec(f"expected 3 spike layers, got {len(arch.layers)}")
    shapes = [(c, h, w)]
    for i, l in enumerate(arch.layers):
        ho = conv_output_size(shapes[-1][1], l.kernel, l.stride, l.padding)
        wo = conv_output_size(shapes[-1][2], l.kernel, l.stride, l.padding)
        if ho < 1 or wo < 1 or l.out_channels < 1:
            raise InconsistentSpec(f"layer S{i + 1}: kernel {l.kernel} does not fit input {shapes[-1]}")
        shapes.append((l.out_channels, ho, wo))
    block_shapes = []
    for j, r in enumerate(arch.recurrent):
        if not 0 <= r.source <= 2:
            raise InconsistentSpec(f"block R{j + 1}: source must be 0, 1 or 2")
        src = shapes[r.source]
        ho = conv_output_size(src[1], r.kernel, r.stride, r.padding)
        wo = conv_output_size(src[2], r.kernel, r.stride, r.padding)
        if ho < 1 or wo < 1:
            raise InconsistentSpec(f"block R{j + 1}: kernel {r.kernel} does not fit input {src}")
        block_shapes.append((r.channels, ho, wo))
    return shapes, block_shapes


class SrnnNetwork:
    """Three spike layers, recurrent feedback blocks and a softplus readout.

    ``mode`` is ``"spiking"`` (LIF layers emit spikes) or ``"smooth"`` (LIF
    layers pass their membrane potential on, i.e. threshold at infinity; used
    for finite-difference gradient checks).
    """

    def __init__(self, arch: ArchSpec, layers, blocks, readout_w, readout_b, mode: str = SPIKING):
        self.arch = arch
        self.layers: list[SpikeLayer] = layers
        self.blocks: list[RecurrentBlock] = blocks
        self.readout_w = readout_w
        self.readout_b = readout_b
        self.mode = mode
        self.feedback: list[np.ndarray] | None = None

    # -- parameters
    def parameters(self) -> list[tuple[str, np.ndarray]]:
        out = [(f"s{i + 1}.w", l.weights) for i, l in enumerate(self.layers)]
        out += [(f"r{j + 1}.w", b.weights) for j, b in enumerate(self.blocks)]
        out += [(f"r{j + 1}.gain", b.gain) for j, b in enumerate(self.blocks)]
        out += [("readout.w", self.readout_w), ("readout.b", self.readout_b)]
        return out

    def param_dict(self) -> dict[str, np.ndarray]:
        return dict(self.parameters())

    def set_parameters(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in self.parameters():
            if values[name].shape != arr.shape:
                raise ShapeMismatch(f"{name}: {values[name].shape} vs {arr.shape}")
            arr[...] = values[name]

    def n_parameters(self) -> int:
        return sum(a.size for _, a in self.parameters())

    def clone(self) -> "SrnnNetwork":
        return copy.deepcopy(self)

    # -- geometry
    @property
    def neuron_counts(self) -> tuple[int, ...]:
        return tuple(l.n_neurons for l in self.layers) + tuple(b.n_neurons for b in self.blocks)

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return self.arch.input_shape

    # -- state
    def reset_state(self) -> None:
        for l in self.layers:
            l.state = LayerState.zeros(l.out_shape)
        for b in self.blocks:
            b.state = LayerState.zeros(b.out_shape)
        self.feedback = [np.zeros(0) for _ in self.blocks]

    @property
    def state_initialized(self) -> bool:
        return self.feedback is not None


def reset_state(net: SrnnNetwork) -> None:
    net.reset_state()


def build_network(arch: ArchSpec, seed: int = 0, mode: str = SPIKING) -> SrnnNetwork:
    """Construct and initialize a network; neuron counts are checked against
    ``arch.expected_counts`` when given."""
    shapes, block_shapes = _shape_chain(arch)
    counts = tuple(int(np.prod(s)) for s in shapes[1:]) + tuple(int(np.prod(s)) for s in block_shapes)
    if arch.expected_counts is not None and tuple(arch.expected_counts) != counts:
        raise InconsistentSpec(f"derived neuron counts {counts} != declared {tuple(arch.expected_counts)}")
    rng = np.random.default_rng(seed)

    def kernel(cout, cin, k):
        std = arch.weight_gain / math.sqrt(cin * k * k)
        return rng.normal(0.0, std, size=(cout, cin, k, k))

    layers = []
    for i, l in enumerate(arch.layers):
        layers.append(
            SpikeLayer(kernel(l.out_channels, shapes[i][0], l.kernel), l.stride, l.padding,
                       arch.lif, None, shapes[i + 1])
        )
    blocks = []
    mp = NeuronConfig(tau=arch.mplif_tau, v_threshold=math.inf)
    for r, bs in zip(arch.recurrent, block_shapes):
        tgt = shapes[r.source + 1]
        blocks.append(
            RecurrentBlock(kernel(r.channels, shapes[r.source][0], r.kernel),
                           np.full(tgt[0], arch.feedback_gain), r.stride, r.padding, mp, None,
                           r.source, bs, (tgt[1], tgt[2]))
        )
    n_in = layers[-1].n_neurons
    readout_w = rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(arch.n_cells, n_in))
    readout_b = np.zeros(arch.n_cells)
    net = SrnnNetwork(arch, layers, blocks, readout_w, readout_b, mode)
    return net


# --------------------------------------------------------------- forward


SYNAPTIC_PATHS = ("s1", "s2", "s3", "r1", "r2", "readout")


@dataclass
class StepTrace:
    spikes: dict[str, int] = field(default_factory=dict)
    acs: dict[str, int] = field(default_factory=dict)
    mults: dict[str, int] = field(default_factory=dict)

    @property
    def synaptic_multiplications(self) -> int:
        return sum(self.mults.values())


@dataclass
class ForwardCache:
    """Per-step quantities kept for backpropagation through time."""

    outs: list[list[np.ndarray]] = field(default_factory=list)  # [t][layer 0..3]
    pre: list[list[np.ndarray]] = field(default_factory=list)   # [t][layer 1..3] pre-reset V
    spikes: list[list[np.ndarray]] = field(default_factory=list)
    upm: list[list[np.ndarray]] = field(default_factory=list)   # [t][block] upsampled channel-mean
    readout_in: np.ndarray | None = None
    z: np.ndarray | None = None


def softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _input_values(net: SrnnNetwork, x) -> np.ndarray:
    v = x.values if isinstance(x, SpikeTensor) else np.asarray(x)
    if v.ndim != 4 or tuple(v.shape[1:]) != tuple(net.input_shape):
        raise ShapeMismatch(f"input {v.shape} does not match network input {net.input_shape}")
    return v


def simulate(net: SrnnNetwork, x, record: bool = False):
    """Run one window from the network's current state.

    Returns ``(rates, traces, cache)``; ``cache`` is None unless ``record``.
    """
    if not net.state_initialized:
        raise StateNotInitialized("call reset_state() before the first window")
    values = _input_values(net, x)
    steps = values.shape[0]
    smooth = net.mode == SMOOTH
    cache = ForwardCache() if record else None
    traces: list[StepTrace] = []
    n_cells = net.readout_w.shape[0]
    read_acc = np.zeros(n_cells)
    s3_sum = np.zeros(net.layers[-1].n_neurons)
    for t in range(steps):
        tr = StepTrace()
        outs = [values[t]]
        pres, spks = [], []
        for i, layer in enumerate(net.layers):
            cur, acs, mul = synaptic_input(outs[i], layer.weights, layer.stride, layer.padding)
            tr.acs[f"s{i + 1}"], tr.mults[f"s{i + 1}"] = acs, mul
            for j, b in enumerate(net.blocks):
                if b.target == i + 1 and net.feedback[j].size:
                    cur = cur + net.feedback[j]
            v = leak_integrate(layer.state.v, cur, layer.neuron.tau)
            if smooth:
                s = np.zeros(v.shape, dtype=np.uint8)
                layer.state = LayerState(v)
                o = v
            else:
                s = (v >= layer.neuron.v_threshold).astype(np.uint8)
                layer.state = LayerState(np.where(s, layer.neuron.v_reset, v))
                o = s
            tr.spikes[f"s{i + 1}"] = int(s.sum())
            outs.append(o)
            pres.append(v)
            spks.append(s)
        upms = []
        for j, b in enumerate(net.blocks):
            cur, acs, mul = synaptic_input(outs[b.source], b.weights, b.stride, b.padding)
            tr.acs[f"r{j + 1}"], tr.mults[f"r{j + 1}"] = acs, mul
            v, b.state = mplif_step(b.state, cur, b.neuron)
            m = v.mean(axis=0)
            up = m[upsample_index(m.shape[0], b.target_hw[0])][:, upsample_index(m.shape[1], b.target_hw[1])]
            upms.append(up)
            net.feedback[j] = b.gain[:, None, None] * up[None]
        last = outs[-1].reshape(-1)
        if smooth:
            read_acc += net.readout_w @ last
            tr.acs["readout"] = tr.mults["readout"] = int(np.count_nonzero(last)) * n_cells
        else:
            active = last.astype(bool)
            read_acc += net.readout_w[:, active].sum(axis=1)
            tr.acs["readout"], tr.mults["readout"] = int(active.sum()) * n_cells, 0
        s3_sum += last
        traces.append(tr)
        if record:
            cache.outs.append(outs)
            cache.pre.append(pres)
            cache.spikes.append(spks)
            cache.upm.append(upms)
    z = read_acc / steps + net.readout_b
    rates = softplus(z)
    if record:
        cache.readout_in = s3_sum / steps
        cache.z = z
    return rates, traces, cache


def forward_window(net: SrnnNetwork, input, reset: bool = True) -> tuple[np.ndarray, list[StepTrace]]:
    """Predict cell rates for one window.

    With ``reset=False`` the membrane state carried from the previous window
    is kept (and must have been initialized).
    """
    if reset:
        net.reset_state()
    rates, traces, _ = simulate(net, input)
    return rates, traces


def count_synops(traces: StepTrace | Sequence[StepTrace]) -> dict[str, dict[str, int]]:
    """Per-path totals of accumulations and synaptic multiplications."""
    if isinstance(traces, StepTrace):
        traces = [traces]
    out: dict[str, dict[str, int]] = {}
    for tr in traces:
        for path, n in tr.acs.items():
            rec = out.setdefault(path, {"acs": 0, "mults": 0, "spikes": 0})
            rec["acs"] += n
            rec["mults"] += tr.mults.get(path, 0)
        for layer, n in tr.spikes.items():
            out.setdefault(layer, {"acs": 0, "mults": 0, "spikes": 0})["spikes"] += n
    out["total"] = {
        "acs": sum(v["acs"] for k, v in out.items()),
        "mults": sum(v["mults"] for k, v in out.items()),
        "spikes": sum(v["spikes"] for k, v in out.items()),
    }
    return out


# ------------------------------------------------------------ checkpoint


def save_checkpoint(net: SrnnNetwork, path: str | os.PathLike) -> None:
    """Write ``<path>`` (raw little-endian f64 arrays) and ``<path>.json`` (layout)."""
    path = Path(path)
    layout = []
    offset = 0
    with open(path, "wb") as f:
        for name, arr in net.parameters():
            data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            f.write(data)
            layout.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += len(data)
    meta = {"format": "evretina-f64le", "arrays": layout, "arch": net.arch.to_dict(), "mode": net.mode}
    Path(str(path) + ".json").write_text(json.dumps(meta, sort_keys=True, indent=1))


def load_checkpoint(path: str | os.PathLike) -> SrnnNetwork:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    arch = ArchSpec.from_dict(meta["arch"])
    net = build_network(arch, mode=meta.get("mode", SPIKING))
    raw = path.read_bytes()
    values = {}
    for entry in meta["arrays"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        values[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=n, offset=entry["offset"]).reshape(entry["shape"])
    net.set_parameters(values)
    return net
