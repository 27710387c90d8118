"""Poisson-loss training of the spiking network by backpropagation through time.

The spike nonlinearity is differentiated with the shifted-arctan surrogate
``H'(x) = 1 / (1 + pi^2 x^2)`` evaluated at ``V - V_th``; MP_LIF outputs
(membrane potentials) pass gradients unchanged. The hard reset is treated as a
constant in the backward pass.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, EvretinaError, ShapeMismatch
from .evaluation import mean_cell_pcc
from .events import SpikeTensor
from .srnn import SMOOTH, SrnnNetwork, _windows, sigmoid, simulate, upsample_index

log = logging.getLogger(__name__)


class NonPositivePrediction(EvretinaError, ValueError):
    pass


class NonFiniteGradient(EvretinaError, FloatingPointError):
    pass


class EmptyDataset(EvretinaError, ValueError):
    pass


class DivergedTraining(EvretinaError, RuntimeError):
    pass


class UnsortedTimes(EvretinaError, ValueError):
    pass


@dataclass(frozen=True)
class TrainRecord:
    input: SpikeTensor
    target: np.ndarray
    group: int = 0  # recording the window came from; splits are temporal per group

    def __post_init__(self):
        t = np.asarray(self.target, dtype=np.float64)
        if t.ndim != 1 or not np.isfinite(t).all() or (t < 0).any():
            raise ValueError("target must be a finite, non-negative vector")
        object.__setattr__(self, "target", t)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 8
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.2
    threads: int = 1
    init_readout_bias: bool = True

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must be in [0, 1)")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")


# --------------------------------------------------------------------- loss


def poisson_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Poisson negative log-likelihood without the log(y!) term.

    Summed over cells; averaged over the batch when inputs are 2-D.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    if (pred <= 0).any():
        raise NonPositivePrediction("rates must be strictly positive")
    per = (pred - target * np.log(pred)).sum(axis=-1)
    return float(np.mean(per))


def poisson_loss_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    return 1.0 - np.asarray(target) / np.asarray(pred)


def surrogate_heaviside_grad(v_minus_th):
    return 1.0 / (1.0 + (math.pi * np.asarray(v_minus_th)) ** 2)


# --------------------------------------------------------- conv backward


def conv_weight_grad(x: np.ndarray, d_out: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    win = _windows(np.asarray(x, dtype=np.float64), kernel, stride, padding)
    return np.einsum("oyx,cyxij->ocij", d_out, win, optimize=True)


def conv_input_grad(d_out: np.ndarray, w: np.ndarray, in_shape, stride: int, padding: int) -> np.ndarray:
    c, h, wd = in_shape
    k = w.shape[2]
    ho, wo = d_out.shape[1:]
    cols = np.einsum("ocij,oyx->cijyx", w, d_out, optimize=True)
    dx = np.zeros((c, h + 2 * padding, wd + 2 * padding))
    for i in range(k):
        for j in range(k):
            dx[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += cols[:, i, j]
    if padding:
        dx = dx[:, padding:-padding, padding:-padding]
    return dx


# -------------------------------------------------------------------- BPTT


def bptt_backward(net: SrnnNetwork, input, target) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and gradients for one window, from a freshly reset state.

    Returns ``(loss, grads)`` with ``grads`` keyed like ``net.parameters()``.
    """
    target = np.asarray(target, dtype=np.float64)
    net.reset_state()
    rates, _, cache = simulate(net, input, record=True)
    loss = poisson_loss(rates, target)
    smooth = net.mode == SMOOTH
    steps = len(cache.outs)
    layers, blocks = net.layers, net.blocks
    grads = {name: np.zeros_like(arr) for name, arr in net.parameters()}

    dz = poisson_loss_grad(rates, target) * sigmoid(cache.z)
    grads["readout.w"] = np.outer(dz, cache.readout_in)
    grads["readout.b"] = dz.copy()
    d_last = (net.readout_w.T @ dz / steps).reshape(layers[-1].out_shape)

    a_v = [np.zeros(l.out_shape) for l in layers]       # dL/dV_l,t from step t+1
    g_u = [np.zeros(b.out_shape) for b in blocks]        # dL/dU_j,t+1 (total)
    pend = [np.zeros(b.out_shape) for b in blocks]       # dL/dU_j,t via feedback used at t+1
    for t in range(steps - 1, -1, -1):
        outs = cache.outs[t]
        g_out = [None] + [np.zeros(l.out_shape) for l in layers]
        g_out[3] += d_last
        for j, b in enumerate(blocks):
            gu = pend[j] + b.neuron.decay * g_u[j]
            g_u[j] = gu
            pend[j] = np.zeros(b.out_shape)
            d_j = gu / b.neuron.tau
            k = b.weights.shape[2]
            grads[f"r{j + 1}.w"] += conv_weight_grad(outs[b.source], d_j, k, b.stride, b.padding)
            if b.source >= 1:
                g_out[b.source] += conv_input_grad(d_j, b.weights, outs[b.source].shape, b.stride, b.padding)
        for li in range(len(layers) - 1, -1, -1):
            layer = layers[li]
            cfg = layer.neuron
            h = cache.pre[t][li]
            if smooth:
                g_h = g_out[li + 1] + a_v[li]
            else:
                s = cache.spikes[t][li]
                g_h = g_out[li + 1] * surrogate_heaviside_grad(h - cfg.v_threshold) + a_v[li] * (1 - s)
            d_i = g_h / cfg.tau
            a_v[li] = cfg.decay * g_h
            k = layer.weights.shape[2]
            grads[f"s{li + 1}.w"] += conv_weight_grad(outs[li], d_i, k, layer.stride, layer.padding)
            if li >= 1:
                g_out[li] += conv_input_grad(d_i, layer.weights, outs[li].shape, layer.stride, layer.padding)
            if t == 0:
                continue
            for j, b in enumerate(blocks):
                if b.target != li + 1:
                    continue
                up = cache.upm[t - 1][j]
                grads[f"r{j + 1}.gain"] += (d_i * up[None]).sum(axis=(1, 2))
                d_up = (d_i * b.gain[:, None, None]).sum(axis=0)
                hh, ww = b.out_shape[1:]
                iy = upsample_index(hh, b.target_hw[0])
                ix = upsample_index(ww, b.target_hw[1])
                flat = (iy[:, None] * ww + ix[None, :]).ravel()
                d_m = np.bincount(flat, weights=d_up.ravel(), minlength=hh * ww).reshape(hh, ww)
                pend[j] = np.broadcast_to(d_m / b.out_shape[0], b.out_shape).copy()
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteGradient(f"gradient of {name} is not finite")
    return loss, grads


# --------------------------------------------------------------- optimizers


@dataclass
class OptimizerState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(
    weights: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimizerState, cfg: TrainConfig
) -> None:
    """In-place SGD or Adam update."""
    state.step += 1
    for name, w in weights.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ShapeMismatch(f"{name}: gradient {g.shape} vs weight {w.shape}")
        if cfg.optimizer == "sgd":
            w -= cfg.learning_rate * g
            continue
        m = state.m.setdefault(name, np.zeros_like(w))
        v = state.v.setdefault(name, np.zeros_like(w))
        m *= cfg.beta1
        m += (1 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1 - cfg.beta2) * g * g
        m_hat = m / (1 - cfg.beta1 ** state.step)
        v_hat = v / (1 - cfg.beta2 ** state.step)
        w -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)


# --------------------------------------------------------------- training


@dataclass
class EpochLog:
    epoch: int
    loss: float
    val_pcc: float


@dataclass
class TrainingLog:
    epochs: list[EpochLog] = field(default_factory=list)
    best_epoch: int = -1
    best_val_pcc: float = float("nan")
    diverged: bool = False

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["epoch", "loss", "val_pcc"])
            for e in self.epochs:
                w.writerow([e.epoch, repr(e.loss), repr(e.val_pcc)])


def split_records(records: Sequence[TrainRecord], val_fraction: float) -> tuple[list[int], list[int]]:
    """Temporal split per group: the last ``val_fraction`` of each group's windows
    (in dataset order) are held out."""
    groups: dict[int, list[int]] = {}
    for i, r in enumerate(records):
        groups.setdefault(r.group, []).append(i)
    train_idx, val_idx = [], []
    for g in sorted(groups):
        idx = groups[g]
        n_val = int(round(len(idx) * val_fraction))
        if val_fraction > 0 and len(idx) >= 2:
            n_val = max(1, min(n_val, len(idx) - 1))
        train_idx += idx[: len(idx) - n_val]
        val_idx += idx[len(idx) - n_val :]
    return train_idx, val_idx


def predict(net: SrnnNetwork, records: Sequence[TrainRecord]) -> np.ndarray:
    out = []
    for r in records:
        net.reset_state()
        rates, _, _ = simulate(net, r.input)
        out.append(rates)
    return np.array(out)


def _batch_gradient(net: SrnnNetwork, batch: Sequence[TrainRecord], pool) -> tuple[list[float], dict[str, np.ndarray]]:
    if pool is None:
        results = [bptt_backward(net, r.input, r.target) for r in batch]
    else:
        clones = [net.clone() for _ in batch]
        results = list(pool.map(lambda cr: bptt_backward(cr[0], cr[1].input, cr[1].target), zip(clones, batch)))
    # fixed left-to-right reduction keeps results independent of worker count
    total = {k: np.zeros_like(v) for k, v in results[0][1].items()}
    for _, g in results:
        for k in total:
            total[k] += g[k]
    n = len(batch)
    return [l for l, _ in results], {k: v / n for k, v in total.items()}


def _inverse_softplus(y: np.ndarray) -> np.ndarray:
    y = np.maximum(y, 1e-3)
    return np.where(y > 20, y, np.log(np.expm1(y)))


def train(net: SrnnNetwork, dataset: Sequence[TrainRecord], cfg: TrainConfig) -> TrainingLog:
    """Mini-batch BPTT training; leaves ``net`` holding the best-validation weights.

    Validation score is the mean per-cell Pearson correlation on held-out
    windows (NaN when undefined, e.g. no held-out data).
    """
    if len(dataset) < 2:
        raise EmptyDataset("training needs at least 2 records")
    train_idx, val_idx = split_records(dataset, cfg.val_fraction)
    if not train_idx:
        raise EmptyDataset("no training records after the validation split")
    rng = np.random.default_rng(cfg.seed)
    params = net.param_dict()
    if cfg.init_readout_bias:
        mean_t = np.mean([dataset[i].target for i in train_idx], axis=0)
        net.readout_b[...] = _inverse_softplus(mean_t)
    opt = OptimizerState()
    log_ = TrainingLog()
    best = {k: v.copy() for k, v in params.items()}
    best_score = -math.inf
    val = [dataset[i] for i in val_idx]
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = np.array(train_idx)[rng.permutation(len(train_idx))]
            losses = []
            for b0 in range(0, len(order), cfg.batch_size):
                batch = [dataset[i] for i in order[b0 : b0 + cfg.batch_size]]
                try:
                    batch_losses, grads = _batch_gradient(net, batch, pool)
                except (NonFiniteGradient, NonPositivePrediction):
                    batch_losses, grads = [math.nan], None
                if grads is None or not all(math.isfinite(l) for l in batch_losses):
                    log_.diverged = True
                    break
                optimizer_step(params, grads, opt, cfg)
                losses.extend(batch_losses)
            if log_.diverged:
                log.warning("non-finite loss at epoch %d; stopping", epoch)
                break
            score = math.nan
            if val:
                pred = predict(net, val)
                score = mean_cell_pcc(pred, np.array([r.target for r in val]))
            # exact sum: the epoch loss must not depend on shuffle order
            log_.epochs.append(EpochLog(epoch, math.fsum(losses) / len(losses), score))
            key = score if math.isfinite(score) else -math.inf
            if not val or key > best_score or epoch == 1:
                best_score = key
                best = {k: v.copy() for k, v in params.items()}
                log_.best_epoch, log_.best_val_pcc = epoch, score
            log.info("epoch %d loss %.5f val_pcc %.4f", epoch, log_.epochs[-1].loss, score)
    finally:
        if pool is not None:
            pool.shutdown()
    if not log_.epochs:
        raise DivergedTraining("loss became non-finite in the first epoch")
    net.set_parameters(best)
    return log_


# ----------------------------------------------------------------- targets


def build_targets(
    spike_times: Sequence[Sequence[Sequence[float]]],
    window_ms: float,
    steps: int,
    n_trials: int | None = None,
    n_windows: int | None = None,
    start_s: float = 0.0,
) -> np.ndarray:
    """Trial-averaged spike counts per back-to-back window.

    ``spike_times[cell][trial]`` holds sorted spike times in seconds. Returns
    ``[n_windows, n_cells]``.
    """
    span = steps * window_ms / 1000.0
    n_cells = len(spike_times)
    if n_trials is None:
        n_trials = max((len(c) for c in spike_times), default=0)
    if n_trials < 1:
        raise ValueError("need at least one trial")
    all_last = 0.0
    for c, cell in enumerate(spike_times):
        for k, tr in enumerate(cell):
            a = np.asarray(tr, dtype=np.float64)
            if len(a) > 1 and (np.diff(a) < 0).any():
                raise UnsortedTimes(f"cell {c} trial {k}: spike times not sorted")
            if len(a):
                all_last = max(all_last, float(a[-1]))
    if n_windows is None:
        n_windows = max(1, int(math.floor((all_last - start_s) / span)) + 1)
    edges = start_s + span * np.arange(n_windows + 1)
    out = np.zeros((n_windows, n_cells))
    for c, cell in enumerate(spike_times):
        for tr in cell:
            out[:, c] += np.histogram(np.asarray(tr, dtype=np.float64), bins=edges)[0]
    return out / n_trials


def read_spike_csv(path: str | os.PathLike, n_cells: int | None = None) -> list[list[list[float]]]:
    """Parse a ``cell_id,trial,t_s`` CSV into ``times[cell][trial]`` (sorted)."""
    rows: dict[tuple[int, int], list[float]] = {}
    max_cell, max_trial = -1, -1
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or [h.strip() for h in reader.fieldnames] != ["cell_id", "trial", "t_s"]:
            raise ConfigError(f"{path}: expected header cell_id,trial,t_s")
        for row in reader:
            c, k = int(row["cell_id"]), int(row["trial"])
            rows.setdefault((c, k), []).append(float(row["t_s"]))
            max_cell, max_trial = max(max_cell, c), max(max_trial, k)
    n_cells = max_cell + 1 if n_cells is None else n_cells
    out = [[[] for _ in range(max_trial + 1)] for _ in range(n_cells)]
    for (c, k), ts in rows.items():
        out[c][k] = sorted(ts)
    return out


def write_spike_csv(path: str | os.PathLike, spike_times: Sequence[Sequence[Sequence[float]]]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["cell_id", "trial", "t_s"])
        for c, cell in enumerate(spike_times):
            for k, tr in enumerate(cell):
                for t in tr:
                    w.writerow([c, k, repr(float(t))])
