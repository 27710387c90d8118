"""Scalar define-by-run autodiff, used as an independent gradient reference.

Rebuilds the network forward pass from raw parameter arrays with explicit
Python loops over scalar nodes. The spike node's backward uses the same
shifted-arctan derivative as training; the hard reset is a constant.
"""

from __future__ import annotations

import math


class Value:
    __slots__ = ("data", "grad", "_parents", "_local")

    def __init__(self, data, parents=(), local=()):
        self.data = float(data)
        self.grad = 0.0
        self._parents = parents
        self._local = local

    def __add__(self, other):
        other = other if isinstance(other, Value) else Value(other)
        return Value(self.data + other.data, (self, other), (1.0, 1.0))

    __radd__ = __add__

    def __mul__(self, other):
        other = other if isinstance(other, Value) else Value(other)
        return Value(self.data * other.data, (self, other), (other.data, self.data))

    __rmul__ = __mul__

    def __sub__(self, other):
        return self + (-1.0) * other

    def log(self):
        return Value(math.log(self.data), (self,), (1.0 / self.data,))

    def softplus(self):
        x = self.data
        y = max(x, 0.0) + math.log1p(math.exp(-abs(x)))
        return Value(y, (self,), (1.0 / (1.0 + math.exp(-x)),))

    def spike(self, threshold):
        x = self.data - threshold
        return Value(1.0 if x >= 0 else 0.0, (self,), (1.0 / (1.0 + (math.pi * x) ** 2),))

    def backward(self):
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = 1.0
        for node in reversed(order):
            for p, d in zip(node._parents, node._local):
                p.grad += d * node.grad


def _vsum(items):
    items = list(items)
    if not items:
        return Value(0.0)
    total = items[0]
    for it in items[1:]:
        total = total + it
    return total


def _conv(inp, w, stride, pad):
    """inp[c][y][x] (Values or floats), w[o][c][i][j] Values -> out[o][y][x]."""
    cin, h, wd = len(inp), len(inp[0]), len(inp[0][0])
    cout, k = len(w), len(w[0][0])
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = []
    for o in range(cout):
        plane = []
        for y in range(ho):
            row = []
            for x in range(wo):
                terms = []
                for c in range(cin):
                    for i in range(k):
                        for j in range(k):
                            yy, xx = y * stride - pad + i, x * stride - pad + j
                            if 0 <= yy < h and 0 <= xx < wd:
                                v = inp[c][yy][xx]
                                if isinstance(v, Value) or v != 0:
                                    terms.append(w[o][c][i][j] * v)
                row.append(_vsum(terms))
            plane.append(row)
        out.append(plane)
    return out


def _wrap(arr):
    if arr.ndim == 0:
        return Value(arr)
    return [_wrap(a) for a in arr]


def _flat(nested, out):
    if isinstance(nested, Value):
        out.append(nested)
    else:
        for n in nested:
            _flat(n, out)
    return out


def oracle_loss_and_grads(net, x_values, target, smooth=False):
    """Return (loss, {param_name: nested-list grads}) for ``net`` on one window."""
    import numpy as np

    arch = net.arch
    tau_l = arch.lif.tau
    vth, vreset = arch.lif.v_threshold, arch.lif.v_reset
    tau_r = arch.mplif_tau
    params = {name: _wrap(arr) for name, arr in net.parameters()}
    steps = x_values.shape[0]

    def zeros(c, h, w):
        return [[[Value(0.0) for _ in range(w)] for _ in range(h)] for _ in range(c)]

    layer_shapes = [l.out_shape for l in net.layers]
    block_shapes = [b.out_shape for b in net.blocks]
    V = [zeros(*s) for s in layer_shapes]
    U = [zeros(*s) for s in block_shapes]
    fb = [None for _ in net.blocks]
    s3_sum = None
    for t in range(steps):
        outs = [x_values[t].astype(float).tolist()]
        for li, layer in enumerate(net.layers):
            cur = _conv(outs[li], params[f"s{li + 1}.w"], layer.stride, layer.padding)
            c_, h_, w_ = layer_shapes[li]
            for j, b in enumerate(net.blocks):
                if b.source + 1 == li + 1 and fb[j] is not None:
                    cur = [[[cur[c][y][x] + fb[j][c][y][x] for x in range(w_)] for y in range(h_)] for c in range(c_)]
            o_layer, v_layer = [], []
            for c in range(c_):
                o_rows, v_rows = [], []
                for y in range(h_):
                    o_row, v_row = [], []
                    for x in range(w_):
                        hval = (1 - 1 / tau_l) * V[li][c][y][x] + (1 / tau_l) * cur[c][y][x]
                        if smooth:
                            o_row.append(hval)
                            v_row.append(hval)
                        else:
                            s = hval.spike(vth)
                            o_row.append(s)
                            v_row.append(Value(vreset) if s.data == 1.0 else hval)
                    o_rows.append(o_row)
                    v_rows.append(v_row)
                o_layer.append(o_rows)
                v_layer.append(v_rows)
            V[li] = v_layer
            outs.append(o_layer)
        for j, b in enumerate(net.blocks):
            cur = _conv(outs[b.source], params[f"r{j + 1}.w"], b.stride, b.padding)
            kc, kh, kw = block_shapes[j]
            U[j] = [[[(1 - 1 / tau_r) * U[j][c][y][x] + (1 / tau_r) * cur[c][y][x] for x in range(kw)]
                     for y in range(kh)] for c in range(kc)]
            th, tw = b.target_hw
            tc = len(b.gain)
            gain = params[f"r{j + 1}.gain"]
            new_fb = []
            for c in range(tc):
                plane = []
                for y in range(th):
                    sy = y * kh // th
                    row = []
                    for x in range(tw):
                        sx = x * kw // tw
                        mean = _vsum(U[j][k][sy][sx] for k in range(kc)) * (1.0 / kc)
                        row.append(gain[c] * mean)
                    plane.append(row)
                new_fb.append(plane)
            fb[j] = new_fb
        last = _flat(outs[-1], [])
        s3_sum = last if s3_sum is None else [a + b_ for a, b_ in zip(s3_sum, last)]
    m = [v * (1.0 / steps) for v in s3_sum]
    W, bias = params["readout.w"], params["readout.b"]
    loss = Value(0.0)
    for i in range(len(bias)):
        z = _vsum(W[i][k] * m[k] for k in range(len(m))) + bias[i]
        lam = z.softplus()
        loss = loss + lam - float(target[i]) * lam.log()
    loss.backward()
    grads = {}
    for name, arr in net.parameters():
        flat = _flat(params[name], [])
        grads[name] = np.array([v.grad for v in flat]).reshape(arr.shape)
    return loss.data, grads
