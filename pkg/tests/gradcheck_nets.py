"""Small networks and inputs shared by the gradient checks."""

import numpy as np

from evretina import srnn
from evretina.events import SpikeTensor
from evretina.srnn import SMOOTH, ArchSpec, ConvSpec, RecurrentSpec, build_network


def random_tensor(rng, shape, steps, p):
    return SpikeTensor((rng.random((steps,) + tuple(shape)) < p).astype(np.uint8), 33.0)


def fd_probe_net(seed):
    arch = ArchSpec(
        input_shape=(1, 10, 10),
        layers=(ConvSpec(2, 3, 1, 0), ConvSpec(2, 3, 1, 0), ConvSpec(2, 3, 2, 0)),
        recurrent=(RecurrentSpec(4, 2, 0, source=0), RecurrentSpec(3, 2, 0, source=1)),
        n_cells=3,
        weight_gain=1.0,
        feedback_gain=0.3,
    )
    return build_network(arch, seed=seed, mode=SMOOTH)


def tiny_spiking_net(seed):
    """<= 50 parameters with all three spike layers active on the probe input."""
    arch = ArchSpec(
        input_shape=(1, 6, 6),
        layers=(ConvSpec(1, 3, 1, 0), ConvSpec(1, 2, 1, 0), ConvSpec(1, 2, 1, 0)),
        recurrent=(RecurrentSpec(2, 2, 0, source=0), RecurrentSpec(1, 1, 0, source=1)),
        n_cells=2,
        weight_gain=2.5,
        feedback_gain=0.3,
    )
    for s in range(seed * 1000, seed * 1000 + 1000):
        net = build_network(arch, seed=s)
        rng = np.random.default_rng(s)
        x = random_tensor(rng, arch.input_shape, int(rng.integers(3, 6)), 0.6)
        net.reset_state()
        _, traces, _ = srnn.simulate(net, x)
        if all(sum(t.spikes[k] for t in traces) > 0 for k in ("s1", "s2", "s3")):
            return net, x, rng.uniform(0.2, 3.0, size=2)
    raise AssertionError("no active tiny network found")
