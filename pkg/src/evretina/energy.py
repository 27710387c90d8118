"""Operation-count energy model for sensor + network per prediction window.

Spiking layers pay one addition per synaptic event (``C * T * r_pre * e_add``);
dense layers pay a multiply-accumulate per connection. Sensor energy is
power times window duration.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

from .errors import EvretinaError

PJ = 1e-12
SPIKING_AC = "spiking-AC"
DENSE_MAC = "dense-MAC"
REPORTED = "reported-constant"


class NonPositiveInput(EvretinaError, ValueError):
    pass


class WrongKind(EvretinaError, ValueError):
    pass


class InconsistentComponents(EvretinaError, ValueError):
    pass


@dataclass(frozen=True)
class EnergyModel:
    e_add: float = 0.9 * PJ
    e_mul: float = 3.7 * PJ
    cis_current_a: float = 0.080
    cis_voltage_v: float = 1.8
    dvs_energy_per_window: float = 6.6e-3
    window_s: float = 0.66

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v > 0:
                raise NonPositiveInput(f"{k} must be positive")

    @property
    def e_mac(self) -> float:
        return self.e_mul + self.e_add

    @property
    def dvs_power_w(self) -> float:
        return self.dvs_energy_per_window / self.window_s


@dataclass(frozen=True)
class LayerEnergySpec:
    name: str
    connections: float = 0.0
    steps: int = 1
    r_pre: float = 1.0
    kind: str = SPIKING_AC
    reported_j: float | None = None

    def __post_init__(self):
        if self.connections < 0:
            raise ValueError(f"{self.name}: connections must be >= 0")
        if not 0.0 <= self.r_pre <= 1.0:
            raise ValueError(f"{self.name}: r_pre must lie in [0, 1]")
        if self.kind not in (SPIKING_AC, DENSE_MAC, REPORTED):
            raise ValueError(f"{self.name}: unknown kind {self.kind!r}")
        if self.kind == REPORTED and self.reported_j is None:
            raise ValueError(f"{self.name}: reported-constant rows need reported_j")


def sensor_energy_cis(current_a: float, voltage_v: float, duration_s: float) -> float:
    if current_a <= 0 or voltage_v <= 0 or duration_s < 0:
        raise NonPositiveInput("current and voltage must be positive, duration non-negative")
    return current_a * voltage_v * duration_s


def snn_layer_energy(spec: LayerEnergySpec, model: EnergyModel = EnergyModel()) -> float:
    if spec.kind != SPIKING_AC:
        raise WrongKind(f"{spec.name} is {spec.kind}, not {SPIKING_AC}")
    return spec.connections * spec.steps * spec.r_pre * model.e_add


def ann_layer_energy(macs: float, model: EnergyModel = EnergyModel()) -> float:
    if macs < 0:
        raise ValueError("macs must be >= 0")
    return macs * model.e_mac


def component_energy(spec: LayerEnergySpec, model: EnergyModel = EnergyModel()) -> float:
    if spec.kind == SPIKING_AC:
        return snn_layer_energy(spec, model)
    if spec.kind == DENSE_MAC:
        return ann_layer_energy(spec.connections * spec.steps, model)
    return float(spec.reported_j)


def accumulation_energy(acs: int, model: EnergyModel = EnergyModel()) -> float:
    """Energy of a measured number of synaptic accumulations."""
    return acs * model.e_add


# ---------------------------------------------------------- reference data

# Component energies per 660 ms prediction, as reported for the two pipelines.
CRNN_REPORTED = {
    "sensor": 95.04e-3,
    "components": {"C1": 5.77e-3, "C2": 3.01e-3, "LSTM": 41.02e-6, "Fc": 11.18e-9},
    "model": 8.83e-3,
    "total": 103.87e-3,
}
SNN_REPORTED = {
    "sensor": 6.6e-3,
    "components": {"S1": 1.13e-3, "S2": 590e-6, "S3": 2.3e-6, "R1": 2.07e-6, "R2": 2.3e-6, "Rd": 23.34e-9},
    "model": 1.73e-3,
    "total": 8.33e-3,
}
# per-layer spike rates of the full-size network (fractions)
REFERENCE_RATES = {"s1": 0.0529, "s2": 0.0594, "s3": 0.2707}
ROUNDING_TOL_J = 0.01e-3


def network_energy_specs(net_or_arch, rates: dict[str, float] = REFERENCE_RATES, steps: int = 20) -> list[LayerEnergySpec]:
    """Spiking-AC specs for every synaptic path of a network geometry.

    Paths fed by the network input are costed densely (``r_pre = 1``); all
    others use the firing rate of the layer they read.
    """
    from .srnn import ArchSpec, _shape_chain

    arch = net_or_arch if isinstance(net_or_arch, ArchSpec) else net_or_arch.arch
    shapes, block_shapes = _shape_chain(arch)

    def r_of(source: int) -> float:
        return 1.0 if source == 0 else rates[f"s{source}"]

    specs = []
    for i, l in enumerate(arch.layers):
        fan_in = shapes[i][0] * l.kernel * l.kernel
        n = math.prod(shapes[i + 1])
        specs.append(LayerEnergySpec(f"S{i + 1}", n * fan_in, steps, r_of(i)))
    for j, (r, bs) in enumerate(zip(arch.recurrent, block_shapes)):
        fan_in = shapes[r.source][0] * r.kernel * r.kernel
        specs.append(LayerEnergySpec(f"R{j + 1}", math.prod(bs) * fan_in, steps, r_of(r.source)))
    specs.append(LayerEnergySpec("Rd", math.prod(shapes[-1]) * arch.n_cells, steps, r_of(len(arch.layers))))
    return specs


# ------------------------------------------------------------------ report


@dataclass
class FrameworkSide:
    name: str
    sensor_j: float
    components: dict[str, float]
    model_j: float
    total_j: float
    computed: dict[str, float] = field(default_factory=dict)

    @property
    def component_sum(self) -> float:
        return sum(self.components.values())


@dataclass
class FrameworkReport:
    crnn: FrameworkSide
    snn: FrameworkSide
    ratio: float

    def to_dict(self) -> dict:
        return {"crnn": asdict(self.crnn), "snn": asdict(self.snn), "ratio": self.ratio}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [f"{'framework':<10} {'part':<8} {'reported':>14} {'computed':>14} {'dev':>8}"]
        for side in (self.crnn, self.snn):
            lines.append(f"{side.name:<10} {'sensor':<8} {_fmt(side.sensor_j):>14}")
            for k, v in side.components.items():
                comp = side.computed.get(k)
                dev = f"{100 * (comp / v - 1):+.1f}%" if comp is not None and v else ""
                lines.append(f"{'':<10} {k:<8} {_fmt(v):>14} {_fmt(comp) if comp is not None else '':>14} {dev:>8}")
            lines.append(f"{'':<10} {'model':<8} {_fmt(side.model_j):>14} {_fmt(side.component_sum):>14}")
            lines.append(f"{'':<10} {'total':<8} {_fmt(side.total_j):>14}")
        lines.append(f"energy ratio (CRNN / spiking): {self.ratio:.2f}")
        return "\n".join(lines)


def _fmt(j: float) -> str:
    for unit, scale in (("mJ", 1e-3), ("uJ", 1e-6), ("nJ", 1e-9), ("pJ", 1e-12)):
        if abs(j) >= scale:
            return f"{j / scale:.4g} {unit}"
    return f"{j:.3g} J"


def _side(name: str, ref: dict, tol: float) -> FrameworkSide:
    side = FrameworkSide(name, ref["sensor"], dict(ref["components"]), ref["model"], ref["total"])
    if abs(side.component_sum - side.model_j) > tol:
        raise InconsistentComponents(
            f"{name}: components sum to {side.component_sum:.6g} J, reported model {side.model_j:.6g} J"
        )
    if abs(side.sensor_j + side.model_j - side.total_j) > tol:
        raise InconsistentComponents(f"{name}: sensor + model != total")
    return side


def framework_report(
    snn_specs: Sequence[LayerEnergySpec] | None = None,
    crnn_reported: dict = CRNN_REPORTED,
    model: EnergyModel = EnergyModel(),
    snn_reported: dict = SNN_REPORTED,
    tol_j: float = ROUNDING_TOL_J,
) -> FrameworkReport:
    """Compare the frame-based CRNN pipeline with the spiking pipeline.

    Reported constants are checked for internal consistency (components vs
    subtotal, sensor + model vs total, within ``tol_j``). When ``snn_specs``
    are given their computed energies are reported next to the constants.
    """
    crnn = _side("CRNN", crnn_reported, tol_j)
    snn = _side("spiking", snn_reported, tol_j)
    crnn.computed = {"sensor": sensor_energy_cis(model.cis_current_a, model.cis_voltage_v, model.window_s)}
    if snn_specs:
        snn.computed = {s.name: component_energy(s, model) for s in snn_specs}
    return FrameworkReport(crnn, snn, crnn.total_j / snn.total_j)


def load_specs(path: str | os.PathLike) -> list[LayerEnergySpec]:
    """Read ``[{"name": .., "connections": .., "steps": .., "r_pre": .., "kind": ..}, ...]``."""
    with open(path) as f:
        rows = json.load(f)
    if isinstance(rows, dict):
        rows = rows.get("components", [])
    return [LayerEnergySpec(**row) for row in rows]


def with_overrides(model: EnergyModel, overrides: dict) -> EnergyModel:
    return replace(model, **overrides)
