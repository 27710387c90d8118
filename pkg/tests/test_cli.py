import json

import numpy as np
import pytest

from evretina import srnn
from evretina.cli import main
from evretina.config import ConfigError, RangeError, UnknownKey, config_from_dict, parse_config
from evretina.evaluation import read_rates_csv, write_rates_csv
from evretina.events import load_events
from evretina.training import write_spike_csv

TINY = {
    "preset": "reduced",
    "arch": {"weight_gain": 6.0},
    "train": {"epochs": 2, "batch_size": 4, "learning_rate": 0.01},
    "data": {"synthetic": {"n_scenes": 2, "geometry": [32, 32], "duration_s": 2.7, "fps": 200}},
}


def _cfg(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def _err(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


# ------------------------------------------------------------------ config


def test_empty_config_gives_defaults(tmp_path):
    cfg = parse_config(_cfg(tmp_path, {}))
    assert (cfg.window_ms, cfg.steps, cfg.tau) == (33, 20, 2.0)
    assert parse_config(None).steps == 20
    arch = cfg.arch_spec()
    counts = srnn.build_network(arch, seed=0).neuron_counts
    assert counts == (100352, 32768, 128, 128, 128)


def test_config_errors(tmp_path):
    with pytest.raises(RangeError):
        config_from_dict({"steps": 0})
    with pytest.raises(RangeError):
        config_from_dict({"tau": 0.5})
    with pytest.raises(UnknownKey):
        config_from_dict({"stepz": 20})
    with pytest.raises(UnknownKey):
        config_from_dict({"train": {"lr": 1}})
    with pytest.raises(UnknownKey):
        config_from_dict({"data": {"synthetic": {"scenes": 2}}})
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "bad.json")


def test_tau_applies_to_both_neuron_kinds():
    arch = config_from_dict({"tau": 4.0, "preset": "reduced"}).arch_spec()
    assert arch.lif.tau == 4.0 and arch.mplif_tau == 4.0


# ------------------------------------------------------------- exit codes


def test_exit_codes_and_json_errors(tmp_path, capsys):
    assert main(["energy", "--config", _cfg(tmp_path, {"steps": 0})]) == 2
    assert _err(capsys)["error"] == "RangeError"
    assert main(["energy", "--config", _cfg(tmp_path, {"bogus": 1})]) == 2
    assert _err(capsys)["error"] == "UnknownKey"
    assert main(["frobnicate"]) == 2
    assert "error" in _err(capsys)
    assert main(["predict", "--checkpoint", str(tmp_path / "none.bin"), "--events", "x", "--out", "y"]) == 1
    assert "message" in _err(capsys)


# ------------------------------------------------------------ subcommands


def test_energy_reference(tmp_path, capsys):
    assert main(["energy", "--reference", "--format", "json", "--out", str(tmp_path / "e.json")]) == 0
    rep = json.loads((tmp_path / "e.json").read_text())
    assert round(rep["ratio"], 2) == 12.47
    assert abs(rep["snn"]["computed"]["S1"] - 1.13e-3) / 1.13e-3 < 0.01
    assert main(["energy", "--reference"]) == 0
    assert "12.47" in capsys.readouterr().out


def test_energy_from_specs_file(tmp_path):
    specs = [{"name": "S1", "connections": 62720000, "steps": 20, "r_pre": 1.0}]
    assert main(["energy", "--specs", _cfg(tmp_path, specs, "s.json"), "--format", "json",
                 "--out", str(tmp_path / "o.json")]) == 0
    assert "S1" in json.loads((tmp_path / "o.json").read_text())["snn"]["computed"]


def test_synth_and_encode(tmp_path):
    frames = tmp_path / "frames"
    assert main(["synth", "--duration", "0.2", "--fps", "500", "--out", str(frames)]) == 0
    ev = tmp_path / "dot.spk"
    assert main(["encode", "--frames", str(frames), "--denoise", "--resize", "16", "16", "--out", str(ev)]) == 0
    s = load_events(ev)
    assert (s.width, s.height) == (16, 16) and len(s) > 0
    bank = tmp_path / "bank"
    assert main(["synth", "--scene", "pattern-bank", "--n-patterns", "2", "--duration", "0.1", "--out", str(bank)]) == 0
    assert len(json.loads((bank / "scenes.json").read_text())) == 2


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("train")
    cfg = d / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    outs = []
    for threads in ("1", "3"):
        out = d / f"run{threads}"
        assert main(["train", "--config", str(cfg), "--seed", "7", "--threads", threads, "--out", str(out)]) == 0
        outs.append(out)
    return outs


def test_train_outputs_and_determinism(trained):
    a, b = trained
    assert (a / "model.bin").read_bytes() == (b / "model.bin").read_bytes()
    assert (a / "train_log.csv").read_text() == (b / "train_log.csv").read_text()
    summary = json.loads((a / "summary.json").read_text())
    assert summary["seed"] == 7 and summary["epochs_run"] == 2 and not summary["diverged"]
    assert (a / "train_log.csv").read_text().splitlines()[0] == "epoch,loss,val_pcc"


def test_predict_and_eval(trained, tmp_path):
    frames = tmp_path / "frames"
    assert main(["synth", "--duration", "1.4", "--fps", "200", "--width", "32", "--height", "32",
                 "--orbit", "10", "--out", str(frames)]) == 0
    ev = tmp_path / "dot.spk"
    assert main(["encode", "--frames", str(frames), "--out", str(ev)]) == 0
    pred = tmp_path / "pred.csv"
    assert main(["predict", "--checkpoint", str(trained[0] / "model.bin"), "--events", str(ev),
                 "--out", str(pred)]) == 0
    rates = read_rates_csv(pred)
    assert rates.shape == (2, 4) and (rates > 0).all()

    rng = np.random.default_rng(0)
    targets = tmp_path / "t.csv"
    write_rates_csv(targets, rng.uniform(0.5, 3, size=(2, 4)))
    out = tmp_path / "eval"
    assert main(["eval", "--pred", str(pred), "--targets", str(targets), "--raster-cell", "1",
                 "--out", str(out)]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert set(metrics) == {"mean_pcc", "pooled_pcc", "excluded_cells", "central_fraction"}
    for name in ("pcc.csv", "diff_hist.csv", "raster.csv"):
        assert (out / name).exists()
    assert (out / "raster.csv").read_text().splitlines()[0] == "repeat,t_ms"


def test_eval_from_spike_csv(tmp_path):
    pred = tmp_path / "p.csv"
    write_rates_csv(pred, np.array([[1.0, 0.5], [2.0, 0.5], [3.0, 1.5]]))
    spikes = tmp_path / "s.csv"
    # window 0.66 s: cell 0 fires 1, 2, 4 times; cell 1 once per window
    cell0 = [[0.1, 0.7, 0.8, 1.4, 1.5, 1.6, 1.7]]
    cell1 = [[0.2, 0.9, 1.5]]
    write_spike_csv(spikes, [cell0, cell1])
    out = tmp_path / "e"
    assert main(["eval", "--pred", str(pred), "--spikes", str(spikes), "--out", str(out)]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["excluded_cells"] == [1]
    assert metrics["mean_pcc"] == pytest.approx(0.98198, abs=1e-5)


def test_train_from_manifest(tmp_path):
    frames = tmp_path / "frames"
    assert main(["synth", "--duration", "1.4", "--fps", "200", "--width", "32", "--height", "32",
                 "--orbit", "10", "--out", str(frames)]) == 0
    assert main(["encode", "--frames", str(frames), "--out", str(tmp_path / "a.spk")]) == 0
    rng = np.random.default_rng(1)
    times = [[sorted(rng.uniform(0, 1.32, rng.integers(1, 6)).tolist())] for _ in range(4)]
    write_spike_csv(tmp_path / "a.csv", times)
    manifest = {"recordings": [{"events": "a.spk", "spikes": "a.csv"}, {"events": "a.spk", "spikes": "a.csv"}]}
    (tmp_path / "m.json").write_text(json.dumps(manifest))
    cfg = dict(TINY, data={"manifest": "m.json"})
    cfg["train"] = {"epochs": 1, "batch_size": 2}
    assert main(["train", "--config", _cfg(tmp_path, cfg), "--threads", "1", "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "summary.json").read_text())["n_records"] == 4
    # window geometry given in the manifest overrides the run config
    manifest["steps"] = 10
    (tmp_path / "m.json").write_text(json.dumps(manifest))
    assert main(["train", "--config", _cfg(tmp_path, cfg), "--threads", "1", "--out", str(tmp_path / "o2")]) == 0
    assert json.loads((tmp_path / "o2" / "summary.json").read_text())["n_records"] == 8


@pytest.mark.parametrize("manifest", [
    {"recordings": []},
    {"recordings": [{"events": "a.spk"}]},
    {"recordings": [{"events": "a.spk", "spikes": "a.csv"}], "steps": 0},
    {"recordings": [{"events": "a.spk", "spikes": "a.csv"}], "extra": 1},
])
def test_bad_manifest(tmp_path, capsys, manifest):
    (tmp_path / "m.json").write_text(json.dumps(manifest))
    cfg = dict(TINY, data={"manifest": "m.json"})
    assert main(["train", "--config", _cfg(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2
    assert _err(capsys)["error"] == "ConfigError"
