import json
import shutil
import subprocess

import numpy as np
import pytest
import yaml

from spadsim import __version__, formats
from spadsim.cli import main
from spadsim.config import ConfigError, RunConfig
from spadsim.errors import ConvergenceError
from spadsim.ratecurve import model_rate


def write_config(path, **values):
    path.write_text(yaml.safe_dump(values))
    return path


@pytest.fixture
def sim_config(tmp_path):
    return write_config(
        tmp_path / "run.yaml",
        seed=7,
        sim={"n_gates": 2_000_000},
        detector={"qe": 0.19, "afterpulse_probs": [0.05, 0.03, 0.02, 0.01, 0.005]},
        source={"rep_rate_hz": 100e6, "mu": 0.59},
    )


# config


def test_config_defaults_and_overrides():
    cfg = RunConfig()
    assert cfg["seed"] == 0 and cfg["analysis.n_bins"] == 100
    cfg2 = cfg.updated(**{"detector.qe": "0.3", "seed": 5.0})
    assert cfg2["detector.qe"] == 0.3 and cfg2["seed"] == 5
    assert cfg["detector.qe"] == 0.189


def test_config_nested_and_flat_keys_agree(tmp_path):
    a = write_config(tmp_path / "a.yaml", detector={"qe": 0.2})
    b = tmp_path / "b.yaml"
    b.write_text("detector.qe: 0.2\n")
    assert RunConfig.from_file(a).values == RunConfig.from_file(b).values


def test_config_rejects_bad_input(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig({"detector.qee": 0.1})
    with pytest.raises(ConfigError):
        RunConfig({"sim.n_gates": 1.5})
    with pytest.raises(ConfigError):
        RunConfig({"seed": None})
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        RunConfig.from_file(tmp_path / "list.yaml")
    with pytest.raises(ConfigError):
        RunConfig.from_file(tmp_path / "missing.yaml")
    with pytest.raises(ConfigError):
        RunConfig({"op.temperature_c": -30.0}).operating_point()


def test_config_dump_round_trip(tmp_path):
    cfg = RunConfig({"seed": 3, "detector.afterpulse_probs": [0.1, 0.2], "op.overvoltage_v": 1.0, "op.temperature_c": -30})
    cfg.write(tmp_path / "c.yaml")
    text = (tmp_path / "c.yaml").read_text()
    assert text.startswith(f"tool_version: {__version__}\n")
    assert RunConfig.from_file(tmp_path / "c.yaml").values == cfg.values


def test_matched_stub_from_config():
    cfg = RunConfig({"stub.matched_gate_freq_hz": 200e6, "stub.velocity_factor": 0.66})
    assert cfg.stub().round_trip_delay == pytest.approx(5e-9)


# commands


def test_simulate_writes_stream_and_config_echo(tmp_path, sim_config):
    out = tmp_path / "s.txt"
    assert main(["simulate", "--config", str(sim_config), "--out", str(out)]) == 0
    s = formats.read_stream(out)
    assert s.seed == 7 and s.n_gates == 2_000_000
    assert "# seed=7" in out.read_text().splitlines()[:5]
    echo = yaml.safe_load((tmp_path / "s.txt.config.yaml").read_text())
    assert echo["tool_version"] == __version__ and echo["seed"] == 7


def test_seed_flag_overrides_config(tmp_path, sim_config):
    main(["simulate", "--config", str(sim_config), "--seed", "8", "--out", str(tmp_path / "s.spds")])
    assert formats.read_stream(tmp_path / "s.spds").seed == 8


def test_simulate_then_characterize(tmp_path, sim_config):
    stream = tmp_path / "s.spds"
    report = tmp_path / "r.json"
    assert main(["simulate", "--config", str(sim_config), "--out", str(stream)]) == 0
    assert main(["characterize", str(stream), "--out", str(report)]) == 0
    r = json.loads(report.read_text())
    assert abs(r["qe"] - 0.19) <= 3 * r["qe_sigma"]
    assert abs(r["app"] - r["injected"]["app"]) <= 3 * r["app_sigma"]
    assert r["tool_version"] == __version__
    assert r["provenance"]["stream_header"]["seed"] == 7
    for key in ("amplitude_A", "p", "fit", "histogram", "mu_assumed", "n_a_used"):
        assert key in r
    hist = formats.read_histogram_csv(tmp_path / "r.json.hist.csv")
    assert int(hist.accepted) == r["histogram"]["accepted"]


def test_archived_config_reproduces_bytes(tmp_path, sim_config):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    main(["simulate", "--config", str(sim_config), "--out", str(a / "s.spds")])
    main(["characterize", str(a / "s.spds"), "--out", str(a / "r.json")])
    # second run driven only by the archived echo
    main(["simulate", "--config", str(a / "s.spds.config.yaml"), "--out", str(b / "s.spds")])
    main(["characterize", str(b / "s.spds"), "--config", str(a / "r.json.config.yaml"), "--out", str(b / "r.json")])
    for name in ("s.spds", "s.spds.config.yaml", "r.json", "r.json.hist.csv", "r.json.config.yaml"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_rate_fit_command(tmp_path):
    n_ph = np.logspace(5, 9, 9)
    n_c = model_rate(n_ph, 0.15, 1e8, 0)
    csv = tmp_path / "curve.csv"
    csv.write_text("n_ph,n_c,sigma\n" + "".join(f"{x!r},{y!r},{0.01 * y!r}\n" for x, y in zip(n_ph.tolist(), n_c.tolist())))
    out = tmp_path / "fit.json"
    assert main(["rate-fit", str(csv), "--rep-rate", "1e8", "--n-d-max", "2", "--out", str(out)]) == 0
    r = json.loads(out.read_text())
    assert r["compatible_n_d"] == [0]
    assert r["models"][0]["qe"] == pytest.approx(0.15, abs=1e-9)
    pred = (tmp_path / "fit.json.pred.csv").read_text().splitlines()
    assert pred[0] == "n_ph,n_c_nd0,n_c_nd1,n_c_nd2"
    assert len(pred) == 1 + 200


def test_stub_command(tmp_path):
    cfg = write_config(tmp_path / "stub.yaml", stub={"target_depth_db": 30.0}, sweep={"n_points": 1000})
    out = tmp_path / "resp.csv"
    assert main(["stub", "--config", str(cfg), "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "freq_hz,atten_db"
    side = json.loads((tmp_path / "resp.csv.json").read_text())
    assert side["peak_depth_db"] == pytest.approx(30.0, abs=1e-6)
    assert side["first_notch_hz"] == pytest.approx(2.1e8, rel=0.01)


def test_trace_command(tmp_path):
    cfg = write_config(
        tmp_path / "trace.yaml",
        stub={"matched_gate_freq_hz": 200e6, "target_depth_db": 30.0},
        trace={"n_random_avalanches": 20, "noise_rms_v": 0.05},
        discriminator={"upper_v": 0.6, "lower_v": -0.6},
    )
    out = tmp_path / "tr.csv"
    assert main(["trace", "--config", str(cfg), "--binary", "--out", str(out)]) == 0
    events = np.loadtxt(tmp_path / "tr.csv.events.csv", delimiter=",", skiprows=1, ndmin=2)
    truth = np.loadtxt(tmp_path / "tr.csv.truth.csv", delimiter=",", skiprows=1, ndmin=1)
    assert events.shape[0] == truth.size == 20
    assert np.all(np.abs(events[:, 0] - truth) <= 1 / 20e9)
    v, meta = formats.read_trace_binary(tmp_path / "tr.csv.f64")
    assert v.size == meta["n_samples"] == 20_000


def test_cascade_command(tmp_path):
    out = tmp_path / "c.json"
    assert main(["cascade-oracle", "--probs", "0.1,0.2,0.3", "--n-primaries", "200000", "--out", str(out)]) == 0
    r = json.loads(out.read_text())
    assert abs(r["mean"] - r["closed_form_app"]) <= 3 * r["stderr"]


# exit codes


def test_config_error_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("detector: {qe: 2.0}\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "s.txt")]) == 2
    assert "error" in capsys.readouterr().err
    bad.write_text("unknown_key: 1\n")
    assert main(["simulate", "--config", str(bad)]) == 2
    bad.write_text("a: [unclosed\n")
    assert main(["simulate", "--config", str(bad)]) == 2
    assert main(["characterize", str(tmp_path / "nope.txt")]) == 2


def test_usage_error_exit_2():
    with pytest.raises(SystemExit) as info:
        main(["no-such-command"])
    assert info.value.code == 2


def test_insufficient_data_exit_3(tmp_path, capsys):
    s = tmp_path / "tiny.txt"
    cfg = write_config(tmp_path / "t.yaml", sim={"n_gates": 40})
    main(["simulate", "--config", str(cfg), "--out", str(s)])
    assert main(["characterize", str(s), "--out", str(tmp_path / "r.json")]) == 3
    assert "at least 5 non-empty bins" in capsys.readouterr().err
    narrow = tmp_path / "narrow.csv"
    narrow.write_text("1e6,1000\n2e6,2000\n")
    # a weak curve is still fitted (flagged indeterminate), so this succeeds
    assert main(["rate-fit", str(narrow), "--out", str(tmp_path / "n.json")]) == 0
    assert json.loads((tmp_path / "n.json").read_text())["indeterminate"] is True


def test_non_convergence_exit_4(tmp_path, monkeypatch, capsys):
    def boom(curve, n_d_max):
        raise ConvergenceError("stuck", [(0, 5.0, [0.1]), (1, 4.0, [0.2])])

    monkeypatch.setattr("spadsim.cli.dead_time_verdict", boom)
    csv = tmp_path / "c.csv"
    csv.write_text("1e5,10\n1e6,100\n1e7,1000\n")
    assert main(["rate-fit", str(csv), "--out", str(tmp_path / "x.json")]) == 4
    err = capsys.readouterr().err
    assert "stuck" in err and "iter 1" in err


@pytest.mark.skipif(shutil.which("spadsim") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(["spadsim", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and __version__ in res.stdout
    res = subprocess.run(["spadsim", "simulate", "--seed", "1", "--out", str(tmp_path / "s.txt")], capture_output=True)
    assert res.returncode == 0
