import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from cavqed.cli import RunConfig, main, run
from cavqed.models import CavityParams
from cavqed.spectra import find_peaks, probe_transmission_analytic, Spectrum


def _call(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def _strip_generated(text):
    return "\n".join(l for l in text.splitlines() if "generated" not in l)


def test_no_command_and_empty_config(capsys, tmp_path):
    code, _, err = _call(capsys)
    assert code == 1 and "usage" in err
    cfg = tmp_path / "empty.json"
    cfg.write_text("")
    assert _call(capsys, "spectrum", "--config", str(cfg))[0] == 1
    cfg.write_text("{}")
    assert _call(capsys, "spectrum", "--config", str(cfg))[0] == 1


@pytest.mark.parametrize("argv,key", [
    (["spectrum", "--set", "bogus=1"], "bogus"),
    (["gate", "--set", "gamma=-1"], None),
    (["spectrum", "--set", "points=abc"], "points"),
    (["readout", "--set", "mu_low=20"], None),
    (["carve", "--model", "quantum"], "model"),
])
def test_validation_errors(capsys, argv, key):
    code, out, err = _call(capsys, *argv)
    assert code == 2 and out == ""
    rep = json.loads(err)
    assert rep["error"] == "validation" and rep["exit_code"] == 2
    if key:
        assert rep["key"] == key


def test_bad_config_file(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text("{not json")
    assert _call(capsys, "spectrum", "--config", str(cfg))[0] == 2
    cfg.write_text(json.dumps({"command": "gate", "params": {}}))
    assert _call(capsys, "spectrum", "--config", str(cfg))[0] == 2
    assert _call(capsys, "spectrum", "--config", str(tmp_path / "missing.json"))[0] == 2


def test_non_convergence_exit_code(capsys, tmp_path):
    d = np.linspace(-300, 300, 51)
    f = tmp_path / "flat.csv"
    f.write_text("trace,detuning_mhz,signal\n" + "".join(f"1_atoms,{x},1.0\n" for x in d))
    code, _, err = _call(capsys, "fit", "--set", f"input={json.dumps(str(f))}")
    assert code == 3 and json.loads(err)["error"] == "non-convergence"


def test_spectrum_csv_peaks(capsys):
    code, out, _ = _call(capsys, "spectrum", "--format", "csv", "--set", "points=1201")
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("# cavqed") and lines[1].startswith("# generated")
    conf = json.loads(lines[2][len("# config: "):])
    assert conf["command"] == "spectrum"
    rows = list(csv.DictReader(io.StringIO("\n".join(lines[3:]))))
    p = CavityParams(g_a=100.0, g_b=100.0)
    for n in (0, 1, 2):
        tr = [r for r in rows if r["trace"] == f"{n}_atoms"]
        x = np.array([float(r["detuning_mhz"]) for r in tr])
        y = np.array([float(r["signal"]) for r in tr])
        ref = find_peaks(probe_transmission_analytic(p, np.linspace(-300, 300, 20001), n))
        assert np.allclose(find_peaks(Spectrum(x, y)), ref, atol=0.05)


def test_gate_simplified(capsys):
    code, out, _ = _call(capsys, "gate", "--model", "simplified", "--cooperativity", "101")
    assert code == 0
    doc = json.loads(out)
    assert doc["results"]["omega_opt_over_gamma"] == pytest.approx(7.11, abs=0.01)
    assert doc["version"]


def test_json_round_trip_and_determinism(capsys):
    args = ("fit", "--seed", "42", "--set", "points=121")
    code, a, _ = _call(capsys, *args)
    _, b, _ = _call(capsys, *args)
    assert code == 0
    assert _strip_generated(a) == _strip_generated(b)
    assert sum("generated" in l for l in a.splitlines()) == 1
    doc = json.loads(a)
    cfg = RunConfig.from_dict(doc["config"])
    assert cfg.seed == 42 and cfg.params["points"] == 121
    assert _strip_generated(run(cfg, timestamp="x")) == _strip_generated(a)
    assert doc["results"]["g"] == pytest.approx(100.0, rel=0.01)
    _, c, _ = _call(capsys, "fit", "--seed", "43", "--set", "points=121")
    assert _strip_generated(c) != _strip_generated(a)


def test_all_commands_emit_reparseable_json(capsys, tmp_path):
    pops = {"x": [0.25] * 4, "y": [0.25] * 4, "z": [0.25] * 4}
    cases = [
        ("readout", "--set", "windows=1000", "--set", "rate_points=5"),
        ("carve", "--set", "points=5"),
        ("carve", "--model", "rb87", "--set", "points=3"),
        ("bell-fidelity", "--set", "populations=" + json.dumps(pops)),
        ("sweep", "--set", "points=3", "--set", "pulse_time=2.0"),
        ("sweep", "--set", "target=gate", "--set", "param=cooperativity", "--set", "values=[25, 101]"),
    ]
    for argv in cases:
        code, out, err = _call(capsys, *argv)
        assert code == 0, (argv, err)
        doc = json.loads(out)
        RunConfig.from_dict(doc["config"])
        assert "results" in doc
    assert json.loads(_call(capsys, *cases[3])[1])["results"]["fidelity"] == 0.25


def test_out_directory(capsys, tmp_path):
    code, out, _ = _call(capsys, "carve", "--out", str(tmp_path / "res"), "--format", "csv")
    assert code == 0 and out == ""
    files = list((tmp_path / "res").iterdir())
    assert [f.name for f in files] == ["carve.csv"]
    assert files[0].read_text().startswith("# cavqed")


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "cavqed.cli", "gate", "--cooperativity", "25"],
                       capture_output=True, text=True)
    assert r.returncode == 0
    assert json.loads(r.stdout)["results"]["omega_opt_over_gamma"] == pytest.approx(np.sqrt(12.5))
