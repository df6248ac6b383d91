import json
import os

import numpy as np
import pytest

from kgsphere.cli import main
from kgsphere.config import ConfigError, SCHEMAS, load, parse_g, validate


def write(path, text):
    path.write_text(text)
    return str(path)


def read_outputs(folder):
    return {n: open(os.path.join(folder, n), "rb").read() for n in sorted(os.listdir(folder))
            if not n.endswith(".tmp")}


def test_validate_defaults_and_rejects():
    cfg = validate("simulate", {"eps": [0.1, 0.05]})
    assert cfg["eps"] == [0.1, 0.05] and cfg["M"] == 8
    with pytest.raises(ConfigError):
        validate("simulate", {"bogus": 1})
    with pytest.raises(ConfigError):
        validate("simulate", {"M": "eight"})
    with pytest.raises(ConfigError):
        validate("basis", {"command": "simulate"})
    with pytest.raises(ConfigError):
        validate("nothing", {})
    assert set(SCHEMAS) == {"basis", "resonance", "normal-form", "simulate"}


def test_load_yaml(tmp_path):
    p = write(tmp_path / "c.yaml", "M: 4\ng: [[[0, 0, 1], 2.0]]\n")
    cfg = load(p, "simulate")
    assert cfg["M"] == 4 and parse_g(cfg["g"]) == {(0, 0, 1): 2.0}
    assert parse_g(None) is None and parse_g([]) == {}
    with pytest.raises(ConfigError):
        parse_g([[1, 2]])


@pytest.mark.parametrize("command,config", [
    ("basis", "M: 12\nn_samples: 300\ndegree_range: [4, 12]\n"),
    ("resonance", "M: 8\nN: 8\n"),
    ("normal-form", "r: 1\nn_scales: 4\n"),
    ("simulate", "M: 4\neps: [0.1, 0.05]\nhorizon: inverse_eps\nshadow_s: 0.4\nstride: 200\n"),
])
def test_byte_identical_reruns(tmp_path, command, config):
    cfg = write(tmp_path / "c.yaml", config)
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main([command, "--config", cfg, "--seed", "3", "--out", a, "--no-timestamp"]) == 0
    assert main([command, "--config", cfg, "--seed", "3", "--out", b, "--no-timestamp",
                 "--threads", "2"]) == 0
    assert read_outputs(a) == read_outputs(b)
    man = json.load(open(os.path.join(a, "manifest.json")))
    assert "started" not in man and man["config"]["seed"] == 3
    assert list(man["inputs"]) == ["c.yaml"] and len(man["inputs"]["c.yaml"]) == 64
    for name, digest in man["outputs"].items():
        assert len(digest) == 64 and os.path.exists(os.path.join(a, name))
        if name.endswith(".csv"):
            lines = open(os.path.join(a, name)).read().splitlines()
            assert lines[0].endswith(",seed,config_hash")
            assert all(l.endswith(",3," + man["config_hash"][:16]) for l in lines[1:])
    assert main(["report", a]) == 0


def test_resonance_matches_brute_force(tmp_path):
    import itertools
    out = str(tmp_path / "r")
    cfg = write(tmp_path / "c.yaml", "r: 2\nM: 32\nN: 32\n")
    assert main(["resonance", "--config", cfg, "--out", out, "--no-timestamp"]) == 0
    man = json.load(open(os.path.join(out, "manifest.json")))
    om = np.sqrt(np.arange(33) * np.arange(1, 34) + np.sqrt(2.0))
    best = np.inf
    for (s1, l1), (s2, l2) in itertools.product([(s, l) for l in range(33) for s in (-1, 1)], repeat=2):
        if l1 == l2 and s1 + s2 == 0:
            continue
        best = min(best, abs(s1 * om[l1] + s2 * om[l2]))
    assert man["results"]["min_abs_omega"] == pytest.approx(best, rel=1e-14)


def test_timestamped_manifest(tmp_path):
    out = str(tmp_path / "r")
    assert main(["resonance", "--out", out]) == 0
    man = json.load(open(os.path.join(out, "manifest.json")))
    assert "started" in man and man["wall_clock_s"] >= 0


def test_unknown_key_exit_code(tmp_path, capsys):
    cfg = write(tmp_path / "c.yaml", "M: 4\nbogus: 1\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "bogus" in capsys.readouterr().err
    assert not os.path.exists(tmp_path / "o" / "manifest.json")


def test_report_empty_and_failing(tmp_path):
    assert main(["report"]) == 2
    cfg = write(tmp_path / "c.yaml", "M: 4\nT: 2.0\nmax_drift: 1e-30\n")
    out = str(tmp_path / "s")
    assert main(["simulate", "--config", cfg, "--out", out, "--no-timestamp"]) == 1
    assert main(["report", out, "--out", str(tmp_path / "rep")]) == 1
    rep = json.load(open(tmp_path / "rep" / "report.json"))
    assert not rep["all_pass"] and rep["n_failed"] == 1


def test_report_detects_tampered_series(tmp_path):
    cfg = write(tmp_path / "c.yaml", "M: 4\neps: [0.1, 0.05]\nhorizon: inverse_eps\n")
    out = tmp_path / "s"
    assert main(["simulate", "--config", cfg, "--out", str(out), "--no-timestamp"]) == 0
    series = out / "series_eps0.05.csv"
    lines = series.read_text().splitlines()
    head, last = lines[0], lines[-1].split(",")
    last[3] = repr(float(last[3]) * 2)
    series.write_text("\n".join(lines[:-1] + [",".join(last)]) + "\n")
    assert main(["report", str(out)]) == 1


def test_cli_checkpoint_resume(tmp_path):
    common = "M: 4\neps: 0.1\ndt: 0.001\nstride: 100\n"
    full = tmp_path / "full"
    assert main(["simulate", "--config", write(tmp_path / "f.yaml", common + "T: 2.0\n"),
                 "--out", str(full), "--no-timestamp"]) == 0
    half = tmp_path / "half"
    assert main(["simulate", "--config",
                 write(tmp_path / "h.yaml", common + "T: 1.0\ncheckpoint_every: 1000\n"),
                 "--out", str(half), "--no-timestamp"]) == 0
    ck = half / "checkpoint_eps0.1.bin"
    assert ck.exists()
    res = tmp_path / "res"
    assert main(["simulate", "--config",
                 write(tmp_path / "r.yaml", common + f"T: 2.0\nresume: {ck}\n"),
                 "--out", str(res), "--no-timestamp"]) == 0
    a = np.loadtxt(full / "series_eps0.1.csv", delimiter=",", skiprows=1, usecols=range(8))
    b = np.loadtxt(res / "series_eps0.1.csv", delimiter=",", skiprows=1, usecols=range(8))
    np.testing.assert_allclose(b[-1], a[-1], atol=1e-12)
