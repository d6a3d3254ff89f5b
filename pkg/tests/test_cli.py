import json
import os
import subprocess
import sys

import numpy as np

from lasalt.diagio import dump_field, load_field, read_diagnostics
from lasalt.diagio.cli import main

RB = """model = "rigidbody"
dt = 0.01
T = 0.5
members = 8
seed = 3
output_every = 5

[noise]
kind = "vectors"
vectors = [[0.0, 0.0, 0.2]]
"""


def _write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_happy_path(tmp_path):
    cfg = _write(tmp_path, RB)
    out = tmp_path / "out"
    assert main(["rigidbody", "--config", cfg, "--out", str(out)]) == 0
    recs = read_diagnostics(out / "diagnostics.ndjson")
    assert len(recs) == 11 and recs[0]["t"] == 0.0 and recs[-1]["t"] == 0.5
    assert {"casimir_mean", "variance"} <= set(recs[0])
    assert (out / "config.toml").exists()
    csvs = sorted(os.listdir(out / "plotdata"))
    assert csvs and all(c.endswith(".csv") for c in csvs)
    members, meta = load_field(out / "fields" / "members_0000050")
    assert members.shape == (8, 3) and meta["t"] == 0.5 and meta["model"] == "rigidbody"


def test_flags_override_config(tmp_path):
    cfg = _write(tmp_path, RB)
    out = tmp_path / "out"
    assert main(["rigidbody", "--config", cfg, "--out", str(out), "--members", "3",
                 "--seed", "0x10", "--mode", "decoupled", "--no-dumps"]) == 0
    text = (out / "config.toml").read_text()
    assert "members = 3" in text and "seed = 16" in text and 'mode = "decoupled"' in text
    assert not (out / "fields").exists()


def test_config_errors(tmp_path, capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err
    assert main(["rigidbody", "--config", str(tmp_path / "missing.toml")]) == 2
    bad = _write(tmp_path, 'model = "rigidbody"\ndt = -1\n', "bad.toml")
    assert main(["rigidbody", "--config", bad]) == 2
    assert "dt" in capsys.readouterr().err
    assert main(["burgers", "--config", _write(tmp_path, RB)]) == 2
    assert main(["rigidbody", "--config", _write(tmp_path, RB), "--seed", "-1"]) == 2
    assert main(["nosuchmodel", "--config", _write(tmp_path, RB)]) == 2


def test_numerical_failure(tmp_path):
    # the default peakon-antipeakon pair collides near t = 3.3 on the line
    cfg = _write(tmp_path, 'model = "peakons"\nT = 5.0\nmembers = 1\n')
    out = tmp_path / "out"
    assert main(["peakons", "--config", cfg, "--out", str(out), "--no-dumps"]) == 3
    recs = read_diagnostics(out / "diagnostics.ndjson")
    assert recs[-1] == {"t": recs[-1]["t"], "failed": 1.0}
    assert 3.0 < recs[-1]["t"] < 5.0


def test_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["rigidbody", "--config", _write(tmp_path, RB), "--out", str(blocker)]) == 4


def test_reproducible_output(tmp_path):
    cfg = _write(tmp_path, RB)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["rigidbody", "--config", cfg, "--out", str(a)]) == 0
    assert main(["rigidbody", "--config", cfg, "--out", str(b), "--workers", "3"]) == 0
    for rel in ("diagnostics.ndjson", "fields/members_0000050.f64", "plotdata/casimir_mean.csv"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes()


def test_console_script(tmp_path):
    cfg = _write(tmp_path, RB)
    out = tmp_path / "out"
    proc = subprocess.run([sys.executable, "-m", "lasalt.diagio.cli", "rigidbody", "--config",
                           cfg, "--out", str(out), "--no-dumps"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    first = json.loads((out / "diagnostics.ndjson").read_text().splitlines()[0])
    assert first["t"] == 0.0
    assert np.isfinite(list(first.values())).all()


def test_initial_field_from_dump(tmp_path):
    n = 16
    x = np.arange(n) * (2 * np.pi / n)
    dump_field(np.sin(x), {"name": "u0"}, tmp_path / "u0")
    for ref in ("u0", "u0.f64", "u0.json"):
        cfg = _write(tmp_path, f'model = "burgers"\nT = 0.01\nmembers = 2\n[burgers]\nn = {n}\n'
                     f'u0 = "{tmp_path / ref}"\n')
        out = tmp_path / f"out_{ref}"
        assert main(["burgers", "--config", cfg, "--out", str(out), "--no-dumps"]) == 0
        first = read_diagnostics(out / "diagnostics.ndjson")[0]
        assert np.isclose(first["mean_energy"], np.pi)
    bad = _write(tmp_path, f'model = "burgers"\n[burgers]\nn = 32\nu0 = "{tmp_path / "u0"}"\n')
    assert main(["burgers", "--config", bad, "--out", str(tmp_path / "bad")]) == 2
