import dataclasses
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from twostate.cli import main
from twostate.config import OUTPUT_ENV, ExperimentConfig, parse_config
from twostate.errors import ConfigError

SMALL = """\
[domain]
dim = 1
T = 0.2

[grid]
resolution = 21

[time]
dt = 0.01

[baseline]
M = 4.0
A0 = 0.5
p0 = 0.5
qplus0 = 1.0
qminus0 = -0.5
variation = 0.3

[weights]
x0 = -0.1
lambda = 0.1
time_cells = 41
s_grid = 2, 4, 8, 16, 32
family_size = 3

[study]
amplitudes = 0.0, 0.1
seeds = 0, 1, 2

[reconstruct]
tolerance = 1e-3

[forward]
initial = {initial}
manufactured = false
export_every = 5

[output]
directory = {out}
"""


def write_cfg(tmp_path, name="run", initial="eigenmode", edits=None):
    text = SMALL.format(initial=initial, out=tmp_path / f"out_{name}")
    for old, new in (edits or {}).items():
        assert old in text, old
        text = text.replace(old, new)
    path = tmp_path / f"{name}.ini"
    path.write_text(text)
    return path


def test_defaults_round_trip():
    cfg = ExperimentConfig()
    assert parse_config(cfg.to_ini()) == cfg


@settings(max_examples=25, deadline=None)
@given(T=st.sampled_from([0.1, 0.5, 1.0]), steps=st.integers(2, 400), lam=st.floats(1e-3, 10),
       seeds=st.lists(st.integers(0, 1000), min_size=1, max_size=4), order=st.one_of(st.none(), st.integers(0, 4)))
def test_round_trip(T, steps, lam, seeds, order):
    cfg = dataclasses.replace(ExperimentConfig(), T=T, dt=T / steps, lam=lam, seeds=tuple(seeds), order=order)
    back = parse_config(cfg.to_ini())
    assert back == cfg
    assert back.to_ini() == cfg.to_ini()


@pytest.mark.parametrize("old,new,key", [
    ("dt = 0.01", "dt = 0.03", "dt"),
    ("resolution = 21", "resolution = 2", "resolution"),
    ("lambda = 0.1", "lambda = -1", "lambda"),
    ("x0 = -0.1", "x0 = 0.5", "x0"),
    ("time_cells = 41", "time_cells = 40", "time_cells"),
    ("amplitudes = 0.0, 0.1", "amplitudes = 0.1, 0.0", "amplitudes"),
    ("initial = eigenmode", "initial = gaussian", "initial"),
    ("M = 4.0", "M = abc", "M"),
])
def test_errors_name_the_line(old, new, key):
    text = SMALL.format(initial="eigenmode", out="x").replace(old, new)
    line = text.splitlines().index(new) + 1
    with pytest.raises(ConfigError) as info:
        parse_config(text, "c.ini")
    msg = str(info.value)
    assert msg.startswith(f"c.ini:{line}:"), msg
    assert key in msg


def test_unknown_key_and_section():
    base = SMALL.format(initial="eigenmode", out="x")
    with pytest.raises(ConfigError, match=r"c.ini:7: unknown key 'cells'"):
        parse_config(base.replace("resolution = 21", "resolution = 21\ncells = 3"), "c.ini")
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config(base + "\n[extra]\nx = 1\n", "c.ini")


def test_missing_file_is_config_error(tmp_path, capsys):
    assert main(["validate-config", str(tmp_path / "none.ini")]) == 1
    assert "config error" in capsys.readouterr().err


def test_validate_config(tmp_path, capsys):
    assert main(["validate-config", str(write_cfg(tmp_path))]) == 0
    assert "[weights]" in capsys.readouterr().out
    bad = write_cfg(tmp_path, "bad", edits={"dt = 0.01": "dt = 0.3"})
    assert main(["validate-config", str(bad)]) == 1


@pytest.mark.parametrize("initial", ["eigenmode", "probe1", "probe2"])
def test_forward(tmp_path, initial):
    path = write_cfg(tmp_path, initial=initial)
    assert main(["forward", str(path)]) == 0
    out = tmp_path / "out_run"
    traj = (out / "trajectory.txt").read_text()
    assert len([l for l in traj.splitlines() if not l.startswith("#")]) > 0
    diag = (out / "diagnostics.txt").read_text()
    assert ("norm_drift" in diag) == (initial == "eigenmode")


def test_carleman_scan_rows(tmp_path):
    assert main(["carleman-scan", str(write_cfg(tmp_path))]) == 0
    lines = (tmp_path / "out_run" / "carleman_scan.csv").read_text().splitlines()
    assert lines[0] == "s,worst_ratio,argmax_member_id"
    assert len(lines) == 6


def test_stability_rows(tmp_path):
    assert main(["stability", str(write_cfg(tmp_path))]) == 0
    lines = (tmp_path / "out_run" / "stability.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 3
    zero_rows = [l for l in lines[1:] if l.split(",")[1] == "0"]
    assert len(zero_rows) == 3 and all(l.split(",")[4] == "" for l in zero_rows)


def test_reconstruct_tolerance_exit(tmp_path):
    # T = 0.2 with dt = 0.01 is far too coarse for a 1e-12 tolerance
    path = write_cfg(tmp_path, edits={"tolerance = 1e-3": "tolerance = 1e-12"})
    assert main(["reconstruct", str(path)]) == 3
    text = (tmp_path / "out_run" / "recovered.txt").read_text()
    assert "# errors" in text


def test_env_override(tmp_path, monkeypatch):
    target = tmp_path / "elsewhere"
    monkeypatch.setenv(OUTPUT_ENV, str(target))
    assert main(["carleman-scan", str(write_cfg(tmp_path))]) == 0
    assert (target / "carleman_scan.csv").exists()
    assert not (tmp_path / "out_run").exists()


def test_reruns_are_byte_identical(tmp_path):
    outputs = []
    for name in ("a", "b"):
        path = write_cfg(tmp_path, name)
        for cmd in ("forward", "carleman-scan", "stability", "reconstruct"):
            main([cmd, str(path)])
        out = tmp_path / f"out_{name}"
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outputs[0].keys() == {"trajectory.txt", "diagnostics.txt", "carleman_scan.csv",
                                 "stability.csv", "recovered.txt"}
    assert outputs[0] == outputs[1]


def test_nonpositive_dt_rejected(tmp_path, capsys):
    bad = write_cfg(tmp_path, "neg", edits={"dt = 0.01": "dt = -0.01"})
    assert main(["forward", str(bad)]) == 1
    assert "dt" in capsys.readouterr().err


def test_zero_family_rejected(tmp_path):
    assert main(["carleman-scan", str(write_cfg(tmp_path, edits={"family_size = 3": "family_size = 0"}))]) == 1


def test_forward_diagnostics(tmp_path, capsys):
    path = write_cfg(tmp_path, edits={"manufactured = false": "manufactured = true"})
    assert main(["forward", str(path)]) == 0
    out = capsys.readouterr().out
    drift = float(out.split("norm_drift = ")[1].split()[0])
    orders = [float(v) for v in out.split("manufactured_orders = ")[1].split()]
    assert drift <= 1e-8 and min(orders) >= 1.9


def test_stability_zero_amplitude_row(tmp_path):
    assert main(["stability", str(write_cfg(tmp_path))]) == 0
    rows = (tmp_path / "out_run" / "stability.csv").read_text().splitlines()[1:]
    for row in rows:
        seed, amp, lhs, rhs, ratio, grid, dt = row.split(",")
        if float(amp) == 0:
            assert float(lhs) == 0 and float(rhs) == 0 and ratio == ""


def test_reconstruct_identical_pair_zero(tmp_path):
    path = write_cfg(tmp_path, edits={"tolerance = 1e-3": "amplitude = 0.0\ntolerance = 1e-3"})
    assert main(["reconstruct", str(path)]) == 0
    body = [l for l in (tmp_path / "out_run" / "recovered.txt").read_text().splitlines() if not l.startswith("#")]
    assert body and all(float(v) == 0 for l in body for v in l.split()[2:])


def test_reconstruct_synthetic_pair(tmp_path):
    config = Path(__file__).resolve().parents[1] / "configs" / "reconstruct1d.ini"
    text = config.read_text().replace("out/reconstruct1d", str(tmp_path / "rec"))
    path = tmp_path / "rec.ini"
    path.write_text(text)
    assert main(["reconstruct", str(path)]) == 0
    summary = (tmp_path / "rec" / "recovered.txt").read_text().splitlines()[-1]
    values = [float(part.split("=")[1]) for part in summary.split()[2:]]
    assert max(values) <= 1e-3, summary
