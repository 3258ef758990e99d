import json

import numpy as np
import pytest

from gramdyson.cli import main, parse_complex, parse_grid, parse_profile, UsageError
from gramdyson.config import DEFAULTS
from gramdyson.profile import random_profile, save_profile
from gramdyson.qve import read_density_csv


def _run(capsys, *argv):
    rc = main([str(a) for a in argv])
    return rc, capsys.readouterr()


def _field(out, key):
    for line in out.splitlines():
        if line.startswith(key + " "):
            return line[len(key) + 1:]
    raise KeyError(key)


def test_parsers():
    assert parse_profile("uniform:3:2").s.shape == (3, 2)
    assert np.array_equal(parse_profile("random:4:3:9").s, random_profile(4, 3, 9).s)
    assert parse_complex("0.5+0.1i") == 0.5 + 0.1j
    assert len(parse_grid("0.1:2:5")) == 5
    for bad in ("uniform:3", "random:a:b", "nowhere.json"):
        with pytest.raises(UsageError):
            parse_profile(bad)
    with pytest.raises(UsageError):
        parse_grid("0:1:3")
    with pytest.raises(UsageError):
        parse_complex("one")


def test_density_square(tmp_path, capsys):
    rc, cap = _run(capsys, "density", "--profile", "uniform:40:40", "--grid", "0.01:2.2:200",
                   "--output", tmp_path)
    assert rc == 0
    assert float(_field(cap.out, "point_mass")) == 0
    lo, hi = (float(x) for x in _field(cap.out, "support").strip("[]").split(","))
    assert lo == pytest.approx(0.01) and hi == pytest.approx(2.0, abs=0.02)
    grid, values = read_density_csv(tmp_path / "density.csv")
    assert len(grid) == 200 and np.all(values >= 0)


def test_density_rectangle_json(tmp_path, capsys):
    rc, cap = _run(capsys, "density", "--profile", "uniform:40:20", "--grid", "0.005:2.2:200",
                   "--format", "json", "--output", tmp_path)
    assert rc == 0
    assert float(_field(cap.out, "point_mass")) == pytest.approx(0.5, abs=1e-10)
    obj = json.loads((tmp_path / "density.json").read_text())
    assert obj["point_mass"] == pytest.approx(0.5, abs=1e-10)


def test_profile_from_file(tmp_path, capsys):
    save_profile(random_profile(6, 4, 1), tmp_path / "prof.json")
    rc, _ = _run(capsys, "density", "--profile", tmp_path / "prof.json", "--grid", "0.05:3:20",
                 "--output", tmp_path)
    assert rc == 0


def test_usage_errors(tmp_path, capsys):
    rc, cap = _run(capsys, "density", "--profile", tmp_path / "missing.json", "--output", tmp_path)
    assert rc == 2 and "not found" in cap.err
    assert _run(capsys, "frobnicate")[0] == 2
    assert _run(capsys, "stability", "--profile", "uniform:4:4", "--z", "1-1i",
                "--output", tmp_path)[0] == 2
    assert _run(capsys, "capacity", "--profile", "uniform:4:4", "--sigma2", "-1")[0] == 2
    assert _run(capsys, "--version")[0] == 0


def test_stability_inside_upper_half_plane(tmp_path, capsys):
    rc, cap = _run(capsys, "stability", "--profile", "random:20:15:2", "--z", "0.5+0.1i",
                   "--output", tmp_path)
    assert rc == 0
    assert 0 < float(_field(cap.out, "norm_F")) < 1
    obj = json.loads((tmp_path / "stability.json").read_text())
    assert obj["identity_error"] <= 1e-8


def test_zero_subcommand(tmp_path, capsys):
    rc, cap = _run(capsys, "zero", "--profile", "uniform:20:20", "--output", tmp_path)
    assert rc == 0 and _field(cap.out, "kind") == "hard"
    assert float(_field(cap.out, "singular_coefficient")) == pytest.approx(np.sqrt(2) / np.pi,
                                                                            abs=1e-9)
    rc, cap = _run(capsys, "zero", "--profile", "uniform:40:20", "--grid", "0.002:2.2:400",
                   "--output", tmp_path)
    assert rc == 0 and float(_field(cap.out, "point_mass")) == pytest.approx(0.5)


def test_capacity_large_noise(capsys):
    rc, cap = _run(capsys, "capacity", "--profile", "uniform:20:20", "--sigma2", "1e9",
                   "--grid", "0.001:2.1:300")
    assert rc == 0
    assert 0 <= float(_field(cap.out, "capacity")) < 1e-8


def test_ri_sweep_subcommand(tmp_path, capsys):
    rc, cap = _run(capsys, "ri-sweep", "--count", 30, "--max-dim", 4, "--seed", 1,
                   "--output", tmp_path)
    assert rc == 0 and _field(cap.out, "counterexamples") == "0"
    lines = (tmp_path / "ri_sweep.csv").read_text().splitlines()
    assert lines[0] == "dim,seed,lhs,rhs_core,ratio" and len(lines) == 31


def test_verify_is_byte_reproducible(tmp_path, capsys):
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        rc, cap = _run(capsys, "verify", "--profile", "uniform:40:40", "--trials", 1, "--seed", 7,
                       "--output", d)
        assert rc in (0, 1)
        outs.append(d)
    for f in ("verify.json", "verify.csv", "verify_manifest.json"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


def test_manifest_lists_every_default(tmp_path, capsys):
    _run(capsys, "density", "--profile", "uniform:5:5", "--grid", "0.1:1:5", "--output", tmp_path)
    man = json.loads((tmp_path / "density_manifest.json").read_text())
    assert set(DEFAULTS) <= set(man["config"])
    assert man["outputs"] == ["density.csv"] and man["subcommand"] == "density"
    assert "timestamp" not in json.dumps(man)
