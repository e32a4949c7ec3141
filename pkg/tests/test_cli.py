import json
import re

import pytest

from mirrornoise.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def sdcm_net(tmp_path, capsys):
    code, out, _ = run(capsys, "topo", "sdcm")
    assert code == 0
    path = tmp_path / "sdcm.cir"
    path.write_text(out)
    return path


def test_oracle_sdcm_gm(capsys):
    code, out, _ = run(capsys, "oracle", "sdcm_gm", "gm3=18u", "r_de=100k")
    assert code == 0
    d = json.loads(out)
    assert d["exact"] == pytest.approx(6.4286e-6, rel=1e-4)
    assert d["approx"] == pytest.approx(1e-5)


def test_oracle_nan_is_null(capsys):
    code, out, _ = run(capsys, "oracle", "sdcm_gm", "gm3=18u", "r_de=0")
    assert code == 0 and json.loads(out)["approx"] is None


@pytest.mark.parametrize("argv", [
    ["oracle", "sdcm_gm", "gm3=18u"],
    ["oracle", "sdcm_gm", "gm3=18u", "r_de=100k", "bogus=1"],
    ["oracle", "sdcm_gm", "gm3"],
    ["oracle", "nope"],
    [],
    ["plot", "x.csv", "--x", "a"],
])
def test_usage_errors(capsys, argv):
    code, out, err = run(capsys, *argv)
    assert code == 1 and out == "" and err


def test_noise_spot_fractions(capsys, sdcm_net):
    code, out, _ = run(capsys, "noise", sdcm_net, "--spot", "100k")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "source,psd_v2hz,fraction"
    total = next(l for l in lines if l.startswith("total,"))
    assert total.endswith(",1.000")
    parts = [float(l.split(",")[2]) for l in lines[1:] if l.split(",")[0].count(":")]
    assert sum(parts) == pytest.approx(1.0, abs=1e-5)


def test_analyze_zin_loopgain(capsys, tmp_path, sdcm_net):
    code, out, _ = run(capsys, "analyze", sdcm_net, "--in", "iref", "--out", "out",
                       "--points", "3")
    assert code == 0 and len(out.splitlines()) == 4
    code, out, _ = run(capsys, "zin", sdcm_net, "--port", "out,0", "--spot", "1k")
    assert code == 0 and out.startswith("freq_hz,")
    code, tc, _ = run(capsys, "topo", "tc_half")
    net = tmp_path / "tc.cir"
    net.write_text(tc)
    code, out, _ = run(capsys, "loopgain", net, "--fstart", "1", "--fstop", "1meg",
                       "--points", "7")
    assert code == 0 and len(out.splitlines()) == 8


def test_parse_error_exit_2(capsys, tmp_path):
    bad = tmp_path / "bad.cir"
    bad.write_text("r1 a 0 1k\nr2 a\n")
    code, out, err = run(capsys, "noise", bad, "--spot", "1k")
    assert code == 2 and out == ""
    assert re.search(r"bad\.cir:2", err)


def test_missing_file_exit_2(capsys, tmp_path):
    code, out, _ = run(capsys, "sweep", tmp_path / "missing.json")
    assert code == 2 and out == ""


def test_singular_matrix_exit_3(capsys, tmp_path):
    # an amplifier whose output is its own input leaves a zero row
    net = tmp_path / "loop.cir"
    net.write_text("singular\nV1 a 0 DC=0 AC=1\nR1 a b 1k\nE1 b 0 b 0 GAIN=1\n")
    code, out, err = run(capsys, "analyze", net, "--in", "v1", "--out", "a", "--spot", "1k")
    assert code == 3 and out == "" and "singular" in err
    code, out, err = run(capsys, "analyze", net, "--in", "zz", "--out", "a", "--spot", "1k")
    assert code == 2 and out == "" and "zz" in err


def test_optimize_infeasible_exit_4(capsys, tmp_path):
    spec = tmp_path / "d.json"
    spec.write_text(json.dumps({"w3": ["1u"], "l3": ["1u"], "r_de": [0, "50k"],
                                "min_headroom_diode": 0.9}))
    code, out, err = run(capsys, "optimize", spec)
    assert code == 4 and out == "" and "min_headroom_diode" in err


def test_optimize_ok(capsys, tmp_path):
    spec = tmp_path / "d.json"
    spec.write_text(json.dumps({"w3": ["1u", "5u"], "l3": ["1u"], "r_de": [0, "50k"]}))
    dest = tmp_path / "o.json"
    code, out, _ = run(capsys, "optimize", spec, "--out", dest)
    assert code == 0 and out == ""
    d = json.loads(dest.read_text())
    assert d["r_de"] == 50e3 and d["noise_ratio"] < 1


def test_sweep_csv_plots(capsys, tmp_path):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"topology": "sdcm", "variable": "r_de",
                                "values": ["1k", "10k", "100k"],
                                "observables": ["output_noise_psd"],
                                "mechanisms": ["thermal"]}))
    csv = tmp_path / "s.csv"
    assert run(capsys, "sweep", spec, "--out", csv)[0] == 0
    code, out, _ = run(capsys, "sweep", spec)
    assert out == csv.read_text()
    svg1, svg2 = tmp_path / "a.svg", tmp_path / "b.svg"
    for dest in (svg1, svg2):
        code, out, _ = run(capsys, "plot", csv, "--x", "r_de", "--y", "output_noise_psd",
                           "--logx", "--logy", "--out", dest)
        assert code == 0 and out == ""
    text = svg1.read_text()
    assert text == svg2.read_text()
    pts = re.search(r'points="([^"]+)"', text).group(1).split()
    ys = [float(p.split(",")[1]) for p in pts]
    # svg y grows downward, so a decreasing curve has increasing pixel y
    assert ys == sorted(ys) and len(set(ys)) == 3
    for label in ("1000", "1e+04", "1e+05"):
        assert f">{label}</text>" in text


def test_plot_errors(capsys, tmp_path):
    csv = tmp_path / "t.csv"
    csv.write_text("a,b\n1,2\n")
    dest = tmp_path / "t.svg"
    code, out, err = run(capsys, "plot", csv, "--x", "a", "--y", "b", "--out", dest)
    assert code == 2 and not dest.exists() and "2 rows" in err
    csv.write_text("a,b\n1,2\n2,3\n")
    code, _, err = run(capsys, "plot", csv, "--x", "a", "--y", "c", "--out", dest)
    assert code == 2 and "'c'" in err
    code, _, _ = run(capsys, "plot", csv, "--x", "a", "--y", "b", "--out", dest)
    assert code == 0
    assert dest.read_text().count("<polyline") == 1


def test_topo_param_file(capsys, tmp_path):
    params = tmp_path / "p.txt"
    params.write_text("r_de = 20k\nw3 = 5u\n")
    code, out, _ = run(capsys, "topo", "sdcm", params)
    assert code == 0 and "20k" in out.lower()
    params.write_text("nonsense = 1\n")
    code, out, _ = run(capsys, "topo", "sdcm", params)
    assert code == 2 and out == ""


def test_every_topology_roundtrips(capsys, tmp_path):
    for kind in ("conventional", "sdcm", "tc_half", "full_ia"):
        code, out, _ = run(capsys, "topo", kind)
        net = tmp_path / f"{kind}.cir"
        net.write_text(out)
        code, out, err = run(capsys, "noise", net, "--spot", "10k")
        assert code == 0, err


def test_version(capsys):
    code, out, _ = run(capsys, "--version")
    assert code == 0 and "0.1.0" in out
