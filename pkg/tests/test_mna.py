import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from mirrornoise import mna, oracles
from mirrornoise.devmodel import BOLTZMANN, ProcessParams
from mirrornoise.errors import InvalidInputError, SingularMatrixError, ZeroGainError
from mirrornoise.netlist import parse_netlist
from mirrornoise.topologies import MirrorTopoParams, build_mirror

P = ProcessParams()
FOUR_KT = 4 * BOLTZMANN * 300.0


def net(body):
    return parse_netlist("t\n" + body + "\n")


def test_stamp_single_resistor():
    sm = mna.stamp(net("R1 a 0 4k"), 1e3, P)
    assert sm.dimension == 1
    assert sm.matrix[0, 0] == pytest.approx(1 / 4e3)


def test_capacitor_open_at_dc():
    sm = mna.stamp(net("R1 a 0 1k\nC1 a 0 1p"), 0.0, P)
    assert sm.matrix[0, 0] == pytest.approx(1e-3)
    sm = mna.stamp(net("R1 a 0 1k\nC1 a 0 1p"), 1e6, P)
    assert sm.matrix[0, 0].imag == pytest.approx(2 * math.pi * 1e6 * 1e-12)


def test_unknown_ordering():
    c = net("V1 in 0 DC=0 AC=1\nR1 in out 1k\nE1 o2 0 out 0 GAIN=2\nR2 out 0 1k")
    m = mna.Mna(c, P)
    assert m.unknowns == ["v(in)", "v(out)", "v(o2)", "i(v1)", "i(e1)"]


def test_rc_divider_corner():
    c = net("V1 in 0 DC=0 AC=1\nR1 in out 1k\nC1 out 0 1.59155n")
    res = mna.solve_ac(c, "v1", "out", [100e3], P)
    assert res.magnitude[0] == pytest.approx(1 / math.sqrt(2), rel=1e-5)
    assert res.phase_deg[0] == pytest.approx(-45.0, abs=1e-3)


def test_buffer_gain_and_loop_gain():
    c = net("V1 in 0 DC=0 AC=1\nE1 out 0 in out GAIN=1000\nR1 out 0 1k\n.loopgain e1")
    g = mna.solve_ac(c, "v1", "out", [0.0], P).gain[0]
    assert g == pytest.approx(1000 / 1001, rel=1e-12)
    t = mna.loop_gain(c, [0.0], P).gain[0]
    assert t == pytest.approx(1000.0, rel=1e-12)


def test_two_pole_crossover_phase():
    a1, p1, a2, p2 = 100.0, 1e3, 50.0, 1e5
    c = net(f"E1 x 0 0 o GAIN={a1} POLE={p1}\nE2 o 0 x 0 GAIN={a2} POLE={p2}\n"
            "R1 o 0 1k\nR2 x 0 1k\n.loopgain e1")

    def mag(f):
        return a1 * a2 / math.hypot(1, f / p1) / math.hypot(1, f / p2) - 1

    fc = brentq(mag, 1.0, 1e9, xtol=1e-9, rtol=1e-14)
    res = mna.loop_gain(c, [fc], P)
    assert res.magnitude[0] == pytest.approx(1.0, rel=1e-9)
    expected = -math.degrees(math.atan(fc / p1) + math.atan(fc / p2))
    assert res.phase_deg[0] == pytest.approx(expected, abs=0.1)


def test_dtmos_effective_transconductance():
    body = "V1 g 0 DC=0 AC=1\nM1 d g 0 {b} W=500u L=0.25u ID=1u {flag}\nR1 d 0 10k"
    plain = net(body.format(b="0", flag=""))
    dt = net(body.format(b="g", flag="DTMOS"))
    ss = mna.Mna(dt, P).ops["m1"]
    g_dt = mna.solve_ac(dt, "v1", "d", [1.0], P).gain[0]
    assert -g_dt.real / 10e3 == pytest.approx(ss.gm + ss.gmb, rel=1e-6)
    g_pl = mna.solve_ac(plain, "v1", "d", [1.0], P).gain[0]
    assert -g_pl.real / 10e3 == pytest.approx(mna.Mna(plain, P).ops["m1"].gm, rel=1e-9)


def test_transfer_from_resistor():
    h = mna.transfer_from_source(net("R1 a 0 4k"), "r1", "thermal", "a", 1e3, P)
    assert h == pytest.approx(4000.0)
    with pytest.raises(InvalidInputError):
        mna.transfer_from_source(net("R1 a 0 4k"), "r1", "flicker", "a", 1e3, P)


@pytest.mark.parametrize("r_de", [1e3, 50e3, 1e6])
def test_sdcm_transfers(r_de):
    mp = MirrorTopoParams.for_gm(18e-6, r_de, 1e6, P)
    c = build_mirror(mp)
    gmr = 18e-6 * r_de
    h3 = mna.transfer_from_source(c, "m3", "thermal", "out", 1e3, P)
    hr = mna.transfer_from_source(c, "rde", "thermal", "out", 1e3, P)
    assert abs(h3) == pytest.approx(1e6 / (1 + gmr), rel=1e-9)
    assert abs(hr) == pytest.approx(gmr * 1e6 / (1 + gmr), rel=1e-9)


def test_resistor_noise_total():
    c = net("V1 in 0 DC=0 AC=1\nR1 in a 1meg\nR2 a 0 4k\n.noise out=a in=v1")
    rep = mna.noise_at_output(c, f_grid=[1e3], process=P)
    assert set(rep.contributions) == {"r1:thermal", "r2:thermal"}
    one = mna.noise_at_output(net("I1 0 a DC=0 AC=1\nR1 a 0 4k"), "a", "i1", [1e3], P)
    assert one.total[0] == pytest.approx(FOUR_KT * 4e3, rel=1e-12)
    assert one.input_referred[0] == pytest.approx(FOUR_KT / 4e3, rel=1e-12)


def test_sdcm_current_psd_example():
    mp = MirrorTopoParams.for_gm(18e-6, 100e3, 1e6, P)
    rep = mna.noise_at_output(build_mirror(mp), f_grid=[1e3], process=P, mechanisms=("thermal",))
    i_psd = (rep.contributions["m3:thermal"][0] + rep.contributions["rde:thermal"][0]) / 1e12
    assert i_psd == pytest.approx(1.0651e-25, rel=1e-4)
    assert i_psd == pytest.approx(FOUR_KT * 18e-6 / 2.8, rel=1e-9)


def test_conventional_current_psd_example():
    mp = MirrorTopoParams.for_gm(3e-6, 0.0, 1e6, P)
    rep = mna.noise_at_output(build_mirror(mp), f_grid=[1e3], process=P, mechanisms=("thermal",))
    assert rep.contributions["m3:thermal"][0] / 1e12 == pytest.approx(4.970e-26, rel=1e-3)


def test_superposition_matches_per_source_transfers():
    mp = MirrorTopoParams.for_gm(10e-6, 20e3, 1e6, P)
    c = build_mirror(mp)
    f = 2e3
    rep = mna.noise_at_output(c, f_grid=[f], process=P)
    m = mna.Mna(c, P)
    total = 0.0
    for key, el, psd in m.noise_sources(mna.MECHANISMS, c.noise.exclude):
        h = mna.transfer_from_source(c, el.label, key.split(":")[1], "out", f, P)
        assert rep.contributions[key][0] == pytest.approx(psd(f) * abs(h) ** 2, rel=1e-12)
        total += psd(f) * abs(h) ** 2
    assert rep.total[0] == pytest.approx(total, rel=1e-12)
    assert sum(rep.fractions(0).values()) == pytest.approx(1.0, rel=1e-12)


def test_macroamp_white_noise_source():
    c = net("V1 in 0 DC=0 AC=1\nE1 out 0 in out GAIN=1meg VNOISE=1e-16\nR1 out 0 1k")
    rep = mna.noise_at_output(c, "out", "v1", [1e3], P, mechanisms=("white",))
    assert rep.contributions["e1:white"][0] == pytest.approx(1e-16, rel=1e-5)


def test_zero_gain_is_reported():
    c = net("V1 in 0 DC=0 AC=1\nR1 in 0 1k\nR2 out 0 1k")
    rep = mna.noise_at_output(c, "out", "v1", [1e3], P)
    assert rep.input_referred is None and rep.notes
    assert rep.total[0] == pytest.approx(FOUR_KT * 1e3)
    with pytest.raises(ZeroGainError):
        mna.require_input_referred(rep)


def test_noise_needs_positive_frequency():
    with pytest.raises(InvalidInputError):
        mna.noise_at_output(net("I1 0 a DC=0 AC=1\nR1 a 0 1k"), "a", "i1", [0.0], P)


def test_singular_matrix_reports_frequency():
    c = net("I1 0 a DC=0 AC=1\nR1 a 0 1k\nC1 a b 1p\nC2 b c 1p")
    with pytest.raises(SingularMatrixError) as ei:
        mna.solve_ac(c, "i1", "a", [0.0], P)
    assert ei.value.freq == 0.0


def test_grid_validation():
    c = net("I1 0 a DC=0 AC=1\nR1 a 0 1k")
    with pytest.raises(InvalidInputError):
        mna.solve_ac(c, "i1", "a", [10.0, 1.0], P)
    g = mna.log_grid(1e3, 1e7, 5)
    assert g[0] == 1e3 and g[-1] == 1e7 and np.allclose(np.diff(np.log10(g)), 1.0)


def test_input_impedance_examples():
    z = mna.input_impedance(net("R1 a 0 4k"), ("a", "0"), [1.0, 1e6], P)
    assert np.allclose(z.gain, 4000.0)
    z = mna.input_impedance(net("C1 a 0 1p"), ("a", "0"), [50e3], P)
    assert z.magnitude[0] == pytest.approx(3.183e6, rel=1e-3)


def test_input_impedance_removes_port_driver():
    c = net("V1 a 0 DC=0 AC=1\nR1 a b 1k\nR2 b 0 3k")
    z = mna.input_impedance(c, ("a", "0"), [1e3], P)
    assert z.gain[0] == pytest.approx(4000.0)


def test_bulk_capacitance_lowers_impedance():
    body = "M1 d g 0 {b} W=500u L=0.25u ID=1u {flag}\nR1 d 0 10k\nR2 g 0 1meg"
    plain = net(body.format(b="0", flag=""))
    dt = net(body.format(b="g", flag="DTMOS"))
    f = mna.log_grid(1e3, 1e7, 9)
    z0 = mna.input_impedance(plain, ("g", "0"), f, P).magnitude
    z1 = mna.input_impedance(dt, ("g", "0"), f, P).magnitude
    assert np.all(z1 < z0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=1.0, max_value=1e6), min_size=3, max_size=3),
       st.floats(min_value=1e-13, max_value=1e-9))
def test_impedance_reciprocity(rs, cap):
    c = net(f"R1 a b {rs[0]!r}\nR2 b 0 {rs[1]!r}\nR3 a 0 {rs[2]!r}\nC1 b 0 {cap!r}")
    f = [1e2, 1e5]
    za = mna.input_impedance(c, ("a", "b"), f, P).gain
    zb = mna.input_impedance(c, ("b", "a"), f, P).gain
    assert np.allclose(za, zb, rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([1e-6, 3e-6, 18e-6, 100e-6]),
       st.one_of(st.just(0.0), st.floats(min_value=1.0, max_value=1e6)),
       st.floats(min_value=1.0, max_value=1e5), st.floats(min_value=0.5, max_value=1.0))
def test_sdcm_noise_nonincreasing_in_r_de(gm, r1, dr, gamma):
    p = ProcessParams(gamma_noise=gamma)
    out = []
    for r in (r1, r1 + dr):
        mp = MirrorTopoParams.for_gm(gm, r, 1e6, p)
        out.append(mna.noise_at_output(build_mirror(mp), f_grid=[1e3], process=p,
                                       mechanisms=("thermal",)).total[0])
    assert out[1] <= out[0] * (1 + 1e-12)


def test_low_gamma_noise_rises_with_small_r_de():
    # d/dR of the degenerated PSD at R_DE = 0 has the sign of 1 - 2*gamma
    p = ProcessParams(gamma_noise=0.25)
    out = [mna.noise_at_output(build_mirror(MirrorTopoParams.for_gm(10e-6, r, 1e6, p)),
                               f_grid=[1e3], process=p, mechanisms=("thermal",)).total[0]
           for r in (0.0, 1e3)]
    assert out[1] > out[0]


def test_zero_r_de_reproduces_conventional():
    a = MirrorTopoParams.for_gm(18e-6, 0.0, 1e6, P)
    rep = mna.noise_at_output(build_mirror(a), f_grid=[1e3], process=P, mechanisms=("thermal",))
    exact = oracles.cm_output_noise(oracles.MirrorParams(18e-6, 0.0, 1e6))
    assert rep.total[0] == pytest.approx(exact, rel=1e-12)


def test_thread_count_does_not_change_results(monkeypatch):
    c = build_mirror(MirrorTopoParams())
    f = mna.log_grid(1.0, 1e8, 64)
    monkeypatch.setenv("MIRRORNOISE_THREADS", "1")
    a = mna.noise_at_output(c, f_grid=f, process=P)
    monkeypatch.setenv("MIRRORNOISE_THREADS", "7")
    b = mna.noise_at_output(c, f_grid=f, process=P)
    assert np.array_equal(a.total, b.total)
    for k in a.contributions:
        assert np.array_equal(a.contributions[k], b.contributions[k])


def test_bad_thread_env(monkeypatch):
    monkeypatch.setenv("MIRRORNOISE_THREADS", "many")
    with pytest.raises(InvalidInputError):
        mna.worker_count()


def test_loop_gain_errors():
    with pytest.raises(InvalidInputError):
        mna.loop_gain(net("R1 a 0 1k"), [1.0], P)
    with pytest.raises(InvalidInputError):
        mna.loop_gain(net("R1 a 0 1k"), [1.0], P, targets=("r1",))


def test_csv_rows_shape():
    rep = mna.noise_at_output(build_mirror(MirrorTopoParams()), f_grid=[1e3, 1e4], process=P)
    header, body = rep.rows()
    assert header[0] == "freq_hz" and header[-2:] == ["total_v2hz", "input_referred_v2hz"]
    assert len(body) == 2 and all(len(r) == len(header) for r in body)
