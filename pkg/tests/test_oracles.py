import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mirrornoise import oracles
from mirrornoise.devmodel import BOLTZMANN
from mirrornoise.errors import InvalidInputError

FOUR_KT = 4 * BOLTZMANN * 300.0

gms = st.floats(min_value=1e-7, max_value=1e-3)
rs = st.floats(min_value=1.0, max_value=1e7)
gammas = st.floats(min_value=0.1, max_value=3.0)


def test_cm_output_noise_example():
    v = oracles.cm_output_noise(oracles.MirrorParams(3e-6, 0.0, 1e6))
    assert v == pytest.approx(6.627e-14, rel=1e-3)
    assert math.sqrt(v) == pytest.approx(257e-9, rel=2e-3)
    tiny = oracles.cm_output_noise(oracles.MirrorParams(1e-30, 0.0, 1e6))
    assert tiny == pytest.approx(FOUR_KT * 1e6, rel=1e-12)


def test_sdcm_effective_gm_examples():
    exact, approx = oracles.sdcm_effective_gm(18e-6, 100e3)
    assert exact == pytest.approx(6.4286e-6, rel=1e-4)
    assert approx == pytest.approx(10e-6)
    assert oracles.sdcm_approx_error(18e-6, 100e3) == pytest.approx(0.5556, abs=1e-4)
    exact, approx = oracles.sdcm_effective_gm(18e-6, 0.0)
    assert exact == 18e-6 and math.isnan(approx)
    assert oracles.sdcm_approx_error(1e-4, 1e6) == pytest.approx(0.01, rel=1e-9)


def test_sdcm_output_noise_examples():
    assert oracles.sdcm_current_psd(18e-6, 100e3) == pytest.approx(1.0651e-25, rel=1e-4)
    p0 = oracles.MirrorParams(18e-6, 0.0, 1e6)
    exact, approx = oracles.sdcm_output_noise(p0)
    assert exact == pytest.approx(oracles.cm_output_noise(p0), rel=1e-15)
    assert math.isnan(approx)


def test_ia_input_noise_examples():
    p = oracles.IaNoiseParams(29.75e-6, 1e-30, 1e-9)
    assert math.sqrt(oracles.ia_input_noise(p)) == pytest.approx(23.6e-9, rel=1e-3)
    first = FOUR_KT / 29.75e-6
    big = oracles.ia_input_noise(oracles.IaNoiseParams(29.75e-6, 10e-6, 50e3)) - first
    small = oracles.ia_input_noise(oracles.IaNoiseParams(29.75e-6, 10e-6, 4e3)) - first
    # (4kT*1e-5 + 4kT/25k)*(25k)^2 and the same at R_IN/2 = 2k
    assert big == pytest.approx((FOUR_KT * 1e-5 + FOUR_KT / 25e3) * 25e3 ** 2, rel=1e-12)
    assert big == pytest.approx(5.1775e-16, rel=1e-4)
    assert small == pytest.approx(3.3799e-17, rel=1e-4)
    assert small < big / 15


def test_ia_terms_sum():
    terms = oracles.ia_input_noise_terms(29.75e-6, FOUR_KT * 10e-6, 4e3)
    total = oracles.ia_input_noise(oracles.IaNoiseParams(29.75e-6, 10e-6, 4e3))
    assert sum(terms.values()) == pytest.approx(total, rel=1e-14)


def test_dtmos_ratio_examples():
    assert oracles.dtmos_noise_ratio(1e-5, 0.0) == 1.0
    assert oracles.dtmos_noise_ratio(1.0, 0.2108) == pytest.approx(0.8259, abs=1e-4)


def test_appendix_examples():
    a, b = oracles.appendix_transfers(18e-6, 100e3)
    assert (a, b) == (pytest.approx(0.6429, abs=1e-4), pytest.approx(0.3571, abs=1e-4))
    assert oracles.appendix_transfers(1e-5, 0.0) == (0.0, 1.0)


@pytest.mark.parametrize("call", [
    lambda: oracles.MirrorParams(0, 1, 1),
    lambda: oracles.MirrorParams(1e-6, -1, 1),
    lambda: oracles.IaNoiseParams(1e-6, 1e-6, 0),
    lambda: oracles.dtmos_noise_ratio(0, 1),
    lambda: oracles.sdcm_effective_gm(1e-6, -1),
])
def test_invalid_inputs(call):
    with pytest.raises(InvalidInputError):
        call()


@given(gms, rs)
def test_partition_sums_to_one(gm, r):
    a, b = oracles.appendix_transfers(gm, r)
    assert a + b == pytest.approx(1.0, rel=1e-15)


@given(gms, rs, gammas)
def test_power_recombination(gm, r, g):
    a, b = oracles.appendix_transfers(gm, r)
    recomb = a * a * FOUR_KT / r + b * b * FOUR_KT * g * gm
    assert recomb == pytest.approx(oracles.sdcm_current_psd(gm, r, g), rel=1e-12)


@given(gms, rs)
def test_gamma_one_collapse(gm, r):
    assert oracles.sdcm_current_psd(gm, r, 1.0) == pytest.approx(
        FOUR_KT * gm / (1 + gm * r), rel=1e-12)


@given(gms, rs, st.floats(min_value=1e3, max_value=1e8), gammas)
def test_approx_envelope(gm, r, rd, g):
    if gm * r <= 2:
        return
    exact, approx = oracles.sdcm_output_noise(oracles.MirrorParams(gm, r, rd, g))
    # (x/(1+x))^2 >= 1 - 2/x; the tighter 1 - 1/x fails for every x > 1.618
    assert approx * (1 - 2 / (gm * r)) <= exact <= approx * (1 + 1e-12)


def test_one_over_x_envelope_is_too_tight():
    exact, approx = oracles.sdcm_output_noise(oracles.MirrorParams(1e-4, 3e4, 1e6))
    assert exact < approx * (1 - 1 / 3.0)


@given(gms, gms, st.floats(min_value=1.0, max_value=1e6), st.floats(min_value=1.01, max_value=10))
def test_ia_noise_monotone(gm1, gm3, r_in, k):
    base = oracles.ia_input_noise(oracles.IaNoiseParams(gm1, gm3, r_in))
    assert oracles.ia_input_noise(oracles.IaNoiseParams(gm1, gm3, r_in * k)) >= base
    assert oracles.ia_input_noise(oracles.IaNoiseParams(gm1, gm3 * k, r_in)) >= base
    assert oracles.ia_input_noise(oracles.IaNoiseParams(gm1 * k, gm3, r_in)) < base


@given(gms, st.floats(min_value=0.0, max_value=1e-3), st.floats(min_value=1e-9, max_value=1e-3))
def test_dtmos_ratio_decreasing(gm, gmb, d):
    assert oracles.dtmos_noise_ratio(gm, gmb + d) < oracles.dtmos_noise_ratio(gm, gmb)
