"""Closed-form noise and transconductance expressions for the mirror and IA.

These are written out by hand and never call into the MNA engine, so they
serve as an independent reference for it (and as fast evaluators for the
optimizer).
"""

from __future__ import annotations

from dataclasses import dataclass

from .devmodel import BOLTZMANN
from .errors import InvalidInputError


@dataclass(frozen=True)
class MirrorParams:
    gm3: float
    r_de: float
    r_d: float
    gamma_noise: float = 1.0
    temperature: float = 300.0

    def __post_init__(self):
        if not (self.gm3 > 0 and self.r_de >= 0 and self.r_d > 0):
            raise InvalidInputError("mirror needs gm3 > 0, r_de >= 0, r_d > 0")
        if not (self.gamma_noise > 0 and self.temperature > 0):
            raise InvalidInputError("gamma_noise and temperature must be positive")

    @property
    def four_kt(self) -> float:
        return 4.0 * BOLTZMANN * self.temperature


@dataclass(frozen=True)
class IaNoiseParams:
    gm1: float  # effective: gm1 + gmb1 for a DTMOS input
    gm3: float  # effective mirror transconductance
    r_in: float
    gamma_noise: float = 1.0
    temperature: float = 300.0

    def __post_init__(self):
        if not all(v > 0 for v in (self.gm1, self.gm3, self.r_in, self.gamma_noise,
                                    self.temperature)):
            raise InvalidInputError("IA noise parameters must all be positive")

    @property
    def four_kt(self) -> float:
        return 4.0 * BOLTZMANN * self.temperature


def cm_output_noise(p: MirrorParams) -> float:
    """Plain mirror: channel noise of the mirror device on R_D plus R_D's own noise."""
    return p.four_kt * p.gamma_noise * p.gm3 * p.r_d ** 2 + p.four_kt * p.r_d


def sdcm_effective_gm(gm3: float, r_de: float) -> tuple[float, float]:
    """Degenerated Gm, exact and the 1/R_DE large-loop-gain approximation.

    The approximation is ``nan`` when ``r_de == 0``.
    """
    if not (gm3 > 0 and r_de >= 0):
        raise InvalidInputError("need gm3 > 0 and r_de >= 0")
    exact = gm3 / (1.0 + gm3 * r_de)
    approx = 1.0 / r_de if r_de > 0 else float("nan")
    return exact, approx


def sdcm_approx_error(gm3: float, r_de: float) -> float:
    """Relative error of 1/R_DE against the exact Gm; equals 1/(gm3*R_DE)."""
    exact, approx = sdcm_effective_gm(gm3, r_de)
    return (approx - exact) / exact


def sdcm_current_psd(gm3: float, r_de: float, gamma_noise: float = 1.0,
                     temperature: float = 300.0) -> float:
    """Output current PSD of the degenerated mirror device (A^2/Hz)."""
    four_kt = 4.0 * BOLTZMANN * temperature
    loop = gm3 * r_de
    i_r = four_kt / r_de if r_de > 0 else 0.0
    return (four_kt * gamma_noise * gm3 + loop * loop * i_r) / (1.0 + loop) ** 2


def sdcm_output_noise(p: MirrorParams) -> tuple[float, float]:
    """Degenerated mirror output PSD (V^2/Hz), exact and approximate branch.

    The approximation 4kT/R_DE*(gamma/(gm3 R_DE) + 1)*R_D^2 + 4kT R_D is
    ``nan`` for ``r_de == 0``.
    """
    exact = sdcm_current_psd(p.gm3, p.r_de, p.gamma_noise, p.temperature) * p.r_d ** 2
    exact += p.four_kt * p.r_d
    if p.r_de > 0:
        approx = (p.four_kt / p.r_de * (p.gamma_noise / (p.gm3 * p.r_de) + 1.0) * p.r_d ** 2
                  + p.four_kt * p.r_d)
    else:
        approx = float("nan")
    return exact, approx


def ia_input_noise(p: IaNoiseParams) -> float:
    """Input-referred thermal PSD of the IA (V^2/Hz).

    The R_IN/2 resistor enters as the current PSD 4kT/(R_IN/2).
    """
    half = p.r_in / 2.0
    input_dev = p.four_kt * p.gamma_noise / p.gm1
    currents = p.four_kt * p.gamma_noise * p.gm3 + p.four_kt / half
    return input_dev + currents * half ** 2


def ia_input_noise_terms(gm1: float, i_mirror_psd: float, r_in: float, gamma_noise: float = 1.0,
                         temperature: float = 300.0) -> dict[str, float]:
    """Same structure with an arbitrary mirror current PSD, split by source."""
    four_kt = 4.0 * BOLTZMANN * temperature
    half = r_in / 2.0
    return {
        "input_device": four_kt * gamma_noise / gm1,
        "mirror": i_mirror_psd * half ** 2,
        "r_in": four_kt / half * half ** 2,
    }


def dtmos_noise_ratio(gm: float, gmb: float) -> float:
    """RMS ratio of the input-device noise term with and without gmb: gm/(gm+gmb)."""
    if not (gm > 0 and gmb >= 0):
        raise InvalidInputError("need gm > 0 and gmb >= 0")
    return gm / (gm + gmb)


def appendix_transfers(gm3: float, r_de: float) -> tuple[float, float]:
    """Current division of the degeneration-resistor and channel noise to the drain."""
    if not (gm3 > 0 and r_de >= 0):
        raise InvalidInputError("need gm3 > 0 and r_de >= 0")
    loop = gm3 * r_de
    return loop / (1.0 + loop), 1.0 / (1.0 + loop)
