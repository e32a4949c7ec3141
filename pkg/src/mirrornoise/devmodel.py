"""MOS small-signal and noise model from weak to strong inversion.

The I-V relation is the EKV charge form

    (Vgs - Vth(Vsb)) / (n*U_T) = 2*q + ln(q),    ic = q*(q + 1),
    I_D = I_spec * ic,   I_spec = 2*n*muCox*(W/L_eff)*U_T**2

whose exact derivative is the interpolation
gm = (I_D / (n*U_T)) / (0.5 + sqrt(0.25 + ic)).  Both directions have closed
forms (the forward one through the Wright omega function), so finite
differences of :func:`id_of_vgs` reproduce :func:`gm_of_bias` to rounding.

Body effect follows Vth = Vth0 + lambda*(sqrt(2PhiF + Vsb) - sqrt(2PhiF)).
PMOS devices use the same equations on magnitudes (Vsg, Vbs <-> Vsb mapping is
done by the caller); only headroom bookkeeping cares about polarity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

from scipy.optimize import brentq
from scipy.special import wrightomega

from .errors import ConvergenceError, DomainError, InvalidInputError
from .units import parse_value, read_kv_file, read_kv_text

BOLTZMANN = 1.380649e-23
Q_ELECTRON = 1.602176634e-19

VGS_MIN = 0.0
VGS_MAX = 2.0


@dataclass(frozen=True)
class ProcessParams:
    mu_cox: float = 600e-6  # A/V^2
    n_slope: float = 1.3
    vth0: float = 0.3  # V
    lambda_body: float = 0.4  # V^0.5
    phi_f2: float = 0.7  # V
    gamma_noise: float = 1.0
    kf: float = 1e-25  # J
    cox_area: float = 0.02  # F/m^2
    cj_bulk: float = 3.6e-3  # F/m^2, bulk-gate capacitance for DTMOS devices
    temperature: float = 300.0  # K

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise InvalidInputError(f"process parameter {f.name} must be positive, got {v!r}")
        if not 200.0 <= self.temperature <= 400.0:
            raise InvalidInputError(f"temperature {self.temperature} K outside [200, 400]")

    @property
    def ut(self) -> float:
        return thermal_voltage(self)

    @property
    def four_kt(self) -> float:
        return 4.0 * BOLTZMANN * self.temperature

    @classmethod
    def from_mapping(cls, values: dict[str, str | float]) -> "ProcessParams":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise InvalidInputError(f"unknown process parameter(s): {', '.join(unknown)}")
        kw = {k: parse_value(v) if isinstance(v, str) else float(v) for k, v in values.items()}
        return cls(**kw)

    @classmethod
    def from_text(cls, text: str) -> "ProcessParams":
        return cls.from_mapping(read_kv_text(text))

    @classmethod
    def from_file(cls, path) -> "ProcessParams":
        return cls.from_mapping(read_kv_file(path))

    def with_(self, **changes) -> "ProcessParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class MosGeometry:
    width: float
    length: float
    series_stack: int = 1

    def __post_init__(self):
        if not (self.width > 0 and self.length > 0):
            raise InvalidInputError(f"geometry must be positive: W={self.width}, L={self.length}")
        if int(self.series_stack) != self.series_stack or self.series_stack < 1:
            raise InvalidInputError(f"series_stack must be an integer >= 1, got {self.series_stack}")

    @property
    def l_eff(self) -> float:
        return self.length * self.series_stack

    @property
    def aspect(self) -> float:
        return self.width / self.l_eff

    @property
    def area(self) -> float:
        return self.width * self.l_eff


@dataclass(frozen=True)
class MosBias:
    id: float
    vsb: float = 0.0
    vds: float = 0.4

    def __post_init__(self):
        if not self.id > 0:
            raise InvalidInputError(f"drain current must be positive, got {self.id}")


@dataclass(frozen=True)
class SmallSignal:
    gm: float
    gmb: float
    gds: float
    vgs: float
    vth: float
    vdsat: float
    ic: float


def thermal_voltage(p: ProcessParams) -> float:
    return BOLTZMANN * p.temperature / Q_ELECTRON


def _check_vsb(vsb: float, p: ProcessParams) -> None:
    if not vsb > -p.phi_f2:
        raise DomainError(f"V_SB={vsb} V at or below -2PhiF={-p.phi_f2} V")


def specific_current(geom: MosGeometry, p: ProcessParams) -> float:
    return 2.0 * p.n_slope * p.mu_cox * geom.aspect * p.ut ** 2


def inversion_coefficient(geom: MosGeometry, bias: MosBias, p: ProcessParams) -> float:
    return bias.id / specific_current(geom, p)


def gm_of_bias(geom: MosGeometry, bias: MosBias, p: ProcessParams) -> float:
    ic = inversion_coefficient(geom, bias, p)
    return (bias.id / (p.n_slope * p.ut)) / (0.5 + math.sqrt(0.25 + ic))


def threshold_voltage(vsb: float, p: ProcessParams) -> float:
    if vsb < -p.phi_f2:
        raise DomainError(f"V_SB={vsb} V below -2PhiF={-p.phi_f2} V")
    return p.vth0 + p.lambda_body * (math.sqrt(p.phi_f2 + vsb) - math.sqrt(p.phi_f2))


def body_transconductance(gm: float, vsb: float, p: ProcessParams) -> float:
    if not gm > 0:
        raise InvalidInputError(f"gm must be positive, got {gm}")
    _check_vsb(vsb, p)
    return gm * p.lambda_body / (2.0 * math.sqrt(p.phi_f2 + vsb))


def id_of_vgs(geom: MosGeometry, vgs: float, vsb: float, p: ProcessParams) -> float:
    """Drain current at gate-source voltage ``vgs`` (magnitudes for PMOS)."""
    if not VGS_MIN <= vgs <= VGS_MAX:
        raise DomainError(f"V_GS={vgs} V outside [{VGS_MIN}, {VGS_MAX}] V")
    v = (vgs - threshold_voltage(vsb, p)) / (p.n_slope * p.ut)
    # 2q + ln q = v  <=>  y + ln y = v + ln 2 with y = 2q
    y = float(wrightomega(v + math.log(2.0)).real)
    q = 0.5 * y
    return specific_current(geom, p) * q * (q + 1.0)


def _vgs_unchecked(geom: MosGeometry, bias: MosBias, p: ProcessParams) -> float:
    ic = inversion_coefficient(geom, bias, p)
    # q = sqrt(0.25 + ic) - 0.5 without cancellation at small ic
    q = ic / (math.sqrt(0.25 + ic) + 0.5)
    return threshold_voltage(bias.vsb, p) + p.n_slope * p.ut * (2.0 * q + math.log(q))


def vgs_of_id(geom: MosGeometry, bias: MosBias, p: ProcessParams) -> float:
    vgs = _vgs_unchecked(geom, bias, p)
    if not VGS_MIN <= vgs <= VGS_MAX:
        raise DomainError(f"I_D={bias.id} A needs V_GS={vgs:.4g} V, outside the model range")
    return vgs


def dtmos_vgs(geom: MosGeometry, id_: float, p: ProcessParams, maxiter: int = 200) -> float:
    """Self-consistent gate-source voltage of a bulk-to-gate device.

    With the bulk on the gate the source-bulk junction sees V_SB = -V_GS in
    NMOS-equivalent terms (forward bias), which lowers the threshold.
    """
    def residual(v):
        return v - _vgs_unchecked(geom, MosBias(id_, vsb=-v), p)

    hi = p.phi_f2 * (1.0 - 1e-9)
    if residual(0.0) > 0:
        raise DomainError(f"DTMOS device at I_D={id_} A has V_GS below 0 V")
    if residual(hi) <= 0:
        raise DomainError(f"DTMOS device at I_D={id_} A would forward-bias beyond 2PhiF")
    try:
        vgs = brentq(residual, 0.0, hi, xtol=1e-15, rtol=1e-15, maxiter=maxiter)
    except RuntimeError as exc:
        raise ConvergenceError(f"DTMOS bias did not converge: {exc}") from exc
    return vgs


def vdsat_of(ic: float, p: ProcessParams) -> float:
    ut = p.ut
    return max(2.0 * p.n_slope * ut * (math.sqrt(0.25 + ic) + 0.5), 3.0 * ut)


def small_signal(geom: MosGeometry, bias: MosBias, p: ProcessParams, gds: float = 0.0,
                 dtmos: bool = False) -> SmallSignal:
    """Operating point of a device at its declared drain current.

    For ``dtmos`` the source-bulk voltage is solved self-consistently and
    ``bias.vsb`` is ignored.
    """
    if dtmos:
        vgs = dtmos_vgs(geom, bias.id, p)
        bias = replace(bias, vsb=-vgs)
    else:
        vgs = vgs_of_id(geom, bias, p)
    ic = inversion_coefficient(geom, bias, p)
    gm = gm_of_bias(geom, bias, p)
    gmb = body_transconductance(gm, bias.vsb, p)
    return SmallSignal(gm=gm, gmb=gmb, gds=gds, vgs=vgs, vth=threshold_voltage(bias.vsb, p),
                       vdsat=vdsat_of(ic, p), ic=ic)


def channel_thermal_psd(gm: float, p: ProcessParams) -> float:
    """Drain current noise 4kT*gamma*gm in A^2/Hz."""
    return p.four_kt * p.gamma_noise * gm


def channel_thermal_vpsd(gm: float, p: ProcessParams) -> float:
    """Gate-referred form 4kT*gamma/gm in V^2/Hz."""
    return p.four_kt * p.gamma_noise / gm


def resistor_noise(r: float, p: ProcessParams) -> tuple[float, float]:
    if not r > 0:
        raise InvalidInputError(f"resistance must be positive, got {r}")
    return p.four_kt / r, p.four_kt * r


def flicker_psd(geom: MosGeometry, gm: float, f: float, p: ProcessParams) -> float:
    if not f > 0:
        raise InvalidInputError(f"flicker noise needs f > 0, got {f}")
    return gm * gm * p.kf / (p.cox_area * geom.area * f)
