"""Parameterized circuit builders and headroom bookkeeping.

Builders return immutable :class:`~mirrornoise.netlist.Circuit` objects:

* ``build_mirror``   plain or source-degenerated current mirror with load R_D
* ``build_tc_half``  differential-mode half of the FVF transconductance stage
* ``build_full_ia``  differential TC stage + TI stage with CMFB

Supply rails are AC ground, so every node tied to V_DD is written as ``0``.
Auxiliary amplifiers are single-pole macromodels; the gain-boosted common
gate device of the TC stage is folded into the A_G macromodel.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields

from .devmodel import (MosBias, MosGeometry, ProcessParams, dtmos_vgs, small_signal,
                       vgs_of_id)
from .errors import InvalidInputError
from .netlist import (Capacitor, Circuit, ISource, MacroAmp, Mosfet, NoiseDirective,
                      Resistor, VSource)
from .units import parse_value, read_kv_file, read_kv_text

CONVENTIONAL = "conventional"
SDCM = "sdcm"


def _coerce(f: dataclasses.Field, raw):
    if not isinstance(raw, str):
        return raw
    t = str(f.type)
    if "bool" in t:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise InvalidInputError(f"{f.name}: expected a boolean, got {raw!r}")
    if t.startswith("int"):
        try:
            return int(raw)
        except ValueError:
            raise InvalidInputError(f"{f.name}: expected an integer, got {raw!r}") from None
    if t.startswith("str"):
        return raw.strip().lower()
    try:
        return parse_value(raw)
    except ValueError:
        raise InvalidInputError(f"{f.name}: expected a number, got {raw!r}") from None


class _Params:
    @classmethod
    def from_mapping(cls, values: dict):
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise InvalidInputError(f"unknown {cls.__name__} key(s): {', '.join(unknown)}")
        return cls(**{k: _coerce(known[k], v) for k, v in values.items()})

    @classmethod
    def from_text(cls, text: str):
        return cls.from_mapping(read_kv_text(text))

    @classmethod
    def from_file(cls, path):
        return cls.from_mapping(read_kv_file(path))

    def with_(self, **changes):
        return dataclasses.replace(self, **changes)


def _check_positive(obj, names):
    for n in names:
        v = getattr(obj, n)
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            raise InvalidInputError(f"{type(obj).__name__}.{n} must be positive, got {v!r}")


@dataclass(frozen=True)
class MirrorTopoParams(_Params):
    kind: str = SDCM
    w3: float = 20e-6
    l3: float = 1e-6
    stack3: int = 1
    w3m: float = 20e-6
    l3m: float = 1e-6
    stack3m: int = 1
    r_de: float = 100e3
    r_d: float = 1e6
    i_d: float = 1e-6
    i_diode: float = 0.0  # 0: same as i_d
    vdd: float = 0.8
    v_out: float = 0.0  # DC drain voltage of the mirror device; 0: vdd/2
    min_headroom: float = 0.0

    def __post_init__(self):
        if self.kind not in (CONVENTIONAL, SDCM):
            raise InvalidInputError(f"mirror kind must be {CONVENTIONAL!r} or {SDCM!r}")
        _check_positive(self, ("w3", "l3", "w3m", "l3m", "r_d", "i_d", "vdd"))
        if self.r_de < 0 or self.i_diode < 0 or self.v_out < 0 or self.min_headroom < 0:
            raise InvalidInputError("r_de, i_diode, v_out, min_headroom must be >= 0")
        if self.kind == CONVENTIONAL and self.r_de != 0:
            raise InvalidInputError("a conventional mirror has r_de = 0")
        if self.stack3 < 1 or self.stack3m < 1:
            raise InvalidInputError("stack counts must be >= 1")

    @classmethod
    def from_mapping(cls, values: dict):
        values = dict(values)
        if str(values.get("kind", SDCM)).strip().lower() == CONVENTIONAL:
            values.setdefault("r_de", "0")
        return super().from_mapping(values)

    @classmethod
    def for_gm(cls, gm3: float, r_de: float, r_d: float = 1e6, process: ProcessParams | None = None,
               l3: float = 1e-6, ic: float = 2.0, **kw) -> "MirrorTopoParams":
        """Matched mirror sized so the mirror device has transconductance ``gm3``.

        The bias current is chosen for inversion coefficient ``ic`` and the
        width then follows from the specific current.
        """
        p = process or ProcessParams()
        if not (gm3 > 0 and ic > 0):
            raise InvalidInputError("gm3 and ic must be positive")
        i_d = gm3 * p.n_slope * p.ut * (0.5 + math.sqrt(0.25 + ic))
        aspect = i_d / ic / (2.0 * p.n_slope * p.mu_cox * p.ut ** 2)
        kind = SDCM if r_de > 0 else CONVENTIONAL
        return cls(kind=kind, w3=aspect * l3, l3=l3, w3m=aspect * l3, l3m=l3, r_de=r_de,
                   r_d=r_d, i_d=i_d, **kw)

    @property
    def diode_current(self) -> float:
        return self.i_diode or self.i_d

    @property
    def drain_voltage(self) -> float:
        return self.v_out or self.vdd / 2.0

    @property
    def geom3(self) -> MosGeometry:
        return MosGeometry(self.w3, self.l3, self.stack3)

    @property
    def geom3m(self) -> MosGeometry:
        return MosGeometry(self.w3m, self.l3m, self.stack3m)


@dataclass(frozen=True)
class TcHalfParams(_Params):
    # input device M1 (PMOS)
    w1: float = 500e-6
    l1: float = 0.25e-6
    i1: float = 1e-6
    dtmos: bool = False
    v_cm: float = 0.3  # input common-mode DC level
    cgs_factor: float = 2.0 / 3.0  # gate-channel capacitance as a fraction of Cox*W*L
    # mirror / tail device M3 with its diode M3m
    mirror: str = SDCM
    w3: float = 20e-6
    l3: float = 1e-6
    stack3: int = 1
    w3m: float = 2e-6
    l3m: float = 1e-6
    stack3m: int = 1
    r_de: float = 50e3
    i3: float = 1e-6
    i_diode: float = 0.1e-6
    # feedback device M2 and its output copy (ratio m)
    w2: float = 30e-6
    l2: float = 0.5e-6
    mirror_ratio: float = 0.2005
    # gain-boosted cascode sink M5/M6 regulated by A_R
    w5: float = 1e-6
    l5: float = 1e-6
    w6: float = 1e-6
    l6: float = 1e-6
    gds_per_amp: float = 0.1  # 1/V, output conductance of M5/M6 per ampere
    ar_gain: float = 10.0
    ar_pole: float = 1e6
    ag_gain: float = 10.0
    ag_pole: float = 1e8  # d1 already sets the dominant pole
    c_rc: float = 10e-15
    c_lc: float = 750e-15
    # TI-stage cascode M12 with its drain regulation amplifier
    w12: float = 1e-6
    l12: float = 0.25e-6
    ti_ar_gain: float = 10.0
    ti_ar_pole: float = 1e6
    c_r: float = 20e-15
    r_in: float = 4e3
    r_out_ratio: float = 250.0
    v_r: float = 0.1
    v_l: float = 0.25
    vdd: float = 0.8
    i_budget: float = 10e-6
    min_headroom: float = 0.0

    def __post_init__(self):
        if self.mirror not in (CONVENTIONAL, SDCM):
            raise InvalidInputError(f"mirror must be {CONVENTIONAL!r} or {SDCM!r}")
        _check_positive(self, (
            "w1", "l1", "i1", "cgs_factor", "w3", "l3", "w3m", "l3m", "i3", "i_diode", "w2",
            "l2", "mirror_ratio", "w5", "l5", "w6", "l6", "gds_per_amp", "ar_gain", "ar_pole",
            "ag_gain", "ag_pole", "c_rc", "w12", "l12", "ti_ar_gain", "ti_ar_pole",
            "c_r", "r_in", "r_out_ratio", "vdd", "i_budget"))
        if self.r_de < 0 or self.c_lc < 0:
            raise InvalidInputError("r_de and c_lc must be >= 0")
        if self.mirror == CONVENTIONAL and self.r_de != 0:
            raise InvalidInputError("a conventional mirror has r_de = 0")
        if self.supply_current > self.i_budget:
            raise InvalidInputError(
                f"branch currents {self.supply_current:.3g} A exceed the budget {self.i_budget:.3g} A")

    @classmethod
    def from_mapping(cls, values: dict):
        values = dict(values)
        if str(values.get("mirror", SDCM)).strip().lower() == CONVENTIONAL:
            values.setdefault("r_de", "0")
        return super().from_mapping(values)

    @property
    def i2(self) -> float:
        # M2 feeds both the input device and the tail device
        return self.i1 + self.i3

    @property
    def supply_current(self) -> float:
        return self.i_diode + self.i2 * (1.0 + self.mirror_ratio)

    @property
    def r_out(self) -> float:
        return self.r_out_ratio * self.r_in

    @property
    def ideal_gain(self) -> float:
        return self.mirror_ratio * self.r_out / self.r_in


@dataclass(frozen=True)
class FullIaParams(TcHalfParams):
    # TI stage common-mode feedback (A_C driving M11) and output bias M13
    w11: float = 6e-6
    l11: float = 0.5e-6
    w13: float = 0.5e-6
    l13: float = 0.5e-6
    w14: float = 0.25e-6
    l14: float = 4e-6
    ac_gain: float = 100.0
    ac_pole: float = 1e5
    c_c: float = 5e-15
    c_g: float = 5e-12
    v_ref: float = 0.4
    i_budget: float = 20e-6

    def __post_init__(self):
        super().__post_init__()
        if self.r_out_ratio != 250.0:
            raise InvalidInputError("R_OUT/R_IN is fixed at 250 for the full amplifier")
        if not self.vdd > max(self.v_r, self.v_l, self.v_ref):
            raise InvalidInputError("vdd must exceed every bias voltage")

    @property
    def supply_current(self) -> float:
        return self.i_diode + 2.0 * self.i2 * (1.0 + self.mirror_ratio)


@dataclass(frozen=True)
class HeadroomReport:
    """Voltage budget of a mirror or TC stage; ``passed`` is the overall flag."""

    v_dio: float
    headroom_diode: float
    v_de: float
    sat_margin: dict
    passed: bool


# mirror ----------------------------------------------------------------------

MIRROR_TITLE = "current mirror"


def build_mirror(p: MirrorTopoParams) -> Circuit:
    """Diode branch plus mirrored branch with load R_D.

    Only the mirrored branch (M3, R_DE, R_D) is counted by the noise
    directive; the diode-side devices are excluded.
    """
    degenerated = p.r_de > 0
    s3 = "s3" if degenerated else "0"
    sm = "sm" if degenerated else "0"
    i_dio = p.diode_current
    els = [
        ISource("iref", "0", "dio", i_dio, 1.0),
        Mosfet("m3m", "dio", "dio", sm, sm, p.w3m, p.l3m, i_dio, p.stack3m),
    ]
    exclude = ["iref", "m3m"]
    if degenerated:
        # diode-side resistor scaled so both branches drop the same V_DE
        els.append(Resistor("rdem", sm, "0", p.r_de * p.i_d / i_dio))
        exclude.append("rdem")
    els.append(Mosfet("m3", "out", "dio", s3, s3, p.w3, p.l3, p.i_d, p.stack3))
    if degenerated:
        els.append(Resistor("rde", s3, "0", p.r_de))
    els.append(Resistor("rd", "out", "0", p.r_d))
    return Circuit(MIRROR_TITLE, tuple(els), (),
                   NoiseDirective("out", "iref", tuple(exclude)))


def mirror_headroom(p: MirrorTopoParams, process: ProcessParams) -> HeadroomReport:
    ss_m = small_signal(p.geom3m, MosBias(p.diode_current), process)
    ss_3 = small_signal(p.geom3, MosBias(p.i_d), process)
    v_de = p.i_d * p.r_de
    v_dio = ss_m.vgs + v_de
    headroom = p.vdd - v_dio
    margins = {
        "m3m": ss_m.vgs - ss_m.vdsat,
        "m3": p.drain_voltage - v_de - ss_3.vdsat,
    }
    ok = all(m >= 0 for m in margins.values()) and headroom >= p.min_headroom
    return HeadroomReport(v_dio, headroom, v_de, margins, ok)


# FVF transconductance stage ---------------------------------------------------

def _bias_sources(p: TcHalfParams) -> list:
    return [
        VSource("vr", "vr", "0", p.v_r),
        VSource("vl", "vl", "0", p.v_l),
    ]


def _mirror_reference(p: TcHalfParams) -> tuple[list, list[str]]:
    degenerated = p.r_de > 0
    sm = "sm" if degenerated else "0"
    els = [
        ISource("iref", "0", "vbn", p.i_diode, 0.0),
        Mosfet("m3m", "vbn", "vbn", sm, sm, p.w3m, p.l3m, p.i_diode, p.stack3m),
    ]
    labels = ["iref", "m3m"]
    if degenerated:
        els.append(Resistor("rdem", sm, "0", p.r_de * p.i3 / p.i_diode))
        labels.append("rdem")
    return els, labels


def _tc_side(p: TcHalfParams, sfx: str, gate: str, out: str, process: ProcessParams) -> list:
    """One side of the TC stage plus its TI-stage current copy.

    Node/label suffix ``sfx`` keeps the two sides of the full amplifier apart.
    """
    x, d1, n56 = f"x{sfx}", f"d1{sfx}", f"n56{sfx}"
    g2, ar, ar2, y = f"g2{sfx}", f"ar{sfx}", f"ar2{sfx}", f"y{sfx}"
    s3 = f"s3{sfx}" if p.r_de > 0 else "0"
    gds56 = p.gds_per_amp * p.i1
    i2o = p.mirror_ratio * p.i2
    cgs = p.cgs_factor * process.cox_area * p.w1 * p.l1
    els = [
        Mosfet(f"m1{sfx}", d1, gate, x, gate if p.dtmos else x, p.w1, p.l1, p.i1,
               pmos=True, dtmos=p.dtmos),
        Capacitor(f"cgs1{sfx}", gate, x, cgs),
        Mosfet(f"m3{sfx}", x, "vbn", s3, s3, p.w3, p.l3, p.i3, p.stack3),
    ]
    if p.r_de > 0:
        els.append(Resistor(f"rde{sfx}", s3, "0", p.r_de))
    els += [Capacitor(f"clc{sfx}", x, d1, p.c_lc)] if p.c_lc > 0 else []
    els += [
        Mosfet(f"m5{sfx}", n56, "vl", "0", "0", p.w5, p.l5, p.i1, gds=gds56),
        Mosfet(f"m6{sfx}", d1, ar, n56, n56, p.w6, p.l6, p.i1, gds=gds56),
        MacroAmp(f"ear{sfx}", ar, "vr", n56, p.ar_gain, p.ar_pole),
        Capacitor(f"crc{sfx}", ar, "0", p.c_rc),
        MacroAmp(f"eag{sfx}", g2, d1, "0", p.ag_gain, p.ag_pole),
        Mosfet(f"m2{sfx}", x, g2, "0", "0", p.w2, p.l2, p.i2, pmos=True),
        Mosfet(f"m2o{sfx}", y, g2, "0", "0", p.mirror_ratio * p.w2, p.l2, i2o, pmos=True),
        Mosfet(f"m12{sfx}", out, ar2, y, y, p.w12, p.l12, i2o),
        MacroAmp(f"eti{sfx}", ar2, x, y, p.ti_ar_gain, p.ti_ar_pole),
        Capacitor(f"cr{sfx}", ar2, "0", p.c_r),
    ]
    return els


def build_tc_half(p: TcHalfParams, process: ProcessParams | None = None) -> Circuit:
    """Differential-mode half circuit: R_IN/2 and R_OUT/2 to the virtual ground."""
    process = process or ProcessParams()
    ref, ref_labels = _mirror_reference(p)
    els = [VSource("vin", "in", "0", p.v_cm, 1.0), *_bias_sources(p), *ref]
    els += _tc_side(p, "", "in", "out", process)
    els += [
        Resistor("rin", "x", "0", p.r_in / 2.0),
        Resistor("rout", "out", "0", p.r_out / 2.0),
    ]
    title = "fvf tc half circuit" + (" dtmos" if p.dtmos else "")
    return Circuit(title, tuple(els), ("eag",),
                   NoiseDirective("out", "vin", tuple(ref_labels)))


def build_full_ia(p: FullIaParams, process: ProcessParams | None = None) -> Circuit:
    """Fully differential IA; ``vod`` carries V(outp) - V(outn)."""
    process = process or ProcessParams()
    ref, _ = _mirror_reference(p)
    els = [
        VSource("vin", "inp", "inn", 0.0, 1.0),
        VSource("vcm", "inn", "0", p.v_cm),
        *_bias_sources(p),
        VSource("vref", "vref", "0", p.v_ref),
        *ref,
    ]
    els += _tc_side(p, "p", "inp", "outp", process)
    els += _tc_side(p, "n", "inn", "outn", process)
    i2o = p.mirror_ratio * p.i2
    els += [
        Resistor("rin", "xp", "xn", p.r_in),
        Resistor("routp", "outp", "cm", p.r_out / 2.0),
        Resistor("routn", "cm", "outn", p.r_out / 2.0),
        MacroAmp("eac", "acg", "cm", "vref", p.ac_gain, p.ac_pole),
        Capacitor("cc", "acg", "0", p.c_c),
        Mosfet("m11p", "outp", "acg", "0", "0", p.w11, p.l11, i2o),
        Mosfet("m11n", "outn", "acg", "0", "0", p.w11, p.l11, i2o),
        Mosfet("m13p", "outp", "vl", "0", "0", p.w13, p.l13, i2o),
        Mosfet("m13n", "outn", "vl", "0", "0", p.w13, p.l13, i2o),
        MacroAmp("eout", "vod", "outp", "outn", 1.0),
    ]
    title = "fvf instrumentation amplifier" + (" dtmos" if p.dtmos else "")
    return Circuit(title, tuple(els), ("eagp", "eagn"), NoiseDirective("vod", "vin"))


def tc_headroom(p: TcHalfParams, process: ProcessParams) -> HeadroomReport:
    ss_m = small_signal(MosGeometry(p.w3m, p.l3m, p.stack3m), MosBias(p.i_diode), process)
    ss_3 = small_signal(MosGeometry(p.w3, p.l3, p.stack3), MosBias(p.i3), process)
    g1 = MosGeometry(p.w1, p.l1)
    vsg1 = dtmos_vgs(g1, p.i1, process) if p.dtmos else vgs_of_id(g1, MosBias(p.i1), process)
    ss_2 = small_signal(MosGeometry(p.w2, p.l2), MosBias(p.i2), process)
    v_de = p.i3 * p.r_de
    v_dio = ss_m.vgs + v_de
    v_x = p.v_cm + vsg1
    margins = {
        "m3m": ss_m.vgs - ss_m.vdsat,
        "m3": v_x - v_de - ss_3.vdsat,
        "m2": p.vdd - v_x - ss_2.vdsat,
    }
    headroom = p.vdd - v_dio
    ok = all(m >= 0 for m in margins.values()) and headroom >= p.min_headroom
    return HeadroomReport(v_dio, headroom, v_de, margins, ok)


def headroom(p, process: ProcessParams | None = None) -> HeadroomReport:
    process = process or ProcessParams()
    if isinstance(p, MirrorTopoParams):
        return mirror_headroom(p, process)
    if isinstance(p, TcHalfParams):
        return tc_headroom(p, process)
    raise InvalidInputError(f"no headroom model for {type(p).__name__}")


TOPOLOGIES = {
    CONVENTIONAL: MirrorTopoParams,
    SDCM: MirrorTopoParams,
    "tc_half": TcHalfParams,
    "full_ia": FullIaParams,
}


def params_for(kind: str, values: dict):
    kind = kind.lower()
    if kind not in TOPOLOGIES:
        raise InvalidInputError(f"unknown topology {kind!r}; choose from {', '.join(TOPOLOGIES)}")
    values = dict(values)
    if kind in (CONVENTIONAL, SDCM):
        if values.get("kind", kind).strip().lower() != kind:
            raise InvalidInputError(f"kind= conflicts with topology {kind!r}")
        values["kind"] = kind
    return TOPOLOGIES[kind].from_mapping(values)


def build(kind: str, params, process: ProcessParams | None = None) -> Circuit:
    if isinstance(params, MirrorTopoParams):
        return build_mirror(params)
    if isinstance(params, FullIaParams):
        return build_full_ia(params, process)
    if isinstance(params, TcHalfParams):
        return build_tc_half(params, process)
    raise InvalidInputError(f"cannot build {kind!r}")
