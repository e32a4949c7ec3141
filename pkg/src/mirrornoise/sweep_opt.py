"""Parameter sweeps, the mirror design optimizer and power accounting."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from . import mna, oracles
from .devmodel import (BOLTZMANN, MosBias, MosGeometry, ProcessParams, dtmos_vgs,
                       flicker_psd, small_signal, thermal_voltage, vgs_of_id)
from .errors import InfeasibleError, InvalidInputError, MirrorNoiseError
from .topologies import (CONVENTIONAL, SDCM, FullIaParams, MirrorTopoParams, TcHalfParams,
                         build, headroom, params_for)

VARIABLES = ("W3", "L3", "r_de", "W1", "frequency", "vsb")
OBSERVABLES = ("gm", "Gm_eff", "output_noise_psd", "input_referred_noise", "headroom_diode",
               "v_de", "zin", "loop_gain")
# swept variable -> topology parameter field
_FIELD = {"W3": "w3", "L3": "l3", "r_de": "r_de", "W1": "w1"}


def _ordered_map(fn, items):
    n = mna.worker_count()
    if n <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _process_from(obj) -> ProcessParams:
    if obj is None:
        return ProcessParams()
    if isinstance(obj, ProcessParams):
        return obj
    if not isinstance(obj, dict):
        raise InvalidInputError("process must be an object of key/value pairs")
    return ProcessParams.from_mapping({k: str(v) for k, v in obj.items()})


@dataclass(frozen=True)
class SweepSpec:
    topology: str
    variable: str
    values: tuple
    observables: tuple
    base: dict = field(default_factory=dict)
    frequency: float = 100e3
    vsb: float = 0.0
    mechanisms: tuple = mna.MECHANISMS
    process: ProcessParams = field(default_factory=ProcessParams)

    def __post_init__(self):
        if self.variable not in VARIABLES:
            raise InvalidInputError(f"variable must be one of {', '.join(VARIABLES)}")
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "observables", tuple(self.observables))
        object.__setattr__(self, "mechanisms", tuple(self.mechanisms))
        if not vals:
            raise InvalidInputError("sweep value list is empty")
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInputError("sweep values must be finite")
        d = np.diff(vals)
        if len(vals) > 1 and not (np.all(d > 0) or np.all(d < 0)):
            raise InvalidInputError("sweep values must be strictly monotone")
        if not self.observables:
            raise InvalidInputError("at least one observable is required")
        bad = [o for o in self.observables if o not in OBSERVABLES]
        if bad:
            raise InvalidInputError(f"unknown observable(s): {', '.join(bad)}")
        if not self.frequency > 0:
            raise InvalidInputError("frequency must be positive")
        params = self.base_params()
        mirror = isinstance(params, MirrorTopoParams)
        if self.variable == "W1" and mirror:
            raise InvalidInputError("W1 is only defined for the TC/IA topologies")
        if "loop_gain" in self.observables and mirror:
            raise InvalidInputError("loop_gain needs a topology with a feedback loop")

    def base_params(self):
        return params_for(self.topology, {k: str(v) for k, v in self.base.items()})

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        known = {"topology", "base", "variable", "values", "observables", "frequency", "vsb",
                 "mechanisms", "process"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise InvalidInputError(f"unknown SweepSpec field(s): {', '.join(unknown)}")
        missing = [k for k in ("topology", "variable", "values", "observables") if k not in d]
        if missing:
            raise InvalidInputError(f"SweepSpec missing field(s): {', '.join(missing)}")
        kw = {k: d[k] for k in known & set(d) if k != "process"}
        for k in ("frequency", "vsb"):
            if k in kw:
                kw[k] = _number(kw[k], k)
        if "values" in kw:
            kw["values"] = tuple(_number(v, "values") for v in kw["values"])
        return cls(process=_process_from(d.get("process")), **kw)

    @classmethod
    def from_json(cls, text: str) -> "SweepSpec":
        return cls.from_dict(_load_json(text))


def _number(v, name: str) -> float:
    from .units import parse_value
    if isinstance(v, bool):
        raise InvalidInputError(f"{name}: expected a number")
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        try:
            return parse_value(v)
        except ValueError:
            pass
    raise InvalidInputError(f"{name}: expected a number, got {v!r}")


def _load_json(text: str) -> dict:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"{e.lineno}:{e.colno}: invalid JSON: {e.msg}") from None
    if not isinstance(d, dict):
        raise InvalidInputError("expected a JSON object")
    return d


def _focus_device(params):
    """Device whose gm the ``gm`` observable reports: M3 for mirrors, M1 for TC/IA."""
    if isinstance(params, MirrorTopoParams):
        return MosGeometry(params.w3, params.l3, params.stack3), params.i_d, False
    return MosGeometry(params.w1, params.l1), params.i1, params.dtmos


def _port(params):
    if isinstance(params, FullIaParams):
        return ("inp", "inn")
    if isinstance(params, TcHalfParams):
        return ("in", "0")
    return ("out", "0")


def evaluate_point(spec: SweepSpec, value: float) -> list[float]:
    params = spec.base_params()
    freq, vsb = spec.frequency, spec.vsb
    if spec.variable == "frequency":
        freq = value
    elif spec.variable == "vsb":
        vsb = value
    else:
        changes = {_FIELD[spec.variable]: value}
        if isinstance(params, MirrorTopoParams) and spec.variable in ("W3", "L3"):
            # mirror pair stays matched
            changes[_FIELD[spec.variable] + "m"] = value
        params = params.with_(**changes)
    p = spec.process
    cache: dict = {}

    def noise():
        if "noise" not in cache:
            cache["noise"] = mna.noise_at_output(build(spec.topology, params, p), f_grid=[freq],
                                                 process=p, mechanisms=spec.mechanisms)
        return cache["noise"]

    def room():
        if "room" not in cache:
            cache["room"] = headroom(params, p)
        return cache["room"]

    def gm3():
        if isinstance(params, MirrorTopoParams):
            g, i = MosGeometry(params.w3, params.l3, params.stack3), params.i_d
        else:
            g, i = MosGeometry(params.w3, params.l3, params.stack3), params.i3
        return small_signal(g, MosBias(i, vsb), p).gm

    row = []
    for obs in spec.observables:
        if obs == "gm":
            geom, i, dt = _focus_device(params)
            row.append(small_signal(geom, MosBias(i, vsb), p, dtmos=dt).gm)
        elif obs == "Gm_eff":
            row.append(oracles.sdcm_effective_gm(gm3(), params.r_de)[0])
        elif obs == "output_noise_psd":
            row.append(float(noise().total[0]))
        elif obs == "input_referred_noise":
            row.append(float(mna.require_input_referred(noise())[0]))
        elif obs == "headroom_diode":
            row.append(room().headroom_diode)
        elif obs == "v_de":
            row.append(room().v_de)
        elif obs == "zin":
            z = mna.input_impedance(build(spec.topology, params, p), _port(params), [freq], p)
            row.append(float(z.magnitude[0]))
        elif obs == "loop_gain":
            t = mna.loop_gain(build(spec.topology, params, p), [freq], p)
            row.append(float(t.magnitude[0]))
    return row


def run_sweep(spec: SweepSpec) -> tuple[list[str], list[list[float]]]:
    """One row per swept value; errors carry the offending value in their message."""

    def point(v):
        try:
            return [v, *evaluate_point(spec, v)]
        except (MirrorNoiseError, ArithmeticError, ValueError) as e:
            e.args = (f"{spec.variable}={v!r}: {e}",) + tuple(e.args[1:])
            raise

    header = [spec.variable, *spec.observables]
    return header, _ordered_map(point, list(spec.values))


def table_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) for v in r])
    return buf.getvalue()


# optimizer ------------------------------------------------------------------

@dataclass(frozen=True)
class DesignSpec:
    w3: tuple
    l3: tuple
    r_de: tuple
    vdd: float = 0.8
    min_headroom_diode: float | None = None  # None: vdd/2
    max_v_de: float | None = None
    i_d: float = 1e-6
    v_out: float | None = None  # mirror drain DC level for the saturation check
    frequency: float = 100e3
    # input stage feeding the objective
    w1: float = 500e-6
    l1: float = 0.25e-6
    i1: float = 1e-6
    dtmos: bool = False
    r_in: float = 4e3
    refine: bool = False
    process: ProcessParams = field(default_factory=ProcessParams)

    def __post_init__(self):
        for name in ("w3", "l3", "r_de"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise InvalidInputError(f"search range {name} is empty")
            if name == "r_de":
                if any(not (math.isfinite(v) and v >= 0) for v in vals):
                    raise InvalidInputError("r_de values must be >= 0")
            elif any(not (math.isfinite(v) and v > 0) for v in vals):
                raise InvalidInputError(f"{name} values must be positive")
            object.__setattr__(self, name, vals)
        if self.min_headroom_diode is None:
            object.__setattr__(self, "min_headroom_diode", self.vdd / 2.0)
        for name in ("vdd", "i_d", "frequency", "w1", "l1", "i1", "r_in"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")

    @property
    def drain_voltage(self) -> float:
        return self.v_out if self.v_out is not None else self.vdd / 2.0

    @classmethod
    def from_dict(cls, d: dict) -> "DesignSpec":
        names = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(d) - names)
        if unknown:
            raise InvalidInputError(f"unknown DesignSpec field(s): {', '.join(unknown)}")
        missing = [k for k in ("w3", "l3", "r_de") if k not in d]
        if missing:
            raise InvalidInputError(f"DesignSpec missing field(s): {', '.join(missing)}")
        kw = {}
        for k, v in d.items():
            if k == "process":
                kw[k] = _process_from(v)
            elif k in ("w3", "l3", "r_de"):
                if not isinstance(v, list):
                    raise InvalidInputError(f"{k} must be a list")
                kw[k] = tuple(_number(x, k) for x in v)
            elif k in ("dtmos", "refine"):
                if not isinstance(v, bool):
                    raise InvalidInputError(f"{k} must be true or false")
                kw[k] = v
            elif v is None and k in ("min_headroom_diode", "max_v_de", "v_out"):
                kw[k] = None
            else:
                kw[k] = _number(v, k)
        return cls(**kw)

    @classmethod
    def from_json(cls, text: str) -> "DesignSpec":
        return cls.from_dict(_load_json(text))


@dataclass(frozen=True)
class Candidate:
    w3: float
    l3: float
    r_de: float
    noise_psd: float  # input-referred, V^2/Hz
    headroom_diode: float
    v_de: float
    violations: tuple  # names of failed constraints

    @property
    def feasible(self) -> bool:
        return not self.violations

    @property
    def noise(self) -> float:
        return math.sqrt(self.noise_psd)

    def key(self):
        return (self.noise_psd, self.w3, self.l3, self.r_de)


@dataclass(frozen=True)
class Optimum:
    w3: float
    l3: float
    r_de: float
    noise: float  # V/sqrt(Hz)
    headroom: object
    baseline: Candidate | None
    noise_ratio: float | None
    headroom_delta: float | None
    mna_check: float  # relative mismatch of the oracle against MNA at the optimum

    def to_dict(self) -> dict:
        return {
            "w3": self.w3,
            "l3": self.l3,
            "r_de": self.r_de,
            "noise_v_rthz": self.noise,
            "headroom": {
                "v_dio": self.headroom.v_dio,
                "headroom_diode": self.headroom.headroom_diode,
                "v_de": self.headroom.v_de,
                "sat_margin": dict(sorted(self.headroom.sat_margin.items())),
                "passed": self.headroom.passed,
            },
            "baseline": None if self.baseline is None else {
                "w3": self.baseline.w3,
                "l3": self.baseline.l3,
                "noise_v_rthz": self.baseline.noise,
                "headroom_diode": self.baseline.headroom_diode,
            },
            "noise_ratio": self.noise_ratio,
            "headroom_delta": self.headroom_delta,
            "mna_check": self.mna_check,
        }


def _mirror_params(spec: DesignSpec, w3, l3, r_de) -> MirrorTopoParams:
    return MirrorTopoParams(kind=SDCM if r_de > 0 else CONVENTIONAL, w3=w3, l3=l3, w3m=w3,
                            l3m=l3, r_de=r_de, i_d=spec.i_d, vdd=spec.vdd,
                            v_out=spec.drain_voltage, min_headroom=0.0)


def _input_gm(spec: DesignSpec) -> float:
    ss = small_signal(MosGeometry(spec.w1, spec.l1), MosBias(spec.i1), spec.process,
                      dtmos=spec.dtmos)
    return ss.gm + (ss.gmb if spec.dtmos else 0.0)


def mirror_current_psd(spec: DesignSpec, w3, l3, r_de) -> float:
    """Thermal + flicker drain-current PSD of the degenerated mirror device."""
    p = spec.process
    geom = MosGeometry(w3, l3)
    gm = small_signal(geom, MosBias(spec.i_d), p).gm
    thermal = oracles.sdcm_current_psd(gm, r_de, p.gamma_noise, p.temperature)
    flicker = flicker_psd(geom, gm, spec.frequency, p) / (1.0 + gm * r_de) ** 2
    return thermal + flicker


def evaluate_candidate(spec: DesignSpec, w3, l3, r_de, gm1: float | None = None) -> Candidate:
    p = spec.process
    gm1 = _input_gm(spec) if gm1 is None else gm1
    terms = oracles.ia_input_noise_terms(gm1, mirror_current_psd(spec, w3, l3, r_de), spec.r_in,
                                         p.gamma_noise, p.temperature)
    room = headroom(_mirror_params(spec, w3, l3, r_de), p)
    bad = []
    if room.headroom_diode < spec.min_headroom_diode:
        bad.append("min_headroom_diode")
    if min(room.sat_margin.values()) < 0:
        bad.append("saturation")
    if spec.max_v_de is not None and room.v_de > spec.max_v_de:
        bad.append("max_v_de")
    return Candidate(w3, l3, r_de, sum(terms.values()), room.headroom_diode, room.v_de,
                     tuple(bad))


def _grid(spec: DesignSpec, r_values) -> list[Candidate]:
    gm1 = _input_gm(spec)
    pts = [(w, l, r) for w in spec.w3 for l in spec.l3 for r in r_values]
    return _ordered_map(lambda t: evaluate_candidate(spec, *t, gm1=gm1), pts)


def _binding(cands: list[Candidate], spec: DesignSpec) -> str:
    if spec.min_headroom_diode >= spec.vdd:
        return "min_headroom_diode"
    counts: dict[str, int] = {}
    for c in cands:
        for v in c.violations:
            counts[v] = counts.get(v, 0) + 1
    return min(counts, key=lambda k: (-counts[k], k))


def _refine(spec: DesignSpec, best: Candidate) -> Candidate:
    """Bounded scalar search over r_de around the grid optimum, with a feasibility penalty."""
    rs = sorted(set(spec.r_de))
    i = rs.index(best.r_de)
    lo, hi = rs[max(i - 1, 0)], rs[min(i + 1, len(rs) - 1)]
    if hi <= lo:
        return best
    gm1 = _input_gm(spec)

    def cost(r):
        c = evaluate_candidate(spec, best.w3, best.l3, r, gm1)
        pen = max(0.0, spec.min_headroom_diode - c.headroom_diode)
        if spec.max_v_de is not None:
            pen += max(0.0, c.v_de - spec.max_v_de)
        return c.noise_psd * (1.0 + 1e3 * pen) + (0.0 if c.feasible else best.noise_psd)

    res = minimize_scalar(cost, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-6 * hi})
    cand = evaluate_candidate(spec, best.w3, best.l3, float(res.x), gm1)
    return cand if cand.feasible and cand.key() < best.key() else best


def optimize(spec: DesignSpec) -> Optimum:
    cands = _grid(spec, spec.r_de)
    feasible = [c for c in cands if c.feasible]
    if not feasible:
        raise InfeasibleError(_binding(cands, spec),
                              f"{len(cands)} candidate(s) checked")
    best = min(feasible, key=Candidate.key)
    if spec.refine and best.r_de > 0:
        best = _refine(spec, best)
    base_feasible = [c for c in _grid(spec, (0.0,)) if c.feasible]
    baseline = min(base_feasible, key=Candidate.key) if base_feasible else None
    p = spec.process
    room = headroom(_mirror_params(spec, best.w3, best.l3, best.r_de), p)
    return Optimum(
        best.w3, best.l3, best.r_de, best.noise, room, baseline,
        None if baseline is None else best.noise / baseline.noise,
        None if baseline is None else best.headroom_diode - baseline.headroom_diode,
        _mna_spot_check(spec, best),
    )


def _mna_spot_check(spec: DesignSpec, best: Candidate) -> float:
    p = spec.process
    mp = _mirror_params(spec, best.w3, best.l3, best.r_de)
    from .topologies import build_mirror
    rep = mna.noise_at_output(build_mirror(mp), f_grid=[spec.frequency], process=p,
                              mechanisms=("thermal", "flicker"))
    r_d = mp.r_d
    expected = mirror_current_psd(spec, best.w3, best.l3, best.r_de) * r_d ** 2 \
        + p.four_kt * r_d
    return abs(float(rep.total[0]) / expected - 1.0)


# power accounting -----------------------------------------------------------

def iso_noise_power_ratio(noise_ratio: float) -> float:
    """Current (power) ratio at equal noise when RMS noise scales as 1/sqrt(I)."""
    if not (0 < noise_ratio <= 1):
        raise InvalidInputError("noise_ratio must be in (0, 1]")
    return noise_ratio * noise_ratio


def power_saving(noise_ratio: float) -> float:
    return 1.0 - iso_noise_power_ratio(noise_ratio)


def nef(v_rms_in: float, i_total: float, bandwidth: float,
        p: ProcessParams | None = None) -> float:
    p = p or ProcessParams()
    if not (v_rms_in > 0 and i_total > 0 and bandwidth > 0):
        raise InvalidInputError("nef inputs must be positive")
    ut = thermal_voltage(p)
    four_kt = 4.0 * BOLTZMANN * p.temperature
    return v_rms_in * math.sqrt(2.0 * i_total / (math.pi * ut * four_kt * bandwidth))


@dataclass(frozen=True)
class SafetyRow:
    corner: str
    vsg: float
    ok: bool


def vsg_safety(corners: dict, geom: MosGeometry, i_d: float, dtmos: bool = True,
               limit: float = 0.25) -> list[SafetyRow]:
    """Source-gate drop of the input device per parameter set.

    With bulk tied to gate this is also the source-bulk forward bias, which
    must stay below ``limit``.
    """
    rows = []
    for name in sorted(corners):
        p = corners[name]
        v = dtmos_vgs(geom, i_d, p) if dtmos else vgs_of_id(geom, MosBias(i_d), p)
        rows.append(SafetyRow(name, v, v < limit))
    return rows


def load_json_file(path) -> str:
    return Path(path).read_text(encoding="utf-8")
