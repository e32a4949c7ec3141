"""Complex modified nodal analysis: AC transfer, impedance, loop gain, noise.

Unknowns are the non-ground node voltages followed by one branch current per
voltage source and per macro amplifier.  Each frequency point is factored
once (LAPACK ``getrf``, partial pivoting) and every right-hand side for that
point (signal, per-source noise injections) is back-substituted against the
same factors.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

from .devmodel import (ProcessParams, SmallSignal, channel_thermal_psd, flicker_psd,
                       resistor_noise, small_signal)
from .errors import InvalidInputError, SingularMatrixError, ZeroGainError
from .netlist import (GROUND, Capacitor, Circuit, ISource, MacroAmp, Mosfet, Resistor,
                      VSource, resolve_source)

TWO_PI = 2.0 * math.pi

MECHANISMS = ("thermal", "flicker", "white")


def worker_count() -> int:
    """Worker threads for frequency partitioning; ``MIRRORNOISE_THREADS`` caps it (0 = auto)."""
    raw = os.environ.get("MIRRORNOISE_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise InvalidInputError(f"MIRRORNOISE_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise InvalidInputError("MIRRORNOISE_THREADS must be >= 0")
    if n == 0:
        n = min(8, os.cpu_count() or 1)
    return n


def log_grid(fstart: float, fstop: float, points: int) -> np.ndarray:
    if not (fstart > 0 and fstop > fstart and points >= 2):
        if points == 1 and fstart > 0 and fstop == fstart:
            return np.array([float(fstart)])
        raise InvalidInputError("frequency grid needs 0 < fstart < fstop and points >= 2")
    grid = np.geomspace(fstart, fstop, points)
    grid[0], grid[-1] = fstart, fstop
    return grid


def _as_grid(f_grid) -> np.ndarray:
    grid = np.atleast_1d(np.asarray(f_grid, dtype=float))
    if grid.ndim != 1 or grid.size == 0:
        raise InvalidInputError("frequency grid must be a non-empty 1-D sequence")
    if np.any(~np.isfinite(grid)) or np.any(grid < 0):
        raise InvalidInputError("frequencies must be finite and >= 0")
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise InvalidInputError("frequency grid must be strictly increasing")
    return grid


@dataclass
class SystemMatrix:
    matrix: np.ndarray
    rhs: np.ndarray
    unknowns: list[str]

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]


@dataclass
class AcResult:
    freq: np.ndarray
    gain: np.ndarray  # complex

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.gain)

    @property
    def magnitude_db(self) -> np.ndarray:
        return 20.0 * np.log10(np.abs(self.gain))

    @property
    def phase_deg(self) -> np.ndarray:
        return np.degrees(np.unwrap(np.angle(self.gain)))

    def rows(self, prefix: str = "gain"):
        header = ["freq_hz", f"{prefix}_re", f"{prefix}_im", f"{prefix}_mag",
                  f"{prefix}_db", f"{prefix}_phase_deg"]
        mag, db, ph = self.magnitude, self.magnitude_db, self.phase_deg
        body = [[f, g.real, g.imag, m, d, p]
                for f, g, m, d, p in zip(self.freq, self.gain, mag, db, ph)]
        return header, body


@dataclass
class NoiseReport:
    freq: np.ndarray
    contributions: dict[str, np.ndarray]  # "<label>:<mechanism>" -> V^2/Hz
    total: np.ndarray
    gain: np.ndarray | None  # complex, signal transfer used for referral
    input_referred: np.ndarray | None
    notes: list[str] = field(default_factory=list)

    def fractions(self, index: int = 0) -> dict[str, float]:
        tot = self.total[index]
        if tot == 0:
            return {k: 0.0 for k in self.contributions}
        return {k: float(v[index] / tot) for k, v in self.contributions.items()}

    def rows(self):
        header = ["freq_hz", *self.contributions, "total_v2hz", "input_referred_v2hz"]
        body = []
        for i, f in enumerate(self.freq):
            row = [f, *(v[i] for v in self.contributions.values()), self.total[i]]
            row.append(self.input_referred[i] if self.input_referred is not None else float("nan"))
            body.append(row)
        return header, body


class Mna:
    """Stamping and solving for one circuit at a fixed operating point."""

    def __init__(self, circuit: Circuit, process: ProcessParams | None = None):
        self.circuit = circuit
        self.process = process or ProcessParams()
        nodes = circuit.nodes
        self.node_row = {n.name: n.index - 1 for n in nodes if n.name != GROUND}
        self.n_nodes = len(self.node_row)
        self.branch_row: dict[str, int] = {}
        for el in circuit.elements:
            if isinstance(el, (VSource, MacroAmp)):
                self.branch_row[el.label] = self.n_nodes + len(self.branch_row)
        self.dim = self.n_nodes + len(self.branch_row)
        self.ops: dict[str, SmallSignal] = {}
        for el in circuit.elements:
            if isinstance(el, Mosfet):
                self.ops[el.label] = small_signal(el.geometry, el.bias, self.process,
                                                  gds=el.gds, dtmos=el.dtmos)

    @property
    def unknowns(self) -> list[str]:
        names = [f"v({n})" for n in self.node_row]
        names += [f"i({lab})" for lab in self.branch_row]
        return names

    def row(self, node: str) -> int | None:
        node = node.lower()
        if node == GROUND:
            return None
        if node not in self.node_row:
            raise InvalidInputError(f"unknown node {node!r}")
        return self.node_row[node]

    # stamping -------------------------------------------------------------

    def matrix(self, f: float, suspended=(), removed=()) -> np.ndarray:
        """System matrix at ``f``.

        ``suspended`` amplifiers have their controlled gain replaced by an
        independent output value (set in the right-hand side); ``removed``
        sources are opened.
        """
        A = np.zeros((self.dim, self.dim), dtype=complex)
        r = self.node_row.get
        s = 1j * TWO_PI * f

        def admit(a, b, y):
            ia, ib = r(a), r(b)
            if ia is not None:
                A[ia, ia] += y
            if ib is not None:
                A[ib, ib] += y
            if ia is not None and ib is not None:
                A[ia, ib] -= y
                A[ib, ia] -= y

        def vccs(out_p, out_n, c_p, c_n, g):
            # current g*(v(c_p)-v(c_n)) flowing out_p -> out_n through the device
            for o, so in ((r(out_p), 1.0), (r(out_n), -1.0)):
                if o is None:
                    continue
                for c, sc in ((r(c_p), 1.0), (r(c_n), -1.0)):
                    if c is not None:
                        A[o, c] += so * sc * g

        for el in self.circuit.elements:
            if isinstance(el, Resistor):
                admit(el.n1, el.n2, 1.0 / el.r)
            elif isinstance(el, Capacitor):
                admit(el.n1, el.n2, s * el.c)
            elif isinstance(el, Mosfet):
                op = self.ops[el.label]
                vccs(el.d, el.s, el.g, el.s, op.gm)
                if op.gmb:
                    vccs(el.d, el.s, el.b, el.s, op.gmb)
                if op.gds:
                    admit(el.d, el.s, op.gds)
                if el.dtmos:
                    admit(el.g, GROUND, s * self.process.cj_bulk * el.geometry.area)
            elif isinstance(el, VSource):
                k = self.branch_row[el.label]
                if el.label in removed:
                    A[k, k] = 1.0
                    continue
                for node, sign in ((el.n1, 1.0), (el.n2, -1.0)):
                    i = r(node)
                    if i is not None:
                        A[i, k] += sign
                        A[k, i] += sign
            elif isinstance(el, MacroAmp):
                k = self.branch_row[el.label]
                o = r(el.out)
                if o is not None:
                    A[o, k] += 1.0
                    A[k, o] += 1.0
                else:
                    A[k, k] = 1.0  # output shorted to ground: branch current free
                if el.label not in suspended:
                    g = el.gain_at(f)
                    for node, sign in ((el.inp, -1.0), (el.inn, 1.0)):
                        i = r(node)
                        if i is not None:
                            A[k, i] += sign * g
        if not np.all(np.isfinite(A)):
            raise SingularMatrixError(f, 0)
        return A

    def source_rhs(self, zero_except: str | None = None, unit: bool = False) -> np.ndarray:
        b = np.zeros(self.dim, dtype=complex)
        for el in self.circuit.elements:
            if not isinstance(el, (VSource, ISource)):
                continue
            if zero_except is not None and el.label != zero_except:
                continue
            val = 1.0 if (unit and el.label == zero_except) else el.ac
            if isinstance(el, VSource):
                b[self.branch_row[el.label]] += val
            else:
                self._inject(b, el.n1, el.n2, -val)
        return b

    def _inject(self, b: np.ndarray, a: str, c: str, value: complex) -> None:
        """Current ``value`` pushed into node ``a`` and drawn from node ``c``."""
        ia, ic = self.node_row.get(a), self.node_row.get(c)
        if ia is not None:
            b[ia] += value
        if ic is not None:
            b[ic] -= value

    def factor(self, A: np.ndarray, f: float):
        lu, piv, info = lapack.zgetrf(A)
        if info > 0:
            raise SingularMatrixError(f, int(info))
        diag = np.abs(np.diag(lu))
        scale = np.max(np.abs(A)) if A.size else 1.0
        small = np.nonzero(diag <= 64 * np.finfo(float).eps * scale)[0]
        if small.size:
            raise SingularMatrixError(f, int(small[0]) + 1)
        return lu, piv

    @staticmethod
    def backsolve(factors, B: np.ndarray) -> np.ndarray:
        lu, piv = factors
        x, info = lapack.zgetrs(lu, piv, B)
        return x

    def solve(self, f: float, B: np.ndarray, suspended=(), removed=()) -> np.ndarray:
        A = self.matrix(f, suspended, removed)
        return self.backsolve(self.factor(A, f), B)

    def voltage(self, x: np.ndarray, node: str):
        i = self.row(node)
        return 0.0 if i is None else x[i]

    # noise sources ----------------------------------------------------------

    def noise_sources(self, mechanisms=MECHANISMS, exclude=()):
        """Yield ``(key, injection_kind, element, psd_function)``.

        ``psd_function(f)`` returns the source PSD; injections are unit test
        currents (``"current"``) or unit amplifier input voltages (``"amp"``).
        """
        p = self.process
        excl = {e.lower() for e in exclude}
        out = []
        for el in self.circuit.elements:
            if el.label in excl:
                continue
            if isinstance(el, Resistor) and "thermal" in mechanisms:
                si = resistor_noise(el.r, p)[0]
                out.append((f"{el.label}:thermal", el, lambda f, si=si: si))
            elif isinstance(el, Mosfet):
                op = self.ops[el.label]
                if "thermal" in mechanisms:
                    si = channel_thermal_psd(op.gm, p)
                    out.append((f"{el.label}:thermal", el, lambda f, si=si: si))
                if "flicker" in mechanisms and p.kf > 0:
                    geom = el.geometry
                    out.append((f"{el.label}:flicker", el,
                                lambda f, g=geom, gm=op.gm: flicker_psd(g, gm, f, p)))
            elif isinstance(el, MacroAmp) and el.vnoise > 0 and "white" in mechanisms:
                out.append((f"{el.label}:white", el, lambda f, v=el.vnoise: v))
        return out

    def injection(self, el, f: float) -> np.ndarray:
        b = np.zeros(self.dim, dtype=complex)
        if isinstance(el, Resistor):
            self._inject(b, el.n1, el.n2, 1.0)
        elif isinstance(el, Mosfet):
            # channel noise current flows d -> s inside the device
            self._inject(b, el.s, el.d, 1.0)
        elif isinstance(el, MacroAmp):
            # unit voltage in series with the + input: row reads v_out - A(v+ - v- + vn) = 0
            b[self.branch_row[el.label]] = el.gain_at(f)
        else:
            raise InvalidInputError(f"{el.label} has no noise mechanism")
        return b


def _partition(grid: np.ndarray, fn):
    """Evaluate ``fn(f)`` over ``grid`` on worker threads, preserving order."""
    n = worker_count()
    if n <= 1 or grid.size < 8:
        return [fn(f) for f in grid]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, grid))


# public operations ------------------------------------------------------------

def stamp(circuit: Circuit, f: float, process: ProcessParams | None = None) -> SystemMatrix:
    if f < 0:
        raise InvalidInputError("frequency must be >= 0")
    m = Mna(circuit, process)
    return SystemMatrix(m.matrix(f), m.source_rhs(), m.unknowns)


def solve_ac(circuit: Circuit, in_src: str, out: str, f_grid,
             process: ProcessParams | None = None) -> AcResult:
    """Transfer V(out)/AC(in_src) with every other independent source zeroed."""
    grid = _as_grid(f_grid)
    m = Mna(circuit, process)
    src = _source(circuit, in_src)
    m.row(out)
    b = m.source_rhs(zero_except=src.label, unit=True)

    def point(f):
        return m.voltage(m.solve(f, b[:, None])[:, 0], out)

    return AcResult(grid, np.array(_partition(grid, point), dtype=complex))


def _source(circuit: Circuit, name: str):
    try:
        return resolve_source(circuit, name)
    except KeyError as e:
        raise InvalidInputError(e.args[0]) from None


def _find_element(circuit: Circuit, label: str):
    try:
        return circuit.element(label)
    except KeyError:
        raise InvalidInputError(f"unknown element {label!r}") from None


def transfer_from_source(circuit: Circuit, element: str, mechanism: str, out: str, f: float,
                         process: ProcessParams | None = None) -> complex:
    m = Mna(circuit, process)
    el = _find_element(circuit, element)
    if isinstance(el, MacroAmp):
        ok = mechanism == "white"
    elif isinstance(el, Resistor):
        ok = mechanism == "thermal"
    elif isinstance(el, Mosfet):
        ok = mechanism in ("thermal", "flicker")
    else:
        ok = False
    if not ok:
        raise InvalidInputError(f"{element} has no {mechanism!r} noise mechanism")
    m.row(out)
    x = m.solve(f, m.injection(el, f)[:, None])[:, 0]
    return complex(m.voltage(x, out))


def noise_at_output(circuit: Circuit, out: str | None = None, in_src: str | None = None,
                    f_grid=(1e5,), process: ProcessParams | None = None,
                    mechanisms=MECHANISMS, exclude=None) -> NoiseReport:
    """Superpose every uncorrelated noise source at node ``out``.

    Ports default to the circuit's ``.noise`` directive.  When the signal
    transfer is zero the output PSD is still returned with
    ``input_referred=None`` and a note.
    """
    nd = circuit.noise
    if out is None or in_src is None:
        if nd is None:
            raise InvalidInputError("no .noise directive and no explicit ports")
        out = out if out is not None else nd.out
        in_src = in_src if in_src is not None else nd.inp
    if exclude is None:
        exclude = nd.exclude if nd is not None else ()
    grid = _as_grid(f_grid)
    if np.any(grid <= 0):
        raise InvalidInputError("noise analysis needs f > 0")
    m = Mna(circuit, process)
    m.row(out)
    sources = m.noise_sources(mechanisms, exclude)
    src = _source(circuit, in_src) if in_src else None
    sig = m.source_rhs(zero_except=src.label, unit=True) if src is not None else None

    def point(f):
        cols = [m.injection(el, f) for _, el, _ in sources]
        if sig is not None:
            cols.append(sig)
        if not cols:
            return [], None
        x = m.solve(f, np.column_stack(cols))
        h = [m.voltage(x[:, j], out) for j in range(len(sources))]
        psd = [fn(f) * abs(hj) ** 2 for (_, _, fn), hj in zip(sources, h)]
        g = m.voltage(x[:, -1], out) if sig is not None else None
        return psd, g

    results = _partition(grid, point)
    contributions = {key: np.array([r[0][j] for r in results], dtype=float)
                     for j, (key, _, _) in enumerate(sources)}
    total = np.zeros(grid.size)
    for v in contributions.values():
        total = total + v
    notes: list[str] = []
    gain = input_referred = None
    if sig is not None:
        gain = np.array([r[1] for r in results], dtype=complex)
        mag2 = np.abs(gain) ** 2
        if np.any(mag2 == 0):
            notes.append("zero signal gain: input referral undefined")
        else:
            input_referred = total / mag2
    return NoiseReport(grid, contributions, total, gain, input_referred, notes)


def require_input_referred(report: NoiseReport) -> np.ndarray:
    if report.input_referred is None:
        raise ZeroGainError("; ".join(report.notes) or "no input source")
    return report.input_referred


def input_impedance(circuit: Circuit, port, f_grid,
                    process: ProcessParams | None = None) -> AcResult:
    """Z = V(port)/I(test) with a unit test current driven across ``port``.

    Sources connected only across the port are the port's driver and are
    removed; every other independent source is zeroed.
    """
    a, b = (n.lower() for n in port)
    grid = _as_grid(f_grid)
    m = Mna(circuit, process)
    m.row(a)
    m.row(b)
    removed = {el.label for el in circuit.elements
               if isinstance(el, (VSource, ISource)) and set(el.nodes) <= {a, b}}
    rhs = np.zeros(m.dim, dtype=complex)
    m._inject(rhs, a, b, 1.0)

    def point(f):
        x = m.solve(f, rhs[:, None], removed=removed)[:, 0]
        return m.voltage(x, a) - m.voltage(x, b)

    return AcResult(grid, np.array(_partition(grid, point), dtype=complex))


def loop_gain(circuit: Circuit, f_grid, process: ProcessParams | None = None,
              targets: tuple[str, ...] | None = None) -> AcResult:
    """Return ratio of the ``.loopgain`` amplifier(s).

    One target: its gain is suspended, a unit voltage is forced at its output,
    and T = -A(f) * (v+ - v-) is read at its inputs.  Two targets are treated
    as a differential pair, driven with +1/-1 and T = -(A1*u1 - A2*u2)/2.
    """
    targets = tuple(t.lower() for t in (targets or circuit.loopgain))
    if not targets:
        raise InvalidInputError("no .loopgain directive")
    amps = []
    for t in targets:
        el = _find_element(circuit, t)
        if not isinstance(el, MacroAmp):
            raise InvalidInputError(f"{t} is not a controlled source")
        amps.append(el)
    if len(amps) > 2:
        raise InvalidInputError(".loopgain takes one or two amplifiers")
    grid = _as_grid(f_grid)
    m = Mna(circuit, process)
    rhs = np.zeros(m.dim, dtype=complex)
    signs = (1.0, -1.0)[: len(amps)]
    for el, sgn in zip(amps, signs):
        rhs[m.branch_row[el.label]] = sgn
    suspended = {el.label for el in amps}

    def point(f):
        x = m.solve(f, rhs[:, None], suspended=suspended)[:, 0]
        t = 0.0
        for el, sgn in zip(amps, signs):
            u = m.voltage(x, el.inp) - m.voltage(x, el.inn)
            t += -sgn * el.gain_at(f) * u
        return t / len(amps)

    return AcResult(grid, np.array(_partition(grid, point), dtype=complex))
