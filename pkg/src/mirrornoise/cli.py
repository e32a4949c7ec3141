"""Command-line front end.

Exit codes: 0 success, 1 usage, 2 netlist/config parse error, 3 numerical
failure, 4 infeasible optimization.  Diagnostics go to stderr; results are
written only once a command has fully succeeded.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import __version__, mna, oracles
from .devmodel import ProcessParams
from .errors import (ConvergenceError, DomainError, InfeasibleError, InvalidInputError,
                     MirrorNoiseError, NetlistError, SingularMatrixError, ZeroGainError)
from .netlist import parse_netlist, serialize, validate
from .svgplot import emit_svg, read_csv_table
from .sweep_opt import (DesignSpec, SweepSpec, iso_noise_power_ratio, nef, optimize,
                        power_saving, run_sweep, table_to_csv)
from .topologies import build, params_for
from .units import parse_value, read_kv_file

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_NUMERIC, EXIT_INFEASIBLE = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _eng(text: str) -> float:
    try:
        return parse_value(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def _count(text: str) -> int:
    v = _eng(text)
    if v != int(v) or v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return int(v)


def _grid_args(p):
    p.add_argument("--fstart", type=_eng, default=1e3, help="Hz (default 1k)")
    p.add_argument("--fstop", type=_eng, default=10e6, help="Hz (default 10meg)")
    p.add_argument("--points", type=_count, default=41)
    p.add_argument("--spot", type=_eng, help="single frequency in Hz instead of a grid")


def _process_arg(p):
    p.add_argument("--process", metavar="FILE", help="key=value process parameter file")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="mirrornoise", description="Small-signal noise analysis for current "
                 "mirrors and FVF instrumentation amplifiers.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("analyze", help="AC transfer from a source to a node (CSV)")
    p.add_argument("netlist")
    p.add_argument("--in", dest="inp", help="input source label or node")
    p.add_argument("--out", help="output node")
    _grid_args(p)
    _process_arg(p)

    p = sub.add_parser("noise", help="output and input-referred noise")
    p.add_argument("netlist")
    p.add_argument("--out", help="output node (default: .noise directive)")
    p.add_argument("--in", dest="inp", help="input source (default: .noise directive)")
    p.add_argument("--mechanisms", default="thermal,flicker,white",
                   help="comma list of thermal, flicker, white")
    _grid_args(p)
    _process_arg(p)

    p = sub.add_parser("zin", help="impedance seen across a port (CSV)")
    p.add_argument("netlist")
    p.add_argument("--port", required=True, help="n1,n2")
    _grid_args(p)
    _process_arg(p)

    p = sub.add_parser("loopgain", help="return ratio of the .loopgain amplifier(s) (CSV)")
    p.add_argument("netlist")
    p.add_argument("--amps", help="comma list of one or two amplifier labels")
    _grid_args(p)
    _process_arg(p)

    p = sub.add_parser("sweep", help="parameter sweep from a JSON spec (CSV)")
    p.add_argument("spec")
    p.add_argument("--out", help="write CSV here instead of stdout")

    p = sub.add_parser("optimize", help="constrained mirror design search (JSON)")
    p.add_argument("spec")
    p.add_argument("--out", help="write JSON here instead of stdout")

    p = sub.add_parser("topo", help="emit a built-in topology as a netlist")
    p.add_argument("kind", help="conventional, sdcm, tc_half or full_ia")
    p.add_argument("params", nargs="?", help="key=value parameter file")
    _process_arg(p)

    p = sub.add_parser("oracle", help="evaluate a closed-form expression (JSON)")
    p.add_argument("name", choices=sorted(ORACLES))
    p.add_argument("assignments", nargs="*", metavar="key=value")

    p = sub.add_parser("plot", help="SVG line chart from a CSV table")
    p.add_argument("csv")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True, help="comma list of columns")
    p.add_argument("--logx", action="store_true")
    p.add_argument("--logy", action="store_true")
    p.add_argument("--title", default="")
    p.add_argument("--out", required=True, help="output .svg file")
    return ap


# helpers ----------------------------------------------------------------------

def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise InvalidInputError(f"{path}: not UTF-8 text ({e.reason})") from None


def _process(args) -> ProcessParams:
    if getattr(args, "process", None):
        try:
            return ProcessParams.from_mapping(read_kv_file(args.process))
        except ValueError as e:
            raise InvalidInputError(str(e)) from None
    return ProcessParams()


def _load_circuit(path: str):
    data = Path(path).read_bytes()
    circuit = parse_netlist(data, source=path)
    errors = []
    for d in validate(circuit):
        print(d.format(path), file=sys.stderr)
        if d.severity == "error":
            errors.append(d)
    if errors:
        raise InvalidInputError(f"{path}: {len(errors)} validation error(s)")
    return circuit


def _grid(args):
    if args.spot is not None:
        if not args.spot > 0:
            raise UsageError("--spot must be positive")
        return [args.spot]
    if args.fstart <= 0 or args.fstop <= args.fstart:
        if not (args.points == 1 and args.fstart == args.fstop and args.fstart > 0):
            raise UsageError("need 0 < --fstart < --fstop")
    return mna.log_grid(args.fstart, args.fstop, args.points)


def _csv(header, rows) -> str:
    return table_to_csv(header, rows)


def _json(obj) -> str:
    return json.dumps(_clean(obj), separators=(",", ":"), sort_keys=False) + "\n"


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


# commands ---------------------------------------------------------------------

def cmd_analyze(args) -> str:
    c = _load_circuit(args.netlist)
    inp = args.inp or (c.noise.inp if c.noise else None)
    out = args.out or (c.noise.out if c.noise else None)
    if not inp or not out:
        raise UsageError("analyze needs --in and --out (or a .noise directive)")
    res = mna.solve_ac(c, inp, out, _grid(args), _process(args))
    return _csv(*res.rows("gain"))


def cmd_noise(args) -> str:
    c = _load_circuit(args.netlist)
    mechs = tuple(m.strip() for m in args.mechanisms.split(",") if m.strip())
    bad = [m for m in mechs if m not in mna.MECHANISMS]
    if bad or not mechs:
        raise UsageError(f"unknown noise mechanism(s): {', '.join(bad) or '(none)'}")
    if (args.out is None or args.inp is None) and c.noise is None:
        raise UsageError("noise needs --out and --in (or a .noise directive)")
    rep = mna.noise_at_output(c, args.out, args.inp, _grid(args), _process(args), mechs)
    for note in rep.notes:
        print(f"{args.netlist}: warning: {note}", file=sys.stderr)
    if args.spot is None:
        return _csv(*rep.rows())
    lines = ["source,psd_v2hz,fraction"]
    fr = rep.fractions(0)
    for key, v in rep.contributions.items():
        lines.append(f"{key},{float(v[0])!r},{fr[key]:.6f}")
    lines.append(f"total,{float(rep.total[0])!r},{sum(fr.values()):.3f}")
    if rep.input_referred is not None:
        lines.append(f"input_referred,{float(rep.input_referred[0])!r},")
        lines.append(f"input_referred_rms_per_rthz,{math.sqrt(rep.input_referred[0])!r},")
    return "\n".join(lines) + "\n"


def cmd_zin(args) -> str:
    port = [s.strip() for s in args.port.split(",")]
    if len(port) != 2 or not all(port):
        raise UsageError("--port takes two nodes: n1,n2")
    c = _load_circuit(args.netlist)
    for n in port:
        if n.lower() not in c.node_index:
            raise InvalidInputError(f"{args.netlist}: unknown node {n!r}")
    res = mna.input_impedance(c, port, _grid(args), _process(args))
    return _csv(*res.rows("z"))


def cmd_loopgain(args) -> str:
    c = _load_circuit(args.netlist)
    targets = None
    if args.amps:
        targets = tuple(s.strip() for s in args.amps.split(",") if s.strip())
    res = mna.loop_gain(c, _grid(args), _process(args), targets)
    return _csv(*res.rows("t"))


def cmd_sweep(args) -> str:
    spec = SweepSpec.from_json(_read_text(args.spec))
    return _csv(*run_sweep(spec))


def cmd_optimize(args) -> str:
    spec = DesignSpec.from_json(_read_text(args.spec))
    return _json(optimize(spec).to_dict())


def cmd_topo(args) -> str:
    values = {}
    if args.params:
        try:
            values = read_kv_file(args.params)
        except ValueError as e:
            raise InvalidInputError(str(e)) from None
    params = params_for(args.kind, values)
    return serialize(build(args.kind, params, _process(args)))


def _kv(assignments) -> dict[str, float]:
    out = {}
    for a in assignments:
        if "=" not in a:
            raise UsageError(f"expected key=value, got {a!r}")
        k, v = a.split("=", 1)
        k = k.strip().lower()
        if k in out:
            raise UsageError(f"duplicate key {k!r}")
        try:
            out[k] = parse_value(v)
        except ValueError:
            raise UsageError(f"{k}: not a number: {v!r}") from None
    return out


def _take(kv: dict, required, optional=None) -> list[float]:
    optional = optional or {}
    allowed = set(required) | set(optional)
    extra = sorted(set(kv) - allowed)
    if extra:
        raise UsageError(f"unknown key(s): {', '.join(extra)}")
    missing = [k for k in required if k not in kv]
    if missing:
        raise UsageError(f"missing key(s): {', '.join(missing)}")
    return [kv[k] for k in required] + [kv.get(k, d) for k, d in optional.items()]


_GT = {"gamma": 1.0, "t": 300.0}


def _o_cm_noise(kv):
    gm3, r_d, g, t = _take(kv, ["gm3", "r_d"], _GT)
    return {"psd": oracles.cm_output_noise(oracles.MirrorParams(gm3, 0.0, r_d, g, t))}


def _o_sdcm_gm(kv):
    exact, approx = oracles.sdcm_effective_gm(*_take(kv, ["gm3", "r_de"]))
    return {"exact": exact, "approx": approx}


def _o_sdcm_noise(kv):
    gm3, r_de, r_d, g, t = _take(kv, ["gm3", "r_de", "r_d"], _GT)
    exact, approx = oracles.sdcm_output_noise(oracles.MirrorParams(gm3, r_de, r_d, g, t))
    return {"exact": exact, "approx": approx}


def _o_sdcm_current(kv):
    return {"psd": oracles.sdcm_current_psd(*_take(kv, ["gm3", "r_de"], _GT))}


def _o_ia_noise(kv):
    gm1, gm3, r_in, g, t = _take(kv, ["gm1", "gm3", "r_in"], _GT)
    return {"psd": oracles.ia_input_noise(oracles.IaNoiseParams(gm1, gm3, r_in, g, t))}


def _o_dtmos_ratio(kv):
    return {"ratio": oracles.dtmos_noise_ratio(*_take(kv, ["gm", "gmb"]))}


def _o_appendix(kv):
    a, b = oracles.appendix_transfers(*_take(kv, ["gm3", "r_de"]))
    return {"r_de_transfer": a, "channel_transfer": b, "sum": a + b}


def _o_iso_power(kv):
    (r,) = _take(kv, ["noise_ratio"])
    return {"power_ratio": iso_noise_power_ratio(r), "saving": power_saving(r)}


def _o_nef(kv):
    v, i, bw, t = _take(kv, ["v_rms", "i_total", "bw"], {"t": 300.0})
    return {"nef": nef(v, i, bw, ProcessParams(temperature=t))}


ORACLES = {
    "cm_noise": _o_cm_noise,
    "sdcm_gm": _o_sdcm_gm,
    "sdcm_noise": _o_sdcm_noise,
    "sdcm_current": _o_sdcm_current,
    "ia_noise": _o_ia_noise,
    "dtmos_ratio": _o_dtmos_ratio,
    "appendix": _o_appendix,
    "iso_power": _o_iso_power,
    "nef": _o_nef,
}


def cmd_oracle(args) -> str:
    return _json(ORACLES[args.name](_kv(args.assignments)))


def cmd_plot(args) -> str:
    header, rows = read_csv_table(_read_text(args.csv))
    ys = [s.strip() for s in args.y.split(",") if s.strip()]
    return emit_svg(header, rows, args.x, ys, args.logx, args.logy, args.title)


COMMANDS = {
    "analyze": cmd_analyze,
    "noise": cmd_noise,
    "zin": cmd_zin,
    "loopgain": cmd_loopgain,
    "sweep": cmd_sweep,
    "optimize": cmd_optimize,
    "topo": cmd_topo,
    "oracle": cmd_oracle,
    "plot": cmd_plot,
}

# commands whose --out names a file rather than a node
_FILE_OUT = {"sweep", "optimize", "plot"}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        text = COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    except InfeasibleError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SingularMatrixError, ConvergenceError, ZeroGainError, DomainError,
            ArithmeticError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except NetlistError as e:
        print(e.format(), file=sys.stderr)
        return EXIT_PARSE
    except (MirrorNoiseError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    if args.command in _FILE_OUT and args.out:
        try:
            Path(args.out).write_text(text, encoding="utf-8")
        except OSError as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_PARSE
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
