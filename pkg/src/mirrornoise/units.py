"""Engineering-notation numbers and flat ``key=value`` parameter files."""

from __future__ import annotations

import re
from decimal import Decimal
from pathlib import Path

# exponent strings, so "4.7k" is parsed as the exactly-rounded decimal 4.7e3
SUFFIXES = {
    "f": "-15",
    "p": "-12",
    "n": "-9",
    "u": "-6",
    "m": "-3",
    "k": "3",
    "meg": "6",
    "g": "9",
}

_NUMBER = re.compile(
    r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)(meg|[fpnumkg])?$",
    re.IGNORECASE,
)


def parse_value(text: str) -> float:
    """Parse ``4k``, ``1.5meg``, ``250n``, ``1e-6`` into a float.

    Raises ValueError on anything else, including trailing unit names.
    """
    m = _NUMBER.match(text.strip())
    if m is None:
        raise ValueError(f"not a number: {text!r}")
    mant, suffix = m.groups()
    if suffix is None:
        return float(mant)
    try:
        return float(Decimal(mant).scaleb(int(SUFFIXES[suffix.lower()])))
    except ArithmeticError:
        raise ValueError(f"value out of range: {text!r}") from None


_FORMAT_ORDER = [("g", 9), ("meg", 6), ("k", 3), ("", 0), ("m", -3),
                 ("u", -6), ("n", -9), ("p", -12), ("f", -15)]


def format_value(value: float) -> str:
    """Shortest engineering form that parses back to exactly ``value``."""
    if value == 0:
        return "0"
    mag = abs(value)
    if mag != mag or not 1e-15 <= mag < 1e12:
        return repr(float(value))
    dec = Decimal(repr(float(value)))
    for suffix, exp in _FORMAT_ORDER:
        if mag >= 10.0 ** exp:
            mant = dec.scaleb(-exp).normalize()
            # Decimal.normalize can produce "4E+1"; force plain notation
            text = f"{mant:f}"
            if "." in text:
                text = text.rstrip("0").rstrip(".")
            out = text + suffix
            if parse_value(out) == value:
                return out
            break
    return repr(float(value))


def read_kv_text(text: str, source: str = "<params>") -> dict[str, str]:
    """Read ``key=value`` lines; ``#`` and ``*`` start comments."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("*"):
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}:1: error: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"{source}:{lineno}:1: error: empty key")
        if key in out:
            raise ValueError(f"{source}:{lineno}:1: error: duplicate key {key!r}")
        out[key] = val
    return out


def read_kv_file(path: str | Path) -> dict[str, str]:
    p = Path(path)
    return read_kv_text(p.read_text(encoding="utf-8"), str(p))
