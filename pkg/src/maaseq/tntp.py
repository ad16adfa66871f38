"""Reader and writer for TNTP trip tables.

The format is a metadata header of ``<TAG> value`` lines closed by
``<END OF METADATA>``, followed by ``Origin o`` blocks holding
``dest : flow;`` entries.  Lines starting with ``~`` are comments.
"""
from __future__ import annotations

import re

from .network import DemandProfile


class TntpError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


_TAG = re.compile(r"^<([^>]+)>\s*(.*)$")
_ORIGIN = re.compile(r"^origin\s+(\S+)\s*$", re.IGNORECASE)


def _number(tok: str, line: int, what: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise TntpError(f"non-numeric {what} {tok!r}", line) from None


def _node(tok: str, line: int, what: str) -> int:
    v = _number(tok, line, what)
    if v != int(v):
        raise TntpError(f"{what} {tok!r} is not an integer", line)
    return int(v)


def parse_tntp_demand(text: str | bytes, scale: float = 1.0, check_total: bool = True) -> DemandProfile:
    """Parse a trips file into a :class:`DemandProfile` with every flow multiplied by ``scale``.

    Zero entries are kept.  When the header declares ``<TOTAL OD FLOW>`` and
    ``check_total`` is set, the unscaled sum must match it.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    meta: dict[str, tuple[str, int]] = {}
    in_header = True
    origin = None
    entries: dict[tuple[int, int], float] = {}
    total = 0.0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("~", 1)[0].strip()
        if not line:
            continue
        m = _TAG.match(line)
        if m:
            if not in_header:
                raise TntpError(f"metadata tag <{m.group(1)}> after the header", lineno)
            tag = m.group(1).strip().upper()
            if tag == "END OF METADATA":
                in_header = False
            else:
                meta[tag] = (m.group(2).strip(), lineno)
            continue
        if in_header and meta:
            raise TntpError("malformed header: missing <END OF METADATA>", lineno)
        in_header = False
        m = _ORIGIN.match(line)
        if m:
            origin = _node(m.group(1), lineno, "origin")
            continue
        if origin is None:
            raise TntpError(f"entry outside an Origin block: {line!r}", lineno)
        for item in line.split(";"):
            item = item.strip()
            if not item:
                continue
            parts = item.split(":")
            if len(parts) != 2:
                raise TntpError(f"malformed entry {item!r}, expected 'dest : flow'", lineno)
            dest = _node(parts[0].strip(), lineno, "destination")
            flow = _number(parts[1].strip(), lineno, "flow")
            if flow < 0:
                raise TntpError(f"negative flow {flow} for OD ({origin},{dest})", lineno)
            if (origin, dest) in entries:
                raise TntpError(f"duplicate OD entry ({origin},{dest})", lineno)
            entries[(origin, dest)] = flow
            total += flow
    if in_header and meta:
        raise TntpError("malformed header: missing <END OF METADATA>")
    if "NUMBER OF ZONES" in meta:
        value, ln = meta["NUMBER OF ZONES"]
        zones = _node(value, ln, "zone count")
        for (o, d) in entries:
            if not (1 <= o <= zones and 1 <= d <= zones):
                raise TntpError(f"OD ({o},{d}) outside declared zones 1..{zones}")
    if check_total and "TOTAL OD FLOW" in meta:
        value, ln = meta["TOTAL OD FLOW"]
        declared = _number(value, ln, "total flow")
        if abs(declared - total) > 1e-6 * max(1.0, abs(declared)):
            raise TntpError(f"entries sum to {total} but the header declares {declared}", ln)
    return DemandProfile(tuple((o, d, q * scale) for (o, d), q in entries.items()))


def format_tntp_demand(profile: DemandProfile, zones: int | None = None, per_line: int = 5) -> str:
    """Inverse of :func:`parse_tntp_demand` for the unscaled profile."""
    by_origin: dict[int, list] = {}
    for o, d, q in profile.entries:
        by_origin.setdefault(o, []).append((d, q))
    nodes = {n for o, d, _ in profile.entries for n in (o, d)}
    zones = zones or (max(nodes) if nodes else 0)
    total = sum(q for _, _, q in profile.entries)
    out = [f"<NUMBER OF ZONES> {zones}", f"<TOTAL OD FLOW> {total!r}", "<END OF METADATA>", ""]
    for o in sorted(by_origin):
        out.append(f"Origin {o}")
        row = sorted(by_origin[o])
        for k in range(0, len(row), per_line):
            out.append("  " + "  ".join(f"{d:5d} : {q!r};" for d, q in row[k:k + per_line]))
        out.append("")
    return "\n".join(out)
