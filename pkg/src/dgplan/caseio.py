"""Case file parsing (MATPOWER text subset, canonical JSON) and CSV output.

MATPOWER subset grammar
-----------------------
* ``%`` starts a comment that runs to end of line.
* ``function mpc = <name>`` sets the case name.
* ``mpc.baseMVA = <number>;`` is required.
* ``mpc.<section> = [ ... ];`` numeric matrices. ``bus``, ``gen`` and ``branch``
  are read; ``gencost`` and ``areas`` are accepted and ignored. Rows end with
  ``;`` or a newline, values are separated by whitespace or commas.
* ``mpc.bus_name = { ... };`` is accepted and ignored; ``mpc.version`` likewise.
* Anything else is a :class:`CaseParseError` carrying the line number.

Bus types map 3 -> slack, 2 -> PV, 1 -> PQ. MW / MVAr quantities are divided
by ``baseMVA``. Branch ``ratio == 0`` means a line (tap 1.0); phase shifters
are rejected.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Sequence

import jsonschema
import numpy as np

from .network import Branch, Bus, BusKind, Network, validate_network


class CaseParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class CaseSchemaError(ValueError):
    """JSON case document violates the schema or a network invariant."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path or '<root>'}: {message}")


_MATRIX_SECTIONS = {"bus", "gen", "branch", "gencost", "areas"}
_IGNORED_SECTIONS = {"gencost", "areas", "bus_name", "version"}

_ASSIGN = re.compile(r"^mpc\.(\w+)\s*=\s*(.*)$")
_FUNCTION = re.compile(r"^function\s+\w+\s*=\s*(\w+)\s*;?$")

_BUS_KIND = {3: BusKind.SLACK, 2: BusKind.PV, 1: BusKind.PQ}

# k: default number of DG candidate buses; reference_candidates: the buses
# used by the reference study for this system
BUILTIN_CASES = {
    "ieee14": {"file": "case14.m", "v_band": (0.98, 1.01), "base_kv": 11.0, "k": 4, "reference_candidates": (2, 8, 9, 10)},
    "ieee30": {"file": "case_ieee30.m", "v_band": (1.01, 1.1), "base_kv": 11.0, "k": 3, "reference_candidates": (2, 6, 7)},
}


def _parse_number(token: str, line: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise CaseParseError(f"non-numeric token {token!r}", line) from None
    return value


def _matrix_rows(body: list[tuple[int, str]]) -> list[tuple[int, list[float]]]:
    rows = []
    for lineno, text in body:
        for chunk in text.split(";"):
            tokens = [t for t in re.split(r"[\s,]+", chunk.strip()) if t]
            if tokens:
                rows.append((lineno, [_parse_number(t, lineno) for t in tokens]))
    return rows


def _tokenize_sections(text: str) -> tuple[str, dict[str, Any]]:
    name = ""
    sections: dict[str, Any] = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        lineno = i + 1
        line = lines[i].split("%", 1)[0].strip()
        i += 1
        if not line:
            continue
        m = _FUNCTION.match(line)
        if m:
            name = m.group(1)
            continue
        m = _ASSIGN.match(line)
        if not m:
            raise CaseParseError(f"unrecognised statement {line!r}", lineno)
        key, rhs = m.group(1), m.group(2).strip()
        if key not in _MATRIX_SECTIONS | _IGNORED_SECTIONS | {"baseMVA"}:
            raise CaseParseError(f"unknown section 'mpc.{key}'", lineno)
        if rhs.startswith("[") or rhs.startswith("{"):
            closer = "]" if rhs.startswith("[") else "}"
            if closer == "}" and key != "bus_name":
                raise CaseParseError(f"cell array not supported for 'mpc.{key}'", lineno)
            body = []
            rest = rhs[1:]
            start = lineno
            while closer not in rest:
                body.append((lineno, rest))
                if i >= len(lines):
                    raise CaseParseError(f"unterminated section 'mpc.{key}'", start)
                lineno = i + 1
                rest = lines[i].split("%", 1)[0] if closer == "]" else lines[i]
                i += 1
            before, after = rest.split(closer, 1)
            body.append((lineno, before))
            if after.strip() not in ("", ";"):
                raise CaseParseError(f"unexpected text after section: {after.strip()!r}", lineno)
            if closer == "]":
                sections[key] = (start, _matrix_rows(body))
        else:
            value = rhs.rstrip(";").strip()
            if key == "baseMVA":
                sections[key] = (lineno, _parse_number(value, lineno))
            elif key != "version":
                raise CaseParseError(f"'mpc.{key}' must be a matrix", lineno)
    return name, sections


def _matrix(sections, key, min_cols) -> tuple[int, list[tuple[int, list[float]]]]:
    if key not in sections:
        raise CaseParseError(f"missing 'mpc.{key}' section")
    start, rows = sections[key]
    for lineno, row in rows:
        if len(row) < min_cols:
            raise CaseParseError(f"'mpc.{key}' row has {len(row)} columns, need {min_cols}", lineno)
    return start, rows


def _as_int(value: float, what: str, line: int) -> int:
    if not np.isfinite(value) or value != int(value):
        raise CaseParseError(f"{what} must be an integer, got {value}", line)
    return int(value)


def parse_case_text(text: str, name: str = "") -> Network:
    """Parse MATPOWER-style case text into a :class:`Network`."""
    case_name, sections = _tokenize_sections(text)
    if "baseMVA" not in sections:
        raise CaseParseError("missing baseMVA")
    base_line, base = sections["baseMVA"]
    if not base > 0:
        raise CaseParseError(f"baseMVA must be positive, got {base}", base_line)

    _, bus_rows = _matrix(sections, "bus", 13)
    _, branch_rows = _matrix(sections, "branch", 11)
    gen_rows = _matrix(sections, "gen", 8)[1] if "gen" in sections else []

    gen_p: dict[int, float] = {}
    gen_q: dict[int, float] = {}
    gen_v: dict[int, float] = {}
    for lineno, row in gen_rows:
        bus_id = _as_int(row[0], "generator bus", lineno)
        if row[7] <= 0:
            continue
        gen_p[bus_id] = gen_p.get(bus_id, 0.0) + row[1]
        gen_q[bus_id] = gen_q.get(bus_id, 0.0) + row[2]
        gen_v.setdefault(bus_id, row[5])

    buses = []
    base_kv = 0.0
    for lineno, row in bus_rows:
        bus_id = _as_int(row[0], "bus id", lineno)
        code = _as_int(row[1], "bus type", lineno)
        if code not in _BUS_KIND:
            raise CaseParseError(f"unsupported bus type {code} at bus {bus_id}", lineno)
        kind = _BUS_KIND[code]
        base_kv = base_kv or row[9]
        buses.append(
            Bus(
                id=bus_id,
                kind=kind,
                p_demand=row[2] / base,
                q_demand=row[3] / base,
                p_gen=gen_p.get(bus_id, 0.0) / base,
                q_gen=gen_q.get(bus_id, 0.0) / base,
                v_setpoint=gen_v.get(bus_id, row[7]) if kind is not BusKind.PQ else 1.0,
                v_min=row[12],
                v_max=row[11],
                shunt_g=row[4] / base,
                shunt_b=row[5] / base,
            )
        )

    branches = []
    for lineno, row in branch_rows:
        if row[10] <= 0:
            continue
        if row[9] != 0:
            raise CaseParseError("phase-shifting transformers are not supported", lineno)
        rating = row[5] / base if row[5] > 0 else None
        branches.append(
            Branch(
                from_bus=_as_int(row[0], "from bus", lineno),
                to_bus=_as_int(row[1], "to bus", lineno),
                r=row[2],
                x=row[3],
                b_charging=row[4],
                tap_ratio=row[8] if row[8] != 0 else 1.0,
                rating=rating,
            )
        )

    return Network(
        base_mva=base,
        buses=tuple(buses),
        branches=tuple(branches),
        name=name or case_name,
        base_kv=base_kv,
        source="matpower",
    )


CASE_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["name", "base_mva", "buses", "branches"],
    "properties": {
        "name": {"type": "string"},
        "base_mva": {"type": "number"},
        "base_kv": {"type": "number"},
        "source": {"type": "string"},
        "v_band": {
            "anyOf": [
                {"type": "null"},
                {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
            ]
        },
        "buses": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "kind", "pd", "qd", "pg", "qg", "vset", "vmin", "vmax", "gs", "bs"],
                "properties": {
                    "id": {"type": "integer"},
                    "kind": {"enum": [k.value for k in BusKind]},
                    **{k: {"type": "number"} for k in ("pd", "qd", "pg", "qg", "vset", "vmin", "vmax", "gs", "bs")},
                },
                "additionalProperties": False,
            },
        },
        "branches": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from", "to", "r", "x", "b", "tap"],
                "properties": {
                    "from": {"type": "integer"},
                    "to": {"type": "integer"},
                    **{k: {"type": "number"} for k in ("r", "x", "b", "tap")},
                    "rating": {"type": ["number", "null"]},
                },
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}


def network_to_document(network: Network) -> dict[str, Any]:
    return {
        "name": network.name,
        "base_mva": network.base_mva,
        "base_kv": network.base_kv,
        "source": network.source,
        "v_band": list(network.v_band) if network.v_band is not None else None,
        "buses": [
            {
                "id": b.id,
                "kind": b.kind.value,
                "pd": b.p_demand,
                "qd": b.q_demand,
                "pg": b.p_gen,
                "qg": b.q_gen,
                "vset": b.v_setpoint,
                "vmin": b.v_min,
                "vmax": b.v_max,
                "gs": b.shunt_g,
                "bs": b.shunt_b,
            }
            for b in network.buses
        ],
        "branches": [
            {"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x, "b": br.b_charging, "tap": br.tap_ratio, "rating": br.rating}
            for br in network.branches
        ],
    }


def network_from_document(doc: Any) -> Network:
    try:
        jsonschema.validate(doc, CASE_SCHEMA)
    except jsonschema.ValidationError as err:
        path = "/".join(str(p) for p in err.absolute_path)
        raise CaseSchemaError(err.message, path) from None

    network = Network(
        base_mva=float(doc["base_mva"]),
        base_kv=float(doc.get("base_kv", 0.0)),
        name=doc["name"],
        source=doc.get("source", ""),
        v_band=doc.get("v_band"),
        buses=tuple(
            Bus(
                id=b["id"],
                kind=BusKind(b["kind"]),
                p_demand=float(b["pd"]),
                q_demand=float(b["qd"]),
                p_gen=float(b["pg"]),
                q_gen=float(b["qg"]),
                v_setpoint=float(b["vset"]),
                v_min=float(b["vmin"]),
                v_max=float(b["vmax"]),
                shunt_g=float(b["gs"]),
                shunt_b=float(b["bs"]),
            )
            for b in doc["buses"]
        ),
        branches=tuple(
            Branch(
                from_bus=br["from"],
                to_bus=br["to"],
                r=float(br["r"]),
                x=float(br["x"]),
                b_charging=float(br["b"]),
                tap_ratio=float(br["tap"]),
                rating=None if br.get("rating") is None else float(br["rating"]),
            )
            for br in doc["branches"]
        ),
    )
    findings = validate_network(network)
    if findings:
        raise CaseSchemaError("; ".join(findings), "")
    return network


def write_case_json(network: Network) -> str:
    return json.dumps(network_to_document(network), indent=1)


def read_case_json(text: str) -> Network:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise CaseSchemaError(f"invalid JSON: {err}") from None
    return network_from_document(doc)


def load_builtin(name: str) -> Network:
    """One of the bundled IEEE systems, with the study's voltage band attached."""
    try:
        meta = BUILTIN_CASES[name]
    except KeyError:
        raise KeyError(f"unknown built-in case {name!r}; choose from {sorted(BUILTIN_CASES)}") from None
    text = resources.files("dgplan.data").joinpath(meta["file"]).read_text()
    net = parse_case_text(text, name=name)
    return replace(net, v_band=meta["v_band"], base_kv=meta["base_kv"], source=f"builtin:{meta['file']}")


def load_case(spec: str | Path) -> Network:
    """Load a case by built-in name, ``.json`` path or MATPOWER ``.m`` path."""
    if str(spec) in BUILTIN_CASES:
        return load_builtin(str(spec))
    path = Path(spec)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return read_case_json(text)
    net = parse_case_text(text, name=path.stem)
    return replace(net, source=str(path))


def _fmt(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6f}"
    if value is None:
        return ""
    return str(value)


def write_results_csv(columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    """Render a results table: header row, then rows with floats at 6 decimals."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        if len(row) != len(columns):
            raise ValueError(f"row has {len(row)} fields, header has {len(columns)}")
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def read_results_csv(text: str) -> tuple[list[str], list[list[str]]]:
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows:
        return [], []
    return rows[0], rows[1:]
