"""Trace domain types and the JSON Lines trace format.

A :class:`Trace` stores its records column-wise in read-only numpy arrays so
that simulators, merging and candidate extraction stay vectorised on
traces of hundreds of thousands of records. Record objects
(:class:`MemoryAccessRecord`, :class:`PacketRecord`) are materialised on
demand.

File layout::

    {"kind":"memory","page_size":4096,"meta":{...}}
    {"t":1000,"dom":1,"pid":2767,"page":"0x195a0000","acc":"r"}
    ...
"""

from __future__ import annotations

import hashlib
import ipaddress
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

DEFAULT_PAGE_SIZE = 4096


class TraceKind(str, Enum):
    MEMORY = "memory"
    PACKET = "packet"


class Access(str, Enum):
    READ = "r"
    WRITE = "w"
    EXEC = "x"


class Protocol(str, Enum):
    UDP = "udp"
    TCP = "tcp"


_ACCESS_CODES = {Access.READ: 0, Access.WRITE: 1, Access.EXEC: 2}
_ACCESS_BY_CODE = {v: k for k, v in _ACCESS_CODES.items()}
_PROTO_CODES = {Protocol.UDP: 0, Protocol.TCP: 1}
_PROTO_BY_CODE = {v: k for k, v in _PROTO_CODES.items()}

MEMORY_COLUMNS = {
    "t": np.int64,
    "dom": np.int64,
    "pid": np.int64,
    "page": np.uint64,
    "acc": np.int8,
}
PACKET_COLUMNS = {
    "t": np.int64,
    "src_ip": np.uint32,
    "src_port": np.int64,
    "dst_ip": np.uint32,
    "dst_port": np.int64,
    "proto": np.int8,
    "len": np.int64,
}


class TraceError(ValueError):
    """Base class for trace format and consistency errors."""


class TraceParseError(TraceError):
    def __init__(self, path, line_no: int, reason: str):
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{path}:{line_no}: {reason}")


class TraceSchemaError(TraceError):
    pass


def ip_to_int(ip: str) -> int:
    return int(ipaddress.IPv4Address(ip))


def int_to_ip(value: int) -> str:
    return str(ipaddress.IPv4Address(int(value)))


# --------------------------------------------------------------------------
# record and key types


@dataclass(frozen=True)
class MemoryAccessRecord:
    timestamp_ns: int
    domain_id: int
    pid: int
    page: int
    access: Access = Access.READ


@dataclass(frozen=True)
class PacketRecord:
    timestamp_ns: int
    src_ip: str
    src_port: int
    dst_ip: str
    dst_port: int
    protocol: Protocol = Protocol.UDP
    payload_len: int = 0


@dataclass(frozen=True, order=True)
class PageKey:
    """A page accessed by one process in one domain."""

    domain_id: int
    pid: int
    page: int

    def __str__(self):
        return f"dom{self.domain_id}/pid{self.pid}/{self.page:#x}"

    def to_dict(self) -> dict:
        return {"type": "page", "dom": self.domain_id, "pid": self.pid,
                "page": f"{self.page:#x}"}

    def sort_key(self):
        return (0, self.domain_id, self.pid, self.page)


@dataclass(frozen=True, order=True)
class FlowKey:
    """An exact 5-tuple."""

    src_ip: str
    src_port: int
    dst_ip: str
    dst_port: int
    protocol: Protocol = Protocol.UDP

    def __str__(self):
        return (f"{self.src_ip}:{self.src_port}->{self.dst_ip}:{self.dst_port}"
                f"/{Protocol(self.protocol).value}")

    def to_dict(self) -> dict:
        return {"type": "flow", "src": f"{self.src_ip}:{self.src_port}",
                "dst": f"{self.dst_ip}:{self.dst_port}",
                "proto": Protocol(self.protocol).value}

    def sort_key(self):
        return (1, ip_to_int(self.src_ip), self.src_port, ip_to_int(self.dst_ip),
                self.dst_port, _PROTO_CODES[Protocol(self.protocol)])


CandidateKey = PageKey | FlowKey


def key_from_dict(d: dict) -> CandidateKey:
    if d.get("type") == "page":
        return PageKey(int(d["dom"]), int(d["pid"]), int(d["page"], 16))
    if d.get("type") == "flow":
        src_ip, src_port = _split_endpoint(d["src"])
        dst_ip, dst_port = _split_endpoint(d["dst"])
        return FlowKey(src_ip, src_port, dst_ip, dst_port, Protocol(d["proto"]))
    raise TraceSchemaError(f"unknown key type in {d!r}")


def _split_endpoint(text: str) -> tuple[str, int]:
    ip, sep, port = str(text).rpartition(":")
    if not sep:
        raise ValueError(f"endpoint {text!r} is not ip:port")
    ipaddress.IPv4Address(ip)
    return ip, int(port)


# --------------------------------------------------------------------------
# trace container


def _columns_for(kind: TraceKind) -> dict:
    return MEMORY_COLUMNS if kind is TraceKind.MEMORY else PACKET_COLUMNS


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Trace:
    """Time-ordered sequence of memory-access or packet records.

    ``columns`` maps column name to a 1-D array; all columns share one
    length. ``source`` is the path a trace was parsed from and takes no part
    in equality.
    """

    kind: TraceKind
    columns: dict
    page_size: int = DEFAULT_PAGE_SIZE
    meta: dict = field(default_factory=dict)
    source: str | None = None

    def __post_init__(self):
        kind = TraceKind(self.kind)
        object.__setattr__(self, "kind", kind)
        spec = _columns_for(kind)
        if set(self.columns) != set(spec):
            raise TraceSchemaError(
                f"{kind.value} trace needs columns {sorted(spec)}, got {sorted(self.columns)}")
        cols = {}
        n = None
        for name, dtype in spec.items():
            arr = np.array(self.columns[name], dtype=dtype).reshape(-1)
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise TraceSchemaError(f"column {name!r} has length {arr.shape[0]}, expected {n}")
            cols[name] = _freeze(arr)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "meta", dict(self.meta))

    # construction -------------------------------------------------------

    @classmethod
    def empty(cls, kind, page_size=DEFAULT_PAGE_SIZE, meta=None) -> "Trace":
        kind = TraceKind(kind)
        cols = {name: np.zeros(0, dtype=dt) for name, dt in _columns_for(kind).items()}
        return cls(kind, cols, page_size=page_size, meta=meta or {})

    @classmethod
    def from_records(cls, kind, records: Iterable, page_size=DEFAULT_PAGE_SIZE,
                     meta=None) -> "Trace":
        kind = TraceKind(kind)
        records = list(records)
        if kind is TraceKind.MEMORY:
            for i, r in enumerate(records):
                if not isinstance(r, MemoryAccessRecord):
                    raise TraceSchemaError(f"record {i} is not a MemoryAccessRecord")
            cols = {
                "t": [r.timestamp_ns for r in records],
                "dom": [r.domain_id for r in records],
                "pid": [r.pid for r in records],
                "page": np.array([r.page for r in records], dtype=np.uint64),
                "acc": [_ACCESS_CODES[Access(r.access)] for r in records],
            }
        else:
            for i, r in enumerate(records):
                if not isinstance(r, PacketRecord):
                    raise TraceSchemaError(f"record {i} is not a PacketRecord")
            cols = {
                "t": [r.timestamp_ns for r in records],
                "src_ip": np.array([ip_to_int(r.src_ip) for r in records], dtype=np.uint32),
                "src_port": [r.src_port for r in records],
                "dst_ip": np.array([ip_to_int(r.dst_ip) for r in records], dtype=np.uint32),
                "dst_port": [r.dst_port for r in records],
                "proto": [_PROTO_CODES[Protocol(r.protocol)] for r in records],
                "len": [r.payload_len for r in records],
            }
        return cls(kind, cols, page_size=page_size, meta=meta or {})

    # access ---------------------------------------------------------------

    def __len__(self):
        return int(self.columns["t"].shape[0])

    @property
    def timestamps(self) -> np.ndarray:
        return self.columns["t"]

    def record(self, i: int):
        c = self.columns
        if self.kind is TraceKind.MEMORY:
            return MemoryAccessRecord(int(c["t"][i]), int(c["dom"][i]), int(c["pid"][i]),
                                      int(c["page"][i]), _ACCESS_BY_CODE[int(c["acc"][i])])
        return PacketRecord(int(c["t"][i]), int_to_ip(c["src_ip"][i]), int(c["src_port"][i]),
                            int_to_ip(c["dst_ip"][i]), int(c["dst_port"][i]),
                            _PROTO_BY_CODE[int(c["proto"][i])], int(c["len"][i]))

    def __getitem__(self, i: int):
        n = len(self)
        if i < 0:
            i += n
        if not 0 <= i < n:
            raise IndexError(i)
        return self.record(i)

    def __iter__(self):
        for i in range(len(self)):
            yield self.record(i)

    @property
    def records(self) -> tuple:
        return tuple(self)

    def key_at(self, i: int) -> CandidateKey:
        c = self.columns
        if self.kind is TraceKind.MEMORY:
            return PageKey(int(c["dom"][i]), int(c["pid"][i]), int(c["page"][i]))
        return FlowKey(int_to_ip(c["src_ip"][i]), int(c["src_port"][i]),
                       int_to_ip(c["dst_ip"][i]), int(c["dst_port"][i]),
                       _PROTO_BY_CODE[int(c["proto"][i])])

    def take(self, indices, meta=None) -> "Trace":
        idx = np.asarray(indices, dtype=np.int64)
        cols = {name: arr[idx] for name, arr in self.columns.items()}
        return Trace(self.kind, cols, page_size=self.page_size,
                     meta=self.meta if meta is None else meta)

    def sorted(self) -> "Trace":
        order = np.argsort(self.timestamps, kind="stable")
        return self.take(order)

    def with_meta(self, meta: dict) -> "Trace":
        return Trace(self.kind, self.columns, page_size=self.page_size, meta=meta,
                     source=self.source)

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        return (self.kind is other.kind
                and self.page_size == other.page_size
                and _jsonable(self.meta) == _jsonable(other.meta)
                and all(np.array_equal(self.columns[k], other.columns[k]) for k in self.columns))

    __hash__ = None

    def content_hash(self) -> str:
        """SHA-256 of the serialised trace."""
        h = hashlib.sha256()
        for line in _iter_lines(self):
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()


def _jsonable(obj):
    return json.loads(json.dumps(obj, sort_keys=True))


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    index: int
    rule: str
    detail: str = ""


def validate_trace(trace: Trace) -> list[Violation]:
    """Return every invariant violation; an empty list means the trace is valid."""
    out: list[Violation] = []
    c = trace.columns
    t = c["t"]
    for i in np.flatnonzero(t < 0):
        out.append(Violation(int(i), "negative_timestamp", f"t={int(t[i])}"))
    if len(t) > 1:
        for i in np.flatnonzero(t[1:] < t[:-1]) + 1:
            out.append(Violation(int(i), "ordering", f"t={int(t[i])} < previous {int(t[i - 1])}"))
    if trace.kind is TraceKind.MEMORY:
        if trace.page_size <= 0:
            out.append(Violation(-1, "page_size", f"page_size={trace.page_size}"))
        else:
            for i in np.flatnonzero(c["page"] % np.uint64(trace.page_size) != 0):
                out.append(Violation(int(i), "page_alignment",
                                     f"page={int(c['page'][i]):#x} not a multiple of {trace.page_size}"))
        for i in np.flatnonzero((c["acc"] < 0) | (c["acc"] > 2)):
            out.append(Violation(int(i), "access_kind", f"code={int(c['acc'][i])}"))
    else:
        for col in ("src_port", "dst_port"):
            for i in np.flatnonzero((c[col] < 0) | (c[col] > 65535)):
                out.append(Violation(int(i), "port_range", f"{col}={int(c[col][i])}"))
        for i in np.flatnonzero(c["len"] < 0):
            out.append(Violation(int(i), "payload_len", f"len={int(c['len'][i])}"))
        for i in np.flatnonzero((c["proto"] < 0) | (c["proto"] > 1)):
            out.append(Violation(int(i), "protocol", f"code={int(c['proto'][i])}"))
    out.sort(key=lambda v: (v.index, v.rule))
    return out


# --------------------------------------------------------------------------
# serialisation

_ACC_CHARS = ("r", "w", "x")
_PROTO_NAMES = ("udp", "tcp")


def _header(trace: Trace) -> str:
    head: dict[str, Any] = {"kind": trace.kind.value}
    if trace.kind is TraceKind.MEMORY:
        head["page_size"] = trace.page_size
    head["meta"] = trace.meta
    return json.dumps(head, sort_keys=True, separators=(",", ":"))


def _iter_lines(trace: Trace):
    yield _header(trace)
    c = trace.columns
    t = c["t"].tolist()
    if trace.kind is TraceKind.MEMORY:
        for ts, dom, pid, page, acc in zip(t, c["dom"].tolist(), c["pid"].tolist(),
                                           c["page"].tolist(), c["acc"].tolist()):
            yield f'{{"t":{ts},"dom":{dom},"pid":{pid},"page":"{page:#x}","acc":"{_ACC_CHARS[acc]}"}}'
    else:
        src = [int_to_ip(x) for x in c["src_ip"].tolist()]
        dst = [int_to_ip(x) for x in c["dst_ip"].tolist()]
        for ts, s, sp, d, dp, pr, ln in zip(t, src, c["src_port"].tolist(), dst,
                                            c["dst_port"].tolist(), c["proto"].tolist(),
                                            c["len"].tolist()):
            yield (f'{{"t":{ts},"src":"{s}:{sp}","dst":"{d}:{dp}",'
                   f'"proto":"{_PROTO_NAMES[pr]}","len":{ln}}}')


def write_trace(trace: Trace, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for line in _iter_lines(trace):
            fh.write(line)
            fh.write("\n")


def dumps_trace(trace: Trace) -> str:
    return "".join(line + "\n" for line in _iter_lines(trace))


_MEMORY_FIELDS = {"t", "dom", "pid", "page", "acc"}
_PACKET_FIELDS = {"t", "src", "dst", "proto", "len"}


def _parse_memory(obj: dict) -> tuple:
    t = obj["t"]
    dom = obj["dom"]
    pid = obj["pid"]
    if not all(type(x) is int for x in (t, dom, pid)):
        raise ValueError("t, dom and pid must be integers")
    if t < 0:
        raise ValueError(f"negative timestamp {t}")
    page_s = obj["page"]
    if not isinstance(page_s, str) or not page_s.startswith("0x"):
        raise ValueError(f"page must be a 0x-prefixed hex string, got {page_s!r}")
    page = int(page_s, 16)
    if not 0 <= page < 2 ** 64:
        raise ValueError(f"page {page_s} out of 64-bit range")
    acc = obj["acc"]
    if acc not in _ACC_CHARS:
        raise ValueError(f"unknown access kind {acc!r}")
    return t, dom, pid, page, _ACC_CHARS.index(acc)


def _parse_packet(obj: dict) -> tuple:
    t = obj["t"]
    ln = obj["len"]
    if type(t) is not int or type(ln) is not int:
        raise ValueError("t and len must be integers")
    if t < 0:
        raise ValueError(f"negative timestamp {t}")
    if ln < 0:
        raise ValueError(f"negative payload length {ln}")
    src_ip, src_port = _split_endpoint(obj["src"])
    dst_ip, dst_port = _split_endpoint(obj["dst"])
    for p in (src_port, dst_port):
        if not 0 <= p <= 65535:
            raise ValueError(f"port {p} out of range")
    proto = obj["proto"]
    if proto not in _PROTO_NAMES:
        raise ValueError(f"unknown protocol {proto!r}")
    return t, ip_to_int(src_ip), src_port, ip_to_int(dst_ip), dst_port, _PROTO_NAMES.index(proto), ln


def parse_trace(path, kind=None) -> Trace:
    """Read a JSON Lines trace; records are returned sorted by timestamp.

    Raises :class:`TraceParseError` (with the 1-based line number) on a
    malformed line and :class:`TraceSchemaError` when a record belongs to
    the other trace kind or the header disagrees with ``kind``.
    """
    path = Path(path)
    rows = []
    with path.open("r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise TraceParseError(path, 1, "missing header line")
        try:
            header = json.loads(header_line)
            file_kind = TraceKind(header["kind"])
        except (ValueError, KeyError, TypeError) as exc:
            raise TraceParseError(path, 1, f"bad header: {exc}") from None
        if kind is not None and TraceKind(kind) is not file_kind:
            raise TraceSchemaError(f"{path}: expected a {TraceKind(kind).value} trace, "
                                   f"header says {file_kind.value}")
        own, other = ((_MEMORY_FIELDS, _PACKET_FIELDS) if file_kind is TraceKind.MEMORY
                      else (_PACKET_FIELDS, _MEMORY_FIELDS))
        parse_row = _parse_memory if file_kind is TraceKind.MEMORY else _parse_packet
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except ValueError as exc:
                raise TraceParseError(path, line_no, f"invalid JSON: {exc}") from None
            if not isinstance(obj, dict):
                raise TraceParseError(path, line_no, "record is not an object")
            keys = set(obj)
            if keys != own:
                if keys == other:
                    raise TraceSchemaError(
                        f"{path}:{line_no}: {('packet', 'memory')[file_kind is TraceKind.PACKET]} "
                        f"record in a {file_kind.value} trace")
                raise TraceParseError(path, line_no, f"unexpected fields {sorted(keys)}")
            try:
                rows.append(parse_row(obj))
            except (ValueError, TypeError) as exc:
                raise TraceParseError(path, line_no, str(exc)) from None
    names = list(_columns_for(file_kind))
    if rows:
        cols = {name: [r[j] for r in rows] for j, name in enumerate(names)}
        cols = {name: np.array(v, dtype=_columns_for(file_kind)[name]) for name, v in cols.items()}
    else:
        cols = {name: np.zeros(0, dtype=dt) for name, dt in _columns_for(file_kind).items()}
    page_size = int(header.get("page_size", DEFAULT_PAGE_SIZE))
    trace = Trace(file_kind, cols, page_size=page_size, meta=header.get("meta") or {},
                  source=str(path))
    t = trace.timestamps
    if len(t) > 1 and np.any(t[1:] < t[:-1]):
        trace = Trace(file_kind, trace.sorted().columns, page_size=page_size,
                      meta=trace.meta, source=str(path))
    return trace


def concat_columns(traces: Sequence[Trace]) -> dict:
    names = _columns_for(traces[0].kind)
    return {name: np.concatenate([tr.columns[name] for tr in traces]) for name in names}
