"""Parsing and cleaning of timestamped, role-labeled interaction logs."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable, Mapping


class Role(str, Enum):
    USER = "user"
    DEVELOPER = "developer"

    @classmethod
    def parse(cls, text: str) -> "Role":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown role {text!r}") from None


class ParseError(ValueError):
    """A malformed input line. ``lineno`` is 1-based."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class ConfigurationError(RuntimeError):
    pass


@dataclass(frozen=True)
class RawEvent:
    sender: str
    recipient: str
    timestamp: int

    def __post_init__(self):
        if not self.sender or not self.recipient:
            raise ValueError("sender and recipient keys must be non-empty")
        if self.timestamp < 0:
            raise ValueError("timestamp must be non-negative")


@dataclass(frozen=True)
class TemporalEdgeList:
    """Time-sorted events over dense vertex ids.

    ``keys[i]`` is the original key of vertex ``i``. Direction (sender,
    recipient) is retained for the statistics module.
    """

    src: tuple[int, ...]
    dst: tuple[int, ...]
    timestamps: tuple[int, ...]
    keys: tuple[str, ...]
    index: Mapping[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __len__(self) -> int:
        return len(self.timestamps)

    def __iter__(self):
        return iter(zip(self.src, self.dst, self.timestamps))

    @property
    def n_vertices(self) -> int:
        return len(self.keys)

    def span(self) -> tuple[int, int]:
        if not self.timestamps:
            raise ValueError("empty edge list has no span")
        return self.timestamps[0], self.timestamps[-1]

    def subset(self, positions: Iterable[int]) -> "TemporalEdgeList":
        """Events at ``positions`` (kept in time order) over the same vertex ids."""
        pos = sorted(positions)
        return TemporalEdgeList(
            src=tuple(self.src[i] for i in pos),
            dst=tuple(self.dst[i] for i in pos),
            timestamps=tuple(self.timestamps[i] for i in pos),
            keys=self.keys,
            index=self.index,
        )

    def to_raw(self) -> list[RawEvent]:
        return [RawEvent(self.keys[u], self.keys[v], t) for u, v, t in self]


RoleTable = dict  # vertex id -> Role


def _split_fields(line: str, lineno: int, n: int) -> list[str]:
    parts = line.rstrip("\r\n").split("\t")
    if len(parts) != n:
        raise ParseError(lineno, f"expected {n} tab-separated fields, got {len(parts)}")
    if any(not p for p in parts):
        raise ParseError(lineno, "empty field")
    return parts


def _lines(source: IO | bytes | str) -> Iterable[str]:
    if isinstance(source, bytes):
        source = io.StringIO(source.decode("utf-8"))
    elif isinstance(source, str):
        source = io.StringIO(source)
    for line in source:
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        yield line


def _records(source, n: int):
    for lineno, line in enumerate(_lines(source), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        yield lineno, _split_fields(line, lineno, n)


def parse_events(source) -> list[RawEvent]:
    """Parse ``sender<TAB>recipient<TAB>unix_seconds`` lines in file order.

    Self-events are kept; filtering happens in :func:`clean_and_index`.
    """
    events = []
    for lineno, (s, r, ts) in _records(source, 3):
        try:
            t = int(ts)
        except ValueError:
            raise ParseError(lineno, f"bad timestamp {ts!r}") from None
        if t < 0:
            raise ParseError(lineno, "negative timestamp")
        events.append(RawEvent(s, r, t))
    return events


def parse_roles(source) -> dict[str, Role]:
    roles = {}
    for lineno, (key, role) in _records(source, 2):
        try:
            roles[key] = Role.parse(role)
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
    return roles


def parse_aliases(source) -> dict[str, str]:
    return {alias: canon for _, (alias, canon) in _records(source, 2)}


def apply_alias_map(events: Iterable[RawEvent], aliases: Mapping[str, str]) -> list[RawEvent]:
    return [
        RawEvent(aliases.get(e.sender, e.sender), aliases.get(e.recipient, e.recipient), e.timestamp)
        for e in events
    ]


def clean_and_index(
    events: Iterable[RawEvent], roles: Mapping[str, Role | str]
) -> tuple[TemporalEdgeList, RoleTable]:
    """Drop self-events, sort by time and assign ids in first-appearance order.

    The sort is stable, so events sharing a timestamp keep their input order.
    """
    kept = sorted((e for e in events if e.sender != e.recipient), key=lambda e: e.timestamp)
    index: dict[str, int] = {}
    src, dst, ts = [], [], []
    for e in kept:
        for key in (e.sender, e.recipient):
            if key not in index:
                index[key] = len(index)
        src.append(index[e.sender])
        dst.append(index[e.recipient])
        ts.append(e.timestamp)
    keys = tuple(index)
    table: RoleTable = {}
    for key, vid in index.items():
        if key not in roles:
            raise ConfigurationError(f"no role given for vertex {key!r}")
        role = roles[key]
        table[vid] = role if isinstance(role, Role) else Role.parse(role)
    edges = TemporalEdgeList(tuple(src), tuple(dst), tuple(ts), keys, index)
    return edges, table


def write_events(edges: TemporalEdgeList, sink: IO[str]) -> None:
    for u, v, t in edges:
        sink.write(f"{edges.keys[u]}\t{edges.keys[v]}\t{t}\n")


def write_roles(edges: TemporalEdgeList, roles: RoleTable, sink: IO[str]) -> None:
    for vid, key in enumerate(edges.keys):
        sink.write(f"{key}\t{roles[vid].value}\n")
