"""Frozen per-token contextual embeddings.

Binary layout (little-endian)::

    b"RGEB"  u16 version=1  u32 dim  u64 count
    count x [ u16 doc-id length | doc-id utf-8 | u32 token index | dim x f32 ]

A text form with one ``doc_id<TAB>token_index<TAB>v1 v2 ...`` line per record
is accepted as well.
"""

from __future__ import annotations

import hashlib
import io
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .depgraph import DependencyGraph
from .errors import ConsistencyError, DuplicationError, FormatError, MissingEmbeddingError, UsageError

MAGIC = b"RGEB"
VERSION = 1
_HEADER = struct.Struct("<4sHIQ")

Key = tuple[str, int]


@dataclass
class TokenEmbeddingTable:
    dim: int
    entries: dict[Key, np.ndarray] = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, key: Key) -> bool:
        return key in self.entries

    def add(self, doc_id: str, token_index: int, vector) -> None:
        vec = np.asarray(vector, dtype=np.float32)
        if vec.shape != (self.dim,):
            raise ConsistencyError(
                f"vector for ({doc_id!r}, {token_index}) has length {vec.size}, table dim is {self.dim}"
            )
        if not np.all(np.isfinite(vec)):
            raise ConsistencyError(f"non-finite values in vector for ({doc_id!r}, {token_index})")
        key = (doc_id, int(token_index))
        if key in self.entries:
            raise DuplicationError(f"duplicate embedding key ({doc_id!r}, {token_index})")
        vec.setflags(write=False)
        self.entries[key] = vec

    def lookup(self, doc_id: str, token_index: int) -> np.ndarray:
        try:
            return self.entries[(doc_id, int(token_index))]
        except KeyError:
            raise MissingEmbeddingError(f"no embedding for document {doc_id!r}, token {token_index}") from None

    def matrix(self, doc_id: str, count: int, dtype=np.float64) -> np.ndarray:
        """``dim x count`` matrix of the document's token vectors as columns."""
        return np.stack([self.lookup(doc_id, i) for i in range(count)], axis=1).astype(dtype)

    def missing(self, graph: DependencyGraph) -> list[int]:
        return [i for i in range(len(graph)) if (graph.doc_id, i) not in self.entries]


def lookup(table: TokenEmbeddingTable, doc_id: str, token_index: int) -> np.ndarray:
    return table.lookup(doc_id, token_index)


# ---------------------------------------------------------------------------
# serialization


def dump_table(table: TokenEmbeddingTable) -> bytes:
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION, table.dim, len(table)))
    for (doc_id, idx), vec in table.entries.items():
        raw = doc_id.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"document id too long for RGEB ({len(raw)} bytes)")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", idx))
        buf.write(np.asarray(vec, dtype="<f4").tobytes())
    return buf.getvalue()


def write_table(table: TokenEmbeddingTable, path: str | Path) -> None:
    Path(path).write_bytes(dump_table(table))


def parse_table(data: bytes) -> TokenEmbeddingTable:
    if len(data) < _HEADER.size:
        raise FormatError("file too short for an RGEB header")
    magic, version, dim, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported RGEB version {version}")
    table = TokenEmbeddingTable(dim)
    pos = _HEADER.size
    width = 4 * dim
    for rec in range(count):
        try:
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            doc_id = data[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (idx,) = struct.unpack_from("<I", data, pos)
            pos += 4
        except (struct.error, UnicodeDecodeError) as exc:
            raise FormatError(f"record {rec}: truncated or malformed header ({exc})") from None
        if pos + width > len(data):
            raise FormatError(f"record {rec}: truncated vector")
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=pos).astype(np.float32)
        pos += width
        table.add(doc_id, idx, vec)
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after {count} records")
    return table


def parse_text_table(text: str) -> TokenEmbeddingTable:
    table: TokenEmbeddingTable | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"line {lineno}: expected doc_id, token_index and values separated by tabs")
        try:
            idx = int(parts[1])
            values = [float(x) for x in parts[2].split()]
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
        if table is None:
            table = TokenEmbeddingTable(len(values))
        elif len(values) != table.dim:
            raise ConsistencyError(f"line {lineno}: dim {len(values)} differs from earlier dim {table.dim}")
        table.add(parts[0], idx, values)
    return table if table is not None else TokenEmbeddingTable(0)


def load_table(path: str | Path) -> TokenEmbeddingTable:
    """Read an RGEB file, or the tab-separated text form when the magic is absent."""
    data = Path(path).read_bytes()
    if data[:4] == MAGIC:
        return parse_table(data)
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError(f"{path}: bad magic {data[:4]!r} and not a text table") from None
    if not re.match(r"^\s*([^\t\n]+\t-?\d+\t|#|$)", text):
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    return parse_text_table(text)


# ---------------------------------------------------------------------------
# synthetic embeddings


@dataclass(frozen=True)
class SignalRule:
    label: str  # instance label that triggers the rule
    role: str  # which mention receives the signal: A, B or P
    coord: int
    amplitude: float


@dataclass(frozen=True)
class SignalSpec:
    rules: tuple[SignalRule, ...]
    # doc_id -> (label, {role: token indices})
    mentions: Mapping[str, tuple[str, Mapping[str, Sequence[int]]]] = field(default_factory=dict)

    @staticmethod
    def parse_rules(spec: str) -> tuple[SignalRule, ...]:
        """Parse ``LABEL:ROLE:COORD:AMPLITUDE`` items separated by commas.

        ``A:A:0:3`` reads "for label A, add +3 to coordinate 0 of the A-mention tokens".
        """
        rules = []
        for item in filter(None, (s.strip() for s in spec.split(","))):
            parts = item.split(":")
            if len(parts) != 4:
                raise UsageError(f"bad signal rule {item!r}; expected LABEL:ROLE:COORD:AMPLITUDE")
            label, role, coord, amp = parts
            if role not in ("A", "B", "P"):
                raise UsageError(f"signal role must be A, B or P, got {role!r}")
            rules.append(SignalRule(label, role, int(coord), float(amp)))
        return tuple(rules)


DEFAULT_SIGNAL = "A:A:0:6,B:B:1:6,NEITHER:P:2:6"


def _token_rng(seed: int, doc_id: str, index: int) -> np.random.Generator:
    digest = hashlib.blake2b(f"{seed}\x1f{doc_id}\x1f{index}".encode("utf-8"), digest_size=16).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))


def synth_embeddings(
    graphs: Iterable[DependencyGraph],
    dim: int,
    seed: int = 0,
    signal: SignalSpec | None = None,
) -> TokenEmbeddingTable:
    """Standard-normal token vectors keyed on (seed, doc_id, token index).

    With ``signal``, mention tokens of each listed document get the matching
    rule's amplitude added on its coordinate so the label is linearly decodable.
    """
    if dim < 4:
        raise UsageError(f"synthetic embeddings need dim >= 4, got {dim}")
    table = TokenEmbeddingTable(dim)
    for g in graphs:
        bumps: dict[int, np.ndarray] = {}
        if signal is not None and g.doc_id in signal.mentions:
            label, roles = signal.mentions[g.doc_id]
            for rule in signal.rules:
                if rule.label != label:
                    continue
                if not 0 <= rule.coord < dim:
                    raise UsageError(f"signal coordinate {rule.coord} outside [0, {dim})")
                for idx in roles.get(rule.role, ()):
                    bumps.setdefault(idx, np.zeros(dim))[rule.coord] += rule.amplitude
        for i in range(len(g)):
            vec = _token_rng(seed, g.doc_id, i).standard_normal(dim)
            if i in bumps:
                vec = vec + bumps[i]
            table.add(g.doc_id, i, vec)
    return table
