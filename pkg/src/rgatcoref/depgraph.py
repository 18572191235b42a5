"""CoNLL-U ingestion and the three-relation syntactic dependency graph.

Each token ``i`` receives flow over three relations:

* ``HEAD_TO_DEP``: from its head (``N = {head(i)}``, empty for roots)
* ``DEP_TO_HEAD``: from its dependents
* ``SELF_LOOP``: from itself

A document that spans several sentences becomes one graph with one root per
sentence.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ParseError, StructureError, UsageError


class Relation(IntEnum):
    HEAD_TO_DEP = 0
    DEP_TO_HEAD = 1
    SELF_LOOP = 2


RELATIONS = tuple(Relation)
RELATION_NAMES = {Relation.HEAD_TO_DEP: "HeadToDep", Relation.DEP_TO_HEAD: "DepToHead", Relation.SELF_LOOP: "SelfLoop"}


@dataclass(frozen=True)
class Token:
    index: int
    surface: str
    char_start: int
    char_end: int
    head: int | None = None
    deprel: str = "_"


@dataclass(frozen=True)
class DependencyGraph:
    doc_id: str
    tokens: tuple[Token, ...]
    text: str
    # neighbors[r][i] -> tuple of token indices
    neighbors: tuple[tuple[tuple[int, ...], ...], ...]

    @classmethod
    def build(cls, doc_id: str, tokens: Sequence[Token], text: str | None = None) -> "DependencyGraph":
        n = len(tokens)
        incoming: list[list[int]] = [[] for _ in range(n)]
        outgoing: list[list[int]] = [[] for _ in range(n)]
        for tok in tokens:
            if tok.head is None:
                continue
            if not 0 <= tok.head < n:
                raise StructureError(f"{doc_id}: token {tok.index} has head {tok.head} outside [0, {n})")
            if tok.head == tok.index:
                raise StructureError(f"{doc_id}: token {tok.index} is its own head")
            incoming[tok.index].append(tok.head)
            outgoing[tok.head].append(tok.index)
        for pos, tok in enumerate(tokens):
            if tok.index != pos:
                raise StructureError(f"{doc_id}: token at position {pos} carries index {tok.index}")
            if not tok.char_start < tok.char_end:
                raise StructureError(f"{doc_id}: token {pos} has empty character span")
        if text is None:
            text = " ".join(t.surface for t in tokens)
        neighbors = (
            tuple(tuple(x) for x in incoming),
            tuple(tuple(x) for x in outgoing),
            tuple((i,) for i in range(n)),
        )
        return cls(doc_id, tuple(tokens), text, neighbors)

    @classmethod
    def from_heads(cls, doc_id: str, heads: Sequence[int | None], surfaces: Sequence[str] | None = None) -> "DependencyGraph":
        """Build from 0-based heads (``None`` for roots); surfaces default to ``t0 t1 ...``."""
        surfaces = list(surfaces) if surfaces is not None else [f"t{i}" for i in range(len(heads))]
        tokens, pos = [], 0
        for i, (head, surface) in enumerate(zip(heads, surfaces)):
            tokens.append(Token(i, surface, pos, pos + len(surface), head))
            pos += len(surface) + 1
        return cls.build(doc_id, tokens, " ".join(surfaces))

    def __len__(self) -> int:
        return len(self.tokens)

    def neighbors_of(self, i: int, relation: Relation) -> tuple[int, ...]:
        return self.neighbors[relation][i]

    @property
    def heads(self) -> list[int | None]:
        return [t.head for t in self.tokens]

    def edges(self, relation: Relation) -> Iterator[tuple[int, int]]:
        """(source, target) pairs: flow moves from the neighbor into the node."""
        for i, nbrs in enumerate(self.neighbors[relation]):
            for j in nbrs:
                yield j, i


# ---------------------------------------------------------------------------
# CoNLL-U


def _parse_int(field: str, what: str, lineno: int, source: str) -> int:
    try:
        return int(field)
    except ValueError:
        raise ParseError(f"{source}:{lineno}: non-integer {what} {field!r}") from None


class _Sentence:
    def __init__(self):
        self.comments: dict[str, str] = {}
        self.words: list[tuple[int, str, str, str, int]] = []  # id, form, head, deprel, lineno
        self.ranges: list[tuple[int, int, str]] = []
        self.first_line = 0


def _split_sentences(text: str, source: str) -> Iterator[tuple[str | None, _Sentence]]:
    """Yield (newdoc id or None, sentence) pairs in file order."""
    sent = _Sentence()
    pending_doc: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            if sent.words:
                yield pending_doc, sent
                pending_doc = None
            sent = _Sentence()
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            key, eq, value = body.partition("=")
            key = key.strip()
            if key in ("newdoc id", "newdoc"):
                pending_doc = value.strip() if eq else ""
            elif eq:
                sent.comments[key] = value.strip() if key != "text" else value.lstrip(" ").rstrip("\n")
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ParseError(f"{source}:{lineno}: expected 10 tab-separated columns, got {len(cols)}")
        if not sent.words and not sent.ranges:
            sent.first_line = lineno
        tid = cols[0]
        if "-" in tid:
            lo, _, hi = tid.partition("-")
            sent.ranges.append((_parse_int(lo, "ID", lineno, source), _parse_int(hi, "ID", lineno, source), cols[1]))
            continue
        if "." in tid:
            continue  # empty node of enhanced dependencies
        sent.words.append((_parse_int(tid, "ID", lineno, source), cols[1], cols[6], cols[7], lineno))
    if sent.words:
        yield pending_doc, sent


def _sentence_tokens(sent: _Sentence, offset_tokens: int, offset_chars: int, source: str) -> tuple[list[Token], str]:
    n = len(sent.words)
    for pos, (wid, *_rest) in enumerate(sent.words, start=1):
        if wid != pos:
            raise StructureError(f"{source}:{sent.words[pos - 1][4]}: word ID {wid} out of sequence (expected {pos})")

    # surface units: either a multiword range or a plain word
    range_of = {}
    for lo, hi, form in sent.ranges:
        for wid in range(lo, hi + 1):
            range_of[wid] = (lo, hi, form)
    units: list[tuple[str, list[int]]] = []
    wid = 1
    while wid <= n:
        if wid in range_of:
            lo, hi, form = range_of[wid]
            units.append((form, list(range(lo, min(hi, n) + 1))))
            wid = hi + 1
        else:
            units.append((sent.words[wid - 1][1], [wid]))
            wid += 1

    text = sent.comments.get("text")
    spans: dict[int, tuple[int, int]] = {}
    if text is None:
        text = " ".join(form for form, _ in units)
        cursor = 0
        for form, wids in units:
            for w in wids:
                spans[w] = (cursor, cursor + len(form))
            cursor += len(form) + 1
    else:
        cursor = 0
        for form, wids in units:
            start = text.find(form, cursor)
            if start < 0:
                raise ParseError(f"{source}:{sent.first_line}: surface {form!r} not found in '# text' after offset {cursor}")
            for w in wids:
                spans[w] = (start, start + len(form))
            cursor = start + len(form)

    tokens = []
    for wid, form, head_field, deprel, lineno in sent.words:
        head = _parse_int(head_field, "HEAD", lineno, source)
        if not 0 <= head <= n:
            raise StructureError(f"{source}:{lineno}: HEAD {head} out of range for a {n}-word sentence")
        if head == wid:
            raise StructureError(f"{source}:{lineno}: word {wid} is its own head")
        start, end = spans[wid]
        tokens.append(
            Token(
                index=offset_tokens + wid - 1,
                surface=form,
                char_start=offset_chars + start,
                char_end=offset_chars + end,
                head=None if head == 0 else offset_tokens + head - 1,
                deprel=deprel,
            )
        )
    return tokens, text


def parse_conllu(text: str, source: str = "<conllu>") -> list[DependencyGraph]:
    """Parse CoNLL-U text into one graph per document.

    Documents are delimited by ``# newdoc id = ...`` comments.  Sentences that
    precede any ``newdoc`` marker each form their own document, named by
    ``# sent_id`` when present.  Document text is the sentence texts joined by
    single spaces.
    """
    docs: list[tuple[str, list[_Sentence]]] = []
    in_doc = False
    for ordinal, (newdoc, sent) in enumerate(_split_sentences(text, source)):
        if newdoc is not None:
            docs.append((newdoc or f"doc{len(docs)}", [sent]))
            in_doc = True
        elif in_doc:
            docs[-1][1].append(sent)
        else:
            docs.append((sent.comments.get("sent_id", f"s{ordinal}"), [sent]))

    graphs, seen = [], set()
    for doc_id, sentences in docs:
        if doc_id in seen:
            raise StructureError(f"{source}: duplicate document id {doc_id!r}")
        seen.add(doc_id)
        tokens: list[Token] = []
        pieces: list[str] = []
        chars = 0
        for sent in sentences:
            toks, sent_text = _sentence_tokens(sent, len(tokens), chars, source)
            tokens.extend(toks)
            pieces.append(sent_text)
            chars += len(sent_text) + 1
        graphs.append(DependencyGraph.build(doc_id, tokens, " ".join(pieces)))
    return graphs


def read_conllu(path: str | Path) -> list[DependencyGraph]:
    path = Path(path)
    return parse_conllu(path.read_text(encoding="utf-8"), source=str(path))


def to_conllu(graphs: Sequence[DependencyGraph]) -> str:
    """Serialize graphs as one sentence per root-delimited span.

    Intended for graphs whose tokens are sentence-contiguous (as produced by
    :func:`parse_conllu`); sentence boundaries are recovered from roots.
    """
    out = []
    for g in graphs:
        out.append(f"# newdoc id = {g.doc_id}")
        for lo, hi in _sentence_bounds(g):
            start, end = g.tokens[lo].char_start, g.tokens[hi - 1].char_end
            out.append(f"# text = {g.text[start:end]}")
            for tok in g.tokens[lo:hi]:
                head = 0 if tok.head is None else tok.head - lo + 1
                out.append("\t".join([str(tok.index - lo + 1), tok.surface, "_", "_", "_", "_", str(head), tok.deprel, "_", "_"]))
            out.append("")
    return "\n".join(out) + ("\n" if out else "")


def _sentence_bounds(g: DependencyGraph) -> list[tuple[int, int]]:
    # a sentence is the smallest contiguous block closed under head links
    bounds, lo, reach = [], 0, 0
    for i, tok in enumerate(g.tokens):
        reach = max(reach, i, tok.head if tok.head is not None else i)
        for dep in g.neighbors[Relation.DEP_TO_HEAD][i]:
            reach = max(reach, dep)
        if reach == i:
            bounds.append((lo, i + 1))
            lo = i + 1
    return bounds


# ---------------------------------------------------------------------------
# neighbor sampling

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """Portable 64-bit generator; identical streams on every platform."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, k: int) -> int:
        """Uniform integer in [0, k) by multiply-shift."""
        return (self.next_u64() * k) >> 64


def derive_seed(seed: int, *keys) -> int:
    """Stable 64-bit seed from a base seed and arbitrary printable keys."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    for key in keys:
        h.update(b"\x1f")
        h.update(str(key).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class NeighborSample:
    """``indices[i, r]`` holds ``size`` draws from ``N_{i,r}``, or all ``-1`` when that set is empty."""

    indices: np.ndarray
    size: int

    def for_node(self, i: int, relation: Relation) -> tuple[int, ...]:
        row = self.indices[i, relation]
        return () if row[0] < 0 else tuple(int(x) for x in row)

    def is_empty(self, i: int, relation: Relation) -> bool:
        return self.indices[i, relation, 0] < 0

    @classmethod
    def from_lists(cls, per_node: Sequence[Sequence[Sequence[int]]], size: int) -> "NeighborSample":
        """Build from explicit draws ``per_node[i][r]``; an empty list marks an empty set."""
        arr = np.full((len(per_node), len(RELATIONS), size), -1, dtype=np.int64)
        for i, rels in enumerate(per_node):
            for r, draws in enumerate(rels):
                if draws:
                    if len(draws) != size:
                        raise UsageError(f"node {i} relation {r}: expected {size} draws, got {len(draws)}")
                    arr[i, r] = draws
        return cls(arr, size)


def sample_neighbors(g: DependencyGraph, size: int = 4, seed: int = 0) -> NeighborSample:
    """Draw ``size`` neighbors uniformly with replacement for every nonempty ``N_{i,r}``.

    Draw order is node-major then relation-major, so results depend only on
    the graph structure and ``seed``.
    """
    if size < 1:
        raise UsageError(f"sample size must be >= 1, got {size}")
    rng = SplitMix64(seed)
    out = np.full((len(g), len(RELATIONS), size), -1, dtype=np.int64)
    for i in range(len(g)):
        for r in RELATIONS:
            nbrs = g.neighbors[r][i]
            if nbrs:
                k = len(nbrs)
                out[i, r] = [nbrs[rng.below(k)] for _ in range(size)]
    return NeighborSample(out, size)


# ---------------------------------------------------------------------------
# summaries


def graph_stats(g: DependencyGraph) -> dict:
    dep_degree = [len(x) for x in g.neighbors[Relation.DEP_TO_HEAD]]
    return {
        "doc_id": g.doc_id,
        "tokens": len(g),
        "roots": sum(1 for t in g.tokens if t.head is None),
        "max_out_degree": max(dep_degree, default=0),
        "max_neighbors": max(
            (len(set(g.neighbors[Relation.HEAD_TO_DEP][i]) | set(g.neighbors[Relation.DEP_TO_HEAD][i])) for i in range(len(g))),
            default=0,
        ),
        "edges": {RELATION_NAMES[r]: sum(len(x) for x in g.neighbors[r]) for r in RELATIONS},
    }


def stats_json(graphs: Sequence[DependencyGraph]) -> str:
    return json.dumps([graph_stats(g) for g in graphs], indent=2)
