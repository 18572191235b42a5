"""Micro-F1 for the three-way task and the MUC / B-cubed / CEAF-phi4 cluster metrics.

Cluster metrics return :class:`Score` objects that keep numerators and
denominators, so scores over many documents are pooled by adding them.
``0/0`` is defined as 0.

``MetricMode.LITERAL`` evaluates two alternative normalizations kept
for auditing: B-cubed precision reusing the recall numerator (inner division
by the key cluster size), and CEAF dividing the aligned similarity by the
total mention counts instead of the cluster counts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .corefhead import LABELS
from .errors import FormatError, UsageError, ValidationError

Cluster = frozenset
Clustering = list


class MetricMode(str, Enum):
    STANDARD = "standard"
    LITERAL = "paper"

    @classmethod
    def parse(cls, value) -> "MetricMode":
        if isinstance(value, cls):
            return value
        v = str(value).lower()
        if v in ("paper", "paperliteral", "paper_literal", "literal"):
            return cls.LITERAL
        if v == "standard":
            return cls.STANDARD
        raise UsageError(f"unknown metric mode {value!r}; use standard or paper")


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def f1(p: float, r: float) -> float:
    return _ratio(2 * p * r, p + r)


@dataclass(frozen=True)
class Score:
    p_num: float
    p_den: float
    r_num: float
    r_den: float

    @property
    def precision(self) -> float:
        return _ratio(self.p_num, self.p_den)

    @property
    def recall(self) -> float:
        return _ratio(self.r_num, self.r_den)

    @property
    def f1(self) -> float:
        return f1(self.precision, self.recall)

    def __add__(self, other: "Score") -> "Score":
        return Score(self.p_num + other.p_num, self.p_den + other.p_den, self.r_num + other.r_num, self.r_den + other.r_den)

    def swapped(self) -> "Score":
        return Score(self.r_num, self.r_den, self.p_num, self.p_den)

    def as_tuple(self) -> tuple[float, float, float]:
        return self.precision, self.recall, self.f1


ZERO = Score(0.0, 0.0, 0.0, 0.0)


# ---------------------------------------------------------------------------
# micro-F1


@dataclass(frozen=True)
class ConfusionCounts:
    tp: tuple[int, ...]
    fp: tuple[int, ...]
    fn: tuple[int, ...]

    @classmethod
    def from_labels(cls, gold: Sequence, pred: Sequence, classes: Sequence = LABELS) -> "ConfusionCounts":
        if len(gold) != len(pred):
            raise UsageError(f"{len(gold)} gold labels but {len(pred)} predictions")
        tp, fp, fn = [0] * len(classes), [0] * len(classes), [0] * len(classes)
        index = {c: i for i, c in enumerate(classes)}
        for g, p in zip(gold, pred):
            for label in (g, p):
                if label not in index:
                    raise UsageError(f"label {label!r} not among {tuple(classes)}")
            if g == p:
                tp[index[g]] += 1
            else:
                fp[index[p]] += 1
                fn[index[g]] += 1
        return cls(tuple(tp), tuple(fp), tuple(fn))

    @property
    def precision(self) -> float:
        return _ratio(sum(self.tp), sum(self.tp) + sum(self.fp))

    @property
    def recall(self) -> float:
        return _ratio(sum(self.tp), sum(self.tp) + sum(self.fn))


    @property
    def f1(self) -> float:
        # count form 2tp / (2tp + fp + fn); equals accuracy bit-for-bit when fp == fn
        tp = sum(self.tp)
        return _ratio(2 * tp, 2 * tp + sum(self.fp) + sum(self.fn))


def micro_f1(gold: Sequence, pred: Sequence, classes: Sequence = LABELS) -> tuple[float, float, float]:
    counts = ConfusionCounts.from_labels(gold, pred, classes)
    return counts.precision, counts.recall, counts.f1


# ---------------------------------------------------------------------------
# clusterings


def as_clustering(clusters: Iterable[Iterable[Hashable]]) -> list[frozenset]:
    """Validate and freeze: clusters must be nonempty and pairwise disjoint."""
    out, seen = [], {}
    for k, cluster in enumerate(clusters):
        c = frozenset(cluster)
        if not c:
            raise ValidationError(f"cluster {k} is empty")
        for m in c:
            if m in seen:
                raise ValidationError(f"mention {m!r} appears in clusters {seen[m]} and {k}")
            seen[m] = k
        out.append(c)
    return out


def _membership(clusters: Sequence[frozenset]) -> dict:
    return {m: k for k, c in enumerate(clusters) for m in c}


def _muc_side(key: Sequence[frozenset], response: Sequence[frozenset]) -> tuple[float, float]:
    owner = _membership(response)
    num = den = 0
    for k in key:
        parts = set()
        unmatched = 0
        for m in k:
            if m in owner:
                parts.add(owner[m])
            else:
                unmatched += 1
        num += len(k) - (len(parts) + unmatched)
        den += len(k) - 1
    return num, den


def muc(key, response) -> Score:
    key, response = as_clustering(key), as_clustering(response)
    r_num, r_den = _muc_side(key, response)
    p_num, p_den = _muc_side(response, key)
    return Score(p_num, p_den, r_num, r_den)


def _overlap(key: Sequence[frozenset], response: Sequence[frozenset]) -> np.ndarray:
    owner = _membership(response)
    counts = np.zeros((len(key), len(response)))
    for i, k in enumerate(key):
        for m in k:
            j = owner.get(m)
            if j is not None:
                counts[i, j] += 1
    return counts


def b_cubed(key, response, mode: MetricMode | str = MetricMode.STANDARD) -> Score:
    mode = MetricMode.parse(mode)
    key, response = as_clustering(key), as_clustering(response)
    overlap = _overlap(key, response)
    key_sizes = np.array([len(k) for k in key], dtype=float)
    resp_sizes = np.array([len(r) for r in response], dtype=float)
    sq = overlap**2
    r_num = float((sq / key_sizes[:, None]).sum()) if key else 0.0
    if mode is MetricMode.STANDARD:
        p_num = float((sq / resp_sizes[None, :]).sum()) if response else 0.0
    else:
        p_num = r_num
    return Score(p_num, float(resp_sizes.sum()), r_num, float(key_sizes.sum()))


def phi4(k: frozenset, r: frozenset) -> float:
    return 2.0 * len(k & r) / (len(k) + len(r))


def ceaf_alignment(key: Sequence[frozenset], response: Sequence[frozenset]) -> tuple[list[tuple[int, int]], float]:
    """Optimal one-to-one key/response pairing maximizing the summed phi4."""
    if not key or not response:
        return [], 0.0
    overlap = _overlap(key, response)
    sizes = np.array([len(k) for k in key], dtype=float)[:, None] + np.array([len(r) for r in response], dtype=float)[None, :]
    sim = 2.0 * overlap / sizes
    rows, cols = linear_sum_assignment(sim, maximize=True)
    pairs = [(int(i), int(j)) for i, j in zip(rows, cols) if sim[i, j] > 0]
    return pairs, float(sum(sim[i, j] for i, j in pairs))


def ceaf_phi4(key, response, mode: MetricMode | str = MetricMode.STANDARD) -> Score:
    mode = MetricMode.parse(mode)
    key, response = as_clustering(key), as_clustering(response)
    _, total = ceaf_alignment(key, response)
    if mode is MetricMode.STANDARD:
        return Score(total, float(len(response)), total, float(len(key)))
    return Score(total, float(sum(len(r) for r in response)), total, float(sum(len(k) for k in key)))


def avg_f1(muc_f1: float, b3_f1: float, ceaf_f1: float) -> float:
    return (muc_f1 + b3_f1 + ceaf_f1) / 3.0


@dataclass(frozen=True)
class ClusterReport:
    muc: Score
    b_cubed: Score
    ceaf_phi4: Score

    @property
    def avg_f1(self) -> float:
        return avg_f1(self.muc.f1, self.b_cubed.f1, self.ceaf_phi4.f1)

    def __add__(self, other: "ClusterReport") -> "ClusterReport":
        return ClusterReport(self.muc + other.muc, self.b_cubed + other.b_cubed, self.ceaf_phi4 + other.ceaf_phi4)

    def table(self) -> str:
        lines = [f"{'metric':<10}{'P':>10}{'R':>10}{'F1':>10}"]
        for name, s in (("MUC", self.muc), ("B3", self.b_cubed), ("CEAF_phi4", self.ceaf_phi4)):
            lines.append(f"{name:<10}{s.precision:>10.4f}{s.recall:>10.4f}{s.f1:>10.4f}")
        lines.append(f"{'Avg F1':<10}{'':>10}{'':>10}{self.avg_f1:>10.4f}")
        return "\n".join(lines)


def score_document(key, response, mode: MetricMode | str = MetricMode.STANDARD) -> ClusterReport:
    return ClusterReport(muc(key, response), b_cubed(key, response, mode), ceaf_phi4(key, response, mode))


def score_corpus(pairs: Iterable[tuple], mode: MetricMode | str = MetricMode.STANDARD) -> ClusterReport:
    total = ClusterReport(ZERO, ZERO, ZERO)
    for key, response in pairs:
        total = total + score_document(key, response, mode)
    return total


# ---------------------------------------------------------------------------
# cluster files


def read_cluster_file(path: str | Path) -> dict[str, list[frozenset]]:
    """Read ``{"doc": id, "clusters": [[mention, ...], ...]}`` objects.

    Accepts a single object, a JSON list of objects, or one object per line.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
        records = data if isinstance(data, list) else [data]
    except json.JSONDecodeError:
        try:
            records = [json.loads(line) for line in text.splitlines() if line.strip()]
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not JSON or JSON lines ({exc})") from None
    out: dict[str, list[frozenset]] = {}
    for rec in records:
        if not isinstance(rec, dict) or "doc" not in rec or "clusters" not in rec:
            raise FormatError(f"{path}: each record needs 'doc' and 'clusters'")
        doc = str(rec["doc"])
        if doc in out:
            raise FormatError(f"{path}: document {doc!r} listed twice")
        out[doc] = as_clustering(tuple(_hashable(m) for m in c) for c in rec["clusters"])
    return out


def _hashable(m):
    return tuple(m) if isinstance(m, list) else m


def score_cluster_files(key_path, response_path, mode: MetricMode | str = MetricMode.STANDARD) -> ClusterReport:
    key = read_cluster_file(key_path)
    response = read_cluster_file(response_path)
    docs = list(key) + [d for d in response if d not in key]
    return score_corpus(((key.get(d, []), response.get(d, [])) for d in docs), mode)
