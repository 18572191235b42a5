"""Mention extraction and the three-way pronoun classifier.

The classifier sees ``concat(vA, vB, vP)`` and returns logits in the fixed
order ``[A, B, NEITHER]``::

    hidden = dropout(relu(batch_norm(W1 x + b1)))
    logits = W2 hidden + b2
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse

from . import numcore as nc
from .depgraph import DependencyGraph, derive_seed
from .errors import AlignmentError, DimensionError, LabelError, UsageError
from .optim import BatchNormState, RegularizerSpec, batch_norm, dropout, l2_penalty
from .rgat import glorot

LABELS = ("A", "B", "NEITHER")
LABEL_INDEX = {label: i for i, label in enumerate(LABELS)}


@dataclass(frozen=True)
class GapInstance:
    doc_id: str
    text: str
    pronoun: str
    pronoun_offset: int
    a_text: str
    a_offset: int
    b_text: str
    b_offset: int
    label: str

    def __post_init__(self):
        if self.label not in LABEL_INDEX:
            raise LabelError(f"{self.doc_id}: label must be one of {LABELS}, got {self.label!r}")
        for what, off, mention in (
            ("pronoun", self.pronoun_offset, self.pronoun),
            ("A", self.a_offset, self.a_text),
            ("B", self.b_offset, self.b_text),
        ):
            if not 0 <= off or off + len(mention) > len(self.text):
                raise AlignmentError(
                    f"{self.doc_id}: {what} span [{off}, {off + len(mention)}) outside text of length {len(self.text)}"
                )

    @property
    def label_index(self) -> int:
        return LABEL_INDEX[self.label]


@dataclass(frozen=True)
class MentionTokens:
    a: tuple[int, ...]
    b: tuple[int, ...]
    p: tuple[int, ...]


def _token_at(g: DependencyGraph, offset: int) -> int | None:
    for tok in g.tokens:
        if tok.char_start <= offset < tok.char_end:
            return tok.index
    return None


def _span_tokens(g: DependencyGraph, doc_id: str, what: str, offset: int, mention: str) -> tuple[int, ...]:
    first = _token_at(g, offset)
    if first is None:
        raise AlignmentError(f"{doc_id}: {what} offset {offset} does not fall inside any token")
    end = offset + max(len(mention), 1)
    run = [first]
    for tok in g.tokens[first + 1 :]:
        if tok.char_start >= end:
            break
        run.append(tok.index)
    return tuple(run)


def locate_mentions(instance: GapInstance, g: DependencyGraph) -> MentionTokens:
    """Token indices of the A, B and pronoun mentions of ``instance`` in ``g``."""
    for what, off, mention in (
        ("pronoun", instance.pronoun_offset, instance.pronoun),
        ("A", instance.a_offset, instance.a_text),
        ("B", instance.b_offset, instance.b_text),
    ):
        if g.text[off : off + len(mention)] != mention:
            raise AlignmentError(
                f"{instance.doc_id}: {what} {mention!r} at [{off}, {off + len(mention)}) "
                f"does not match graph text {g.text[off:off + len(mention)]!r}"
            )
    p = _token_at(g, instance.pronoun_offset)
    if p is None:
        raise AlignmentError(f"{instance.doc_id}: pronoun offset {instance.pronoun_offset} does not fall inside any token")
    return MentionTokens(
        a=_span_tokens(g, instance.doc_id, "A", instance.a_offset, instance.a_text),
        b=_span_tokens(g, instance.doc_id, "B", instance.b_offset, instance.b_text),
        p=(p,),
    )


def mention_vector(tokens: Sequence[int], blended: np.ndarray) -> np.ndarray:
    """Mean of the blended columns for ``tokens``."""
    if len(tokens) == 0:
        raise UsageError("mention token set is empty")
    return blended[:, list(tokens)].mean(axis=1)


def pooling_matrix(groups: Sequence[Sequence[int]], size: int) -> sparse.csr_matrix:
    """``size x len(groups)``; column ``b`` averages the nodes listed in ``groups[b]``."""
    rows, cols, vals = [], [], []
    for b, nodes in enumerate(groups):
        if len(nodes) == 0:
            raise UsageError(f"mention group {b} is empty")
        for j in nodes:
            rows.append(j)
            cols.append(b)
            vals.append(1.0 / len(nodes))
    return sparse.csr_matrix((vals, (rows, cols)), shape=(size, len(groups)))


# ---------------------------------------------------------------------------
# classifier


def head_param_shapes(input_dim: int, hidden: int) -> dict[str, tuple[int, int]]:
    return {
        "head.hidden.weight": (hidden, input_dim),
        "head.hidden.bias": (hidden, 1),
        "head.bn.gamma": (hidden, 1),
        "head.bn.beta": (hidden, 1),
        "head.out.weight": (len(LABELS), hidden),
        "head.out.bias": (len(LABELS), 1),
    }


def init_head_params(input_dim: int, hidden: int = 512, seed: int = 0) -> dict[str, np.ndarray]:
    out = {}
    for name, shape in head_param_shapes(input_dim, hidden).items():
        if name.endswith("weight"):
            out[name] = glorot(shape, np.random.Generator(np.random.PCG64(derive_seed(seed, name))))
        elif name == "head.bn.gamma":
            out[name] = np.ones(shape)
        else:
            out[name] = np.zeros(shape)
    return out


def classify(
    vA: nc.Node,
    vB: nc.Node,
    vP: nc.Node,
    params: Mapping[str, nc.Node],
    bn: BatchNormState,
    training: bool = False,
    rng: np.random.Generator | None = None,
    dropout_rate: float = 0.5,
) -> tuple[nc.Node, nc.Node]:
    """Logits and probabilities (``3 x B``) for a batch of mention triples."""
    if not vA.shape == vB.shape == vP.shape:
        raise DimensionError(f"mention vectors differ in shape: {vA.shape}, {vB.shape}, {vP.shape}")
    x = nc.concat([vA, vB, vP], axis=0)
    w1 = params["head.hidden.weight"]
    if x.rows != w1.cols:
        raise DimensionError(f"classifier expects inputs of length {w1.cols}, got {x.rows}")
    h = nc.add(nc.matmul(w1, x), params["head.hidden.bias"])
    h = batch_norm(h, params["head.bn.gamma"], params["head.bn.beta"], bn, training)
    h = dropout(nc.relu(h), dropout_rate, training, rng)
    logits = nc.add(nc.matmul(params["head.out.weight"], h), params["head.out.bias"])
    return logits, nc.softmax(logits, axis=0)


def one_hot(labels: Sequence[int], dtype=np.float64) -> np.ndarray:
    out = np.zeros((len(LABELS), len(labels)), dtype=dtype)
    for b, y in enumerate(labels):
        if not 0 <= y < len(LABELS):
            raise LabelError(f"label index {y} outside [0, {len(LABELS)})")
        out[y, b] = 1.0
    return out


def cross_entropy(logits: nc.Node, labels: Sequence[int]) -> nc.Node:
    """Mean over the batch of ``-log softmax(logits)[label]``."""
    if logits.cols != len(labels):
        raise DimensionError(f"{logits.cols} logit columns for {len(labels)} labels")
    picked = nc.mul(nc.log_softmax(logits, axis=0), nc.constant(one_hot(labels, logits.value.dtype)))
    return nc.scale(nc.sum_reduce(picked), -1.0 / len(labels))


def loss(
    logits: nc.Node,
    labels: Sequence[int],
    reg: RegularizerSpec,
    rgat_weights: Mapping[str, nc.Node],
) -> nc.Node:
    """Cross-entropy plus the L2 penalty on the regularized RGAT tensors."""
    return nc.add(cross_entropy(logits, labels), l2_penalty(rgat_weights, reg))
