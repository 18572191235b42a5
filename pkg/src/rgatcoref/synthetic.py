"""Small random GAP-style corpora: documents, dependency trees, instances and signal-bearing embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corefhead import LABELS, GapInstance, locate_mentions
from .depgraph import DependencyGraph, Token, derive_seed
from .embedstore import DEFAULT_SIGNAL, SignalSpec, TokenEmbeddingTable, synth_embeddings

FILLER = (
    "the", "a", "was", "said", "that", "with", "in", "after", "before", "about",
    "met", "told", "saw", "wrote", "called", "visited", "city", "book", "film", "team",
)
NAMES = ("Alice", "Bruno", "Chloe", "Dmitri", "Elena", "Farid", "Greta", "Hiro", "Ines", "Jonas")
SURNAMES = ("Smith", "Okafor", "Larsen", "Costa", "Novak")
PRONOUNS = ("she", "he", "her", "his")


@dataclass
class SyntheticCorpus:
    instances: list[GapInstance]
    graphs: list[DependencyGraph]

    def signal(self, rules: str = DEFAULT_SIGNAL) -> SignalSpec:
        mentions = {}
        by_id = {g.doc_id: g for g in self.graphs}
        for inst in self.instances:
            m = locate_mentions(inst, by_id[inst.doc_id])
            mentions[inst.doc_id] = (inst.label, {"A": m.a, "B": m.b, "P": m.p})
        return SignalSpec(SignalSpec.parse_rules(rules), mentions)

    def embeddings(self, dim: int, seed: int = 0, rules: str | None = DEFAULT_SIGNAL) -> TokenEmbeddingTable:
        return synth_embeddings(self.graphs, dim, seed, self.signal(rules) if rules else None)


def _random_tree(rng: np.random.Generator, length: int) -> list[int | None]:
    """Sentence-local heads: a random root, then each token attaches to an earlier-attached one."""
    order = rng.permutation(length)
    heads: list[int | None] = [None] * length
    for k in range(1, length):
        heads[order[k]] = int(order[rng.integers(0, k)])
    return heads


def _document(rng: np.random.Generator, doc_id: str, label: str) -> tuple[DependencyGraph, GapInstance]:
    a_name = [str(rng.choice(NAMES))]
    if rng.random() < 0.4:
        a_name.append(str(rng.choice(SURNAMES)))
    b_name = [str(rng.choice([n for n in NAMES if n != a_name[0]]))]
    pronoun = str(rng.choice(PRONOUNS))

    first = [str(w) for w in rng.choice(FILLER, size=int(rng.integers(4, 8)))]
    a_at = int(rng.integers(0, len(first) + 1))
    first[a_at:a_at] = a_name
    b_at = int(rng.integers(a_at + len(a_name), len(first) + 1))
    first[b_at:b_at] = b_name
    sentences = [first]
    second = [str(w) for w in rng.choice(FILLER, size=int(rng.integers(2, 6)))]
    p_at = int(rng.integers(0, len(second) + 1))
    second.insert(p_at, pronoun)
    if rng.random() < 0.5:
        sentences.append(second)
        p_sentence, p_index = 1, p_at
    else:
        p_index = len(first) + p_at
        first.extend(second)
        p_sentence = 0

    tokens, text, base = [], "", 0
    offsets: dict[tuple[int, int], int] = {}
    for s, words in enumerate(sentences):
        heads = _random_tree(rng, len(words))
        for w, (word, head) in enumerate(zip(words, heads)):
            if text:
                text += " "
            offsets[s, w] = len(text)
            tokens.append(Token(len(tokens), word, len(text), len(text) + len(word), None if head is None else base + head))
            text += word
        base += len(words)
    graph = DependencyGraph.build(doc_id, tokens, text)
    inst = GapInstance(
        doc_id=doc_id,
        text=text,
        pronoun=pronoun,
        pronoun_offset=offsets[p_sentence, p_index],
        a_text=" ".join(a_name),
        a_offset=offsets[0, a_at],
        b_text=" ".join(b_name),
        b_offset=offsets[0, b_at],
        label=label,
    )
    return graph, inst


def make_corpus(count: int, seed: int = 0, prefix: str = "doc") -> SyntheticCorpus:
    """``count`` documents whose labels cycle A, B, NEITHER."""
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "corpus", prefix)))
    graphs, instances = [], []
    for k in range(count):
        g, inst = _document(rng, f"{prefix}-{k:04d}", LABELS[k % len(LABELS)])
        graphs.append(g)
        instances.append(inst)
    return SyntheticCorpus(instances, graphs)
