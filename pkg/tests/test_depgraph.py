import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rgatcoref.depgraph import (
    DependencyGraph,
    NeighborSample,
    Relation,
    SplitMix64,
    derive_seed,
    graph_stats,
    parse_conllu,
    sample_neighbors,
    stats_json,
    to_conllu,
)
from rgatcoref.errors import ParseError, StructureError, UsageError

SENTENCE = """# newdoc id = d1
# text = Anna met Ben.
1\tAnna\t_\t_\t_\t_\t2\tnsubj\t_\t_
2\tmet\t_\t_\t_\t_\t0\troot\t_\t_
3\tBen\t_\t_\t_\t_\t2\tobj\t_\t_
4\t.\t_\t_\t_\t_\t2\tpunct\t_\t_

# text = She left.
1\tShe\t_\t_\t_\t_\t2\tnsubj\t_\t_
2\tleft\t_\t_\t_\t_\t0\troot\t_\t_
3\t.\t_\t_\t_\t_\t2\tpunct\t_\t_

"""


def _row(i, form, head):
    return "\t".join([str(i), form, "_", "_", "_", "_", str(head), "dep", "_", "_"])


@st.composite
def random_heads(draw, max_len=9):
    n = draw(st.integers(1, max_len))
    heads = [None]
    for i in range(1, n):
        heads.append(draw(st.integers(0, i - 1)))
    perm = draw(st.permutations(range(n)))
    inv = {old: new for new, old in enumerate(perm)}
    out = [None] * n
    for old, h in enumerate(heads):
        out[inv[old]] = None if h is None else inv[h]
    return out


class TestRelations:
    def test_three_relation_lists(self):
        g = DependencyGraph.from_heads("x", [1, None, 1])
        assert g.neighbors_of(0, Relation.HEAD_TO_DEP) == (1,)
        assert g.neighbors_of(1, Relation.HEAD_TO_DEP) == ()
        assert g.neighbors_of(1, Relation.DEP_TO_HEAD) == (0, 2)
        assert g.neighbors_of(2, Relation.SELF_LOOP) == (2,)

    def test_self_head_rejected(self):
        with pytest.raises(StructureError):
            DependencyGraph.from_heads("x", [0])

    def test_head_out_of_range(self):
        with pytest.raises(StructureError):
            DependencyGraph.from_heads("x", [None, 5])

    @settings(max_examples=60, deadline=None)
    @given(random_heads())
    def test_relations_are_mutual_inverses(self, heads):
        g = DependencyGraph.from_heads("h", heads)
        up = set(g.edges(Relation.HEAD_TO_DEP))
        down = set(g.edges(Relation.DEP_TO_HEAD))
        assert {(b, a) for a, b in up} == down
        assert len(up) == sum(h is not None for h in heads)
        assert all(g.neighbors_of(i, Relation.SELF_LOOP) == (i,) for i in range(len(g)))


class TestConllu:
    def test_document_with_two_sentences(self):
        (g,) = parse_conllu(SENTENCE)
        assert g.doc_id == "d1"
        assert g.text == "Anna met Ben. She left."
        assert len(g) == 7
        assert g.heads == [1, None, 1, 1, 5, None, 5]
        she = g.tokens[4]
        assert g.text[she.char_start : she.char_end] == "She"
        dot = g.tokens[3]
        assert (dot.char_start, dot.char_end) == (12, 13)

    def test_sentences_before_newdoc_are_own_documents(self):
        text = "# sent_id = s-a\n" + _row(1, "Hi", 0) + "\n\n" + _row(1, "Yo", 0) + "\n\n"
        assert [g.doc_id for g in parse_conllu(text)] == ["s-a", "s1"]

    def test_multiword_token_spans(self):
        text = "\n".join(["# newdoc id = m", "# text = del mar", "1-2\tdel\t_\t_\t_\t_\t_\t_\t_\t_",
                          _row(1, "de", 3), _row(2, "el", 3), _row(3, "mar", 0), ""]) + "\n"
        (g,) = parse_conllu(text)
        assert len(g) == 3
        assert (g.tokens[0].char_start, g.tokens[0].char_end) == (0, 3)
        assert (g.tokens[1].char_start, g.tokens[1].char_end) == (0, 3)
        assert (g.tokens[2].char_start, g.tokens[2].char_end) == (4, 7)

    def test_empty_nodes_skipped(self):
        text = _row(1, "a", 0) + "\n" + "1.1\tx\t_\t_\t_\t_\t_\t_\t_\t_\n" + _row(2, "b", 1) + "\n\n"
        (g,) = parse_conllu(text)
        assert len(g) == 2

    def test_non_integer_head_reports_line(self):
        with pytest.raises(ParseError, match=":2:"):
            parse_conllu(_row(1, "a", 0) + "\n" + _row(2, "b", "x") + "\n\n")

    def test_wrong_column_count(self):
        with pytest.raises(ParseError):
            parse_conllu("1\ta\t_\n\n")

    def test_head_out_of_range(self):
        with pytest.raises(StructureError):
            parse_conllu(_row(1, "a", 3) + "\n\n")

    def test_duplicate_document(self):
        block = "# newdoc id = d\n" + _row(1, "a", 0) + "\n\n"
        with pytest.raises(StructureError):
            parse_conllu(block + block)

    def test_round_trip(self):
        graphs = parse_conllu(SENTENCE)
        again = parse_conllu(to_conllu(graphs))
        assert [g.heads for g in again] == [g.heads for g in graphs]
        assert again[0].text == graphs[0].text


class TestSampling:
    def test_splitmix_reference_values(self):
        # published first outputs for seed 0
        rng = SplitMix64(0)
        assert rng.next_u64() == 0xE220A8397B1DCDAF
        assert rng.next_u64() == 0x6E789E6AA1B965F4

    def test_below_in_range(self):
        rng = SplitMix64(7)
        assert all(0 <= rng.below(3) < 3 for _ in range(500))

    def test_empty_sets_marked(self):
        g = DependencyGraph.from_heads("x", [None, 0])
        s = sample_neighbors(g, 4, seed=1)
        assert s.is_empty(0, Relation.HEAD_TO_DEP)
        assert s.for_node(1, Relation.HEAD_TO_DEP) == (0, 0, 0, 0)
        assert s.for_node(0, Relation.SELF_LOOP) == (0, 0, 0, 0)

    def test_deterministic_and_seed_sensitive(self):
        g = DependencyGraph.from_heads("x", [None, 0, 0, 0, 0, 0])
        a, b = sample_neighbors(g, 4, 3), sample_neighbors(g, 4, 3)
        np.testing.assert_array_equal(a.indices, b.indices)
        assert any(
            not np.array_equal(a.indices, sample_neighbors(g, 4, s).indices) for s in range(4, 10)
        )

    @settings(max_examples=40, deadline=None)
    @given(random_heads(), st.integers(1, 6), st.integers(0, 2**32))
    def test_draws_come_from_neighbor_sets(self, heads, size, seed):
        g = DependencyGraph.from_heads("h", heads)
        s = sample_neighbors(g, size, seed)
        for i in range(len(g)):
            for r in Relation:
                draws = s.for_node(i, r)
                nbrs = g.neighbors_of(i, r)
                assert (draws == ()) == (nbrs == ())
                assert set(draws) <= set(nbrs)

    def test_from_lists_checks_size(self):
        with pytest.raises(UsageError):
            NeighborSample.from_lists([[[0], [], [0, 0]]], 2)

    def test_derive_seed_is_stable(self):
        assert derive_seed(1, "a") == derive_seed(1, "a")
        assert derive_seed(1, "a") != derive_seed(1, "b")


class TestStats:
    def test_counts(self):
        (g,) = parse_conllu(SENTENCE)
        s = graph_stats(g)
        assert s["tokens"] == 7 and s["roots"] == 2
        assert s["max_out_degree"] == 3
        assert s["edges"] == {"HeadToDep": 5, "DepToHead": 5, "SelfLoop": 7}
        assert json.loads(stats_json([g]))[0]["doc_id"] == "d1"
