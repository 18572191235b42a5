import numpy as np
import pytest

from rgatcoref import numcore as nc
from rgatcoref.corefhead import (
    LABELS,
    GapInstance,
    classify,
    cross_entropy,
    head_param_shapes,
    init_head_params,
    locate_mentions,
    loss,
    mention_vector,
    one_hot,
    pooling_matrix,
)
from rgatcoref.depgraph import parse_conllu
from rgatcoref.errors import AlignmentError, DimensionError, LabelError, UsageError
from rgatcoref.optim import BatchNormState, RegularizerSpec

DOC = """# newdoc id = g1
# text = Mary Ann met Sue. She smiled.
1\tMary\t_\t_\t_\t_\t3\t_\t_\t_
2\tAnn\t_\t_\t_\t_\t1\t_\t_\t_
3\tmet\t_\t_\t_\t_\t0\t_\t_\t_
4\tSue\t_\t_\t_\t_\t3\t_\t_\t_
5\t.\t_\t_\t_\t_\t3\t_\t_\t_
6\tShe\t_\t_\t_\t_\t7\t_\t_\t_
7\tsmiled\t_\t_\t_\t_\t0\t_\t_\t_
8\t.\t_\t_\t_\t_\t7\t_\t_\t_

"""


def _instance(**overrides):
    fields = dict(
        doc_id="g1",
        text="Mary Ann met Sue. She smiled.",
        pronoun="She",
        pronoun_offset=18,
        a_text="Mary Ann",
        a_offset=0,
        b_text="Sue",
        b_offset=13,
        label="A",
    )
    fields.update(overrides)
    return GapInstance(**fields)


class TestMentions:
    def test_locate(self):
        (g,) = parse_conllu(DOC)
        m = locate_mentions(_instance(), g)
        assert m.a == (0, 1) and m.b == (3,) and m.p == (5,)

    def test_misaligned_text(self):
        (g,) = parse_conllu(DOC)
        with pytest.raises(AlignmentError):
            locate_mentions(_instance(b_offset=12), g)

    def test_span_outside_text(self):
        with pytest.raises(AlignmentError):
            _instance(pronoun_offset=40)

    def test_bad_label(self):
        with pytest.raises(LabelError):
            _instance(label="C")

    def test_mention_vector_is_mean(self):
        blended = np.arange(12.0).reshape(3, 4)
        np.testing.assert_array_equal(mention_vector([1, 3], blended), [2.0, 6.0, 10.0])
        with pytest.raises(UsageError):
            mention_vector([], blended)

    def test_pooling_matrix_matches_mention_vector(self):
        blended = np.random.default_rng(0).standard_normal((3, 6))
        pooled = blended @ pooling_matrix([[0, 1], [4]], 6).toarray()
        np.testing.assert_allclose(pooled[:, 0], mention_vector([0, 1], blended))
        np.testing.assert_allclose(pooled[:, 1], blended[:, 4])


class TestClassifier:
    def _inputs(self, dim=4, batch=5, seed=0):
        rng = np.random.default_rng(seed)
        return [nc.constant(rng.standard_normal((dim, batch))) for _ in range(3)]

    def test_shapes_and_simplex(self):
        params = {k: nc.constant(v) for k, v in init_head_params(12, 7, 0).items()}
        logits, probs = classify(*self._inputs(), params, BatchNormState.create(7), training=False)
        assert logits.shape == (3, 5)
        np.testing.assert_allclose(probs.value.sum(axis=0), 1.0, atol=1e-12)

    def test_input_width_checked(self):
        params = {k: nc.constant(v) for k, v in init_head_params(9, 7, 0).items()}
        with pytest.raises(DimensionError):
            classify(*self._inputs(), params, BatchNormState.create(7))

    def test_param_shapes(self):
        shapes = head_param_shapes(3072, 512)
        assert shapes["head.hidden.weight"] == (512, 3072)
        assert shapes["head.out.weight"] == (len(LABELS), 512)

    def test_cross_entropy_value(self):
        logits = nc.constant(np.log(np.array([[0.5, 0.2], [0.25, 0.3], [0.25, 0.5]])))
        ce = cross_entropy(logits, [0, 2]).item()
        assert ce == pytest.approx(-(np.log(0.5) + np.log(0.5)) / 2)

    def test_one_hot_rejects_bad_index(self):
        with pytest.raises(LabelError):
            one_hot([3])

    def test_loss_gradients(self):
        rng = np.random.default_rng(1)
        head = init_head_params(6, 5, 2)
        inputs = [rng.standard_normal((2, 4)) for _ in range(3)]
        params = dict(head, **{"rgat.x": rng.standard_normal((2, 2))})
        reg = RegularizerSpec(0.1, ("rgat.",))

        def f(p):
            vs = [nc.matmul(p["rgat.x"], nc.constant(x)) for x in inputs]
            logits, _ = classify(*vs, p, BatchNormState.create(5), training=True, dropout_rate=0.0)
            return loss(logits, [0, 1, 2, 1], reg, p)

        report = nc.grad_check(f, params, tol=1e-5)
        assert report.passed, str(report)
