"""Relation graph attention over the three-relation dependency graph.

Per node ``i`` and relation ``r`` (columns of a ``d x N`` batch):

    u_base      = W_compress @ u_out
    U[r]        = W_neighbor[r] @ agg(u_base[j] for j in sampled N(i, r))
    a[:, i]     = softmax_r(w^T tanh(W_attn @ U[r]))
    v[r]        = u_base + a[r] * (W_value[r] @ U[r])
    v           = sum | mean | concat(v[0], v[1], v[2])
    blended     = concat(v, W_shortcut @ u_out)

The attention softmax runs across the three relation logits of a node.  An
``N x N`` sparse matrix per relation turns neighbor aggregation into a single
matmul, so a whole batch of graphs is one block-diagonal problem.

The RGCN layer kept for comparison sums over full neighbor sets with
``1/|N_r(i)|`` normalization and a ReLU.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse

from . import numcore as nc
from .depgraph import RELATIONS, DependencyGraph, NeighborSample, derive_seed, sample_neighbors
from .embedstore import TokenEmbeddingTable
from .errors import ConfigError, DimensionError


class FinalAggregator(str, Enum):
    SUM = "sum"
    MEAN = "mean"
    CONCAT = "concat"

    @classmethod
    def parse(cls, value) -> "FinalAggregator":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown final aggregator {value!r}; use sum, mean or concat") from None


INNER_AGGREGATORS = ("sum", "mean", "max")


@dataclass(frozen=True)
class RgatConfig:
    d_bert: int = 1024
    d: int = 256
    m: int = 10
    n: int = 20
    sample_size: int = 4
    final: FinalAggregator = FinalAggregator.CONCAT
    inner: str = "sum"
    per_relation_attention: bool = False

    def __post_init__(self):
        object.__setattr__(self, "final", FinalAggregator.parse(self.final))
        for name in ("d_bert", "d", "m", "n", "sample_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.inner not in INNER_AGGREGATORS:
            raise ConfigError(f"unknown neighbor aggregator {self.inner!r}; use one of {INNER_AGGREGATORS}")

    @property
    def syntactic_dim(self) -> int:
        return 3 * self.d if self.final is FinalAggregator.CONCAT else self.d

    @property
    def blend_dim(self) -> int:
        return self.syntactic_dim + self.d


# ---------------------------------------------------------------------------
# parameters


def glorot(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, size=shape)


def _rng_for(seed: int, name: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, name)))


def rgat_param_shapes(config: RgatConfig) -> dict[str, tuple[int, int]]:
    shapes = {"rgat.compress": (config.d, config.d_bert)}
    for r in RELATIONS:
        shapes[f"rgat.neighbor_proj.{int(r)}"] = (config.m, config.d)
        shapes[f"rgat.value_proj.{int(r)}"] = (config.d, config.m)
    if config.per_relation_attention:
        for r in RELATIONS:
            shapes[f"rgat.attn_proj.{int(r)}"] = (config.n, config.m)
            shapes[f"rgat.attn_vec.{int(r)}"] = (config.n, 1)
    else:
        shapes["rgat.attn_proj"] = (config.n, config.m)
        shapes["rgat.attn_vec"] = (config.n, 1)
    shapes["shortcut.proj"] = (config.d, config.d_bert)
    return shapes


def init_rgat_params(config: RgatConfig, seed: int = 0) -> dict[str, np.ndarray]:
    return {name: glorot(shape, _rng_for(seed, name)) for name, shape in rgat_param_shapes(config).items()}


def rgcn_param_shapes(d: int, layers: int) -> dict[str, tuple[int, int]]:
    return {f"rgcn.layer{l}.rel{int(r)}": (d, d) for l in range(layers) for r in RELATIONS}


def init_rgcn_params(d: int, layers: int = 1, seed: int = 0) -> dict[str, np.ndarray]:
    return {name: glorot(shape, _rng_for(seed, name)) for name, shape in rgcn_param_shapes(d, layers).items()}


def _attn(params: Mapping[str, nc.Node], r: int) -> tuple[nc.Node, nc.Node]:
    if "rgat.attn_proj" in params:
        return params["rgat.attn_proj"], params["rgat.attn_vec"]
    return params[f"rgat.attn_proj.{r}"], params[f"rgat.attn_vec.{r}"]


# ---------------------------------------------------------------------------
# batched graph structure


@dataclass
class GraphBatch:
    """Several graphs laid out as one block-diagonal graph of ``size`` nodes."""

    graphs: list[DependencyGraph]
    samples: np.ndarray  # (size, 3, S) global indices, -1 for empty sets
    offsets: list[int]
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, items: Sequence[tuple[DependencyGraph, NeighborSample | None]]) -> "GraphBatch":
        graphs, blocks, offsets, total = [], [], [], 0
        sizes = {s.size for _, s in items if s is not None}
        if len(sizes) > 1:
            raise ConfigError(f"neighbor samples of differing sizes in one batch: {sorted(sizes)}")
        size = sizes.pop() if sizes else 1
        for g, s in items:
            graphs.append(g)
            offsets.append(total)
            if s is None:
                block = np.full((len(g), len(RELATIONS), size), -1, dtype=np.int64)
            else:
                if s.indices.shape[0] != len(g):
                    raise DimensionError(f"{g.doc_id}: sample covers {s.indices.shape[0]} nodes, graph has {len(g)}")
                block = np.where(s.indices >= 0, s.indices + total, -1)
            blocks.append(block)
            total += len(g)
        samples = np.concatenate(blocks, axis=0) if blocks else np.zeros((0, 3, size), dtype=np.int64)
        return cls(graphs, samples, offsets)

    @classmethod
    def single(cls, g: DependencyGraph, samples: NeighborSample | None = None) -> "GraphBatch":
        return cls.build([(g, samples)])

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    @property
    def sample_size(self) -> int:
        return self.samples.shape[2]

    def aggregation_matrix(self, r: int, inner: str) -> sparse.csr_matrix:
        """``A`` with ``(base @ A)[:, i] = agg(base[:, j] for sampled j)``; sum or mean only."""
        key = ("agg", r, inner)
        if key not in self._cache:
            draws = self.samples[:, r, :]
            rows_i, slots = np.nonzero(draws >= 0)
            cols = draws[rows_i, slots]
            weight = 1.0 if inner == "sum" else 1.0 / self.sample_size
            data = np.full(len(rows_i), weight)
            # duplicates (sampling with replacement) are summed by the constructor
            self._cache[key] = sparse.csr_matrix((data, (cols, rows_i)), shape=(self.size, self.size))
        return self._cache[key]

    def selection_matrices(self, r: int) -> list[sparse.csr_matrix]:
        """One matrix per sampling slot picking that slot's neighbor (zero column if empty)."""
        key = ("sel", r)
        if key not in self._cache:
            mats = []
            for s in range(self.sample_size):
                draws = self.samples[:, r, s]
                rows_i = np.nonzero(draws >= 0)[0]
                mats.append(
                    sparse.csr_matrix(
                        (np.ones(len(rows_i)), (draws[rows_i], rows_i)), shape=(self.size, self.size)
                    )
                )
            self._cache[key] = mats
        return self._cache[key]

    def normalized_adjacency(self, r: int) -> sparse.csr_matrix:
        """Full neighbor sets with ``1 / |N_r(i)|`` weights (RGCN)."""
        key = ("adj", r)
        if key not in self._cache:
            src, dst, val = [], [], []
            for g, off in zip(self.graphs, self.offsets):
                for i, nbrs in enumerate(g.neighbors[r]):
                    for j in nbrs:
                        src.append(off + j)
                        dst.append(off + i)
                        val.append(1.0 / len(nbrs))
            self._cache[key] = sparse.csr_matrix((val, (src, dst)), shape=(self.size, self.size))
        return self._cache[key]

    def node_index(self, graph_pos: int, token: int) -> int:
        return self.offsets[graph_pos] + token


# ---------------------------------------------------------------------------
# RGAT steps


def compress(u_out: nc.Node, params: Mapping[str, nc.Node]) -> nc.Node:
    w = params["rgat.compress"]
    if u_out.rows != w.cols:
        raise DimensionError(f"contextual vectors have length {u_out.rows}, compression expects {w.cols}")
    return nc.matmul(w, u_out)


def aggregate_neighbors(
    base: nc.Node,
    batch: GraphBatch,
    r: int,
    params: Mapping[str, nc.Node],
    inner: str = "sum",
) -> nc.Node:
    """Edge embedding ``U[r]`` (``m x N``); empty neighbor sets give zero columns."""
    if base.cols != batch.size:
        raise DimensionError(f"{base.cols} base vectors for a batch of {batch.size} nodes")
    if inner == "max":
        picked = [nc.matmul_const(base, sel) for sel in batch.selection_matrices(r)]
        agg = picked[0]
        for p in picked[1:]:
            agg = nc.maximum(agg, p)
    else:
        agg = nc.matmul_const(base, batch.aggregation_matrix(r, inner))
    return nc.matmul(params[f"rgat.neighbor_proj.{r}"], agg)


def attention_logits(U: Sequence[nc.Node], params: Mapping[str, nc.Node]) -> nc.Node:
    rows = []
    for r, u in enumerate(U):
        w_proj, w_vec = _attn(params, r)
        rows.append(nc.matmul(nc.transpose(w_vec), nc.tanh(nc.matmul(w_proj, u))))
    return nc.concat(rows, axis=0)


def attend(U: Sequence[nc.Node], params: Mapping[str, nc.Node]) -> nc.Node:
    """Attention weights ``3 x N``: each column is a softmax over the three relations."""
    if len(U) != len(RELATIONS):
        raise DimensionError(f"attention needs one edge embedding per relation, got {len(U)}")
    return nc.softmax(attention_logits(U, params), axis=0)


def combine(base: nc.Node, U_r: nc.Node, a_r: nc.Node, params: Mapping[str, nc.Node], r: int) -> nc.Node:
    """``v[r] = u_base + a[r] * (W_value[r] @ U[r])``; ``a_r`` is ``1 x N``."""
    return nc.add(base, nc.mul(a_r, nc.matmul(params[f"rgat.value_proj.{r}"], U_r)))


def finalize(vs: Sequence[nc.Node], mode: FinalAggregator | str) -> nc.Node:
    mode = FinalAggregator.parse(mode)
    if mode is FinalAggregator.CONCAT:
        return nc.concat(list(vs), axis=0)
    total = nc.stack_sum(list(vs))
    return nc.scale(total, 1.0 / len(vs)) if mode is FinalAggregator.MEAN else total


@dataclass
class RgatTrace:
    """Intermediate values of one forward pass, ``N`` columns each."""

    base: nc.Node
    U: list[nc.Node]
    attention: nc.Node
    v_rel: list[nc.Node]
    v: nc.Node
    shortcut: nc.Node
    blended: nc.Node


def rgat_layer(
    u_out: nc.Node,
    batch: GraphBatch,
    params: Mapping[str, nc.Node],
    config: RgatConfig,
) -> RgatTrace:
    base = compress(u_out, params)
    U = [aggregate_neighbors(base, batch, int(r), params, config.inner) for r in RELATIONS]
    attention = attend(U, params)
    v_rel = [combine(base, U[r], nc.slice_axis(attention, r, r + 1, axis=0), params, r) for r in range(len(RELATIONS))]
    v = finalize(v_rel, config.final)
    shortcut = nc.matmul(params["shortcut.proj"], u_out)
    return RgatTrace(base, U, attention, v_rel, v, shortcut, nc.concat([v, shortcut], axis=0))


def rgat_forward(
    u_out: nc.Node,
    batch: GraphBatch,
    params: Mapping[str, nc.Node],
    config: RgatConfig,
) -> nc.Node:
    """Blended per-node vectors (``blend_dim x N``)."""
    return rgat_layer(u_out, batch, params, config).blended


def _as_nodes(params: Mapping[str, np.ndarray]) -> dict[str, nc.Node]:
    return {k: v if isinstance(v, nc.Node) else nc.constant(v) for k, v in params.items()}


def encode_graph(
    g: DependencyGraph,
    table: TokenEmbeddingTable,
    samples: NeighborSample,
    params: Mapping[str, np.ndarray],
    config: RgatConfig,
) -> np.ndarray:
    """Blended vectors for every token of ``g`` as a ``blend_dim x len(g)`` array."""
    u_out = nc.constant(table.matrix(g.doc_id, len(g)))
    return rgat_forward(u_out, GraphBatch.single(g, samples), _as_nodes(params), config).value


@dataclass
class NodeState:
    u_base: np.ndarray
    U: list[np.ndarray]
    a: np.ndarray
    v_r: list[np.ndarray]
    v: np.ndarray


def node_states(
    g: DependencyGraph,
    table: TokenEmbeddingTable,
    samples: NeighborSample,
    params: Mapping[str, np.ndarray],
    config: RgatConfig,
) -> list[NodeState]:
    u_out = nc.constant(table.matrix(g.doc_id, len(g)))
    tr = rgat_layer(u_out, GraphBatch.single(g, samples), _as_nodes(params), config)
    return [
        NodeState(
            u_base=tr.base.value[:, i],
            U=[u.value[:, i] for u in tr.U],
            a=tr.attention.value[:, i],
            v_r=[v.value[:, i] for v in tr.v_rel],
            v=tr.v.value[:, i],
        )
        for i in range(len(g))
    ]


def sample_batch(graphs: Sequence[DependencyGraph], config: RgatConfig, seed: int) -> GraphBatch:
    return GraphBatch.build([(g, sample_neighbors(g, config.sample_size, derive_seed(seed, g.doc_id))) for g in graphs])


# ---------------------------------------------------------------------------
# RGCN baseline


def rgcn_forward(
    features: nc.Node,
    batch: GraphBatch,
    params: Mapping[str, nc.Node],
    layers: int | None = None,
) -> nc.Node:
    """Stacked relational graph convolution over full neighbor sets."""
    if layers is None:
        layers = len({k.split(".")[1] for k in params if k.startswith("rgcn.")})
    h = features
    for l in range(layers):
        terms = []
        for r in RELATIONS:
            w = params[f"rgcn.layer{l}.rel{int(r)}"]
            if w.cols != h.rows:
                raise DimensionError(f"layer {l}: weight {w.shape} cannot act on features of length {h.rows}")
            terms.append(nc.matmul(w, nc.matmul_const(h, batch.normalized_adjacency(int(r)))))
        h = nc.relu(nc.stack_sum(terms))
    return h
