"""Encoder plus classifier head over batches of precomputed instance features."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import numcore as nc
from .checkpoint import dump_checkpoint, parse_checkpoint
from .corefhead import GapInstance, MentionTokens, classify, init_head_params, pooling_matrix
from .depgraph import DependencyGraph, NeighborSample
from .errors import ConfigError, FormatError
from .optim import BatchNormState, RegularizerSpec
from .rgat import GraphBatch, RgatConfig, compress, init_rgat_params, init_rgcn_params, rgat_forward, rgcn_forward

ENCODERS = ("rgat", "rgcn")
L2_TAGS = ("rgat.", "rgcn.")


@dataclass(frozen=True)
class ModelSpec:
    rgat: RgatConfig
    hidden: int = 512
    dropout: float = 0.5
    bn_momentum: float = 0.9
    encoder: str = "rgat"
    rgcn_layers: int = 1

    def __post_init__(self):
        if self.encoder not in ENCODERS:
            raise ConfigError(f"unknown encoder {self.encoder!r}; use one of {ENCODERS}")
        if self.hidden < 1 or self.rgcn_layers < 1:
            raise ConfigError("hidden and rgcn_layers must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def blend_dim(self) -> int:
        if self.encoder == "rgcn":
            return 2 * self.rgat.d
        return self.rgat.blend_dim


@dataclass
class InstanceFeatures:
    """Everything the model reads for one instance, assembled once."""

    instance: GapInstance
    graph: DependencyGraph
    samples: NeighborSample
    u_out: np.ndarray  # d_bert x len(graph)
    mentions: MentionTokens

    @property
    def label(self) -> int:
        return self.instance.label_index


@dataclass
class Batch:
    graphs: GraphBatch
    u_out: np.ndarray
    pools: tuple  # sparse pooling matrices for A, B, P
    labels: list[int]
    ids: list[str]


def assemble(features: Sequence[InstanceFeatures], dtype=np.float64) -> Batch:
    graphs = GraphBatch.build([(f.graph, f.samples) for f in features])
    groups = {"a": [], "b": [], "p": []}
    for pos, f in enumerate(features):
        off = graphs.offsets[pos]
        for role in groups:
            groups[role].append([off + t for t in getattr(f.mentions, role)])
    pools = tuple(pooling_matrix(groups[r], graphs.size).astype(dtype) for r in ("a", "b", "p"))
    u_out = np.concatenate([f.u_out for f in features], axis=1).astype(dtype, copy=False)
    return Batch(graphs, u_out, pools, [f.label for f in features], [f.instance.doc_id for f in features])


@dataclass
class CorefModel:
    spec: ModelSpec
    params: dict[str, np.ndarray]
    bn: BatchNormState
    dtype: type = np.float64

    @classmethod
    def create(cls, spec: ModelSpec, seed: int = 0, dtype=np.float64) -> "CorefModel":
        params = init_rgat_params(spec.rgat, seed)
        if spec.encoder == "rgcn":
            params = {k: v for k, v in params.items() if k in ("rgat.compress", "shortcut.proj")}
            params.update(init_rgcn_params(spec.rgat.d, spec.rgcn_layers, seed))
        params.update(init_head_params(3 * spec.blend_dim, spec.hidden, seed))
        params = {k: v.astype(dtype) for k, v in params.items()}
        return cls(spec, params, BatchNormState.create(spec.hidden, spec.bn_momentum, dtype=dtype), dtype)

    def regularizer(self, lam: float) -> RegularizerSpec:
        return RegularizerSpec(lam, L2_TAGS)

    def leaves(self) -> dict[str, nc.Node]:
        return {k: nc.Node(v, requires_grad=True, name=k) for k, v in self.params.items()}

    def constants(self) -> dict[str, nc.Node]:
        return {k: nc.Node(v, name=k) for k, v in self.params.items()}

    def encode(self, batch: Batch, nodes: Mapping[str, nc.Node]) -> nc.Node:
        u_out = nc.constant(batch.u_out)
        if self.spec.encoder == "rgcn":
            h = rgcn_forward(compress(u_out, nodes), batch.graphs, nodes, self.spec.rgcn_layers)
            return nc.concat([h, nc.matmul(nodes["shortcut.proj"], u_out)], axis=0)
        return rgat_forward(u_out, batch.graphs, nodes, self.spec.rgat)

    def forward(
        self,
        batch: Batch,
        nodes: Mapping[str, nc.Node] | None = None,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[nc.Node, nc.Node]:
        nodes = self.constants() if nodes is None else nodes
        blended = self.encode(batch, nodes)
        vA, vB, vP = (nc.matmul_const(blended, pool) for pool in batch.pools)
        return classify(vA, vB, vP, nodes, self.bn, training, rng, self.spec.dropout)

    def predict_proba(self, features: Sequence[InstanceFeatures], batch_size: int = 64) -> np.ndarray:
        """``len(features) x 3`` class probabilities (eval mode)."""
        out = []
        for start in range(0, len(features), batch_size):
            batch = assemble(features[start : start + batch_size], self.dtype)
            _, probs = self.forward(batch)
            out.append(probs.value.T)
        return np.concatenate(out, axis=0).astype(np.float64) if out else np.zeros((0, 3))

    # -- checkpoints ------------------------------------------------------

    def tensors(self) -> dict[str, np.ndarray]:
        out = dict(self.params)
        out["head.bn.running_mean"] = self.bn.running_mean
        out["head.bn.running_var"] = self.bn.running_var
        return out

    def to_bytes(self) -> bytes:
        return dump_checkpoint(self.tensors())

    @classmethod
    def from_tensors(cls, spec: ModelSpec, tensors: Mapping[str, np.ndarray], dtype=np.float64) -> "CorefModel":
        expected = cls.create(spec, 0, dtype)
        missing = set(expected.params) - set(tensors)
        extra = set(tensors) - set(expected.params) - {"head.bn.running_mean", "head.bn.running_var"}
        if missing or extra:
            raise FormatError(f"checkpoint does not match model: missing {sorted(missing)}, unexpected {sorted(extra)}")
        params = {}
        for name, ref in expected.params.items():
            arr = np.asarray(tensors[name])
            if arr.shape != ref.shape:
                raise FormatError(f"tensor {name!r} has shape {arr.shape}, model expects {ref.shape}")
            params[name] = arr.astype(dtype)
        bn = BatchNormState(
            np.asarray(tensors["head.bn.running_mean"]).astype(dtype),
            np.asarray(tensors["head.bn.running_var"]).astype(dtype),
            spec.bn_momentum,
        )
        return cls(spec, params, bn, dtype)

    @classmethod
    def from_bytes(cls, spec: ModelSpec, data: bytes, dtype=np.float64) -> "CorefModel":
        return cls.from_tensors(spec, parse_checkpoint(data), dtype)


def gradient_check(seed: int = 0, final: str = "concat", inner: str = "sum", tol: float = 1e-4) -> nc.GradCheckReport:
    """Finite-difference check of every model tensor on two tiny 5-node documents.

    Dims are ``d_bert=8, d=4, m=3, n=5``; the loss is cross-entropy plus the L2
    penalty, with batch norm in training mode and a fixed dropout mask.
    """
    from .corefhead import loss
    from .depgraph import sample_neighbors

    spec = ModelSpec(RgatConfig(d_bert=8, d=4, m=3, n=5, final=final, inner=inner), hidden=6, dropout=0.25)
    model = CorefModel.create(spec, seed)
    rng = np.random.Generator(np.random.PCG64(seed))
    features = []
    for k, heads in enumerate(([1, None, 1, 4, 1], [None, 0, 1, 1, 3])):
        g = DependencyGraph.from_heads(f"gc{k}", heads)
        inst = GapInstance(f"gc{k}", g.text, "t4", g.tokens[4].char_start, "t0", 0, "t2", g.tokens[2].char_start, "A" if k == 0 else "NEITHER")
        features.append(
            InstanceFeatures(inst, g, sample_neighbors(g, 4, seed + k), rng.standard_normal((8, 5)), MentionTokens((0,), (2, 3), (4,)))
        )
    batch = assemble(features)
    reg = model.regularizer(1e-2)

    def objective(nodes):
        logits, _ = model.forward(batch, nodes, training=True, rng=np.random.Generator(np.random.PCG64(seed + 99)))
        return loss(logits, batch.labels, reg, nodes)

    return nc.grad_check(objective, model.params, tol=tol)
