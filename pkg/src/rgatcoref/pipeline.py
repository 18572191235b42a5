"""GAP ingestion, k-fold training with best-checkpoint selection, fold averaging and ablation."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import numcore as nc
from .corefhead import LABELS, GapInstance, locate_mentions, loss
from .corefmetrics import micro_f1
from .depgraph import DependencyGraph, derive_seed, read_conllu, sample_neighbors
from .embedstore import TokenEmbeddingTable, load_table, write_table
from .errors import (
    ConfigError,
    CoverageError,
    FormatError,
    LabelError,
    NumericalError,
    TrainingError,
    UsageError,
)
from .model import CorefModel, InstanceFeatures, ModelSpec, assemble
from .optim import AdamState, WarmupSchedule, adam_step, collect_grads, lr_at
from .rgat import FinalAggregator, RgatConfig

log = logging.getLogger(__name__)

GAP_COLUMNS = ("ID", "Text", "Pronoun", "Pronoun-offset", "A", "A-offset", "A-coref", "B", "B-offset", "B-coref")


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class TrainConfig:
    d: int = 256
    m: int = 10
    n: int = 20
    sample_size: int = 4
    final: str = "concat"
    inner: str = "sum"
    per_relation_attention: bool = False
    encoder: str = "rgat"
    rgcn_layers: int = 1
    l2: float = 1e-4
    lr: float = 1e-3
    warmup_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 30
    batch_size: int = 32
    dropout: float = 0.5
    hidden: int = 512
    bn_momentum: float = 0.9
    seed: int = 0
    folds: int = 5
    dtype: str = "float64"

    def __post_init__(self):
        FinalAggregator.parse(self.final)
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2 (batch norm), got {self.batch_size}")
        for name in ("d", "m", "n", "sample_size", "hidden", "rgcn_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.l2 < 0:
            raise ConfigError(f"l2 must be >= 0, got {self.l2}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ConfigError(f"warmup_fraction must lie in [0, 1], got {self.warmup_fraction}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def model_spec(self, d_bert: int) -> ModelSpec:
        rgat = RgatConfig(
            d_bert=d_bert,
            d=self.d,
            m=self.m,
            n=self.n,
            sample_size=self.sample_size,
            final=self.final,
            inner=self.inner,
            per_relation_attention=self.per_relation_attention,
        )
        return ModelSpec(rgat, self.hidden, self.dropout, self.bn_momentum, self.encoder, self.rgcn_layers)


# ---------------------------------------------------------------------------
# data


@dataclass
class Dataset:
    instances: list[GapInstance]
    graphs: dict[str, DependencyGraph]
    embeddings: TokenEmbeddingTable

    def __len__(self):
        return len(self.instances)

    def features(self, config: TrainConfig) -> list[InstanceFeatures]:
        """Per-instance inputs; neighbor samples are drawn once, seeded on the document id."""
        out = []
        for inst in self.instances:
            g = self.graphs[inst.doc_id]
            samples = sample_neighbors(g, config.sample_size, derive_seed(config.seed, "neighbors", g.doc_id))
            out.append(
                InstanceFeatures(
                    inst, g, samples, self.embeddings.matrix(g.doc_id, len(g), config.np_dtype), locate_mentions(inst, g)
                )
            )
        return out


def _parse_bool(value: str, row_id: str, column: str) -> bool:
    v = value.strip().upper()
    if v == "TRUE":
        return True
    if v == "FALSE":
        return False
    raise LabelError(f"row {row_id}: {column} must be TRUE or FALSE, got {value!r}")


def read_gap_tsv(path: str | Path) -> list[GapInstance]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        missing = [c for c in GAP_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise FormatError(f"{path}: missing column(s) {missing}")
        out, seen = [], set()
        for row in reader:
            rid = row["ID"]
            if rid in seen:
                raise FormatError(f"{path}: duplicate ID {rid!r}")
            seen.add(rid)
            a = _parse_bool(row["A-coref"], rid, "A-coref")
            b = _parse_bool(row["B-coref"], rid, "B-coref")
            if a and b:
                raise LabelError(f"row {rid}: A-coref and B-coref are both TRUE")
            try:
                offsets = [int(row[c]) for c in ("Pronoun-offset", "A-offset", "B-offset")]
            except (TypeError, ValueError):
                raise FormatError(f"row {rid}: offsets must be integers") from None
            out.append(
                GapInstance(
                    doc_id=rid,
                    text=row["Text"],
                    pronoun=row["Pronoun"],
                    pronoun_offset=offsets[0],
                    a_text=row["A"],
                    a_offset=offsets[1],
                    b_text=row["B"],
                    b_offset=offsets[2],
                    label="A" if a else "B" if b else "NEITHER",
                )
            )
    return out


def write_gap_tsv(instances: Sequence[GapInstance], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", quoting=csv.QUOTE_NONE, lineterminator="\n", escapechar="\\")
        w.writerow(GAP_COLUMNS)
        for x in instances:
            w.writerow(
                [x.doc_id, x.text, x.pronoun, x.pronoun_offset, x.a_text, x.a_offset,
                 str(x.label == "A").upper(), x.b_text, x.b_offset, str(x.label == "B").upper()]
            )


def build_dataset(
    instances: Sequence[GapInstance], graphs: Iterable[DependencyGraph], embeddings: TokenEmbeddingTable
) -> Dataset:
    """Cross-check instances, graphs and embeddings; raises CoverageError listing what is missing."""
    by_id = {g.doc_id: g for g in graphs}
    no_graph = [x.doc_id for x in instances if x.doc_id not in by_id]
    if no_graph:
        raise CoverageError(f"no dependency graph for ID(s): {', '.join(no_graph)}")
    no_emb = [x.doc_id for x in instances if embeddings.missing(by_id[x.doc_id])]
    if no_emb:
        raise CoverageError(f"incomplete embeddings for ID(s): {', '.join(no_emb)}")
    for x in instances:
        locate_mentions(x, by_id[x.doc_id])
    return Dataset(list(instances), by_id, embeddings)


def ingest_gap(tsv_path, conllu_path, embedding_path) -> Dataset:
    return build_dataset(read_gap_tsv(tsv_path), read_conllu(conllu_path), load_table(embedding_path))


def save_dataset(dataset: Dataset, out_dir: str | Path, conllu_path: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_gap_tsv(dataset.instances, out / "gap.tsv")
    shutil.copyfile(conllu_path, out / "graphs.conllu")
    write_table(dataset.embeddings, out / "embeddings.rgeb")
    manifest = {"instances": len(dataset), "graphs": len(dataset.graphs), "embedding_dim": dataset.embeddings.dim}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_dataset(data_dir: str | Path) -> Dataset:
    d = Path(data_dir)
    for name in ("gap.tsv", "graphs.conllu", "embeddings.rgeb"):
        if not (d / name).exists():
            raise FormatError(f"{d}: not a dataset directory (missing {name})")
    return ingest_gap(d / "gap.tsv", d / "graphs.conllu", d / "embeddings.rgeb")


# ---------------------------------------------------------------------------
# cross-validation


def kfold_split(n: int, folds: int, seed: int = 0) -> list[np.ndarray]:
    """Validation index sets: seeded shuffle, then contiguous parts; earlier parts absorb the remainder."""
    if folds < 2:
        raise UsageError(f"need at least 2 folds, got {folds}")
    if folds > n:
        raise UsageError(f"cannot split {n} instances into {folds} folds")
    order = np.random.Generator(np.random.PCG64(derive_seed(seed, "kfold"))).permutation(n)
    base, extra = divmod(n, folds)
    parts, start = [], 0
    for k in range(folds):
        size = base + (1 if k < extra else 0)
        parts.append(np.sort(order[start : start + size]))
        start += size
    return parts


@dataclass
class FoldResult:
    fold: int
    checkpoint: bytes
    best_epoch: int
    val_f1: float
    train_f1: float
    val_indices: np.ndarray
    val_probs: np.ndarray
    test_probs: np.ndarray | None = None
    history: list[float] = field(default_factory=list)


def _batches(n: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    chunks = [order[i : i + size] for i in range(0, n, size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def labels_from_probs(probs: np.ndarray) -> list[str]:
    """Argmax over ``[A, B, NEITHER]``; exact ties prefer NEITHER, then A, then B."""
    preference = (2, 0, 1)
    out = []
    for row in np.asarray(probs):
        best = max(preference, key=lambda c: (row[c], -preference.index(c)))
        out.append(LABELS[best])
    return out


def _f1(features: Sequence[InstanceFeatures], probs: np.ndarray) -> float:
    return micro_f1([f.instance.label for f in features], labels_from_probs(probs))[2]


def train_fold(
    features: Sequence[InstanceFeatures],
    val_indices: np.ndarray,
    config: TrainConfig,
    fold: int = 0,
    test_features: Sequence[InstanceFeatures] | None = None,
) -> FoldResult:
    """Train on everything outside ``val_indices``; keep the epoch with the best validation micro-F1."""
    val_set = set(int(i) for i in val_indices)
    train = [f for i, f in enumerate(features) if i not in val_set]
    val = [features[i] for i in sorted(val_set)]
    if len(train) < 2:
        raise UsageError(f"fold {fold}: need at least 2 training instances, got {len(train)}")
    if not val:
        raise UsageError(f"fold {fold}: empty validation set")

    d_bert = train[0].u_out.shape[0]
    spec = config.model_spec(d_bert)
    dtype = config.np_dtype
    model = CorefModel.create(spec, derive_seed(config.seed, "init", fold), dtype)
    reg = model.regularizer(config.l2)
    rng = np.random.Generator(np.random.PCG64(derive_seed(config.seed, "train", fold)))

    per_epoch = len(_batches(len(train), config.batch_size, np.random.default_rng(0)))
    schedule = WarmupSchedule.from_fraction(config.lr, config.epochs * per_epoch, config.warmup_fraction)
    adam = AdamState(config.beta1, config.beta2, config.adam_eps, config.lr)

    best_score, best_epoch, best_bytes, history = -1.0, 0, b"", []
    step = 0
    for epoch in range(1, config.epochs + 1):
        for chunk in _batches(len(train), config.batch_size, rng):
            step += 1
            batch = assemble([train[i] for i in chunk], dtype)
            leaves = model.leaves()
            try:
                logits, _ = model.forward(batch, leaves, training=True, rng=rng)
                objective = loss(logits, batch.labels, reg, leaves)
                nc.backward(objective)
                adam_step(model.params, collect_grads(leaves), adam, lr_at(step, schedule))
            except NumericalError as exc:
                log.error("fold %d epoch %d step %d diverged on batch %s", fold, epoch, step, batch.ids)
                raise TrainingError(f"training diverged at fold {fold}, epoch {epoch}, step {step}: {exc}") from exc
        try:
            snapshot = model.to_bytes()
        except NumericalError as exc:
            raise TrainingError(f"training diverged at fold {fold}, epoch {epoch}: {exc}") from exc
        frozen = CorefModel.from_bytes(spec, snapshot, dtype)
        score = _f1(val, frozen.predict_proba(val))
        history.append(score)
        log.debug("fold %d epoch %d val micro-F1 %.4f", fold, epoch, score)
        if score > best_score:
            best_score, best_epoch, best_bytes = score, epoch, snapshot

    best = CorefModel.from_bytes(spec, best_bytes, dtype)
    val_probs = best.predict_proba(val)
    return FoldResult(
        fold=fold,
        checkpoint=best_bytes,
        best_epoch=best_epoch,
        val_f1=_f1(val, val_probs),
        train_f1=_f1(train, best.predict_proba(train)),
        val_indices=np.array(sorted(val_set)),
        val_probs=val_probs,
        test_probs=best.predict_proba(test_features) if test_features is not None else None,
        history=history,
    )


def average_predictions(prob_sets: Sequence[np.ndarray]) -> tuple[list[str], np.ndarray]:
    """Mean of per-fold probability matrices and the tie-broken argmax labels."""
    if not prob_sets:
        raise UsageError("no fold predictions to average")
    shapes = {np.shape(p) for p in prob_sets}
    if len(shapes) != 1:
        raise UsageError(f"fold predictions disagree in shape: {sorted(shapes)}")
    mean = np.mean(np.stack([np.asarray(p, dtype=np.float64) for p in prob_sets]), axis=0)
    return labels_from_probs(mean), mean


@dataclass
class CVResult:
    config: TrainConfig
    folds: list[FoldResult]
    oof_probs: np.ndarray
    test_labels: list[str] | None = None
    test_probs: np.ndarray | None = None
    gold: list[str] = field(default_factory=list)

    @property
    def oof_f1(self) -> float:
        return micro_f1(self.gold, labels_from_probs(self.oof_probs))[2]

    def report(self) -> dict:
        return {
            "folds": [
                {"fold": f.fold, "best_epoch": f.best_epoch, "val_micro_f1": f.val_f1, "train_micro_f1": f.train_f1}
                for f in self.folds
            ],
            "oof_micro_f1": self.oof_f1,
        }


def cross_validate(
    dataset: Dataset,
    config: TrainConfig,
    test: Dataset | None = None,
) -> CVResult:
    features = dataset.features(config)
    test_features = test.features(config) if test is not None else None
    results = [
        train_fold(features, val_idx, config, fold, test_features)
        for fold, val_idx in enumerate(kfold_split(len(features), config.folds, config.seed))
    ]
    oof = np.zeros((len(features), len(LABELS)))
    for r in results:
        oof[r.val_indices] = r.val_probs
    cv = CVResult(config, results, oof, gold=[x.label for x in dataset.instances])
    if test_features is not None:
        cv.test_labels, cv.test_probs = average_predictions([r.test_probs for r in results])
    return cv


# ---------------------------------------------------------------------------
# model directories and prediction files


def save_models(cv: CVResult, out_dir: str | Path, d_bert: int) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = dict(cv.config.to_dict(), d_bert=d_bert)
    (out / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    for r in cv.folds:
        (out / f"fold{r.fold}.rgck").write_bytes(r.checkpoint)
    (out / "report.json").write_text(json.dumps(cv.report(), indent=2, sort_keys=True) + "\n")


def load_models(model_dir: str | Path) -> tuple[TrainConfig, list[CorefModel]]:
    d = Path(model_dir)
    if not (d / "config.json").exists():
        raise FormatError(f"{d}: missing config.json")
    raw = json.loads((d / "config.json").read_text())
    d_bert = raw.pop("d_bert", None)
    if d_bert is None:
        raise FormatError(f"{d}/config.json: missing d_bert")
    config = TrainConfig.from_dict(raw)
    spec = config.model_spec(int(d_bert))
    paths = sorted(d.glob("fold*.rgck"), key=lambda p: int(p.stem[4:]))
    if not paths:
        raise FormatError(f"{d}: no fold checkpoints")
    return config, [CorefModel.from_bytes(spec, p.read_bytes(), config.np_dtype) for p in paths]


def predict(dataset: Dataset, config: TrainConfig, models: Sequence[CorefModel]) -> tuple[list[str], np.ndarray]:
    features = dataset.features(config)
    return average_predictions([m.predict_proba(features) for m in models])


def write_predictions(path: str | Path, ids: Sequence[str], probs: np.ndarray, labels: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("ID\tp_A\tp_B\tp_NEITHER\tpredicted_label\n")
        for rid, row, label in zip(ids, probs, labels):
            fh.write(f"{rid}\t{float(row[0])!r}\t{float(row[1])!r}\t{float(row[2])!r}\t{label}\n")


def read_predictions(path: str | Path) -> dict[str, tuple[np.ndarray, str]]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        need = ("ID", "p_A", "p_B", "p_NEITHER", "predicted_label")
        if any(c not in (reader.fieldnames or ()) for c in need):
            raise FormatError(f"{path}: prediction header must be {' '.join(need)}")
        for row in reader:
            label = row["predicted_label"]
            if label not in LABELS:
                raise LabelError(f"{path}: row {row['ID']}: unknown label {label!r}")
            out[row["ID"]] = (np.array([float(row["p_A"]), float(row["p_B"]), float(row["p_NEITHER"])]), label)
    return out


def score_predictions(gold: Sequence[GapInstance], pred: dict[str, tuple[np.ndarray, str]]) -> tuple[float, float, float]:
    missing = [x.doc_id for x in gold if x.doc_id not in pred]
    if missing:
        raise CoverageError(f"no prediction for ID(s): {', '.join(missing)}")
    return micro_f1([x.label for x in gold], [pred[x.doc_id][1] for x in gold])


# ---------------------------------------------------------------------------
# ablation

ABLATION_DIMS = ((5, 10), (10, 20), (30, 60))
ABLATION_LINKS = ("Mean/Sum", "Concat")
_LINK_MODE = {"mean/sum": "sum", "sum": "sum", "mean": "mean", "concat": "concat"}


@dataclass(frozen=True)
class AblationRow:
    m: int
    n: int
    link: str
    mode: str
    micro_f1: float
    word_width: int
    seconds: float


def run_ablation(
    dataset: Dataset,
    config: TrainConfig,
    dims: Sequence[tuple[int, int]] = ABLATION_DIMS,
    links: Sequence[str] = ABLATION_LINKS,
    test: Dataset | None = None,
) -> list[AblationRow]:
    """One cross-validated run per (m, n) x link cell.

    The score is the averaged test micro-F1 when ``test`` is given, otherwise
    the out-of-fold micro-F1 on ``dataset``.  A ``Mean/Sum`` cell trains with sum.
    """
    rows = []
    for link in links:
        mode = _LINK_MODE.get(link.lower())
        if mode is None:
            raise ConfigError(f"unknown link {link!r}; use Mean/Sum, Mean, Sum or Concat")
        for m, n in dims:
            cell = config.replace(m=m, n=n, final=mode)
            started = time.perf_counter()
            cv = cross_validate(dataset, cell, test)
            seconds = time.perf_counter() - started
            if test is not None:
                score = micro_f1([x.label for x in test.instances], cv.test_labels)[2]
            else:
                score = cv.oof_f1
            width = cell.model_spec(dataset.embeddings.dim).blend_dim
            rows.append(AblationRow(m, n, link, mode, score, width, seconds))
            log.info("ablation m=%d n=%d %s: micro-F1 %.4f (%.1fs)", m, n, link, score, seconds)
    return rows


def format_ablation(rows: Sequence[AblationRow], with_timing: bool = False) -> str:
    header = ["Model", "Type dim (m, n)", "The way of link", "F1-score", "Per-word width"]
    if with_timing:
        header.append("Seconds")
    lines = ["\t".join(header)]
    for r in rows:
        cells = ["RGAT-with-BERT", f"{r.m},{r.n}", r.link, f"{100 * r.micro_f1:.1f}%", str(r.word_width)]
        if with_timing:
            cells.append(f"{r.seconds:.2f}")
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"

