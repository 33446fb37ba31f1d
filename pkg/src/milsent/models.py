"""Model assembly: multiple-instance network, hierarchical network, Seg-CNN.

The multiple-instance model (``milnet``) classifies every segment with a
shared softmax head and aggregates the segment distributions into a
document distribution through attention weights computed over
bidirectional GRU states of the segment vectors. The hierarchical
model (``hiernet``) instead attends over the GRU states to build one
document vector and classifies that. ``segcnn`` is the fully
supervised segment classifier over three polarity classes.

In average mode attention is disabled: live segments share uniform
weight 1/m. For ``milnet`` this removes the GRU and attention
parameters entirely; ``hiernet`` keeps its GRU (the document vector is
built from GRU states) and drops only the attention parameters.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import layers
from .autodiff import Tensor
from .data import Batch, Document, Segment, Vocabulary, batch_documents, make_batches
from .errors import FormatError, ShapeError, ValidationError

MODEL_KINDS = ("milnet", "hiernet", "segcnn")
ATTENTION_MODES = ("attention", "average")

CHECKPOINT_MAGIC = "milsent.checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    kind: str = "milnet"
    attention_mode: str = "attention"
    num_classes: int = 5
    vocab_size: int = 0
    embedding_dim: int = 300
    windows: tuple[int, ...] = (3, 4, 5)
    feature_maps: int = 100
    gru_hidden: int = 50
    attention_dim: int = 100
    dropout: float = 0.2
    recurrent_dropout: float = 0.1
    train_embeddings: bool = True
    seed: int = 0

    def __post_init__(self):
        self.windows = tuple(int(w) for w in self.windows)
        if self.kind not in MODEL_KINDS:
            raise ValidationError(f"unknown model kind {self.kind!r}")
        if self.attention_mode not in ATTENTION_MODES:
            raise ValidationError(f"unknown attention mode {self.attention_mode!r}")
        if self.kind == "segcnn" and self.num_classes != 3:
            raise ValidationError("segcnn classifies neg/neu/pos; num_classes must be 3")
        if self.num_classes < 2:
            raise ValidationError("num_classes must be >= 2")
        if min(self.windows) < 1:
            raise ValidationError("window sizes must be positive")

    @property
    def segment_dim(self) -> int:
        return self.feature_maps * len(self.windows)

    @property
    def uses_gru(self) -> bool:
        if self.kind == "segcnn":
            return False
        if self.kind == "hiernet":
            return True
        return self.attention_mode == "attention"

    @property
    def uses_attention(self) -> bool:
        return self.kind != "segcnn" and self.attention_mode == "attention"

    @property
    def classifier_input_dim(self) -> int:
        return 2 * self.gru_hidden if self.kind == "hiernet" else self.segment_dim


@dataclass
class ModelParams:
    config: ModelConfig
    embeddings: Tensor
    encoder: layers.ConvEncoderParams
    classifier: layers.ClassifierParams
    gru_fwd: layers.GruParams | None = None
    gru_bwd: layers.GruParams | None = None
    attention: layers.AttentionParams | None = None
    pad_id: int = 0

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        named = [("embeddings", self.embeddings)]
        for window, w, b in zip(self.encoder.windows, self.encoder.weights, self.encoder.biases):
            named += [(f"conv.w{window}", w), (f"conv.b{window}", b)]
        for prefix, gru in (("gru_fwd", self.gru_fwd), ("gru_bwd", self.gru_bwd)):
            if gru is not None:
                for gate in "zrh":
                    named += [
                        (f"{prefix}.w_{gate}", getattr(gru, f"w_{gate}")),
                        (f"{prefix}.u_{gate}", getattr(gru, f"u_{gate}")),
                        (f"{prefix}.b_{gate}", getattr(gru, f"b_{gate}")),
                    ]
        if self.attention is not None:
            named += [
                ("attention.w_a", self.attention.w_a),
                ("attention.b_a", self.attention.b_a),
                ("attention.key", self.attention.key),
            ]
        named += [("classifier.w", self.classifier.w), ("classifier.b", self.classifier.b)]
        return named

    def trainable_tensors(self) -> list[tuple[str, Tensor]]:
        skip = () if self.config.train_embeddings else ("embeddings",)
        return [(n, t) for n, t in self.named_tensors() if n not in skip]

    def decay_names(self) -> frozenset[str]:
        # weight decay regularizes the softmax classifier and the attention
        # parameters (MLP weight and key); biases stay undecayed
        names = {"classifier.w"}
        if self.attention is not None:
            names.update({"attention.w_a", "attention.key"})
        return frozenset(names)

    def zero_grads(self) -> None:
        for _, t in self.named_tensors():
            t.zero_grad()

    def zero_padding_gradient(self) -> None:
        """The padding embedding row stays all-zero: drop its gradient."""
        if self.embeddings.grad is not None:
            self.embeddings.grad[self.pad_id] = 0.0

    def copy(self) -> "ModelParams":
        clone = init_params(self.config, rng=np.random.default_rng(0))
        for (_, src), (_, dst) in zip(self.named_tensors(), clone.named_tensors()):
            dst.data = src.data.copy()
        return clone

    def parameter_counts(self) -> dict[str, int]:
        groups = {"embeddings": 0, "encoder": 0, "gru": 0, "attention": 0, "classifier": 0}
        for name, t in self.named_tensors():
            if name.startswith("conv."):
                groups["encoder"] += t.size
            elif name.startswith("gru_"):
                groups["gru"] += t.size
            elif name.startswith("attention."):
                groups["attention"] += t.size
            elif name.startswith("classifier."):
                groups["classifier"] += t.size
            else:
                groups["embeddings"] += t.size
        groups["total"] = sum(groups.values())
        return groups


def init_params(config: ModelConfig, rng=None, embedding_matrix=None) -> ModelParams:
    """Fresh parameters: Glorot-uniform matrices, zero biases, seeded."""
    if config.vocab_size < 2:
        raise ValidationError("config.vocab_size must cover the reserved ids")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    if embedding_matrix is not None:
        matrix = np.array(embedding_matrix, dtype=np.float64)
        if matrix.shape != (config.vocab_size, config.embedding_dim):
            raise ShapeError(
                f"embedding matrix {matrix.shape} does not match config "
                f"({config.vocab_size}, {config.embedding_dim})"
            )
    else:
        matrix = rng.uniform(-0.1, 0.1, size=(config.vocab_size, config.embedding_dim))
    matrix[Vocabulary.pad_id] = 0.0
    embeddings = ad.parameter(matrix, name="embeddings")
    encoder = layers.init_conv_encoder(config.embedding_dim, config.windows, config.feature_maps, rng)
    gru_fwd = gru_bwd = attention = None
    if config.uses_gru:
        gru_fwd = layers.init_gru(config.segment_dim, config.gru_hidden, rng, prefix="gru_fwd")
        gru_bwd = layers.init_gru(config.segment_dim, config.gru_hidden, rng, prefix="gru_bwd")
    if config.uses_attention:
        attention = layers.init_attention(2 * config.gru_hidden, config.attention_dim, rng)
    classifier = layers.init_classifier(config.classifier_input_dim, config.num_classes, rng)
    return ModelParams(
        config=config,
        embeddings=embeddings,
        encoder=encoder,
        classifier=classifier,
        gru_fwd=gru_fwd,
        gru_bwd=gru_bwd,
        attention=attention,
        pad_id=Vocabulary.pad_id,
    )


# ---------------------------------------------------------------------------
# forward passes


@dataclass
class BatchForward:
    """Graph outputs of one batched forward pass."""

    doc_probs: Tensor  # (B, C)
    attention: Tensor  # (B, m); constants in average mode
    live: np.ndarray  # (B, m) bool
    seg_probs: Tensor | None = None  # (B*m, C); None for hiernet
    doc_vectors: Tensor | None = None  # (B, 2h); hiernet only


def _uniform_weights(batch: Batch) -> Tensor:
    live = batch.live_mask().astype(np.float64)
    return Tensor(live / batch.doc_lengths[:, None])


def forward_batch(params: ModelParams, batch: Batch, train: bool = False, rng=None) -> BatchForward:
    cfg = params.config
    b, m, n = batch.token_ids.shape
    if n < max(cfg.windows):
        raise ShapeError(
            f"batch padded to {n} tokens; build batches with min_segment_len >= {max(cfg.windows)}"
        )
    live = batch.live_mask()
    vectors = layers.encode_segments_batch(
        params.embeddings,
        batch.token_ids.reshape(b * m, n),
        batch.seg_lengths.reshape(b * m),
        params.encoder,
    )
    vectors = ad.dropout(vectors, cfg.dropout, rng=rng, train=train)

    states = None
    if cfg.uses_gru:
        states = layers.bigru_states_batch(
            vectors, b, m, batch.doc_lengths, params.gru_fwd, params.gru_bwd,
            recurrent_dropout=cfg.recurrent_dropout, rng=rng, train=train,
        )
    if cfg.uses_attention:
        weights = layers.attention_weights_batch(states, b, m, live, params.attention)
    else:
        weights = _uniform_weights(batch)
    weight_col = ad.reshape(weights, (b * m, 1))

    if cfg.kind == "hiernet":
        doc_vectors = ad.sum_groups(ad.mul(states, weight_col), m)
        doc_vectors = ad.dropout(doc_vectors, cfg.dropout, rng=rng, train=train)
        doc_probs = layers.classify(doc_vectors, params.classifier)
        return BatchForward(doc_probs=doc_probs, attention=weights, live=live, doc_vectors=doc_vectors)

    seg_probs = layers.classify(vectors, params.classifier)  # shared head on all segments
    doc_probs = ad.sum_groups(ad.mul(seg_probs, weight_col), m)
    return BatchForward(doc_probs=doc_probs, attention=weights, live=live, seg_probs=seg_probs)


@dataclass
class MilNetOutput:
    """Per-segment class distributions, attention, and their weighted sum."""

    segment_probs: np.ndarray  # (m, C)
    attention: np.ndarray  # (m,)
    doc_probs: np.ndarray  # (C,)


@dataclass
class HierNetOutput:
    attention: np.ndarray  # (m,)
    doc_vector: np.ndarray  # (2h,)
    doc_probs: np.ndarray  # (C,)


def _single_doc_batch(doc: Document, config: ModelConfig) -> Batch:
    if not doc.segments:
        raise ValidationError(f"document {doc.id!r} has no segments")
    return batch_documents([doc], min_segment_len=max(config.windows))


def milnet_forward(doc: Document, params: ModelParams) -> MilNetOutput:
    if params.config.kind != "milnet":
        raise ValidationError(f"milnet_forward on a {params.config.kind} model")
    out = forward_batch(params, _single_doc_batch(doc, params.config))
    m = len(doc.segments)
    return MilNetOutput(
        segment_probs=out.seg_probs.data[:m].copy(),
        attention=out.attention.data[0, :m].copy(),
        doc_probs=out.doc_probs.data[0].copy(),
    )


def hiernet_forward(doc: Document, params: ModelParams) -> HierNetOutput:
    if params.config.kind != "hiernet":
        raise ValidationError(f"hiernet_forward on a {params.config.kind} model")
    out = forward_batch(params, _single_doc_batch(doc, params.config))
    m = len(doc.segments)
    return HierNetOutput(
        attention=out.attention.data[0, :m].copy(),
        doc_vector=out.doc_vectors.data[0].copy(),
        doc_probs=out.doc_probs.data[0].copy(),
    )


def segcnn_forward(segment: Segment, params: ModelParams) -> np.ndarray:
    """Class distribution over (neg, neu, pos) for one encoded segment."""
    if params.config.kind != "segcnn":
        raise ValidationError(f"segcnn_forward on a {params.config.kind} model")
    if segment.token_ids is None:
        raise ValidationError("segment is not encoded")
    ids = np.asarray(segment.token_ids, dtype=np.intp)
    rows = ad.gather_rows(params.embeddings, ids)
    vector = layers.encode_segment(rows, params.encoder)
    return layers.classify(vector, params.classifier).data.copy()


def document_nll(doc_probs, label: int) -> float:
    """Negative log likelihood of the document's observed class.

    The picked probability is clamped at 1e-12 before the log.
    """
    p = doc_probs.data if isinstance(doc_probs, Tensor) else np.asarray(doc_probs, dtype=np.float64)
    if p.ndim != 1:
        raise ShapeError("document_nll expects one distribution")
    if not 1 <= label <= p.shape[0]:
        raise ValidationError(f"label {label} outside [1, {p.shape[0]}]")
    return -float(np.log(max(p[label - 1], 1e-12)))


def nll_loss(doc_probs: Tensor, labels: np.ndarray, mean: bool = True) -> Tensor:
    """Differentiable batch NLL: -sum(log p[label]) (or the batch mean)."""
    picked = ad.pick(doc_probs, np.asarray(labels, dtype=np.intp) - 1)
    total = ad.mul(ad.sum_all(ad.log(ad.clip_min(picked, 1e-12))), -1.0)
    return ad.mul(total, 1.0 / picked.size) if mean else total


def predict_documents(params: ModelParams, docs, batch_size: int = 64) -> np.ndarray:
    """Most probable document label (1-based) per document, in input order."""
    preds = {}
    for batch in _eval_batches(docs, params.config, batch_size):
        out = forward_batch(params, batch)
        labels = out.doc_probs.data.argmax(axis=1) + 1
        for doc, label in zip(batch.docs, labels):
            preds[doc.id] = int(label)
    return np.array([preds[d.id] for d in docs])


@dataclass
class DocumentScores:
    """Eval-mode numpy outputs for one document."""

    doc: Document
    doc_probs: np.ndarray
    attention: np.ndarray
    segment_probs: np.ndarray | None


def batch_outputs(params: ModelParams, docs, batch_size: int = 64) -> list[DocumentScores]:
    """Forward a corpus in padded batches; results follow input order."""
    results = {}
    for batch in _eval_batches(docs, params.config, batch_size):
        out = forward_batch(params, batch)
        m = batch.token_ids.shape[1]
        for i, doc in enumerate(batch.docs):
            live = len(doc.segments)
            seg = None
            if out.seg_probs is not None:
                seg = out.seg_probs.data[i * m : i * m + live].copy()
            results[doc.id] = DocumentScores(
                doc=doc,
                doc_probs=out.doc_probs.data[i].copy(),
                attention=out.attention.data[i, :live].copy(),
                segment_probs=seg,
            )
    return [results[d.id] for d in docs]


def _eval_batches(docs, config: ModelConfig, batch_size: int):
    return make_batches(docs, batch_size, min_segment_len=max(config.windows))


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: ModelParams, vocab: Vocabulary | None = None) -> None:
    """Single-file checkpoint: one JSON header line, then raw float64 data."""
    named = params.named_tensors()
    header = {
        "format": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "vocab": vocab.tokens if vocab is not None else None,
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in named],
    }
    with open(path, "wb") as handle:
        handle.write(json.dumps(header).encode("utf-8") + b"\n")
        for _, t in named:
            handle.write(np.ascontiguousarray(t.data).tobytes())


def load_checkpoint(path) -> tuple[ModelParams, Vocabulary | None]:
    with open(path, "rb") as handle:
        header_line = handle.readline()
        blob = handle.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError(f"{path}: not a checkpoint (bad header)") from None
    if header.get("format") != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {header.get('version')}")
    try:
        config = ModelConfig(**header["config"])
    except (TypeError, KeyError) as exc:
        raise FormatError(f"{path}: bad config in checkpoint: {exc}") from None
    params = init_params(config, rng=np.random.default_rng(0))
    named = params.named_tensors()
    listed = header.get("tensors", [])
    if [e["name"] for e in listed] != [n for n, _ in named]:
        raise FormatError(f"{path}: tensor names do not match the config's architecture")
    offset = 0
    for entry, (name, t) in zip(listed, named):
        shape = tuple(entry["shape"])
        if shape != t.shape:
            raise FormatError(f"{path}: tensor {name} has shape {shape}, expected {t.shape}")
        count = int(np.prod(shape)) if shape else 1
        chunk = blob[offset : offset + 8 * count]
        if len(chunk) != 8 * count:
            raise FormatError(f"{path}: truncated checkpoint data at {name}")
        t.data = np.frombuffer(chunk, dtype=np.float64).reshape(shape).copy()
        offset += 8 * count
    if offset != len(blob):
        raise FormatError(f"{path}: trailing bytes after tensor data")
    vocab = None
    if header.get("vocab") is not None:
        vocab = Vocabulary(header["vocab"], embedding_dim=config.embedding_dim)
        if len(vocab) != config.vocab_size:
            raise FormatError(f"{path}: vocabulary size does not match config")
    return params, vocab


# ---------------------------------------------------------------------------
# model-level gradient check


def _toy_config(kind: str, seed: int) -> ModelConfig:
    return ModelConfig(
        kind=kind,
        attention_mode="average" if kind == "segcnn" else "attention",
        num_classes=3,
        vocab_size=14,
        embedding_dim=8,
        windows=(2, 3),
        feature_maps=4,
        gru_hidden=5,
        attention_dim=6,
        dropout=0.0,
        recurrent_dropout=0.0,
        seed=seed,
    )


def _toy_docs(rng, num_docs=2, max_segments=4, vocab_size=14, num_classes=3):
    docs = []
    for d in range(num_docs):
        m = int(rng.integers(1, max_segments + 1))
        segs = []
        for _ in range(m):
            ids = rng.integers(2, vocab_size, size=int(rng.integers(2, 6))).tolist()
            segs.append(Segment(text="", tokens=["t"] * len(ids), token_ids=ids))
        docs.append(Document(id=f"toy-{d}", label=int(rng.integers(1, num_classes + 1)), segments=segs))
    return docs


def gradient_check(kind: str = "milnet", seed: int = 0, step: float = 1e-5) -> float:
    """Worst relative autodiff-vs-finite-difference error over all parameters.

    Runs the full batched forward (two documents, mixed lengths) at toy
    dimensions and differentiates the summed document NLL.
    """
    rng = np.random.default_rng(seed)
    config = _toy_config(kind, seed)
    docs = _toy_docs(rng, num_classes=config.num_classes)
    params = init_params(config, rng=rng)
    batch = batch_documents(docs, min_segment_len=max(config.windows))

    def loss() -> Tensor:
        out = forward_batch(params, batch)
        return nll_loss(out.doc_probs, batch.labels, mean=False)

    params.zero_grads()
    ad.backward(loss())
    worst = 0.0
    for name, tensor in params.named_tensors():
        numeric = ad.finite_difference(lambda: loss().item(), [tensor], step=step)[0]
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        worst = max(worst, ad.gradient_error(analytic, numeric))
    return worst
