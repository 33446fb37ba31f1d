"""Corpus ingestion, vocabulary, embeddings, batching, synthetic data.

The corpus format is one JSON object per line with fields ``id``
(string), ``label`` (int in [1, C]), ``segments`` (non-empty array of
strings), optional ``segment_labels`` ("neg"|"neu"|"pos", evaluation
only) and optional ``kind`` ("sentence"|"edu"). Documents arrive
pre-segmented; a naive sentence splitter is provided as a convenience
for raw text and is approximate by design.
"""
from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParseError, ValidationError

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
POLARITY_LABELS = ("neg", "neu", "pos")
SEGMENT_KINDS = ("sentence", "edu")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")
_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")


def tokenize(text: str) -> list[str]:
    """Lowercased whitespace+punctuation tokenization."""
    return _TOKEN_RE.findall(text.lower())


def naive_sentence_split(text: str) -> list[str]:
    """Split raw text on ., ! or ? followed by whitespace. Approximate."""
    return [s for s in _SENTENCE_RE.split(text.strip()) if s]


@dataclass
class Segment:
    text: str
    tokens: list[str]
    gold: str | None = None  # evaluation-only polarity label
    token_ids: list[int] | None = None

    def __eq__(self, other):
        if not isinstance(other, Segment):
            return NotImplemented
        return (self.text, self.tokens, self.gold) == (other.text, other.tokens, other.gold)


@dataclass
class Document:
    id: str
    label: int
    segments: list[Segment]
    kind: str = "sentence"

    def __eq__(self, other):
        if not isinstance(other, Document):
            return NotImplemented
        return (self.id, self.label, self.kind, self.segments) == (
            other.id,
            other.label,
            other.kind,
            other.segments,
        )

    def word_count(self) -> int:
        return sum(len(s.tokens) for s in self.segments)

    def to_json(self) -> dict:
        obj = {
            "id": self.id,
            "label": self.label,
            "segments": [s.text for s in self.segments],
        }
        if any(s.gold is not None for s in self.segments):
            obj["segment_labels"] = [s.gold for s in self.segments]
        obj["kind"] = self.kind
        return obj


def make_segment(text: str, gold: str | None = None, where: str = "segment") -> Segment:
    tokens = tokenize(text)
    if not tokens:
        raise ValidationError(f"{where}: segment tokenizes to nothing: {text!r}")
    return Segment(text=text, tokens=tokens, gold=gold)


def document_from_json(obj: dict, num_classes: int, where: str = "document") -> Document:
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected a JSON object")
    try:
        doc_id = obj["id"]
        label = obj["label"]
        segments = obj["segments"]
    except KeyError as exc:
        raise ParseError(f"{where}: missing field {exc}") from None
    if not isinstance(doc_id, str) or not doc_id:
        raise ParseError(f"{where}: 'id' must be a non-empty string")
    if not isinstance(label, int) or isinstance(label, bool):
        raise ParseError(f"{where}: 'label' must be an integer")
    if not 1 <= label <= num_classes:
        raise ValidationError(f"{where}: label {label} outside [1, {num_classes}]")
    if not isinstance(segments, list) or not segments:
        raise ValidationError(f"{where}: 'segments' must be a non-empty array")
    golds = obj.get("segment_labels")
    if golds is not None:
        if not isinstance(golds, list) or len(golds) != len(segments):
            raise ValidationError(f"{where}: 'segment_labels' length mismatch")
        for g in golds:
            if g not in POLARITY_LABELS:
                raise ValidationError(f"{where}: bad segment label {g!r}")
    else:
        golds = [None] * len(segments)
    kind = obj.get("kind", "sentence")
    if kind not in SEGMENT_KINDS:
        raise ValidationError(f"{where}: bad segmentation kind {kind!r}")
    segs = [make_segment(t, g, where) for t, g in zip(segments, golds)]
    return Document(id=doc_id, label=label, segments=segs, kind=kind)


def load_corpus(path, num_classes: int) -> list[Document]:
    """Read a JSONL corpus; parse errors carry the offending line number."""
    docs = []
    seen_ids = set()
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            where = f"{path}: line {lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{where}: {exc.msg}") from None
            doc = document_from_json(obj, num_classes, where)
            if doc.id in seen_ids:
                raise ValidationError(f"{where}: duplicate document id {doc.id!r}")
            seen_ids.add(doc.id)
            docs.append(doc)
    return docs


def save_corpus(docs, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for doc in docs:
            handle.write(json.dumps(doc.to_json()) + "\n")


class Vocabulary:
    """Dense token ids; id 0 is reserved for padding, id 1 for unknown.

    The padding id maps to the all-zero embedding row, which never
    receives a gradient update.
    """

    pad_id = 0
    unk_id = 1

    def __init__(self, tokens, embedding_dim: int | None = None):
        self._token_to_id: dict[str, int] = {PAD_TOKEN: 0, UNK_TOKEN: 1}
        for tok in tokens:
            if tok in self._token_to_id:
                raise ValidationError(f"duplicate or reserved token {tok!r}")
            self._token_to_id[tok] = len(self._token_to_id)
        self.embedding_dim = embedding_dim

    def __len__(self) -> int:
        return len(self._token_to_id)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def id_for(self, token: str) -> int:
        return self._token_to_id.get(token, self.unk_id)

    def encode(self, tokens) -> list[int]:
        get = self._token_to_id.get
        unk = self.unk_id
        return [get(t, unk) for t in tokens]

    @property
    def tokens(self) -> list[str]:
        """Non-reserved tokens in id order (for checkpoint round-trips)."""
        return list(self._token_to_id)[2:]


def build_vocab(docs, min_count: int = 2, embedding_dim: int | None = None) -> Vocabulary:
    """Keep tokens with corpus frequency >= min_count; the rest map to unknown."""
    if not docs:
        raise ValidationError("cannot build a vocabulary from an empty corpus")
    counts = Counter()
    for doc in docs:
        for seg in doc.segments:
            counts.update(seg.tokens)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(kept, embedding_dim=embedding_dim)


def encode_corpus(docs, vocab: Vocabulary) -> None:
    for doc in docs:
        for seg in doc.segments:
            seg.token_ids = vocab.encode(seg.tokens)


@dataclass
class EmbeddingTable:
    matrix: np.ndarray  # (vocab size, dim)
    trainable: bool = True

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ValidationError("embedding matrix must be 2-d")


def random_embeddings(vocab: Vocabulary, dim: int, rng=None, trainable: bool = True) -> EmbeddingTable:
    rng = rng or np.random.default_rng(0)
    matrix = rng.uniform(-0.1, 0.1, size=(len(vocab), dim))
    matrix[vocab.pad_id] = 0.0
    return EmbeddingTable(matrix=matrix, trainable=trainable)


def load_embeddings(path, vocab: Vocabulary, rng=None, trainable: bool = True) -> EmbeddingTable:
    """Parse word2vec text format ("token v1 ... vk", optional "count dim" header).

    Rows for in-vocabulary tokens are copied; vocabulary tokens absent
    from the file get seeded uniform values in [-0.1, 0.1].
    """
    rng = rng or np.random.default_rng(0)
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2:
                try:
                    int(parts[0]), int(parts[1])
                except ValueError:
                    pass
                else:
                    dim = int(parts[1])
                    continue
            token, values = parts[0], parts[1:]
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError:
                raise FormatError(f"{path}: line {lineno}: non-numeric vector entry") from None
            if dim is None:
                dim = len(vec)
            if len(vec) != dim or dim == 0:
                raise FormatError(
                    f"{path}: line {lineno}: expected {dim} values, got {len(vec)}"
                )
            if token in vocab:
                vectors[token] = vec
    if dim is None:
        raise FormatError(f"{path}: no embedding vectors found")
    if vocab.embedding_dim is not None and vocab.embedding_dim != dim:
        raise FormatError(
            f"{path}: dimension {dim} does not match vocabulary dimension {vocab.embedding_dim}"
        )
    matrix = rng.uniform(-0.1, 0.1, size=(len(vocab), dim))
    matrix[vocab.pad_id] = 0.0
    for token, vec in vectors.items():
        matrix[vocab.id_for(token)] = vec
    vocab.embedding_dim = dim
    return EmbeddingTable(matrix=matrix, trainable=trainable)


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    """Documents padded to a common segment count and segment length.

    ``seg_lengths`` holds each segment's effective length (true token
    count, raised to the minimum segment length) and 0 for padding
    segments, so downstream masking can reproduce unbatched outputs
    exactly.
    """

    docs: list[Document]
    token_ids: np.ndarray  # (B, m_max, n_max) int
    seg_lengths: np.ndarray  # (B, m_max) int
    doc_lengths: np.ndarray  # (B,) int
    labels: np.ndarray  # (B,) int, 1-based

    @property
    def size(self) -> int:
        return len(self.docs)

    def live_mask(self) -> np.ndarray:
        m_max = self.token_ids.shape[1]
        return np.arange(m_max)[None, :] < self.doc_lengths[:, None]


def batch_documents(docs, min_segment_len: int = 1, pad_id: int = 0) -> Batch:
    """Pad a group of encoded documents into one batch."""
    if not docs:
        raise ValidationError("cannot batch zero documents")
    for doc in docs:
        for seg in doc.segments:
            if seg.token_ids is None:
                raise ValidationError(f"document {doc.id!r} is not encoded; call encode_corpus")
    m_max = max(len(d.segments) for d in docs)
    n_max = max(
        max(max(len(s.token_ids), min_segment_len) for s in d.segments) for d in docs
    )
    b = len(docs)
    token_ids = np.full((b, m_max, n_max), pad_id, dtype=np.intp)
    seg_lengths = np.zeros((b, m_max), dtype=np.intp)
    for i, doc in enumerate(docs):
        for j, seg in enumerate(doc.segments):
            ids = seg.token_ids
            token_ids[i, j, : len(ids)] = ids
            seg_lengths[i, j] = max(len(ids), min_segment_len)
    return Batch(
        docs=list(docs),
        token_ids=token_ids,
        seg_lengths=seg_lengths,
        doc_lengths=np.array([len(d.segments) for d in docs], dtype=np.intp),
        labels=np.array([d.label for d in docs], dtype=np.intp),
    )


def make_batches(docs, batch_size: int, min_segment_len: int = 1, rng=None) -> list[Batch]:
    """Chunk documents into padded batches, minimizing padding.

    Documents are sorted by (segment count, longest segment) before
    chunking; the batch order is shuffled when a generator is supplied
    (one shuffle per call, i.e. per epoch).
    """
    if batch_size < 1:
        raise ValidationError(f"batch size {batch_size} must be >= 1")
    if not docs:
        raise ValidationError("cannot batch an empty corpus")
    order = sorted(
        docs,
        key=lambda d: (len(d.segments), max(len(s.tokens) for s in d.segments), d.id),
    )
    batches = [
        batch_documents(order[i : i + batch_size], min_segment_len=min_segment_len)
        for i in range(0, len(order), batch_size)
    ]
    if rng is not None:
        rng.shuffle(batches)
    return batches


# ---------------------------------------------------------------------------
# synthetic corpus


def label_from_polarities(polarities, num_classes: int) -> int:
    """Map the mean planted polarity in [-1, 1] linearly onto [1, C].

    Neutral plants carry no opinion and do not dilute the mean, the way
    a review's rating reflects its opinionated statements rather than
    its filler; an all-neutral document sits at the middle of the
    scale. Rounding is half-even so that mirror-image documents land
    on mirror-image labels.
    """
    opinions = [p for p in polarities if p != 0]
    mean = float(np.mean(opinions)) if opinions else 0.0
    position = (mean + 1.0) / 2.0 * (num_classes - 1)
    return 1 + round(position)


def _token_pools(pool_size: int, filler_size: int) -> dict:
    return {
        -1: [f"bad_{i}" for i in range(pool_size)],
        0: [f"plain_{i}" for i in range(pool_size)],
        1: [f"good_{i}" for i in range(pool_size)],
        "filler": [f"word_{i}" for i in range(filler_size)],
    }


def generate_synthetic(
    num_docs: int,
    num_classes: int = 5,
    seed: int = 0,
    min_segments: int = 3,
    max_segments: int = 12,
    min_tokens: int = 3,
    max_tokens: int = 8,
    pool_size: int = 40,
    filler_size: int = 180,
    pool_word_rate: float = 0.9,
    neutral_rate: float = 0.35,
    neutral_tilt: float = 0.95,
    mirrored: bool = True,
) -> list[Document]:
    """Deterministic synthetic review corpus with planted segment polarities.

    Each document draws a latent positivity u in [0, 1]; segments are
    planted positive with probability proportional to u and negative
    otherwise, apart from a neutral fraction drawn from its own token
    pool plus shared filler. The document label is the planted-polarity
    mean over the opinionated segments mapped onto [1, C], so positive
    classes contain monotonically more positive segments while neutral
    filler stays label-irrelevant. ``neutral_tilt`` thins neutral segments out
    of mid-scale documents, where a document-wide score cannot tell
    them apart from mixed polarity. With ``mirrored``, every document
    is emitted together with its polarity-reversed twin (opinion pools
    swapped, label reflected), which balances the classes exactly and
    removes sampling skew between the poles.
    """
    if num_classes < 2:
        raise ValidationError(f"num_classes {num_classes} must be >= 2")
    if num_docs < 1:
        raise ValidationError("num_docs must be >= 1")
    rng = np.random.default_rng(seed)
    pools = _token_pools(pool_size, filler_size)
    names = {-1: "neg", 0: "neu", 1: "pos"}

    def build_doc(index, plants, token_lists):
        segments = [
            Segment(text=" ".join(toks), tokens=toks, gold=names[plant])
            for plant, toks in zip(plants, token_lists)
        ]
        return Document(
            id=f"synth-{seed}-{index:05d}",
            label=label_from_polarities(plants, num_classes),
            segments=segments,
        )

    def mirror_token(token):
        if token.startswith("good_"):
            return "bad_" + token[5:]
        if token.startswith("bad_"):
            return "good_" + token[4:]
        return token

    docs = []
    while len(docs) < num_docs:
        # review sentiment is bimodal: clearly polarized documents are
        # more common than perfectly mixed ones
        u = rng.beta(0.4, 0.4)
        m = int(rng.integers(min_segments, max_segments + 1))
        extremity = abs(2.0 * u - 1.0)
        nu = neutral_rate * (1.0 - neutral_tilt * (1.0 - extremity * extremity))
        plants = []
        token_lists = []
        for _ in range(m):
            roll = rng.random()
            if roll < nu:
                plant = 0
            elif rng.random() < u:
                plant = 1
            else:
                plant = -1
            plants.append(plant)
            n_tokens = int(rng.integers(min_tokens, max_tokens + 1))
            pool = pools[plant]
            token_lists.append(
                [
                    pool[rng.integers(len(pool))]
                    if rng.random() < pool_word_rate
                    else pools["filler"][rng.integers(filler_size)]
                    for _ in range(n_tokens)
                ]
            )
        docs.append(build_doc(len(docs), plants, token_lists))
        if mirrored and len(docs) < num_docs:
            flipped = [[mirror_token(t) for t in toks] for toks in token_lists]
            docs.append(build_doc(len(docs), [-p for p in plants], flipped))
    return docs


def segments_as_documents(docs) -> list[Document]:
    """Explode gold-labeled segments into single-segment documents.

    Used to train the fully supervised segment classifier: each segment
    becomes a one-segment bag labeled 1..3 by its polarity annotation.
    """
    out = []
    for doc in docs:
        for j, seg in enumerate(doc.segments):
            if seg.gold is None:
                raise ValidationError(f"document {doc.id!r} segment {j} has no polarity label")
            out.append(
                Document(
                    id=f"{doc.id}#{j}",
                    label=POLARITY_LABELS.index(seg.gold) + 1,
                    segments=[seg],
                    kind=doc.kind,
                )
            )
    return out
