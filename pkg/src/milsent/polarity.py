"""Polarity scores, attention gating, discretization, opinion extraction.

A class distribution over the ordered labelset maps to a single score
in [-1, 1]: the dot product with a uniformly spaced class-weight vector
whose entries step by 2/(C-1) from -1 to +1. Gating multiplies the
score by the segment's attention weight, pulling segments the model
does not attend to toward 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Document
from .errors import ShapeError, ValidationError


def class_weights(num_classes: int) -> np.ndarray:
    """Uniformly spaced weights over the ordered labelset, from -1 to +1.

    For five classes this is <-1, -0.5, 0, 0.5, 1>.
    """
    if num_classes < 2:
        raise ValidationError(f"need at least 2 classes, got {num_classes}")
    return np.linspace(-1.0, 1.0, num_classes)


def polarity(probs, weights) -> float:
    """Dot product of a class distribution with the class-weight vector."""
    p = np.asarray(probs, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if p.shape != w.shape:
        raise ShapeError(f"distribution {p.shape} vs weights {w.shape}")
    return float(p @ w)


def gated_polarity(attention: float, score: float) -> float:
    if attention < 0:
        raise ValidationError(f"attention weight {attention} must be non-negative")
    return attention * score


def document_polarity_broadcast(doc_probs, attention, weights, gated: bool = False) -> np.ndarray:
    """Assign the document-level polarity to every segment.

    Non-gated, all segments share one identical score; the gated
    variant multiplies each copy by its own attention weight.
    """
    base = polarity(doc_probs, weights)
    a = np.asarray(attention, dtype=np.float64)
    return a * base if gated else np.full(a.shape, base)


@dataclass(frozen=True)
class Thresholds:
    t1: float
    t2: float

    def __post_init__(self):
        if not -1.0 <= self.t1 <= self.t2 <= 1.0:
            raise ValidationError(f"thresholds ({self.t1}, {self.t2}) must satisfy -1 <= t1 <= t2 <= 1")


def discretize(score: float, thresholds: Thresholds) -> str:
    """negative below t1, positive above t2, neutral otherwise (boundaries included)."""
    if score < thresholds.t1:
        return "neg"
    if score > thresholds.t2:
        return "pos"
    return "neu"


def discretize_many(scores, thresholds: Thresholds) -> list[str]:
    s = np.asarray(scores, dtype=np.float64)
    out = np.where(s < thresholds.t1, "neg", np.where(s > thresholds.t2, "pos", "neu"))
    return out.tolist()


@dataclass
class SegmentVerdict:
    """Everything the extractor needs to know about one segment."""

    index: int
    polarity: float
    gated_polarity: float
    attention: float
    source: str  # "segment" | "document"
    class_probs: np.ndarray | None = None
    label: str | None = None


def segment_verdicts(doc_probs, attention, weights, segment_probs=None,
                     source: str = "segment") -> list[SegmentVerdict]:
    """Score every segment of one document.

    ``source="segment"`` uses per-segment distributions (multiple-
    instance models); ``source="document"`` broadcasts the document
    distribution, the only option for models without segment
    predictions.
    """
    a = np.asarray(attention, dtype=np.float64)
    if source == "segment":
        if segment_probs is None:
            raise ValidationError("segment-level scoring needs segment distributions")
        probs = np.asarray(segment_probs, dtype=np.float64)
        if probs.shape[0] != a.shape[0]:
            raise ShapeError("one distribution per attention weight required")
        scores = [polarity(p, weights) for p in probs]
        rows = probs
    elif source == "document":
        scores = document_polarity_broadcast(doc_probs, a, weights, gated=False).tolist()
        rows = [None] * a.shape[0]
    else:
        raise ValidationError(f"unknown polarity source {source!r}")
    return [
        SegmentVerdict(
            index=i,
            polarity=s,
            gated_polarity=gated_polarity(float(a[i]), s),
            attention=float(a[i]),
            source=source,
            class_probs=None if rows[i] is None else np.array(rows[i]),
        )
        for i, s in enumerate(scores)
    ]


@dataclass
class Snippet:
    index: int
    text: str
    sign: str  # "+" | "-"
    polarity: float
    gated_polarity: float
    attention: float
    score: float  # the score the ranking used
    words: int


@dataclass
class OpinionSummary:
    """Bullet-style extract: positives first, then negatives, in document order."""

    snippets: list[Snippet]
    rate: float
    word_budget: int
    word_count: int

    @property
    def positives(self) -> list[Snippet]:
        return [s for s in self.snippets if s.sign == "+"]

    @property
    def negatives(self) -> list[Snippet]:
        return [s for s in self.snippets if s.sign == "-"]

    def to_json(self) -> dict:
        return {
            "rate": self.rate,
            "word_budget": self.word_budget,
            "word_count": self.word_count,
            "snippets": [
                {
                    "index": s.index,
                    "text": s.text,
                    "sign": s.sign,
                    "polarity": s.polarity,
                    "gated_polarity": s.gated_polarity,
                    "attention": s.attention,
                }
                for s in self.snippets
            ],
        }


def extract_summary(doc: Document, verdicts: list[SegmentVerdict], rate: float,
                    use_gated: bool = True) -> OpinionSummary:
    """Greedy extraction under a word budget of ceil(rate * document words).

    Segments are ranked by absolute (gated) polarity, ties broken by
    document position; a segment that would overflow the budget is
    skipped and selection continues. Selected snippets are presented
    positives first, then negatives, each group in document order.
    """
    if not 0.0 < rate <= 1.0:
        raise ValidationError(f"compression rate {rate} outside (0, 1]")
    if len(verdicts) != len(doc.segments):
        raise ShapeError("one verdict per segment required")
    budget = math.ceil(rate * doc.word_count())
    ranked = sorted(
        verdicts,
        key=lambda v: (-abs(v.gated_polarity if use_gated else v.polarity), v.index),
    )
    used = 0
    chosen = []
    for verdict in ranked:
        words = len(doc.segments[verdict.index].tokens)
        if used + words > budget:
            continue
        used += words
        chosen.append(verdict)
    snippets = []
    for verdict in sorted(chosen, key=lambda v: v.index):
        score = verdict.gated_polarity if use_gated else verdict.polarity
        snippets.append(
            Snippet(
                index=verdict.index,
                text=doc.segments[verdict.index].text,
                sign="+" if score >= 0 else "-",
                polarity=verdict.polarity,
                gated_polarity=verdict.gated_polarity,
                attention=verdict.attention,
                score=score,
                words=len(doc.segments[verdict.index].tokens),
            )
        )
    ordered = [s for s in snippets if s.sign == "+"] + [s for s in snippets if s.sign == "-"]
    return OpinionSummary(snippets=ordered, rate=rate, word_budget=budget, word_count=used)
