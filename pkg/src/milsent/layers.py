"""Neural building blocks: CNN segment encoder, GRU, attention, classifier.

The segment encoder follows the classic convolutional text classifier:
for each window size l, a filter bank over l consecutive word
embeddings produces a feature map c = [c_1 .. c_{n-l+1}] with
c_t = ReLU(W . window_t + b), which is max-pooled over time; pooled
vectors for all window sizes are concatenated into the segment vector.
Segments shorter than the largest window are padded up to it with the
all-zero padding embedding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError, ValidationError


def _glorot(rng, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class ConvEncoderParams:
    windows: tuple[int, ...]
    weights: list[Tensor]  # per window: (window * embedding_dim, feature_maps)
    biases: list[Tensor]  # per window: (feature_maps,)

    @property
    def output_dim(self) -> int:
        return sum(int(w.shape[1]) for w in self.weights)

    @property
    def embedding_dim(self) -> int:
        return int(self.weights[0].shape[0]) // self.windows[0]


@dataclass
class GruParams:
    """One direction's gates: update (z), reset (r), candidate (h)."""

    w_z: Tensor
    u_z: Tensor
    b_z: Tensor
    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_h: Tensor
    u_h: Tensor
    b_h: Tensor

    @property
    def hidden(self) -> int:
        return int(self.u_z.shape[0])


@dataclass
class AttentionParams:
    w_a: Tensor  # (input_dim, attention_dim)
    b_a: Tensor  # (attention_dim,)
    key: Tensor  # (attention_dim, 1), the trained context vector

    @property
    def attention_dim(self) -> int:
        return int(self.w_a.shape[1])


@dataclass
class ClassifierParams:
    w: Tensor  # (classes, input_dim)
    b: Tensor  # (classes,)

    @property
    def num_classes(self) -> int:
        return int(self.w.shape[0])


def init_conv_encoder(embedding_dim, windows, feature_maps, rng) -> ConvEncoderParams:
    weights, biases = [], []
    for window in windows:
        fan_in = window * embedding_dim
        weights.append(
            ad.parameter(_glorot(rng, fan_in, feature_maps, (fan_in, feature_maps)), name=f"conv.w{window}")
        )
        biases.append(ad.parameter(np.zeros(feature_maps), name=f"conv.b{window}"))
    return ConvEncoderParams(windows=tuple(windows), weights=weights, biases=biases)


def init_gru(input_dim, hidden, rng, prefix="gru") -> GruParams:
    def w(gate):
        return ad.parameter(_glorot(rng, input_dim, hidden, (input_dim, hidden)), name=f"{prefix}.w_{gate}")

    def u(gate):
        return ad.parameter(_glorot(rng, hidden, hidden, (hidden, hidden)), name=f"{prefix}.u_{gate}")

    def b(gate):
        return ad.parameter(np.zeros(hidden), name=f"{prefix}.b_{gate}")

    return GruParams(
        w_z=w("z"), u_z=u("z"), b_z=b("z"),
        w_r=w("r"), u_r=u("r"), b_r=b("r"),
        w_h=w("h"), u_h=u("h"), b_h=b("h"),
    )


def init_attention(input_dim, attention_dim, rng) -> AttentionParams:
    return AttentionParams(
        w_a=ad.parameter(_glorot(rng, input_dim, attention_dim, (input_dim, attention_dim)), name="attention.w_a"),
        b_a=ad.parameter(np.zeros(attention_dim), name="attention.b_a"),
        key=ad.parameter(_glorot(rng, attention_dim, 1, (attention_dim, 1)), name="attention.key"),
    )


def init_classifier(input_dim, num_classes, rng) -> ClassifierParams:
    return ClassifierParams(
        w=ad.parameter(_glorot(rng, input_dim, num_classes, (num_classes, input_dim)), name="classifier.w"),
        b=ad.parameter(np.zeros(num_classes), name="classifier.b"),
    )


# ---------------------------------------------------------------------------
# convolutional segment encoder


def encode_segment(x, params: ConvEncoderParams, valid_length: int | None = None) -> Tensor:
    """Encode one (n, k) word matrix into a fixed-size segment vector.

    ``valid_length`` marks trailing rows as padding; pooling then only
    sees windows inside the effective length, which never drops below
    the largest configured window.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"word matrix must be 2-d, got shape {x.shape}")
    n, k = x.shape
    if k != params.embedding_dim:
        raise ShapeError(f"embedding dim {k} does not match encoder ({params.embedding_dim})")
    longest = max(params.windows)
    eff = n if valid_length is None else int(valid_length)
    if not 1 <= eff <= n:
        raise ValidationError(f"valid_length {eff} outside [1, {n}]")
    eff = max(eff, longest)
    if n < eff:
        x = ad.concat([x, Tensor(np.zeros((eff - n, k)))], axis=0)
        n = eff
    pooled = []
    for window, w, b in zip(params.windows, params.weights, params.biases):
        count = n - window + 1
        idx = (np.arange(count)[:, None] + np.arange(window)[None, :]).reshape(-1)
        stacked = ad.reshape(ad.gather_rows(x, idx), (count, window * k))
        feature_map = ad.relu(ad.add(ad.matmul(stacked, w), b))
        pooled.append(ad.max_over_time(feature_map, valid_count=eff - window + 1))
    return ad.concat(pooled, axis=0)


def encode_segments_batch(embeddings: Tensor, token_ids: np.ndarray, eff_lengths: np.ndarray,
                          params: ConvEncoderParams) -> Tensor:
    """Encode (S, n) padded token ids into (S, output_dim) segment vectors.

    ``eff_lengths[s]`` is segment s's effective length (0 for an
    all-padding segment, whose vector comes out as zeros). Windows are
    gathered straight from the embedding matrix, so the row-major
    reshape of l consecutive embedding rows is exactly the concatenated
    window the filter bank expects.
    """
    segs, n = token_ids.shape
    if n < max(params.windows):
        raise ShapeError(f"segments padded to {n} tokens, below largest window {max(params.windows)}")
    pooled = []
    for window, w, b in zip(params.windows, params.weights, params.biases):
        count = n - window + 1
        # (S, count, window) token ids per window position
        window_ids = np.lib.stride_tricks.sliding_window_view(token_ids, window, axis=1)
        rows = ad.gather_rows(embeddings, window_ids.reshape(-1))
        stacked = ad.reshape(rows, (segs * count, window * int(embeddings.shape[1])))
        feature_map = ad.relu(ad.add(ad.matmul(stacked, w), b))
        valid = np.maximum(eff_lengths - window + 1, 0)
        pooled.append(ad.max_pool_groups(feature_map, count, valid_counts=valid))
    return ad.concat(pooled, axis=1)


# ---------------------------------------------------------------------------
# recurrence


def gru_step(h_prev, x, params: GruParams, recurrent_input=None) -> Tensor:
    """One GRU update; reset gate applies to the previous state inside the
    candidate, and the update gate convexly mixes previous and candidate
    states, so the output stays in (-1, 1) elementwise.

    ``recurrent_input`` substitutes a (dropped-out) copy of ``h_prev``
    on the gate/candidate paths while the state mix uses the true one.
    """
    h_prev = h_prev if isinstance(h_prev, Tensor) else Tensor(h_prev)
    x = x if isinstance(x, Tensor) else Tensor(x)
    one_d = x.data.ndim == 1
    if one_d:
        x = ad.reshape(x, (1, x.shape[0]))
        h_prev = ad.reshape(h_prev, (1, h_prev.shape[0]))
    hp = recurrent_input if recurrent_input is not None else h_prev
    z = ad.sigmoid(ad.add(ad.add(ad.matmul(x, params.w_z), ad.matmul(hp, params.u_z)), params.b_z))
    r = ad.sigmoid(ad.add(ad.add(ad.matmul(x, params.w_r), ad.matmul(hp, params.u_r)), params.b_r))
    cand = ad.tanh(
        ad.add(ad.add(ad.matmul(x, params.w_h), ad.matmul(ad.mul(r, hp), params.u_h)), params.b_h)
    )
    h = ad.add(h_prev, ad.mul(z, ad.sub(cand, h_prev)))  # (1-z)*h_prev + z*cand
    return ad.reshape(h, (h.shape[1],)) if one_d else h


def bigru_states_batch(vectors: Tensor, batch_size: int, max_segments: int,
                       doc_lengths: np.ndarray, forward: GruParams, backward: GruParams,
                       recurrent_dropout: float = 0.0, rng=None, train: bool = False) -> Tensor:
    """Concatenated forward/backward GRU states for (B*m, d) segment vectors.

    Padding positions carry the previous state through, so states at
    live positions match an unbatched run exactly: the forward pass only
    ever sees the live prefix, and the backward pass carries its zero
    initial state across trailing padding before touching live input.
    """
    b, m = batch_size, max_segments
    hidden = forward.hidden
    live = (np.arange(m)[None, :] < doc_lengths[:, None]).astype(np.float64)

    def run(params: GruParams, order):
        h = Tensor(np.zeros((b, hidden)))
        states = [None] * m
        for t in order:
            x = ad.gather_rows(vectors, np.arange(b) * m + t)
            hp = ad.dropout(h, recurrent_dropout, rng=rng, train=train)
            h_new = gru_step(h, x, params, recurrent_input=hp)
            mask = Tensor(live[:, t : t + 1])
            h = ad.add(h, ad.mul(mask, ad.sub(h_new, h)))
            states[t] = h
        return states

    fwd_states = run(forward, range(m))
    bwd_states = run(backward, range(m - 1, -1, -1))
    per_time = [ad.concat([fwd_states[t], bwd_states[t]], axis=1) for t in range(m)]
    stacked = ad.concat(per_time, axis=0)  # time-major (m*B, 2h)
    to_doc_major = (np.arange(m)[None, :] * b + np.arange(b)[:, None]).reshape(-1)
    return ad.gather_rows(stacked, to_doc_major)


def bigru(vectors, forward: GruParams, backward: GruParams) -> Tensor:
    """Bidirectional GRU over one (m, d) sequence -> (m, 2h) hidden states."""
    vectors = vectors if isinstance(vectors, Tensor) else Tensor(vectors)
    m = vectors.shape[0]
    if m < 1:
        raise ValidationError("bigru needs at least one vector")
    return bigru_states_batch(vectors, 1, m, np.array([m]), forward, backward)


# ---------------------------------------------------------------------------
# attention and classification


def attention_weights_batch(states: Tensor, batch_size: int, max_segments: int,
                            live: np.ndarray, params: AttentionParams) -> Tensor:
    """(B, m) attention weights over (B*m, d) states; padding gets exactly 0."""
    projected = ad.tanh(ad.add(ad.matmul(states, params.w_a), params.b_a))
    scores = ad.matmul(projected, params.key)  # (B*m, 1)
    logits = ad.reshape(scores, (batch_size, max_segments))
    return ad.softmax(logits, valid=live)


def attend(states, params: AttentionParams, mask=None) -> Tensor:
    """Attention weights for one (m, d) sequence of hidden states.

    Each state is projected through a one-layer tanh MLP and scored by
    similarity with the trained key; weights are the masked softmax of
    the scores, summing to 1 over unmasked positions.
    """
    states = states if isinstance(states, Tensor) else Tensor(states)
    if states.data.ndim != 2:
        raise ShapeError(f"attend needs (m, d) states, got shape {states.shape}")
    m = states.shape[0]
    live = np.ones((1, m), dtype=bool) if mask is None else np.asarray(mask, bool).reshape(1, m)
    weights = attention_weights_batch(states, 1, m, live, params)
    return ad.reshape(weights, (m,))


def classify(v, params: ClassifierParams) -> Tensor:
    """Softmax class distribution(s) for a (d,) vector or (N, d) matrix."""
    v = v if isinstance(v, Tensor) else Tensor(v)
    one_d = v.data.ndim == 1
    rows = ad.reshape(v, (1, v.shape[0])) if one_d else v
    logits = ad.add(ad.matmul(rows, ad.transpose(params.w)), params.b)
    probs = ad.softmax(logits)
    return ad.reshape(probs, (params.num_classes,)) if one_d else probs
