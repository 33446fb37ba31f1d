import numpy as np
import pytest

from milsent import autodiff as ad
from milsent import layers
from milsent.autodiff import Tensor
from milsent.errors import DegenerateMaskError, ValidationError


def naive_conv_encoder(x, params):
    """Direct-loop oracle for the CNN segment encoder."""
    n, k = x.shape
    longest = max(params.windows)
    if n < longest:
        x = np.vstack([x, np.zeros((longest - n, k))])
        n = longest
    pooled = []
    for window, w, b in zip(params.windows, params.weights, params.biases):
        maps = w.shape[1]
        features = np.empty((n - window + 1, maps))
        for t in range(n - window + 1):
            flat = x[t : t + window].reshape(-1)
            features[t] = np.maximum(flat @ w.data + b.data, 0.0)
        pooled.append(features.max(axis=0))
    return np.concatenate(pooled)


def manual_gru(h_prev, x, p):
    """Hand-evaluated cell used as the unrolling oracle."""
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    z = sig(x @ p.w_z.data + h_prev @ p.u_z.data + p.b_z.data)
    r = sig(x @ p.w_r.data + h_prev @ p.u_r.data + p.b_r.data)
    cand = np.tanh(x @ p.w_h.data + (r * h_prev) @ p.u_h.data + p.b_h.data)
    return (1.0 - z) * h_prev + z * cand


class TestConvEncoder:
    def test_hand_trace_single_filter(self):
        # one window of size 1, one filter selecting the first embedding
        # coordinate: rows [2, ...] and [-3, ...] give ReLU maxima {2, 0} -> 2
        params = layers.ConvEncoderParams(
            windows=(1,),
            weights=[Tensor([[1.0], [0.0], [0.0]])],
            biases=[Tensor([0.0])],
        )
        x = np.array([[2.0, 5.0, 1.0], [-3.0, 9.0, 4.0]])
        out = layers.encode_segment(x, params)
        assert np.array_equal(out.data, [2.0])

    def test_all_zero_input_zero_bias(self):
        rng = np.random.default_rng(0)
        params = layers.init_conv_encoder(4, (2, 3), 3, rng)
        out = layers.encode_segment(np.zeros((5, 4)), params)
        assert np.array_equal(out.data, np.zeros(6))

    def test_matches_naive_convolution(self):
        rng = np.random.default_rng(12)
        params = layers.init_conv_encoder(5, (2, 3), 2, rng)
        x = rng.normal(size=(7, 5))
        out = layers.encode_segment(x, params)
        assert np.max(np.abs(out.data - naive_conv_encoder(x, params))) < 1e-10

    def test_short_segment_padded_to_largest_window(self):
        rng = np.random.default_rng(3)
        params = layers.init_conv_encoder(4, (2, 5), 3, rng)
        x = rng.normal(size=(2, 4))  # shorter than the size-5 window
        out = layers.encode_segment(x, params)
        assert np.max(np.abs(out.data - naive_conv_encoder(x, params))) < 1e-10

    def test_invariant_to_padding_beyond_max_window(self):
        rng = np.random.default_rng(8)
        params = layers.init_conv_encoder(4, (2, 3), 3, rng)
        for b in params.biases:  # positive bias: padding windows activate
            b.data = np.abs(rng.normal(size=b.shape)) + 0.1
        x = rng.normal(size=(6, 4))
        plain = layers.encode_segment(x, params)
        padded = layers.encode_segment(np.vstack([x, np.zeros((4, 4))]), params, valid_length=6)
        assert np.max(np.abs(plain.data - padded.data)) < 1e-12

    def test_filter_permutation_permutes_output(self):
        rng = np.random.default_rng(5)
        params = layers.init_conv_encoder(4, (2,), 3, rng)
        x = rng.normal(size=(6, 4))
        base = layers.encode_segment(x, params).data
        perm = [2, 0, 1]
        params.weights[0].data = params.weights[0].data[:, perm]
        params.biases[0].data = params.biases[0].data[perm]
        permuted = layers.encode_segment(x, params).data
        assert np.allclose(permuted, base[perm])

    def test_gradient_check(self):
        rng = np.random.default_rng(31)
        params = layers.init_conv_encoder(3, (2, 3), 2, rng)
        x = ad.parameter(rng.normal(size=(5, 3)))
        probe = Tensor(rng.normal(size=4))

        def build():
            return ad.sum_all(ad.mul(layers.encode_segment(x, params), probe))

        ad.backward(build())
        tensors = [x] + params.weights + params.biases
        numeric = ad.finite_difference(lambda: build().item(), tensors)
        for t, n in zip(tensors, numeric):
            assert ad.gradient_error(t.grad, n) < 1e-4


class TestGru:
    def test_zero_parameters_give_zero_state(self):
        rng = np.random.default_rng(0)
        p = layers.init_gru(3, 4, rng)
        for name in ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"):
            getattr(p, name).data = np.zeros_like(getattr(p, name).data)
        # update gate sits at 0.5 and mixes two zero states
        h = layers.gru_step(np.zeros(4), np.array([5.0, -2.0, 1.0]), p)
        assert np.array_equal(h.data, np.zeros(4))

    def test_zero_state_zero_candidate_weights(self):
        rng = np.random.default_rng(1)
        p = layers.init_gru(3, 4, rng)
        p.w_h.data = np.zeros_like(p.w_h.data)
        p.u_h.data = np.zeros_like(p.u_h.data)
        p.b_h.data = np.zeros_like(p.b_h.data)
        h = layers.gru_step(np.zeros(4), np.ones(3), p)
        assert np.allclose(h.data, 0.0)

    def test_state_bounded(self):
        rng = np.random.default_rng(2)
        p = layers.init_gru(3, 4, rng)
        h = np.zeros(4)
        for _ in range(20):
            h = layers.gru_step(h, rng.normal(scale=10.0, size=3), p).data
            assert np.all(np.abs(h) < 1.0)

    def test_matches_manual_cell(self):
        rng = np.random.default_rng(3)
        p = layers.init_gru(3, 4, rng)
        h_prev = rng.normal(size=4) * 0.5
        x = rng.normal(size=3)
        out = layers.gru_step(h_prev, x, p)
        assert np.max(np.abs(out.data - manual_gru(h_prev, x, p))) < 1e-12

    def test_gradient_check(self):
        rng = np.random.default_rng(4)
        p = layers.init_gru(3, 4, rng)
        h_prev = ad.parameter(rng.normal(size=4) * 0.3)
        x = ad.parameter(rng.normal(size=3))
        tensors = [h_prev, x, p.w_z, p.u_z, p.b_z, p.w_r, p.u_r, p.b_r, p.w_h, p.u_h, p.b_h]
        probe = Tensor(rng.normal(size=4))

        def build():
            return ad.sum_all(ad.mul(layers.gru_step(h_prev, x, p), probe))

        ad.backward(build())
        numeric = ad.finite_difference(lambda: build().item(), tensors)
        for t, n in zip(tensors, numeric):
            assert ad.gradient_error(t.grad, n) < 1e-4


class TestBigru:
    def setup_method(self):
        rng = np.random.default_rng(9)
        self.fwd = layers.init_gru(3, 2, rng, prefix="f")
        self.bwd = layers.init_gru(3, 2, rng, prefix="b")

    def test_single_vector(self):
        v = np.random.default_rng(0).normal(size=(1, 3))
        out = layers.bigru(v, self.fwd, self.bwd)
        expected_f = manual_gru(np.zeros(2), v[0], self.fwd)
        expected_b = manual_gru(np.zeros(2), v[0], self.bwd)
        assert np.max(np.abs(out.data[0] - np.concatenate([expected_f, expected_b]))) < 1e-12

    def test_matches_unrolled_oracle(self):
        rng = np.random.default_rng(1)
        v = rng.normal(size=(3, 3))
        out = layers.bigru(v, self.fwd, self.bwd).data
        hf = np.zeros(2)
        fwd_states = []
        for t in range(3):
            hf = manual_gru(hf, v[t], self.fwd)
            fwd_states.append(hf)
        hb = np.zeros(2)
        bwd_states = [None] * 3
        for t in (2, 1, 0):
            hb = manual_gru(hb, v[t], self.bwd)
            bwd_states[t] = hb
        expected = np.hstack([np.vstack(fwd_states), np.vstack(bwd_states)])
        assert np.max(np.abs(out - expected)) < 1e-10

    def test_reversal_swaps_directions(self):
        rng = np.random.default_rng(2)
        v = rng.normal(size=(4, 3))
        # run the same cell in both roles so direction is the only difference
        fwd_states = layers.bigru(v, self.fwd, self.fwd).data[:, :2]
        rev_bwd_states = layers.bigru(v[::-1].copy(), self.fwd, self.fwd).data[:, 2:]
        assert np.max(np.abs(fwd_states - rev_bwd_states[::-1])) < 1e-12


class TestAttention:
    def setup_method(self):
        rng = np.random.default_rng(6)
        self.params = layers.init_attention(4, 3, rng)

    def test_single_state_gets_full_weight(self):
        h = np.random.default_rng(0).normal(size=(1, 4))
        assert np.array_equal(layers.attend(h, self.params).data, [1.0])

    def test_identical_states_split_evenly(self):
        h = np.tile(np.random.default_rng(1).normal(size=4), (2, 1))
        out = layers.attend(h, self.params).data
        assert np.allclose(out, [0.5, 0.5], atol=1e-15)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(2)
        h = rng.normal(size=(4, 4))
        out = layers.attend(h, self.params).data
        projected = np.tanh(h @ self.params.w_a.data + self.params.b_a.data)
        scores = (projected @ self.params.key.data).ravel()
        expected = np.exp(scores - scores.max())
        expected /= expected.sum()
        assert np.max(np.abs(out - expected)) < 1e-12

    def test_masked_positions_are_exactly_zero(self):
        rng = np.random.default_rng(3)
        h = rng.normal(size=(3, 4))
        out = layers.attend(h, self.params, mask=[True, False, True]).data
        assert out[1] == 0.0
        assert abs(out.sum() - 1.0) < 1e-12

    def test_all_masked_raises(self):
        h = np.zeros((2, 4))
        with pytest.raises(DegenerateMaskError):
            layers.attend(h, self.params, mask=[False, False])

    def test_permuting_identical_inputs_permutes_weights(self):
        rng = np.random.default_rng(4)
        h = rng.normal(size=(3, 4))
        base = layers.attend(h, self.params).data
        perm = [2, 0, 1]
        permuted = layers.attend(h[perm], self.params).data
        assert np.allclose(permuted, base[perm], atol=1e-15)


class TestClassifier:
    def test_uniform_for_zero_parameters(self):
        params = layers.ClassifierParams(w=Tensor(np.zeros((4, 3))), b=Tensor(np.zeros(4)))
        out = layers.classify(np.random.default_rng(0).normal(size=3), params)
        assert np.allclose(out.data, 0.25, atol=1e-15)

    def test_large_margin_logit_dominates(self):
        params = layers.ClassifierParams(
            w=Tensor([[50.0, 0.0], [0.0, 0.0], [0.0, 0.0]]), b=Tensor(np.zeros(3))
        )
        out = layers.classify(np.array([1.0, 0.0]), params)
        assert out.data[0] > 0.999999

    def test_matches_formula(self):
        rng = np.random.default_rng(7)
        params = layers.init_classifier(5, 3, rng)
        v = rng.normal(size=5)
        out = layers.classify(v, params).data
        logits = params.w.data @ v + params.b.data
        expected = np.exp(logits - logits.max())
        expected /= expected.sum()
        assert np.max(np.abs(out - expected)) < 1e-12

    def test_batch_rows_are_rowwise_distributions(self):
        rng = np.random.default_rng(8)
        params = layers.init_classifier(5, 3, rng)
        out = layers.classify(rng.normal(size=(6, 5)), params).data
        assert np.allclose(out.sum(axis=1), 1.0, atol=1e-12)


class TestBatchedAgainstUnbatched:
    def test_encode_segments_batch_matches_singles(self):
        rng = np.random.default_rng(10)
        params = layers.init_conv_encoder(4, (2, 3), 3, rng)
        emb = ad.parameter(rng.normal(size=(9, 4)))
        emb.data[0] = 0.0  # padding row
        lengths = [5, 3, 7]
        n_max = 7
        ids = np.zeros((3, n_max), dtype=np.intp)
        for s, length in enumerate(lengths):
            ids[s, :length] = rng.integers(1, 9, size=length)
        batched = layers.encode_segments_batch(emb, ids, np.array(lengths), params).data
        for s, length in enumerate(lengths):
            single = layers.encode_segment(emb.data[ids[s, :length]], params)
            assert np.max(np.abs(batched[s] - single.data)) < 1e-12

    def test_all_padding_segment_encodes_to_zero(self):
        rng = np.random.default_rng(11)
        params = layers.init_conv_encoder(4, (2,), 3, rng)
        emb = ad.parameter(rng.normal(size=(5, 4)))
        ids = np.zeros((2, 4), dtype=np.intp)
        ids[0] = [1, 2, 3, 4]
        out = layers.encode_segments_batch(emb, ids, np.array([4, 0]), params).data
        assert np.array_equal(out[1], np.zeros(3))

    def test_bigru_batch_matches_per_document(self):
        rng = np.random.default_rng(12)
        fwd = layers.init_gru(3, 2, rng, prefix="f")
        bwd = layers.init_gru(3, 2, rng, prefix="b")
        lengths = np.array([2, 4, 1])
        m_max = 4
        vecs = rng.normal(size=(3 * m_max, 3))
        batched = layers.bigru_states_batch(Tensor(vecs), 3, m_max, lengths, fwd, bwd).data
        for b, m in enumerate(lengths):
            single = layers.bigru(vecs[b * m_max : b * m_max + m], fwd, bwd).data
            got = batched[b * m_max : b * m_max + m]
            assert np.max(np.abs(got - single)) < 1e-12


def test_encode_segment_rejects_bad_valid_length():
    params = layers.init_conv_encoder(2, (2,), 1, np.random.default_rng(0))
    with pytest.raises(ValidationError):
        layers.encode_segment(np.zeros((3, 2)), params, valid_length=9)
