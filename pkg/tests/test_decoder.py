"""Prefix-conditioned causal decoder semantics."""

import numpy as np
import pytest

from empersona import autodiff as ad
from empersona.autodiff import Tensor
from empersona.decoder import CausalDecoder, teacher_forcing_io


@pytest.fixture()
def decoder():
    return CausalDecoder(vocab_size=30, d=16, heads=2, n_blocks=1, d_ff=32,
                         max_len=12, rng=np.random.default_rng(0))


class TestTeacherForcingIO:
    def test_shapes_and_shift(self):
        inp, tgt = teacher_forcing_io(2, 3, [7, 8, 9])
        assert inp == [2, 7, 8, 9]
        assert tgt == [7, 8, 9, 3]

    def test_empty_response(self):
        inp, tgt = teacher_forcing_io(2, 3, [])
        assert inp == [2]
        assert tgt == [3]


class TestForward:
    def test_logits_cover_token_rows_only(self, decoder):
        prefix = Tensor(np.random.default_rng(1).standard_normal((4, 16))
                        .astype(np.float32))
        logits = decoder.forward_with_prefix(prefix, [1, 2, 3])
        assert logits.shape == (3, 30)

    def test_no_prefix_supported(self, decoder):
        logits = decoder.forward_with_prefix(None, [1, 2, 3])
        assert logits.shape == (3, 30)

    def test_prefix_shape_validated(self, decoder):
        bad = Tensor(np.zeros((4, 8), dtype=np.float32))  # wrong width
        with pytest.raises(ValueError):
            decoder.forward_with_prefix(bad, [1, 2])

    def test_causality_future_token_cannot_change_past_logits(self, decoder):
        with ad.no_grad():
            a = decoder.forward_with_prefix(None, [1, 2, 3, 4]).data
            b = decoder.forward_with_prefix(None, [1, 2, 3, 9]).data
        np.testing.assert_allclose(a[:3], b[:3], rtol=1e-5, atol=1e-6)

    def test_prefix_changes_all_token_logits(self, decoder):
        rng = np.random.default_rng(2)
        p1 = Tensor(rng.standard_normal((4, 16)).astype(np.float32))
        p2 = Tensor(rng.standard_normal((4, 16)).astype(np.float32))
        with ad.no_grad():
            a = decoder.forward_with_prefix(p1, [1, 2, 3]).data
            b = decoder.forward_with_prefix(p2, [1, 2, 3]).data
        assert np.abs(a - b).max() > 1e-4

    def test_token_window_overflow_rejected(self, decoder):
        with pytest.raises(ValueError, match="max_len"):
            decoder.forward_with_prefix(None, list(range(13)))

    def test_prefix_rows_do_not_consume_token_window(self, decoder):
        # positions cover tokens only, so a long prefix plus a full token
        # window is legal
        prefix = Tensor(np.zeros((10, 16), dtype=np.float32))
        logits = decoder.forward_with_prefix(prefix, list(range(12)))
        assert logits.shape == (12, 30)


class TestLosses:
    def test_nll_matches_manual_cross_entropy(self, decoder):
        inp, tgt = teacher_forcing_io(2, 3, [5, 6])
        with ad.no_grad():
            logits = decoder.forward_with_prefix(None, inp).data.astype(np.float64)
            nll = decoder.nll(None, inp, tgt).item()
        m = logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(logits - m).sum(axis=1)) + m[:, 0]
        manual = float(np.mean(lse - logits[np.arange(len(tgt)), tgt]))
        assert nll == pytest.approx(manual, rel=1e-5)

    def test_sequence_logprob_is_negated_mean_nll(self, decoder):
        inp, tgt = teacher_forcing_io(2, 3, [5, 6, 7])
        with ad.no_grad():
            nll = decoder.nll(None, inp, tgt).item()
            lp = decoder.sequence_logprob(None, inp, tgt).item()
        assert lp == pytest.approx(-nll, rel=1e-6)
        assert lp < 0

    def test_nll_gradient_reaches_prefix(self, decoder):
        prefix = Tensor(np.random.default_rng(3).standard_normal((4, 16))
                        .astype(np.float32), requires_grad=True)
        inp, tgt = teacher_forcing_io(2, 3, [5, 6])
        ad.backward(decoder.nll(prefix, inp, tgt))
        assert prefix.grad is not None
        assert np.abs(prefix.grad).sum() > 0

    def test_training_reduces_nll_on_fixed_pair(self, decoder):
        from empersona.optim import AdaptiveOptimizer
        inp, tgt = teacher_forcing_io(2, 3, [5, 6, 7, 8])
        opt = AdaptiveOptimizer(decoder.parameters(), lr=3e-3)
        with ad.no_grad():
            before = decoder.nll(None, inp, tgt).item()
        for _ in range(30):
            opt.zero_grad()
            ad.backward(decoder.nll(None, inp, tgt))
            opt.step()
        with ad.no_grad():
            after = decoder.nll(None, inp, tgt).item()
        assert after < before * 0.5
