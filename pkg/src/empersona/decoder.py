"""Causal transformer decoder with input-state prefix injection.

The stylistic prefix is a block of continuous states prepended to the
token embeddings, before the first transformer block. Prefix rows carry
no positional embedding and produce no logits; token rows see normal
learned positions starting at 0. The causal mask runs over the combined
sequence, so every token position can attend the full prefix plus its
own past tokens.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import Embedding, LayerNorm, Linear, Module, TransformerBlock


class CausalDecoder(Module):
    def __init__(self, vocab_size: int, d: int, heads: int, n_blocks: int,
                 d_ff: int, max_len: int, rng: np.random.Generator):
        self.tok = Embedding(vocab_size, d, rng)
        self.pos = Embedding(max_len, d, rng)
        self.blocks = [TransformerBlock(d, heads, d_ff, rng) for _ in range(n_blocks)]
        self.ln_out = LayerNorm(d)
        self.head = Linear(d, vocab_size, rng)
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.d = d

    def forward_with_prefix(self, prefix: Tensor | None, token_ids) -> Tensor:
        """Logits [T, vocab] for ``token_ids`` given an optional [P, d] prefix."""
        token_ids = np.asarray(token_ids, dtype=np.int64)
        if token_ids.size == 0:
            raise ValueError("decoder needs at least one input token")
        if token_ids.size > self.max_len:
            raise ValueError(
                f"token count {token_ids.size} exceeds decoder max_len {self.max_len}")
        t = token_ids.size
        x_tok = ad.add(self.tok(token_ids), self.pos(np.arange(t)))
        if prefix is None:
            x, p = x_tok, 0
        else:
            if prefix.data.ndim != 2 or prefix.shape[1] != self.d:
                raise ValueError(
                    f"prefix shape {prefix.shape} incompatible with model dim {self.d}")
            x, p = ad.concat([prefix, x_tok], axis=0), prefix.shape[0]
        mask = np.tril(np.ones((p + t, p + t), dtype=bool))
        for block in self.blocks:
            x = block(x, mask=mask)
        states = ad.slice_axis(x, p, p + t, axis=0)
        return self.head(self.ln_out(states))

    def nll(self, prefix: Tensor | None, input_ids, target_ids, mask=None) -> Tensor:
        """Mean token cross-entropy of ``target_ids`` given teacher forcing."""
        logits = self.forward_with_prefix(prefix, input_ids)
        return ad.cross_entropy(logits, target_ids, mask)

    def sequence_logprob(self, prefix: Tensor | None, input_ids, target_ids,
                         mask=None) -> Tensor:
        """Length-normalized log-likelihood (the negated mean token NLL)."""
        return ad.neg(self.nll(prefix, input_ids, target_ids, mask))


def teacher_forcing_io(sep_id: int, eos_id: int, response_ids):
    """Shifted input/target pair: [sep] r1..rn predicts r1..rn [eos]."""
    response_ids = list(int(i) for i in response_ids)
    return [sep_id] + response_ids, response_ids + [eos_id]
