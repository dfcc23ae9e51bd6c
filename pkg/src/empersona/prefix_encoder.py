"""Multi-grained prefix encoder.

Builds the continuous prefix that steers the decoder toward a
listener's style and the desired empathy signals. Two banks of learned
query vectors read the dialogue context through cross-attention; the
context-aware queries then read the listener's past responses (style
grain) and an exemplar response tagged with empathy control tokens
(signal grain):

    Q_C1 = Attn(Q1 <- C)        coarse context queries
    Q_C2 = Attn(Q2 <- C)        fine context queries
    V_PC1 = Attn(Q_C1 <- P)     past-response reading
    V_EC2 = Attn(Q_C2 <- E)     exemplar/control reading

The active variant decides which segments are stacked (always the two
context segments, optionally the past and exemplar ones); a shared
linear projection maps the stack to the decoder's input space. Each of
the four attention stages is its own multi-head attention module with
separate weights.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import Linear, Module, MultiHeadAttention, TextEncoder, parameter

VARIANTS = ("C", "C+P", "C+E", "C+E+P")


class MgPE(Module):
    """Maps (context, past responses, exemplar+controls) to a prefix block."""

    def __init__(self, vocab_size: int, d: int, heads: int, n_blocks: int,
                 d_ff: int, max_len: int, n1: int, n2: int,
                 rng: np.random.Generator, variant: str = "C+E+P"):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
        self.encoder = TextEncoder(vocab_size, d, heads, n_blocks, d_ff, max_len, rng)
        self.q1 = parameter(rng.normal(0.0, 0.02, size=(n1, d)))
        self.q2 = parameter(rng.normal(0.0, 0.02, size=(n2, d)))
        self.attn_c1 = MultiHeadAttention(d, heads, rng)
        self.attn_c2 = MultiHeadAttention(d, heads, rng)
        self.attn_p = MultiHeadAttention(d, heads, rng)
        self.attn_e = MultiHeadAttention(d, heads, rng)
        self.proj = Linear(d, d, rng)
        self.variant = variant
        self.n1, self.n2 = n1, n2

    @property
    def prefix_rows(self) -> int:
        rows = self.n1 + self.n2
        if "P" in self.variant:
            rows += self.n1
        if "E" in self.variant:
            rows += self.n2
        return rows

    def build_prefix(self, context_ids, past_ids=None, exemplar_ids=None) -> Tensor:
        """Prefix block [prefix_rows, d] for one example.

        ``past_ids`` (the listener's joined past responses) is required
        when the variant includes P; ``exemplar_ids`` (retrieved response
        plus empathy control tokens) when it includes E. Inputs longer
        than the encoder window are truncated.
        """
        c = self.encoder.encode(context_ids, truncate=True)
        q_c1 = self.attn_c1(self.q1, c, c)
        q_c2 = self.attn_c2(self.q2, c, c)
        segments = [q_c1, q_c2]
        if "P" in self.variant:
            if past_ids is None:
                raise ValueError(f"variant {self.variant} needs past_ids")
            p = self.encoder.encode(past_ids, truncate=True)
            segments.append(self.attn_p(q_c1, p, p))
        if "E" in self.variant:
            if exemplar_ids is None:
                raise ValueError(f"variant {self.variant} needs exemplar_ids")
            e = self.encoder.encode(exemplar_ids, truncate=True)
            segments.append(self.attn_e(q_c2, e, e))
        return self.proj(ad.concat(segments, axis=0))
