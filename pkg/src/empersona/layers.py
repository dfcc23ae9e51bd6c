"""Neural building blocks: modules, attention, pre-norm transformer encoder.

Modules discover their parameters by walking instance attributes in
definition order, so parameter naming and iteration order are stable
across runs. Every layer takes an ``numpy.random.Generator`` at
construction; nothing touches global RNG state.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Module:
    """Base class providing recursive, insertion-ordered parameter discovery."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = prefix + name
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def n_params(self) -> int:
        return sum(p.data.size for p in self.parameters())


class Linear(Module):
    """y = x W + b for row-stacked inputs [n, d_in]."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(d_in)
        self.weight = parameter(rng.uniform(-bound, bound, size=(d_in, d_out)))
        self.bias = parameter(rng.uniform(-bound, bound, size=(d_out,)))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.weight), self.bias)


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator, scale: float = 0.02):
        self.weight = parameter(rng.normal(0.0, scale, size=(n, d)))

    def __call__(self, ids) -> Tensor:
        return ad.gather_rows(self.weight, ids)


class LayerNorm(Module):
    """Last-axis normalization with learned gain and shift."""

    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = parameter(np.ones(d))
        self.shift = parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.mul(ad.layer_norm(x, eps=self.eps), self.gain), self.shift)


class MultiHeadAttention(Module):
    """Scaled dot-product attention over row-stacked sequences.

    ``forward(q, k, v)`` takes [Tq, d] queries and [Tk, d] keys/values and
    returns [Tq, d]. ``mask`` is an optional [Tq, Tk] boolean keep-mask.
    Scores are scaled by 1/sqrt(d/heads).
    """

    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads != 0:
            raise ValueError(f"model dim {d} not divisible by {heads} heads")
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)
        self.heads = heads
        self.d_head = d // heads

    def __call__(self, q_in: Tensor, k_in: Tensor, v_in: Tensor,
                 mask: np.ndarray | None = None) -> Tensor:
        q, k, v = self.wq(q_in), self.wk(k_in), self.wv(v_in)
        scale = 1.0 / math.sqrt(self.d_head)
        outs = []
        for h in range(self.heads):
            lo, hi = h * self.d_head, (h + 1) * self.d_head
            qh = ad.slice_axis(q, lo, hi, axis=1)
            kh = ad.slice_axis(k, lo, hi, axis=1)
            vh = ad.slice_axis(v, lo, hi, axis=1)
            scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), scale)
            attn = ad.softmax(scores, axis=-1, mask=mask)
            outs.append(ad.matmul(attn, vh))
        return self.wo(ad.concat(outs, axis=1))


class FeedForward(Module):
    def __init__(self, d: int, d_ff: int, rng: np.random.Generator):
        self.up = Linear(d, d_ff, rng)
        self.down = Linear(d_ff, d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(ad.relu(self.up(x)))


class TransformerBlock(Module):
    """Pre-norm residual block: x + attn(ln(x)), then x + ff(ln(x))."""

    def __init__(self, d: int, heads: int, d_ff: int, rng: np.random.Generator):
        self.ln_attn = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.ln_ff = LayerNorm(d)
        self.ff = FeedForward(d, d_ff, rng)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        h = self.ln_attn(x)
        x = ad.add(x, self.attn(h, h, h, mask=mask))
        return ad.add(x, self.ff(self.ln_ff(x)))


def mean_pool(h: Tensor) -> Tensor:
    """Average [T, d] hidden states into a [1, d] row."""
    return ad.reshape(ad.tmean(h, axis=0), (1, h.shape[1]))


class TextEncoder(Module):
    """Bidirectional transformer encoder producing per-token states [T, d]."""

    def __init__(self, vocab_size: int, d: int, heads: int, n_blocks: int,
                 d_ff: int, max_len: int, rng: np.random.Generator):
        self.tok = Embedding(vocab_size, d, rng)
        self.pos = Embedding(max_len, d, rng)
        self.blocks = [TransformerBlock(d, heads, d_ff, rng) for _ in range(n_blocks)]
        self.ln_out = LayerNorm(d)
        self.max_len = max_len
        self.d = d

    def encode(self, ids, truncate: bool = False) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size == 0:
            raise ValueError("cannot encode an empty token sequence")
        if ids.size > self.max_len:
            if not truncate:
                raise ValueError(
                    f"sequence length {ids.size} exceeds max_len {self.max_len}")
            ids = ids[: self.max_len]
        x = ad.add(self.tok(ids), self.pos(np.arange(ids.size)))
        for block in self.blocks:
            x = block(x)
        return self.ln_out(x)
