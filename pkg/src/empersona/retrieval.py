"""Exemplar retrieval over three complementary embedding spaces.

A query context is scored against every indexed context by the sum of
three cosine similarities: a semantic space trained contrastively to
pull contexts toward their own responses, a style space trained to
separate listener archetypes, and an emotion space trained to classify
the speaker's emotion. Scanning is exact and linear; ties go to the
lowest index. The index serializes as a parameter container for the
three embedding matrices plus a JSON sidecar holding, for each entry,
the context text, the response, and the listener id.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import Tensor
from .corpus import EMOTIONS, Example
from .layers import Linear, Module, TextEncoder, mean_pool


class Embedder(Module):
    """Mean-pooled encoder with L2-normalized output vectors."""

    def __init__(self, vocab_size: int, d: int, heads: int, n_blocks: int,
                 d_ff: int, max_len: int, rng: np.random.Generator):
        self.encoder = TextEncoder(vocab_size, d, heads, n_blocks, d_ff, max_len, rng)
        self.d = d

    def embed_tensor(self, ids) -> Tensor:
        """Differentiable normalized embedding [1, d]."""
        v = mean_pool(self.encoder.encode(ids, truncate=True))
        norm = ad.sqrt(ad.add_const(ad.tsum(ad.mul(v, v)), 1e-12))
        return ad.div(v, norm)

    def embed(self, ids) -> np.ndarray:
        """Normalized embedding [d]; a zero pooled state embeds to zeros."""
        with ad.no_grad():
            v = mean_pool(self.encoder.encode(ids, truncate=True)).data[0]
        n = float(np.linalg.norm(v))
        if n == 0.0:
            return np.zeros_like(v)
        return (v / n).astype(v.dtype)


class ClassifierEmbedder(Embedder):
    """Embedder whose encoder is shaped by a classification objective."""

    def __init__(self, vocab_size: int, d: int, heads: int, n_blocks: int,
                 d_ff: int, max_len: int, n_classes: int, rng: np.random.Generator):
        super().__init__(vocab_size, d, heads, n_blocks, d_ff, max_len, rng)
        self.head = Linear(d, n_classes, rng)

    def class_loss(self, ids, label: int) -> Tensor:
        pooled = mean_pool(self.encoder.encode(ids, truncate=True))
        return ad.cross_entropy(self.head(pooled), [int(label)])


def style_label(ex: Example) -> int:
    """0 for outgoing listeners, 1 for reserved ones, by planted profile."""
    if ex.personality is None:
        raise ValueError(f"example {ex.conv_id} lacks a personality profile")
    return 0 if ex.personality["extraversion"] >= 0.0 else 1


def emotion_label(ex: Example) -> int:
    return EMOTIONS.index(ex.emotion)


def train_semantic(embedder: Embedder, examples, tokenizer, optimizer,
                   epochs: int, batch_size: int, rng: np.random.Generator,
                   temperature: float = 0.1) -> list[dict]:
    """In-batch contrastive training: each context must rank its own
    response above the other responses in the batch."""
    pairs = [(tokenizer.encode(ex.context_text()), tokenizer.encode(ex.response))
             for ex in examples]
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(pairs))
        total, n_batches = 0.0, 0
        for start in range(0, len(order), batch_size):
            chunk = [pairs[j] for j in order[start:start + batch_size]]
            if len(chunk) < 2:
                continue
            optimizer.zero_grad()
            c_rows = ad.concat([embedder.embed_tensor(c) for c, _ in chunk], axis=0)
            r_rows = ad.concat([embedder.embed_tensor(r) for _, r in chunk], axis=0)
            sims = ad.scale(ad.matmul(c_rows, ad.transpose(r_rows)), 1.0 / temperature)
            loss = ad.cross_entropy(sims, np.arange(len(chunk)))
            total += loss.item()
            n_batches += 1
            ad.backward(loss)
            optimizer.step()
        history.append({"epoch": epoch, "loss": total / max(n_batches, 1)})
    return history


def train_classifier(embedder: ClassifierEmbedder, examples, tokenizer, optimizer,
                     label_fn, epochs: int, batch_size: int,
                     rng: np.random.Generator) -> list[dict]:
    data = [(tokenizer.encode(ex.context_text()), label_fn(ex)) for ex in examples]
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(data))
        total = 0.0
        for start in range(0, len(order), batch_size):
            chunk = order[start:start + batch_size]
            optimizer.zero_grad()
            for j in chunk:
                ids, label = data[j]
                loss = ad.scale(embedder.class_loss(ids, label), 1.0 / len(chunk))
                total += loss.item() * len(chunk)
                ad.backward(loss)
            optimizer.step()
        history.append({"epoch": epoch, "loss": total / len(data)})
    return history


# ---------------------------------------------------------------------------
# index
# ---------------------------------------------------------------------------

@dataclass
class RetrievalIndex:
    semantic: np.ndarray  # [N, d] rows, L2-normalized
    style: np.ndarray
    emotion: np.ndarray
    entries: list[dict]   # {"context", "response", "listener_id"} per row

    def __len__(self):
        return len(self.entries)

    def save(self, ckpt_path, sidecar_path) -> None:
        checkpoint.save_params(ckpt_path, [
            ("semantic", self.semantic), ("style", self.style),
            ("emotion", self.emotion)])
        with open(sidecar_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump({"entries": self.entries}, fh, ensure_ascii=False)

    @classmethod
    def load(cls, ckpt_path, sidecar_path) -> "RetrievalIndex":
        mats = checkpoint.load_params(ckpt_path)
        entries = json.loads(Path(sidecar_path).read_text(encoding="utf-8"))["entries"]
        idx = cls(mats["semantic"], mats["style"], mats["emotion"], entries)
        if not (len(idx.semantic) == len(idx.style) == len(idx.emotion) == len(entries)):
            raise ValueError("retrieval index row counts disagree with sidecar")
        return idx


def build_index(embedders: dict, examples, tokenizer) -> RetrievalIndex:
    """Embed every example's context under all three spaces."""
    sem, sty, emo, entries = [], [], [], []
    for ex in examples:
        ids = tokenizer.encode(ex.context_text())
        sem.append(embedders["semantic"].embed(ids))
        sty.append(embedders["style"].embed(ids))
        emo.append(embedders["emotion"].embed(ids))
        entries.append({"context": ex.context_text(), "response": ex.response,
                        "listener_id": ex.listener_id})
    return RetrievalIndex(np.stack(sem), np.stack(sty), np.stack(emo), entries)


def retrieval_score(index: RetrievalIndex, q_sem, q_sty, q_emo) -> np.ndarray:
    """Summed cosine similarity of a query against every index row."""
    return (index.semantic @ np.asarray(q_sem)
            + index.style @ np.asarray(q_sty)
            + index.emotion @ np.asarray(q_emo)).astype(np.float64)


def retrieve(embedders: dict, index: RetrievalIndex, context_text: str,
             tokenizer, k: int = 1) -> list[tuple[int, float, dict]]:
    """Top-k (row, score, entry) by exact scan; equal scores keep the
    earliest row."""
    ids = tokenizer.encode(context_text)
    scores = retrieval_score(index,
                             embedders["semantic"].embed(ids),
                             embedders["style"].embed(ids),
                             embedders["emotion"].embed(ids))
    order = np.argsort(-scores, kind="stable")[:k]
    return [(int(i), float(scores[i]), index.entries[int(i)]) for i in order]


def sample_past_responses(pool: dict, listener_id: str, n: int,
                          rng: np.random.Generator, exclude: str | None = None) -> list[str]:
    """Up to ``n`` distinct entries from one listener's response history.

    ``exclude`` removes one occurrence (the query's own gold response)
    before sampling. Sampling is without replacement, so no pool entry
    is used twice even when responses repeat verbatim.
    """
    if listener_id not in pool:
        raise KeyError(f"unknown listener {listener_id!r}")
    items = list(pool[listener_id])
    if exclude is not None and exclude in items:
        items.remove(exclude)
    if not items:
        return []
    take = min(n, len(items))
    picks = rng.choice(len(items), size=take, replace=False)
    return [items[int(i)] for i in picks]
