"""Decoding strategies: nucleus sampling, beam search, diverse beam search.

All scoring happens in float64 log space via a shared log-softmax
helper; every selection and tie is resolved deterministically, so a
fixed seed reproduces a decode bit for bit. Beam search and diverse
beam search are written as separate procedures on purpose: their
agreement in the single-group zero-penalty case is one of the checks
in the test suite, and that check is only meaningful if the two do not
share a code path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad


def _next_logits(decoder, prefix, ids) -> np.ndarray:
    with ad.no_grad():
        logits = decoder.forward_with_prefix(prefix, ids)
    return logits.data[-1].astype(np.float64)


def log_softmax(v: np.ndarray) -> np.ndarray:
    s = v - v.max()
    return s - np.log(np.exp(s).sum())


@dataclass(frozen=True)
class Candidate:
    """One decoded hypothesis; ``tokens`` excludes the seed and any <eos>."""
    tokens: tuple[int, ...]
    norm_logprob: float   # raw_logprob / n_scored
    raw_logprob: float    # sum of token log-probs, <eos> included when emitted
    n_scored: int         # tokens scored, <eos> included when emitted
    ended: bool           # True if the hypothesis emitted <eos>
    group: int = 0


@dataclass
class CandidateSet:
    candidates: list[Candidate] = field(default_factory=list)

    def __len__(self):
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def __getitem__(self, i):
        return self.candidates[i]

    def texts(self, tokenizer) -> list[str]:
        return [tokenizer.decode(c.tokens) for c in self.candidates]


# ---------------------------------------------------------------------------
# nucleus sampling
# ---------------------------------------------------------------------------

def nucleus_step(logits: np.ndarray, top_p: float, temperature: float,
                 rng: np.random.Generator) -> int:
    """Sample one token from the smallest probability mass >= top_p.

    Probabilities are sorted descending with token id as the tie-break;
    the selected set is renormalized before sampling. Tokens outside
    the nucleus have exactly zero probability of being chosen.
    """
    if not 0.0 < top_p <= 1.0:
        raise ValueError(f"top_p must be in (0, 1], got {top_p}")
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max()
    probs = np.exp(z)
    probs /= probs.sum()
    order = np.lexsort((np.arange(probs.size), -probs))
    cum = np.cumsum(probs[order])
    k = min(int(np.searchsorted(cum, top_p, side="left")) + 1, probs.size)
    nucleus = order[:k]
    renorm = probs[nucleus] / probs[nucleus].sum()
    return int(rng.choice(nucleus, p=renorm))


def nucleus_sample(decoder, prefix, start_ids, eos_id: int, rng: np.random.Generator,
                   max_new: int, top_p: float = 0.8, temperature: float = 0.7) -> list[int]:
    """Autoregressive sampling; returns generated ids without the <eos>."""
    ids = [int(i) for i in start_ids]
    out: list[int] = []
    for _ in range(max_new):
        tok = nucleus_step(_next_logits(decoder, prefix, ids), top_p, temperature, rng)
        if tok == eos_id:
            break
        out.append(tok)
        ids.append(tok)
        if len(ids) >= decoder.max_len:
            break
    return out


# ---------------------------------------------------------------------------
# standard beam search
# ---------------------------------------------------------------------------

def _rank_finished(finished) -> list[Candidate]:
    # finished entries: (tokens, raw, n_scored, ended, seq_no)
    order = sorted(finished, key=lambda f: (-(f[1] / f[2]), f[4]))
    return [Candidate(tuple(t), r / n, r, n, e) for t, r, n, e, _ in order]


def beam_search(decoder, prefix, start_ids, eos_id: int, beam_size: int,
                max_new: int) -> CandidateSet:
    """Length-normalized beam search over the full vocabulary.

    Candidate selection at each step sorts by (-score, parent beam,
    token id); hypotheses that emit <eos> retire, the rest continue
    until ``max_new`` steps, at which point survivors are force-ended
    without an <eos> term. The best ``beam_size`` hypotheses are
    returned sorted by per-token log-probability.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    start = [int(i) for i in start_ids]
    max_new = min(max_new, decoder.max_len - len(start))
    if max_new < 1:
        raise ValueError("no room to generate: start_ids fill the decoder window")
    live = [(start, 0.0)]  # (ids so far, raw logprob)
    finished = []
    seq_no = 0
    for _ in range(max_new):
        if not live:
            break
        rows = np.stack([log_softmax(_next_logits(decoder, prefix, ids))
                         for ids, _ in live])
        totals = rows + np.array([raw for _, raw in live])[:, None]
        n_beams, v = totals.shape
        flat = totals.ravel()
        beam_ix = np.repeat(np.arange(n_beams), v)
        tok_ix = np.tile(np.arange(v), n_beams)
        order = np.lexsort((tok_ix, beam_ix, -flat))
        room = beam_size - len(finished)
        new_live = []
        for j in order[:room]:
            bi, tok = int(beam_ix[j]), int(tok_ix[j])
            raw = float(flat[j])
            gen = live[bi][0][len(start):] + [tok]
            if tok == eos_id:
                finished.append((gen[:-1], raw, len(gen), True, seq_no))
            else:
                new_live.append((live[bi][0] + [tok], raw))
            seq_no += 1
        live = new_live
    for ids, raw in live:
        gen = ids[len(start):]
        finished.append((gen, raw, max(len(gen), 1), False, seq_no))
        seq_no += 1
    return CandidateSet(_rank_finished(finished)[:beam_size])


# ---------------------------------------------------------------------------
# diverse beam search
# ---------------------------------------------------------------------------

def diverse_beam_search(decoder, prefix, start_ids, eos_id: int, beam_size: int,
                        max_new: int, groups: int | None = None,
                        gamma: float = 0.5) -> CandidateSet:
    """Group-wise diverse beam search with a Hamming diversity penalty.

    Beams are partitioned into ``groups`` (default: one beam per group).
    At every time step the groups act in order; a token selected by an
    earlier group at the same step costs each later group ``gamma`` per
    occurrence in its selection scores. Penalties steer selection only:
    reported log-probabilities are the raw model scores. Output keeps
    group order, best hypothesis first within each group.
    """
    if groups is None:
        groups = beam_size
    if beam_size % groups != 0:
        raise ValueError(f"beam_size {beam_size} not divisible by {groups} groups")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    width = beam_size // groups
    start = [int(i) for i in start_ids]
    max_new = min(max_new, decoder.max_len - len(start))
    if max_new < 1:
        raise ValueError("no room to generate: start_ids fill the decoder window")
    # per group: live [(ids, raw, penalized)], finished [(tokens, raw, n, ended, seq)]
    live = [[(start, 0.0, 0.0)] for _ in range(groups)]
    finished = [[] for _ in range(groups)]
    seq_no = 0
    for _ in range(max_new):
        if not any(live):
            break
        counts = np.zeros(decoder.vocab_size)
        for g in range(groups):
            if not live[g]:
                continue
            rows = np.stack([log_softmax(_next_logits(decoder, prefix, ids))
                             for ids, _, _ in live[g]])
            raws = rows + np.array([r for _, r, _ in live[g]])[:, None]
            pens = rows - gamma * counts[None, :] \
                + np.array([p for _, _, p in live[g]])[:, None]
            n_beams, v = pens.shape
            flat_pen = pens.ravel()
            flat_raw = raws.ravel()
            beam_ix = np.repeat(np.arange(n_beams), v)
            tok_ix = np.tile(np.arange(v), n_beams)
            order = np.lexsort((tok_ix, beam_ix, -flat_pen))
            room = width - len(finished[g])
            new_live = []
            for j in order[:room]:
                bi, tok = int(beam_ix[j]), int(tok_ix[j])
                raw, pen = float(flat_raw[j]), float(flat_pen[j])
                counts[tok] += 1.0
                gen = live[g][bi][0][len(start):] + [tok]
                if tok == eos_id:
                    finished[g].append((gen[:-1], raw, len(gen), True, seq_no))
                else:
                    new_live.append((live[g][bi][0] + [tok], raw, pen))
                seq_no += 1
            live[g] = new_live
    out: list[Candidate] = []
    for g in range(groups):
        pool = list(finished[g])
        for ids, raw, _ in live[g]:
            gen = ids[len(start):]
            pool.append((gen, raw, max(len(gen), 1), False, seq_no))
            seq_no += 1
        for c in _rank_finished(pool)[:width]:
            out.append(Candidate(c.tokens, c.norm_logprob, c.raw_logprob,
                                 c.n_scored, c.ended, group=g))
    return CandidateSet(out)
