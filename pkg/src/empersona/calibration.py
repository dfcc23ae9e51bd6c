"""Personality-reinforcement calibration: margins and the ranking loss.

Candidates for a context are ordered by how close their predicted
personality lands to the target listener profile (squared Euclidean
margin, stable ascending sort). The ranking loss then demands that the
model's length-normalized log-likelihood respects that order, with a
rank-scaled slack: for candidates i before j, lp_i should beat lp_j by
at least alpha * (j - i). Combined training objective is the token NLL
plus beta times the ranking loss.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

TRAITS = ("extraversion", "introverted", "thinking")


def personality_margin(target, pred) -> float:
    """Squared distance between two (extraversion, introverted, thinking)
    profiles; dict or 3-sequence inputs accepted."""
    t = _as_triple(target)
    p = _as_triple(pred)
    return float(sum((pi - ti) ** 2 for pi, ti in zip(p, t)))


def _as_triple(x):
    if isinstance(x, dict):
        return tuple(float(x[k]) for k in TRAITS)
    x = tuple(float(v) for v in x)
    if len(x) != 3:
        raise ValueError(f"personality profile needs 3 traits, got {len(x)}")
    return x


def margin_order(margins) -> list[int]:
    """Indices sorted by ascending margin; equal margins keep input order."""
    return [int(i) for i in np.argsort(np.asarray(margins, dtype=np.float64),
                                       kind="stable")]


def pairwise_margin_loss(logprobs, alpha: float) -> Tensor:
    """Hinge ranking loss over margin-ordered candidate log-probabilities.

    ``logprobs`` must already be in best-first margin order; each gets
    a scalar tensor. Terms accumulate as a plain i < j double loop, so
    a brute-force reference computes the identical float result.
    """
    lps = list(logprobs)
    k = len(lps)
    if k < 2:
        dtype = lps[0].dtype if lps else None
        return Tensor(0.0, dtype=dtype)
    total = None
    for i in range(k):
        for j in range(i + 1, k):
            term = ad.relu(ad.add_const(ad.sub(lps[j], lps[i]), alpha * (j - i)))
            total = term if total is None else ad.add(total, term)
    return total


def combined_loss(nll: Tensor, ranking: Tensor, beta: float) -> Tensor:
    return ad.add(nll, ad.scale(ranking, beta))


def rank_by_profile(candidate_token_lists, personality_model, target_profile):
    """Order candidate token sequences by margin to the target profile.

    Returns (order, margins) where ``order`` indexes the input list
    best-first and ``margins`` aligns with the input order.
    """
    margins = []
    for toks in candidate_token_lists:
        if len(toks) == 0:
            pred = (0.0, 0.5, 0.5)  # no text to read: neutral profile
        else:
            pred = personality_model.predict_profile(list(toks))
        margins.append(personality_margin(target_profile, pred))
    return margin_order(margins), margins
