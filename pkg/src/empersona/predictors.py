"""Response-level predictors: personality regression and empathy signals.

One encoder-plus-head model per task. The personality head squashes
extraversion with tanh (range [-1, 1]) and the introverted / thinking
probabilities with sigmoids, so an all-zero head predicts the neutral
profile (0.0, 0.5, 0.5). Classification heads are plain logits; class
decisions take the argmax with ties resolved toward the lowest class
index, which for the binary signals means a tie reads as False.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import metrics
from .autodiff import Tensor
from .corpus import EMOTIONS, INTENTS, Example
from .layers import Linear, Module, TextEncoder, mean_pool

TASK_SIZES = {"personality": 3, "er": 2, "ip": 2, "ex": 2,
              "intent": len(INTENTS), "emotion": len(EMOTIONS)}
CLASSIFIER_TASKS = ("er", "ip", "ex", "intent", "emotion")


def make_target(task: str, ex: Example):
    if task == "personality":
        if ex.personality is None:
            raise ValueError(f"example {ex.conv_id} has no personality profile")
        p = ex.personality
        return np.array([p["extraversion"], p["introverted"], p["thinking"]])
    if task in ("er", "ip", "ex"):
        return int(bool(ex.empathy[task]))
    if task == "intent":
        return INTENTS.index(ex.empathy["intent"])
    if task == "emotion":
        return EMOTIONS.index(ex.emotion)
    raise ValueError(f"unknown predictor task {task!r}")


class ResponsePredictor(Module):
    """Mean-pooled text encoder with a task head over the pooled state."""

    def __init__(self, task: str, vocab_size: int, d: int, heads: int,
                 n_blocks: int, d_ff: int, max_len: int, rng: np.random.Generator):
        if task not in TASK_SIZES:
            raise ValueError(f"unknown predictor task {task!r}")
        self.encoder = TextEncoder(vocab_size, d, heads, n_blocks, d_ff, max_len, rng)
        self.head = Linear(d, TASK_SIZES[task], rng)
        self.task = task

    def forward(self, ids) -> Tensor:
        """Raw head output [1, n_out] for one token sequence."""
        return self.head(mean_pool(self.encoder.encode(ids, truncate=True)))

    def profile_tensor(self, ids) -> Tensor:
        """Squashed personality prediction [1, 3]; personality task only."""
        if self.task != "personality":
            raise ValueError(f"profile requested from {self.task!r} predictor")
        h = self.forward(ids)
        return ad.concat([
            ad.tanh(ad.slice_axis(h, 0, 1, axis=1)),
            ad.sigmoid(ad.slice_axis(h, 1, 2, axis=1)),
            ad.sigmoid(ad.slice_axis(h, 2, 3, axis=1)),
        ], axis=1)

    def predict_profile(self, ids) -> tuple[float, float, float]:
        with ad.no_grad():
            p = self.profile_tensor(ids).data[0]
        return float(p[0]), float(p[1]), float(p[2])

    def predict_class(self, ids) -> int:
        if self.task == "personality":
            raise ValueError("personality predictor has no class decision")
        with ad.no_grad():
            logits = self.forward(ids).data[0]
        return int(np.argmax(logits))  # ties fall to the lowest index

    def loss(self, ids, target) -> Tensor:
        if self.task == "personality":
            diff = ad.sub(self.profile_tensor(ids), Tensor(np.asarray(target)[None, :]))
            return ad.tmean(ad.mul(diff, diff))
        return ad.cross_entropy(self.forward(ids), [int(target)])


def train_predictor(model: ResponsePredictor, examples, tokenizer, optimizer,
                    epochs: int, batch_size: int, rng: np.random.Generator) -> list[dict]:
    """Minibatch training with gradient accumulation; returns loss history."""
    encoded = [(tokenizer.encode(ex.response), make_target(model.task, ex))
               for ex in examples]
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(encoded))
        total = 0.0
        for start in range(0, len(order), batch_size):
            chunk = order[start:start + batch_size]
            optimizer.zero_grad()
            for j in chunk:
                ids, target = encoded[j]
                loss = ad.scale(model.loss(ids, target), 1.0 / len(chunk))
                total += loss.item() * len(chunk)
                ad.backward(loss)
            optimizer.step()
        history.append({"epoch": epoch, "loss": total / len(encoded)})
    return history


def evaluate_predictor(model: ResponsePredictor, examples, tokenizer) -> dict:
    """Task-appropriate metrics; unused fields stay None."""
    out = {"task": model.task, "accuracy": None, "balanced_accuracy": None,
           "f1": None, "pearson": None, "spearman": None, "n_eval": len(examples)}
    if model.task == "personality":
        preds, golds = [], []
        for ex in examples:
            preds.append(model.predict_profile(tokenizer.encode(ex.response)))
            golds.append(make_target("personality", ex))
        preds = np.array(preds)
        golds = np.array(golds)
        traits = ("extraversion", "introverted", "thinking")
        out["pearson"] = {t: metrics.pearson(preds[:, i], golds[:, i])
                          for i, t in enumerate(traits)}
        out["spearman"] = {t: metrics.spearman(preds[:, i], golds[:, i])
                           for i, t in enumerate(traits)}
        return out
    y_true = [make_target(model.task, ex) for ex in examples]
    y_pred = [model.predict_class(tokenizer.encode(ex.response)) for ex in examples]
    out.update(metrics.classification_metrics(y_true, y_pred,
                                              n_classes=TASK_SIZES[model.task]))
    return out


def classify_empathy(models: dict, ids) -> dict:
    """Empathy signals for one response from the er/ip/ex/intent predictors."""
    return {
        "er": bool(models["er"].predict_class(ids)),
        "ip": bool(models["ip"].predict_class(ids)),
        "ex": bool(models["ex"].predict_class(ids)),
        "intent": INTENTS[models["intent"].predict_class(ids)],
    }


def predict_emotion(models: dict, ids) -> str:
    return EMOTIONS[models["emotion"].predict_class(ids)]


def average_profiles(profiles) -> tuple[float, float, float]:
    """Mean of per-response profiles, clamped to each trait's range."""
    arr = np.asarray(list(profiles), dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] == 0:
        raise ValueError("expected a non-empty list of (e, i, t) profiles")
    m = arr.mean(axis=0)
    return (float(np.clip(m[0], -1.0, 1.0)), float(np.clip(m[1], 0.0, 1.0)),
            float(np.clip(m[2], 0.0, 1.0)))


def estimate_listener_personality(model: ResponsePredictor, tokenizer,
                                  responses) -> tuple[float, float, float]:
    """Listener-level profile: average of per-response predictions."""
    return average_profiles([model.predict_profile(tokenizer.encode(r))
                             for r in responses])
