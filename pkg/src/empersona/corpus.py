"""Synthetic empathetic-dialogue corpus with planted ground truth.

Every example pairs a short speaker context with a listener response.
Labels are planted by construction, never annotated after the fact:

* intent is the template family the response body came from;
* "ip" (interpretation) is true exactly for the four interpretive
  intents; "ex" (exploration) is true exactly when the response is a
  question (and only questions contain "?");
* "er" (emotion replication) is true exactly when the response carries
  a "that sounds <emotion-word>" clause echoing the speaker's emotion;
* personality comes from the listener's archetype with small per-
  listener jitter, and is planted through observable usage rates:
  expressive markers and exclamations scale with extraversion, hedge
  words with introversion, thinking-versus-feeling clauses with the
  thinking trait, and response length with extraversion.

The two archetypes use disjoint marker vocabularies; corpus generation
fails if their response unigram distributions ever come closer than
total-variation 0.3.

Modes differ only in how examples are split: "dialogue" shares
listeners across train/val/test and splits by conversation, while
"predictor" keeps the listener sets of the three splits disjoint.
"""

from __future__ import annotations

import json
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class CorpusError(ValueError):
    """Raised for schema violations and generation contract failures."""


# --------------------------------------------------------------------------
# inventories
# --------------------------------------------------------------------------

EMOTION_WORDS: dict[str, tuple[str, ...]] = {
    "joyful": ("happy", "excited", "delighted", "cheerful"),
    "sad": ("down", "heartbroken", "gloomy", "tearful"),
    "angry": ("furious", "annoyed", "irritated", "mad"),
    "afraid": ("scared", "nervous", "worried", "anxious"),
    "surprised": ("shocked", "stunned", "amazed", "startled"),
    "grateful": ("thankful", "blessed", "appreciative", "touched"),
    "lonely": ("isolated", "alone", "abandoned", "unseen"),
    "hopeful": ("optimistic", "encouraged", "confident", "upbeat"),
}
EMOTIONS: tuple[str, ...] = tuple(EMOTION_WORDS)

TOPICS: tuple[str, ...] = (
    "exam", "job", "interview", "boss", "sister", "brother", "mother",
    "father", "friend", "dog", "cat", "neighbor", "garden", "kitchen",
    "project", "deadline", "meeting", "trip", "flight", "wedding", "party",
    "game", "match", "recipe", "bicycle", "car", "apartment", "landlord",
    "doctor", "teacher", "violin", "lecture", "thesis", "roommate", "coach",
    "contract", "harvest", "storm", "move", "reunion", "audition", "bakery",
    "balcony", "band", "bank", "bridge", "bus", "camp", "choir", "clinic",
    "cottage", "course", "cousin", "debate", "dentist", "diploma", "escrow",
    "festival", "fence", "gym", "hike", "hospital", "hotel", "inspection",
    "lake", "laptop", "lawsuit", "library", "marathon", "market", "mentor",
    "museum", "orchard", "paycheck", "piano", "plumbing", "portfolio",
    "promotion", "puppy", "quarrel", "railway", "renovation", "rent",
    "retreat", "schedule", "scholarship", "semester", "shift", "studio",
    "surgery", "tournament", "transfer", "vacation", "visa", "workshop",
)

_SPEAKER_TEMPLATES = (
    "i feel so {w} about the {t}",
    "my {t} left me {w} today",
    "i have been {w} since the {t}",
    "the {t} keeps making me {w}",
    "honestly i am just {w} over the {t}",
)
_ACK_TEMPLATES = ("go on", "tell me more", "okay i am listening", "right")

INTENT_BODIES: dict[str, tuple[str, ...]] = {
    "questioning": (
        "what happened with the {t}",
        "how are you holding up now",
        "did the {t} change anything",
        "when did it start with the {t}",
    ),
    "acknowledging": (
        "i hear you about the {t}",
        "that really comes through",
        "i understand what you mean",
        "i get where you are coming from",
    ),
    "consoling": (
        "i am here for you",
        "you are not alone in this",
        "it will be okay soon",
        "lean on me whenever you need",
    ),
    "agreeing": (
        "you are right about that",
        "i agree with you completely",
        "that is a fair point",
        "no argument from me on the {t}",
    ),
    "encouraging": (
        "you can get through this",
        "keep going you are almost there",
        "you have what it takes",
        "do not give up on the {t}",
    ),
    "sympathizing": (
        "i am so sorry about the {t}",
        "that must be hard for you",
        "what a rough patch to walk through",
        "i am truly sorry you face this",
    ),
    "suggesting": (
        "you could try a short walk",
        "it might help to rest first",
        "talking it over could ease the {t}",
        "a small break from the {t} could help",
    ),
    "wishing": (
        "i wish you better days ahead",
        "hoping things turn around for you",
        "may tomorrow treat you kindly",
        "wishing you ease with the {t}",
    ),
    "neutral": (
        "thanks for sharing that",
        "that is quite a situation",
        "i see what you are saying",
        "noted about the {t}",
    ),
}
INTENTS: tuple[str, ...] = tuple(INTENT_BODIES)
IP_INTENTS = frozenset({"acknowledging", "agreeing", "sympathizing", "consoling"})

_ER_CLAUSES = ("that sounds {w}", "it sounds {w} to me")
_THINKING_CLAUSES = (
    "a sensible plan helps here",
    "try to analyze it with reason",
    "a practical step seems logical",
    "logical thinking will serve you",
)
_FEELING_CLAUSES = (
    "sending warmth and comfort your way",
    "your caring heart deserves ease",
    "hold close what love you have",
    "let tender comfort find you",
)
_FILLERS = {
    "expressive": ("and i mean that", "no doubt about it", "through and through",
                   "truly and fully"),
    "reserved": ("in my own time", "for what it is worth",
                 "as far as i can tell", "all things considered"),
}

_ER_PROB = 0.5


@dataclass(frozen=True)
class Archetype:
    name: str
    extraversion: float
    introverted: float
    thinking: float
    markers: tuple[str, ...]


ARCHETYPES: tuple[Archetype, ...] = (
    Archetype("expressive", 0.6, 0.2, 0.3,
              ("wow", "hey", "totally", "amazing", "awesome")),
    Archetype("reserved", -0.6, 0.8, 0.7,
              ("hmm", "perhaps", "quietly", "gently", "maybe")),
)
_HEDGES = ARCHETYPES[1].markers  # hedging doubles as the reserved marker set


# --------------------------------------------------------------------------
# tokenizer
# --------------------------------------------------------------------------

def _grammar_words() -> list[str]:
    words: set[str] = set()
    for tpl in (_SPEAKER_TEMPLATES + _ACK_TEMPLATES + _ER_CLAUSES
                + _THINKING_CLAUSES + _FEELING_CLAUSES
                + _FILLERS["expressive"] + _FILLERS["reserved"]):
        words.update(tpl.replace("{w}", "").replace("{t}", "").split())
    for bodies in INTENT_BODIES.values():
        for tpl in bodies:
            words.update(tpl.replace("{t}", "").split())
    for ws in EMOTION_WORDS.values():
        words.update(ws)
    words.update(TOPICS)
    for a in ARCHETYPES:
        words.update(a.markers)
    words.update({".", "!", "?"})
    return sorted(words)


class Tokenizer:
    """Closed word-level vocabulary derived from the corpus grammar.

    Ids 0-3 are <pad>, <unk>, <sep>, <eos>; control tokens for empathy
    signals and emotion follow, then the sorted word list. The mapping
    is a pure function of the grammar tables, so every run agrees.
    """

    PAD, UNK, SEP, EOS = "<pad>", "<unk>", "<sep>", "<eos>"

    def __init__(self):
        tokens = [self.PAD, self.UNK, self.SEP, self.EOS]
        for flag in ("er", "ip", "ex"):
            tokens += [f"<{flag}:0>", f"<{flag}:1>"]
        tokens += [f"<intent:{x}>" for x in INTENTS]
        tokens += [f"<emo:{x}>" for x in EMOTIONS]
        tokens += _grammar_words()
        self._tokens = tokens
        self._ids = {t: i for i, t in enumerate(tokens)}
        self.pad_id = self._ids[self.PAD]
        self.unk_id = self._ids[self.UNK]
        self.sep_id = self._ids[self.SEP]
        self.eos_id = self._ids[self.EOS]

    @property
    def vocab_size(self) -> int:
        return len(self._tokens)

    def token(self, i: int) -> str:
        return self._tokens[i]

    def encode(self, text: str) -> list[int]:
        return [self._ids.get(w, self.unk_id) for w in text.split()]

    def decode(self, ids) -> str:
        return " ".join(self._tokens[int(i)] for i in ids)

    def flag_token(self, flag: str, value: bool) -> int:
        return self._ids[f"<{flag}:{int(bool(value))}>"]

    def intent_token(self, intent: str) -> int:
        if intent not in INTENT_BODIES:
            raise CorpusError(f"unknown intent {intent!r}")
        return self._ids[f"<intent:{intent}>"]

    def emotion_token(self, emotion: str) -> int:
        if emotion not in EMOTION_WORDS:
            raise CorpusError(f"unknown emotion {emotion!r}")
        return self._ids[f"<emo:{emotion}>"]

    def control_ids(self, empathy: dict, emotion: str) -> list[int]:
        """Empathy-signal conditioning sequence: er, ip, ex, intent, emotion."""
        return [
            self.flag_token("er", empathy["er"]),
            self.flag_token("ip", empathy["ip"]),
            self.flag_token("ex", empathy["ex"]),
            self.intent_token(empathy["intent"]),
            self.emotion_token(emotion),
        ]


# --------------------------------------------------------------------------
# examples and serialization
# --------------------------------------------------------------------------

@dataclass
class Example:
    conv_id: str
    turns: list[dict]
    listener_id: str
    response: str
    emotion: str
    empathy: dict
    personality: dict | None = None

    def context_text(self, sep: str = " <sep> ") -> str:
        return sep.join(t["text"] for t in self.turns)

    def to_json(self) -> dict:
        return {
            "conv_id": self.conv_id,
            "turns": self.turns,
            "listener_id": self.listener_id,
            "response": self.response,
            "emotion": self.emotion,
            "empathy": self.empathy,
            "personality": self.personality,
        }


_REQUIRED = ("conv_id", "turns", "listener_id", "response", "emotion", "empathy")


def _validate(obj: dict, where: str) -> Example:
    for key in _REQUIRED:
        if key not in obj:
            raise CorpusError(f"{where}: missing field {key!r}")
    if not isinstance(obj["turns"], list) or not obj["turns"]:
        raise CorpusError(f"{where}: turns must be a non-empty list")
    for t in obj["turns"]:
        if not isinstance(t, dict) or t.get("role") not in ("speaker", "listener") \
                or not isinstance(t.get("text"), str):
            raise CorpusError(f"{where}: bad turn record {t!r}")
    emp = obj["empathy"]
    if not isinstance(emp, dict) or set(emp) != {"er", "ip", "ex", "intent"}:
        raise CorpusError(f"{where}: empathy must have er/ip/ex/intent")
    if emp["intent"] not in INTENT_BODIES:
        raise CorpusError(f"{where}: unknown intent {emp['intent']!r}")
    if obj["emotion"] not in EMOTION_WORDS:
        raise CorpusError(f"{where}: unknown emotion {obj['emotion']!r}")
    pers = obj.get("personality")
    if pers is not None and (not isinstance(pers, dict)
                             or set(pers) != {"extraversion", "introverted", "thinking"}):
        raise CorpusError(f"{where}: personality must be null or have all three traits")
    return Example(obj["conv_id"], obj["turns"], obj["listener_id"], obj["response"],
                   obj["emotion"], {"er": bool(emp["er"]), "ip": bool(emp["ip"]),
                                    "ex": bool(emp["ex"]), "intent": emp["intent"]},
                   pers)


def write_jsonl(path, examples) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_json(), ensure_ascii=False))
            fh.write("\n")


def read_jsonl(path) -> list[Example]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path} line {i}: invalid JSON ({e.msg})") from None
            out.append(_validate(obj, f"{path} line {i}"))
    return out


def listener_pool(examples) -> "OrderedDict[str, list[str]]":
    """Responses per listener, in corpus order."""
    pool: OrderedDict[str, list[str]] = OrderedDict()
    for ex in examples:
        pool.setdefault(ex.listener_id, []).append(ex.response)
    return pool


# --------------------------------------------------------------------------
# generation
# --------------------------------------------------------------------------

@dataclass
class CorpusConfig:
    n_listeners: int = 40
    convs_per_listener: int = 25
    seed: int = 0
    mode: str = "dialogue"  # or "predictor"
    jitter: float = 0.1
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)


@dataclass
class Listener:
    listener_id: str
    archetype: Archetype
    extraversion: float
    introverted: float
    thinking: float

    @property
    def profile(self) -> dict:
        return {"extraversion": self.extraversion, "introverted": self.introverted,
                "thinking": self.thinking}


def _make_listeners(cfg: CorpusConfig, rng: np.random.Generator) -> list[Listener]:
    out = []
    for i in range(cfg.n_listeners):
        arch = ARCHETYPES[i % len(ARCHETYPES)]
        j = cfg.jitter
        out.append(Listener(
            f"L{i:03d}", arch,
            float(np.clip(arch.extraversion + rng.uniform(-j, j), -1.0, 1.0)),
            float(np.clip(arch.introverted + rng.uniform(-j, j), 0.0, 1.0)),
            float(np.clip(arch.thinking + rng.uniform(-j, j), 0.0, 1.0)),
        ))
    return out


def _pick(rng: np.random.Generator, seq):
    return seq[int(rng.integers(len(seq)))]


def _speaker_turn(rng, emotion: str, topic: str) -> str:
    return _pick(rng, _SPEAKER_TEMPLATES).format(w=_pick(rng, EMOTION_WORDS[emotion]),
                                                 t=topic)


def _response(rng, lis: Listener, emotion: str, topic: str):
    """Build one listener response; returns (text, empathy_labels)."""
    intent = _pick(rng, INTENTS)
    # both archetypes lean on their own marker set; rate rises with extraversion
    marker_p = 0.4 + 0.6 * (1.0 + lis.extraversion) / 2.0
    parts = []
    if rng.random() < marker_p:
        parts.append(_pick(rng, lis.archetype.markers))
    if rng.random() < lis.introverted:
        parts.append(_pick(rng, _HEDGES))
    if rng.random() < lis.introverted / 2.0:
        parts.append(_pick(rng, _HEDGES))
    parts.append(_pick(rng, INTENT_BODIES[intent]).format(t=topic))
    er = rng.random() < _ER_PROB
    if er:
        parts.append(_pick(rng, _ER_CLAUSES).format(w=_pick(rng, EMOTION_WORDS[emotion])))
    pool = _THINKING_CLAUSES if rng.random() < lis.thinking else _FEELING_CLAUSES
    parts.append(_pick(rng, pool))
    if rng.random() < (1.0 + lis.extraversion) / 2.0:
        parts.append(_pick(rng, _FILLERS[lis.archetype.name]))
    if rng.random() < marker_p:
        parts.append(_pick(rng, lis.archetype.markers))  # closing marker slot
    if intent == "questioning":
        punct = "?"
    elif rng.random() < (1.0 + lis.extraversion) / 2.0:
        punct = "!"
    else:
        punct = "."
    text = " ".join(parts) + " " + punct
    labels = {"er": er, "ip": intent in IP_INTENTS,
              "ex": intent == "questioning", "intent": intent}
    return text, labels


def _conversation(rng, conv_idx: int, lis: Listener) -> Example:
    emotion = _pick(rng, EMOTIONS)
    topic = _pick(rng, TOPICS)
    turns = [{"role": "speaker", "text": _speaker_turn(rng, emotion, topic)}]
    if rng.random() < 0.5:
        turns.append({"role": "listener", "text": _pick(rng, _ACK_TEMPLATES)})
        turns.append({"role": "speaker", "text": _speaker_turn(rng, emotion, topic)})
    text, labels = _response(rng, lis, emotion, topic)
    return Example(f"c{conv_idx:05d}", turns, lis.listener_id, text, emotion,
                   labels, lis.profile)


def archetype_unigram_tv(examples) -> float:
    """Total variation between the two archetypes' response word distributions."""
    counts = {a.name: Counter() for a in ARCHETYPES}
    arch_of = {}
    for ex in examples:
        if ex.listener_id not in arch_of:
            idx = int(ex.listener_id[1:]) % len(ARCHETYPES)
            arch_of[ex.listener_id] = ARCHETYPES[idx].name
        counts[arch_of[ex.listener_id]].update(ex.response.split())
    dists = []
    for a in ARCHETYPES:
        total = sum(counts[a.name].values())
        if total == 0:
            raise CorpusError(f"no responses for archetype {a.name!r}")
        dists.append({w: c / total for w, c in counts[a.name].items()})
    # sorted so the float accumulation order is process-independent
    words = sorted(set(dists[0]) | set(dists[1]))
    return 0.5 * sum(abs(dists[0].get(w, 0.0) - dists[1].get(w, 0.0)) for w in words)


def _split_sizes(n: int, split, flip: bool = False) -> tuple[int, int, int]:
    """Integer 3-way split; exact halves alternate by ``flip`` so that
    per-listener rounding still hits the global ratio."""
    n_train = int(n * split[0] + 0.5)
    rest = n - n_train
    denom = split[1] + split[2]
    b_exact = rest * split[1] / denom if denom else 0.0
    n_val = int(b_exact)
    frac = b_exact - n_val
    if frac > 0.5 or (frac == 0.5 and flip):
        n_val += 1
    return n_train, n_val, rest - n_val


def generate_corpus(cfg: CorpusConfig):
    """Returns (train, val, test) example lists for the configured mode."""
    if cfg.mode not in ("dialogue", "predictor"):
        raise CorpusError(f"unknown corpus mode {cfg.mode!r}")
    rng = np.random.default_rng(cfg.seed)
    listeners = _make_listeners(cfg, rng)
    by_listener: list[list[Example]] = []
    conv_idx = 0
    for lis in listeners:
        convs = []
        for _ in range(cfg.convs_per_listener):
            convs.append(_conversation(rng, conv_idx, lis))
            conv_idx += 1
        by_listener.append(convs)

    train, val, test = [], [], []
    if cfg.mode == "dialogue":
        # every listener contributes to every split
        for i, convs in enumerate(by_listener):
            a, b, _ = _split_sizes(len(convs), cfg.split, flip=i % 2 == 0)
            train += convs[:a]
            val += convs[a:a + b]
            test += convs[a + b:]
    else:
        # listener-disjoint splits
        a, b, _ = _split_sizes(len(listeners), cfg.split)
        for i, convs in enumerate(by_listener):
            (train if i < a else val if i < a + b else test).extend(convs)

    tv = archetype_unigram_tv(train + val + test)
    if tv < 0.3:
        raise CorpusError(
            f"archetype separation too weak: unigram TV {tv:.3f} < 0.3")
    return train, val, test
