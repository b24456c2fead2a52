"""Vocabulary, masked-LM corruption, and a templated toy corpus with gold dependency heads."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, VocabularyError

UNK, PAD, MASK = "<unk>", "<pad>", "<mask>"
SPECIALS = (UNK, PAD, MASK)


@dataclass
class Vocab:
    itos: list[str]
    min_freq: int = 1
    stoi: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ContractError("duplicate token in vocabulary")
        for s in SPECIALS:
            if s not in self.stoi:
                raise ContractError(f"vocabulary lacks {s}")

    def __len__(self) -> int:
        return len(self.itos)

    @property
    def unk(self) -> int:
        return self.stoi[UNK]

    @property
    def pad(self) -> int:
        return self.stoi[PAD]

    @property
    def mask(self) -> int:
        return self.stoi[MASK]

    def encode(self, tokens) -> list[int]:
        unk = self.unk
        return [self.stoi.get(t, unk) for t in tokens]

    def encode_strict(self, tokens) -> list[int]:
        try:
            return [self.stoi[t] for t in tokens]
        except KeyError as e:
            raise VocabularyError(f"token {e.args[0]!r} not in vocabulary") from None

    def decode(self, ids) -> list[str]:
        return [self.itos[int(i)] for i in ids]

    def to_dict(self) -> dict:
        return {"itos": self.itos, "min_freq": self.min_freq}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(list(d["itos"]), int(d.get("min_freq", 1)))


def build_vocab(corpus, min_freq: int = 1) -> Vocab:
    """Tokens seen at least ``min_freq`` times, ordered by (-frequency, token), then the specials."""
    counts: Counter = Counter()
    for sent in corpus:
        counts.update(sent.split() if isinstance(sent, str) else sent)
    if not counts:
        raise ContractError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_freq and t not in SPECIALS),
                  key=lambda t: (-counts[t], t))
    return Vocab(kept + list(SPECIALS), min_freq)


@dataclass
class MaskedBatch:
    inputs: np.ndarray      # ids with <mask> substituted
    targets: np.ndarray     # original ids
    positions: np.ndarray   # bool, True where a token was masked


def mask_tokens(ids, rate: float, rng: np.random.Generator, vocab: Vocab) -> MaskedBatch:
    """Replace each maskable token by <mask> independently with probability ``rate``."""
    if not 0.0 < rate < 1.0:
        raise ContractError(f"mask rate must lie strictly between 0 and 1, got {rate}")
    ids = np.asarray(ids, dtype=np.int64)
    draw = rng.random(ids.shape) < rate
    maskable = (ids != vocab.unk) & (ids != vocab.pad)
    pos = draw & maskable
    inputs = np.where(pos, vocab.mask, ids)
    return MaskedBatch(inputs, ids.copy(), pos)


# ---------------------------------------------------------------------------
# templated toy corpus
# ---------------------------------------------------------------------------

# nouns come in two semantic classes; each verb selects a subject and an object class,
# and determiners/verbs agree in number with their noun
_NOUNS = {
    "animate": ["dog", "cat", "girl", "boy", "bird", "farmer"],
    "food": ["apple", "bread", "fish", "cake", "seed", "soup"],
    "place": ["park", "house", "river", "garden", "market", "hill"],
}
_VERBS = {"eat": "food", "see": "animate", "like": "animate", "cook": "food", "chase": "animate"}
_ADJS = ["big", "small", "red", "old", "happy", "warm"]
_PREPS = ["near", "in", "behind"]


def _noun_phrase(rng, cls: str, plural: bool) -> list[str]:
    """DET ADJ? NOUN; the noun is the last token and heads the others."""
    det = ("some" if rng.random() < 0.5 else "the") if plural else ("a" if rng.random() < 0.5 else "the")
    noun = _NOUNS[cls][rng.integers(len(_NOUNS[cls]))] + ("s" if plural else "")
    adjs = [_ADJS[rng.integers(len(_ADJS))] for _ in range(int(rng.integers(0, 2)))]
    return [det, *adjs, noun]


def _attach(toks: list[str], heads: list[int], phrase: list[str], parent: int) -> int:
    """Append a noun phrase whose noun depends on ``parent`` (1-based); returns the noun's index."""
    start = len(toks)
    noun = start + len(phrase)           # 1-based position of the last token
    toks += phrase
    heads += [noun] * (len(phrase) - 1) + [parent]
    return noun


def gen_toy_corpus(rng: np.random.Generator, count: int) -> list[dict]:
    """Sentences ``NP_subj VERB NP_obj [PREP NP_place]`` with gold heads (1-based, 0 = root)."""
    out = []
    verbs = sorted(_VERBS)
    for _ in range(count):
        verb = verbs[rng.integers(len(verbs))]
        subj_pl = bool(rng.random() < 0.5)
        subj = _noun_phrase(rng, "animate", subj_pl)
        v = len(subj) + 1
        toks: list[str] = []
        heads: list[int] = []
        _attach(toks, heads, subj, v)
        toks.append(verb if subj_pl else verb + "s")
        heads.append(0)
        _attach(toks, heads, _noun_phrase(rng, _VERBS[verb], bool(rng.random() < 0.5)), v)
        if rng.random() < 0.5:
            toks.append(_PREPS[rng.integers(len(_PREPS))])
            heads.append(v)
            _attach(toks, heads, _noun_phrase(rng, "place", bool(rng.random() < 0.5)), len(toks))
        out.append({"tokens": toks, "heads": heads})
    return out


def unigram_perplexity(train_sentences, eval_tokens, vocab: Vocab, smoothing: float = 1.0) -> float:
    """Add-``smoothing`` unigram model estimated on the training sentences."""
    counts = np.full(len(vocab), smoothing)
    for sent in train_sentences:
        for i in vocab.encode(sent):
            counts[i] += 1
    logp = np.log(counts / counts.sum())
    ids = vocab.encode(eval_tokens)
    if not ids:
        raise ContractError("no tokens to score")
    return float(np.exp(-np.mean(logp[ids])))
