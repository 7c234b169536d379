"""Text tokenization: BPE subwords for recognition targets, phonemes for synthesis input."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

# Fixed base alphabet for BPE; anything outside maps to <unk>.
BPE_BASE_ALPHABET = "abcdefghijklmnopqrstuvwxyz' "
UNK = "<unk>"
WORD_BOUNDARY = "|"

MergeList = list[tuple[str, str]]


@dataclass
class TokenSequence:
    """Integer token ids over a named vocabulary."""

    ids: np.ndarray
    vocab_kind: str  # "phoneme" or "bpe"
    vocab_size: int

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.ids.ndim != 1:
            raise ValueError("token ids must be 1-D")
        if len(self.ids) and (self.ids.min() < 0 or self.ids.max() >= self.vocab_size):
            raise ValueError("token id outside vocabulary")

    def __len__(self) -> int:
        return len(self.ids)


def bpe_vocab(merges: MergeList) -> list[str]:
    """Deterministic id order: <unk>, base characters, then one unit per merge."""
    return [UNK] + list(BPE_BASE_ALPHABET) + [a + b for a, b in merges]


def _merge_pass(tokens: list[str], pair: tuple[str, str]) -> list[str]:
    a, b = pair
    out = []
    i = 0
    while i < len(tokens):
        if i + 1 < len(tokens) and tokens[i] == a and tokens[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(tokens[i])
            i += 1
    return out


def bpe_tokens(text: str, merges: MergeList) -> list[str]:
    """Split lowercased text into BPE unit strings by applying merges in rank order."""
    tokens = [c if c in BPE_BASE_ALPHABET else UNK for c in text.lower()]
    for pair in merges:
        tokens = _merge_pass(tokens, pair)
    return tokens


def apply_bpe(text: str, merges: MergeList) -> TokenSequence:
    """Encode text as BPE unit ids (greedy merges, deterministic)."""
    vocab = bpe_vocab(merges)
    index = {tok: i for i, tok in enumerate(vocab)}
    ids = [index[t] for t in bpe_tokens(text, merges)]
    return TokenSequence(np.array(ids, dtype=np.int64), "bpe", len(vocab))


def detokenize(tokens: TokenSequence, merges: MergeList) -> str:
    vocab = bpe_vocab(merges)
    return "".join(vocab[i] for i in tokens.ids)


def learn_bpe(texts: list[str], n_merges: int) -> MergeList:
    """Learn merges by repeatedly joining the most frequent adjacent pair.

    Ties break lexicographically so the result is deterministic.
    """
    corpus = [[c if c in BPE_BASE_ALPHABET else UNK for c in t.lower()] for t in texts]
    merges: MergeList = []
    for _ in range(n_merges):
        counts = Counter()
        for toks in corpus:
            counts.update(zip(toks[:-1], toks[1:]))
        counts.pop((UNK, UNK), None)
        if not counts:
            break
        best = max(counts.items(), key=lambda kv: (kv[1], kv[0]))
        if best[1] < 2:
            break
        pair = best[0]
        if UNK in pair:
            break
        merges.append(pair)
        corpus = [_merge_pass(toks, pair) for toks in corpus]
    return merges


def save_merges(path, merges: MergeList) -> None:
    """One merge pair per line; line order is rank order."""
    with open(path, "w", encoding="utf-8") as f:
        for a, b in merges:
            f.write(f"{a}\t{b}\n")


def load_merges(path) -> MergeList:
    merges = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            a, b = line.split("\t")
            merges.append((a, b))
    return merges


@dataclass
class PhonemeLexicon:
    """Word pronunciations over a fixed phoneme inventory.

    ``inventory`` fixes the id order and must contain the word-boundary
    symbol. ``fallback`` optionally spells out-of-lexicon words letter by
    letter.
    """

    entries: dict[str, tuple[str, ...]]
    inventory: tuple[str, ...]
    fallback: dict[str, str] | None = None
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if WORD_BOUNDARY not in self.inventory:
            raise ValueError(f"inventory must contain the boundary symbol {WORD_BOUNDARY!r}")
        self._index = {p: i for i, p in enumerate(self.inventory)}

    @property
    def vocab_size(self) -> int:
        return len(self.inventory)

    def phoneme_id(self, symbol: str) -> int:
        return self._index[symbol]

    def pronounce(self, word: str) -> tuple[str, ...]:
        if word in self.entries:
            return self.entries[word]
        if self.fallback is not None:
            try:
                return tuple(self.fallback[c] for c in word)
            except KeyError as exc:
                raise ValueError(f"cannot spell out-of-lexicon word {word!r}") from exc
        raise ValueError(f"word {word!r} not in lexicon and no fallback table")

    def phoneme_strings(self, text: str) -> list[str]:
        words = text.lower().split()
        symbols: list[str] = []
        for i, word in enumerate(words):
            if i > 0:
                symbols.append(WORD_BOUNDARY)
            symbols.extend(self.pronounce(word))
        return symbols


def encode_phonemes(text: str, lexicon: PhonemeLexicon) -> TokenSequence:
    """Look up each word's phonemes; words are separated by a boundary token."""
    ids = [lexicon.phoneme_id(p) for p in lexicon.phoneme_strings(text)]
    return TokenSequence(np.array(ids, dtype=np.int64), "phoneme", lexicon.vocab_size)
