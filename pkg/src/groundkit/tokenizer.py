"""Byte-pair-encoding tokenizer matching the source contrastive model's scheme.

Text is lowercased and whitespace-normalized, split with a GPT-2-style
pattern, mapped through the reversible byte-to-unicode table, then merged
greedily by merge rank with an end-of-word marker on the last symbol.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache

from .bundle import TokenizerData
from .errors import TokenizerDataError

SOT_TOKEN = "<|startoftext|>"
EOT_TOKEN = "<|endoftext|>"
PAD_ID = 0

_PATTERN = re.compile(
    r"""<\|startoftext\|>|<\|endoftext\|>|'s|'t|'re|'ve|'m|'ll|'d"""
    r"""|[^\W\d_]+|\d|(?:[^\s\w]|_)+"""
)


@lru_cache(maxsize=1)
def bytes_to_unicode() -> dict[int, str]:
    """Reversible byte -> printable unicode char table (GPT-2 convention)."""
    bs = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(ord("\xa1"), ord("\xac") + 1))
        + list(range(ord("\xae"), ord("\xff") + 1))
    )
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return dict(zip(bs, map(chr, cs)))


@dataclass
class TokenSequence:
    """Padded token-id sequence: [SOT, ..., EOT, pad, pad, ...]."""

    ids: list[int]
    eot_index: int

    def __len__(self) -> int:
        return len(self.ids)


def _get_pairs(word: tuple[str, ...]) -> set[tuple[str, str]]:
    return set(zip(word[:-1], word[1:]))


class BpeTokenizer:
    def __init__(self, data: TokenizerData):
        self.vocab = data.vocab
        self.context_length = data.context_length
        self.ranks = {tuple(m): i for i, m in enumerate(data.merges)}
        for special in (SOT_TOKEN, EOT_TOKEN):
            if special not in self.vocab:
                raise TokenizerDataError(f"vocab is missing the {special} token")
        self.sot_id = self.vocab[SOT_TOKEN]
        self.eot_id = self.vocab[EOT_TOKEN]
        max_id = max(self.vocab.values())
        if len(set(self.vocab.values())) != len(self.vocab):
            raise TokenizerDataError("vocab contains duplicate token ids")
        if max_id >= 2**31:
            raise TokenizerDataError(f"token id {max_id} overflows 32-bit range")
        self._byte_encoder = bytes_to_unicode()
        self._cache: dict[str, list[str]] = {}

    def _bpe(self, token: str) -> list[str]:
        if token in self._cache:
            return self._cache[token]
        word = tuple(token[:-1]) + (token[-1] + "</w>",)
        if len(word) == 1:
            self._cache[token] = list(word)
            return list(word)
        pairs = _get_pairs(word)
        while pairs:
            best = min(pairs, key=lambda p: self.ranks.get(p, float("inf")))
            if best not in self.ranks:
                break
            first, second = best
            merged: list[str] = []
            i = 0
            while i < len(word):
                if i < len(word) - 1 and word[i] == first and word[i + 1] == second:
                    merged.append(first + second)
                    i += 2
                else:
                    merged.append(word[i])
                    i += 1
            word = tuple(merged)
            if len(word) == 1:
                break
            pairs = _get_pairs(word)
        self._cache[token] = list(word)
        return list(word)

    def encode_symbols(self, text: str) -> list[str]:
        text = re.sub(r"\s+", " ", text.strip()).lower()
        symbols: list[str] = []
        for token in _PATTERN.findall(text):
            token = "".join(self._byte_encoder[b] for b in token.encode("utf-8"))
            symbols.extend(self._bpe(token))
        return symbols

    def tokenize(self, text: str) -> TokenSequence:
        """Encode text into a padded sequence [SOT, bpe ids..., EOT, pad...]."""
        try:
            body = [self.vocab[s] for s in self.encode_symbols(text)]
        except KeyError as e:
            raise TokenizerDataError(f"symbol {e.args[0]!r} not in vocab") from None
        body = body[: self.context_length - 2]
        ids = [self.sot_id] + body + [self.eot_id]
        eot_index = len(ids) - 1
        ids = ids + [PAD_ID] * (self.context_length - len(ids))
        return TokenSequence(ids=ids, eot_index=eot_index)


def bpe_tokenize(text: str, data: TokenizerData) -> TokenSequence:
    return BpeTokenizer(data).tokenize(text)
