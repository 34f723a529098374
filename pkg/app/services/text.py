"""
Text Service - tokenization, vocabulary and index encoding.

Rules: lowercase, split a trailing "'s" into its own token, drop standalone
punctuation, keep hyphenated words and digits verbatim.
"""

import hashlib
import json
import re
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

from app.core.exceptions import FormatError, UsageError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ["<pad>", "<bos>", "<eos>", "<unk>"]

_POSSESSIVE = re.compile(r"(\w)'s\b")
_TOKEN = re.compile(r"'s\b|\w+(?:['-]\w+)*")


def tokenize(raw: str) -> List[str]:
    text = _POSSESSIVE.sub(r"\1 's", raw.lower())
    return _TOKEN.findall(text)


class Vocabulary:
    """Immutable token <-> id map with reserved ids 0..3."""

    def __init__(self, tokens: Sequence[str], min_freq: int = 3):
        self.min_freq = min_freq
        self._itos: List[str] = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self._stoi: Dict[str, int] = {t: i for i, t in enumerate(self._itos)}
        if len(self._stoi) != len(self._itos):
            raise UsageError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, token: str) -> bool:
        return token in self._stoi

    @property
    def tokens(self) -> List[str]:
        return self._itos[len(RESERVED):]

    def lookup(self, token: str) -> int:
        return self._stoi.get(token, UNK)

    def token(self, idx: int) -> str:
        if not 0 <= idx < len(self._itos):
            raise UsageError(f"token id {idx} outside vocabulary of size {len(self)}")
        return self._itos[idx]

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self._itos).encode("utf-8")).hexdigest()[:16]

    def to_json(self) -> str:
        return json.dumps({"tokens": self.tokens, "min_freq": self.min_freq}, ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        data = json.loads(text)
        return cls(data["tokens"], data.get("min_freq", 3))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        try:
            return cls.from_json(Path(path).read_text(encoding="utf-8"))
        except (json.JSONDecodeError, KeyError) as e:
            raise FormatError(path, 0, f"not a vocabulary file: {e}")


def build_vocab(corpus: Iterable[Sequence[str]], min_freq: int = 3) -> Vocabulary:
    counts = Counter(tok for sentence in corpus for tok in sentence)
    if not counts:
        raise UsageError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_freq and t not in RESERVED),
                  key=lambda t: (-counts[t], t))
    return Vocabulary(kept, min_freq)


def encode(tokens: Sequence[str], vocab: Vocabulary) -> List[int]:
    return [vocab.lookup(t) for t in tokens]


def decode(ids: Sequence[int], vocab: Vocabulary) -> str:
    words = [vocab.token(i) for i in ids]
    return " ".join(w for w in words if w not in ("<pad>", "<bos>", "<eos>"))
