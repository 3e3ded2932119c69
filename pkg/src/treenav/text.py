"""Shared tokenizer and answer normalization.

Every module tokenizes through :func:`tokenize` so that token counts (the
20-token node prefix, the 120-token observation cap, the 800-token ReadTop
window) agree everywhere.
"""

from __future__ import annotations

import re
import string
from typing import Iterable, Sequence

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)
_PUNCT = string.punctuation


def tokenize(text: str) -> list[str]:
    """Split on whitespace, emitting each punctuation character as its own token."""
    return _TOKEN_RE.findall(text)


def normalize_tokens(tokens: Iterable[str]) -> list[str]:
    """Lowercase and strip surrounding punctuation; tokens that become empty are dropped."""
    out = []
    for tok in tokens:
        t = tok.lower().strip(_PUNCT)
        if t:
            out.append(t)
    return out


def contains_subsequence(haystack: Sequence[str], needle: Sequence[str]) -> bool:
    n = len(needle)
    if n == 0 or n > len(haystack):
        return False
    first = needle[0]
    for i in range(len(haystack) - n + 1):
        if haystack[i] == first and list(haystack[i : i + n]) == list(needle):
            return True
    return False


def find_subsequence(haystack: Sequence[str], needle: Sequence[str]) -> int:
    """Start offset of the first occurrence of ``needle`` or -1."""
    n = len(needle)
    if n == 0:
        return -1
    for i in range(len(haystack) - n + 1):
        if list(haystack[i : i + n]) == list(needle):
            return i
    return -1


# Official SQuAD/TriviaQA style answer normalization.
_ARTICLES_RE = re.compile(r"\b(a|an|the)\b")


def normalize_answer(s: str) -> str:
    s = s.lower()
    s = "".join(ch for ch in s if ch not in _PUNCT)
    s = _ARTICLES_RE.sub(" ", s)
    return " ".join(s.split())
