"""Pluggable tokenization with a deterministic default tokenizer.

The default tokenizer segments on whitespace, splits punctuation into
single-character tokens, and falls back to byte tokens ("<0xAB>") for
non-ASCII characters so that any UTF-8 input is representable.

Token ids are stable 64-bit values derived from the token's UTF-8 bytes,
so streams hash identically across processes and platforms without a
shared vocabulary file. Ids 0 and 1 are reserved (unknown, doc separator).
"""

from __future__ import annotations

import hashlib
import re
from typing import Iterable, List, Protocol

UNKNOWN_TOKEN = "<unk>"
UNKNOWN_ID = 0
DOC_SEPARATOR_TOKEN = "<doc>"
DOC_SEPARATOR_ID = 1

_WORD_RE = re.compile(r"[A-Za-z0-9_]+|[^\sA-Za-z0-9_]")


def token_id(token: str) -> int:
    """Stable 64-bit id for a token (little-endian SHA-256 prefix)."""
    if token == UNKNOWN_TOKEN:
        return UNKNOWN_ID
    if token == DOC_SEPARATOR_TOKEN:
        return DOC_SEPARATOR_ID
    h = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")
    # keep reserved ids out of the hash range
    return h if h > 1 else h + 2


class Tokenizer(Protocol):
    identifier: str

    def tokenize(self, text: str) -> List[str]: ...


class WhitespacePunctTokenizer:
    """Whitespace segmentation, punctuation split off, byte fallback."""

    identifier = "ws-punct-v1"

    def tokenize(self, text: str) -> List[str]:
        out: List[str] = []
        for match in _WORD_RE.findall(text):
            if match.isascii():
                out.append(match)
            else:
                out.extend(f"<0x{b:02X}>" for b in match.encode("utf-8"))
        return out


class WhitespaceTokenizer:
    """Plain split-on-whitespace; used in tests where counts must be obvious."""

    identifier = "ws-v1"

    def tokenize(self, text: str) -> List[str]:
        return text.split()


_REGISTRY = {
    WhitespacePunctTokenizer.identifier: WhitespacePunctTokenizer,
    WhitespaceTokenizer.identifier: WhitespaceTokenizer,
}


def get_tokenizer(identifier: str) -> Tokenizer:
    try:
        return _REGISTRY[identifier]()
    except KeyError:
        raise KeyError(f"unknown tokenizer id: {identifier!r}") from None


def register_tokenizer(cls) -> None:
    _REGISTRY[cls.identifier] = cls


def ids_for(tokens: Iterable[str]) -> List[int]:
    return [token_id(t) for t in tokens]
