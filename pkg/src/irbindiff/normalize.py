"""Instruction tokenization and normalization.

Tokenization splits an IR statement on whitespace, peels off the structural
punctuation `, ( ) [ ] { }`, and breaks the remaining cores on `.` and `_`
(the separators themselves are dropped). `%`, `@` and `*` stay attached to
their neighbors. Label references (%dec_label_pc_<addr>) and decompiler
globals (@global_var_*) are kept as single lexemes so normalization can
rewrite them atomically.

Normalization then collapses volatile lexemes:
  labels           -> <label>
  globals          -> <global>
  decimal |v|<1024 -> <Positive> / <Negative> by sign
  decimal |v|>=1024 -> <Address>
  hex literals     -> <Positive> / <Negative> by sign (any magnitude; hex
                      encodes bit patterns such as float constants, not
                      addresses, in decompiled IR)
  ... except the operand of an `align` attribute, which is a stable type
  property rather than a program value and is kept verbatim.
  compiler-suffixed identifiers (storemerge518, %cond10, ...) lose their
  leading/trailing digit runs.

Each token carries a small kind tag so normalization only applies to whole
lexemes: a digit fragment produced by splitting %s1.0.reg2mem stays `0`
verbatim, it never becomes <Positive>. The tags also make normalize
idempotent (rewritten tokens are plain words on the second pass).
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import InputError

PAD, UNK, CLS, SEP, MASK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
SPECIAL_IDS = frozenset(range(len(SPECIAL_TOKENS)))

POSITIVE = "<Positive>"
NEGATIVE = "<Negative>"
ADDRESS = "<Address>"
LABEL_TOKEN = "<label>"
GLOBAL_TOKEN = "<global>"

ADDRESS_BOUND = 1024

# identifier stems the compiler decorates with digit runs
DEFAULT_STEMS = frozenset(
    {"reg2mem", "reload", "storemerge", "brmerge", "select", "thread", "cond"})

_PUNCT = frozenset(",()[]{}")
_SEPARATORS = re.compile(r"[._]+")
_LABEL_REF = re.compile(r"^%dec_label_pc_[0-9A-Fa-f]+$")
_GLOBAL_REF = re.compile(r"^@global_var_\w+$")
_DECIMAL = re.compile(r"^-?\d+$")
_HEX = re.compile(r"^-?0[xX][0-9A-Fa-f]+$")
_RULE5 = re.compile(r"^(%?)\d*([A-Za-z][0-9A-Za-z]*?)\d*$")


class TokenKind(IntEnum):
    PUNCT = 0     # one of , ( ) [ ] { }
    WORD = 1      # whole core without separators (incl. rewritten tokens)
    FRAGMENT = 2  # piece of a core that contained . or _
    NUMBER = 3    # whole core that parses as decimal or hex
    LABEL = 4     # %dec_label_pc_<addr>
    GLOBAL = 5    # @global_var_<x>


@dataclass(frozen=True)
class TokenSequence:
    """Tokens of one instruction plus their provenance kinds."""

    tokens: tuple[str, ...]
    kinds: tuple[TokenKind, ...]

    def __post_init__(self):
        if len(self.tokens) != len(self.kinds):
            raise ValueError("tokens and kinds must align")
        for t in self.tokens:
            if not t or any(c.isspace() for c in t):
                raise ValueError(f"invalid token {t!r}")

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


def _split_punct(word: str) -> list[str]:
    """Separate structural punctuation characters from a whitespace word."""
    pieces: list[str] = []
    buf: list[str] = []
    for ch in word:
        if ch in _PUNCT:
            if buf:
                pieces.append("".join(buf))
                buf = []
            pieces.append(ch)
        else:
            buf.append(ch)
    if buf:
        pieces.append("".join(buf))
    return pieces


def _classify_core(core: str) -> list[tuple[str, TokenKind]]:
    if _LABEL_REF.match(core):
        return [(core, TokenKind.LABEL)]
    if _GLOBAL_REF.match(core):
        return [(core, TokenKind.GLOBAL)]
    if _DECIMAL.match(core) or _HEX.match(core):
        return [(core, TokenKind.NUMBER)]
    if "." in core or "_" in core:
        frags = [f for f in _SEPARATORS.split(core) if f]
        return [(f, TokenKind.FRAGMENT) for f in frags]
    return [(core, TokenKind.WORD)]


def tokenize(instruction: str) -> TokenSequence:
    """Tokenize one simplified IR statement."""
    tokens: list[str] = []
    kinds: list[TokenKind] = []
    for word in instruction.split():
        for piece in _split_punct(word):
            if piece in _PUNCT:
                tokens.append(piece)
                kinds.append(TokenKind.PUNCT)
            else:
                for tok, kind in _classify_core(piece):
                    tokens.append(tok)
                    kinds.append(kind)
    return TokenSequence(tokens=tuple(tokens), kinds=tuple(kinds))


def _normalize_number(token: str) -> str:
    if token[0] == "-":
        magnitude = token[1:]
        negative = True
    else:
        magnitude = token
        negative = False
    if magnitude.lower().startswith("0x"):
        # hex encodes bit patterns (float constants etc.), not addresses
        return NEGATIVE if negative else POSITIVE
    if int(magnitude) < ADDRESS_BOUND:
        return NEGATIVE if negative else POSITIVE
    return ADDRESS


def _strip_identifier_digits(token: str, stems: frozenset[str]) -> str:
    m = _RULE5.match(token)
    if not m:
        return token
    percent, stem = m.groups()
    if stem in stems:
        return percent + stem
    return token


def normalize(seq: TokenSequence,
              stems: frozenset[str] = DEFAULT_STEMS) -> TokenSequence:
    """Apply the normalization rules to a tokenized instruction."""
    tokens: list[str] = []
    kinds: list[TokenKind] = []
    prev = None
    for tok, kind in zip(seq.tokens, seq.kinds):
        if kind == TokenKind.LABEL:
            tokens.append(LABEL_TOKEN)
            kinds.append(TokenKind.WORD)
        elif kind == TokenKind.GLOBAL:
            tokens.append(GLOBAL_TOKEN)
            kinds.append(TokenKind.WORD)
        elif kind == TokenKind.NUMBER and prev == "align":
            tokens.append(tok)
            kinds.append(kind)
        elif kind == TokenKind.NUMBER:
            tokens.append(_normalize_number(tok))
            kinds.append(TokenKind.WORD)
        elif kind in (TokenKind.WORD, TokenKind.FRAGMENT):
            tokens.append(_strip_identifier_digits(tok, stems))
            kinds.append(kind)
        else:
            tokens.append(tok)
            kinds.append(kind)
        prev = tok
    return TokenSequence(tokens=tuple(tokens), kinds=tuple(kinds))


def tokenize_normalized(instruction: str, *, no_norm: bool = False,
                        stems: frozenset[str] = DEFAULT_STEMS) -> TokenSequence:
    seq = tokenize(instruction)
    return seq if no_norm else normalize(seq, stems)


class Vocabulary:
    """Token <-> id table with the five reserved specials at ids 0..4."""

    def __init__(self, id_of: Mapping[str, int]):
        for i, tok in enumerate(SPECIAL_TOKENS):
            if id_of.get(tok) != i:
                raise InputError(f"vocabulary must map {tok} to {i}")
        self.id_of = dict(id_of)
        self.token_of = {i: t for t, i in self.id_of.items()}
        if len(self.token_of) != len(self.id_of):
            raise InputError("vocabulary ids must be unique")

    def __len__(self) -> int:
        return len(self.id_of)

    def __contains__(self, token: str) -> bool:
        return token in self.id_of

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id_of.get(t, UNK) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        out = []
        for i in ids:
            if i not in self.token_of:
                raise InputError(f"id {i} not in vocabulary of size {len(self)}")
            out.append(self.token_of[i])
        return out

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.id_of, sort_keys=True, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls(json.loads(Path(path).read_text()))


def build_vocabulary(sequences: Iterable[Sequence[str]],
                     min_count: int = 1) -> Vocabulary:
    """Build a vocabulary from token sequences.

    Tokens are ranked by descending frequency, ties broken lexicographically,
    and assigned ids after the reserved specials. Tokens rarer than
    min_count fall out (they encode to [UNK]).
    """
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts: Counter[str] = Counter()
    for seq in sequences:
        counts.update(seq)
    id_of = {tok: i for i, tok in enumerate(SPECIAL_TOKENS)}
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    for tok, n in ranked:
        if n >= min_count and tok not in id_of:
            id_of[tok] = len(id_of)
    return Vocabulary(id_of)
