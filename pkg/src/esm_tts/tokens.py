"""Bilingual token inventory, annotated-utterance parsing and embedding masks.

Annotated line format (one utterance per line)::

    corpus=mixed ;; lang=cn phon=cnen : cn:n cn:i cn:t3 br:#1 | lang=cn : en:HH en:AH en:stress1 en:sylb

The ``corpus=<kind> ;;`` header is optional. A segment is
``lang=<cn|en> [phon=<none|cnen|stden>] : <token>+`` and segments are joined with
``|``. Tokens are ``cn:<sym>``, ``en:<sym>`` or ``br:<#1|#2|#3|/sil/>``. A segment
without ``phon=`` takes the corpus default phonology (or ``none`` without header).
"""

from __future__ import annotations

import csv
import enum
import functools
import io
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import EmptyLine, MalformedSpan, UnknownSymbol


class TokenKind(enum.Enum):
    MandarinPhoneme = "MandarinPhoneme"
    EnglishPhoneme = "EnglishPhoneme"
    MandarinTone = "MandarinTone"
    EnglishStress = "EnglishStress"
    MandarinCharBoundary = "MandarinCharBoundary"
    EnglishSyllableBoundary = "EnglishSyllableBoundary"
    EnglishLiaison = "EnglishLiaison"
    ProsodicBreak = "ProsodicBreak"


KIND_ORDER: tuple[TokenKind, ...] = tuple(TokenKind)

# kind -> (language-mask bit, phonology-mask bit)
MASK_TABLE: dict[TokenKind, tuple[bool, bool]] = {
    TokenKind.MandarinPhoneme: (False, False),
    TokenKind.EnglishPhoneme: (False, False),
    TokenKind.MandarinTone: (False, False),
    TokenKind.EnglishStress: (False, True),
    TokenKind.MandarinCharBoundary: (False, False),
    TokenKind.EnglishSyllableBoundary: (False, True),
    TokenKind.EnglishLiaison: (False, True),
    TokenKind.ProsodicBreak: (True, False),
}

PREFIX_KINDS: dict[str, frozenset[TokenKind]] = {
    "cn": frozenset({TokenKind.MandarinPhoneme, TokenKind.MandarinTone, TokenKind.MandarinCharBoundary}),
    "en": frozenset(
        {
            TokenKind.EnglishPhoneme,
            TokenKind.EnglishStress,
            TokenKind.EnglishSyllableBoundary,
            TokenKind.EnglishLiaison,
        }
    ),
    "br": frozenset({TokenKind.ProsodicBreak}),
}
KIND_PREFIX: dict[TokenKind, str] = {k: p for p, kinds in PREFIX_KINDS.items() for k in kinds}

BREAK_NAMES = {"#1": "PW", "#2": "PPH", "#3": "IPH", "/sil/": "SIL"}

DEFAULT_COUNTS: dict[TokenKind, int] = {
    TokenKind.MandarinPhoneme: 73,
    TokenKind.EnglishPhoneme: 39,
    TokenKind.MandarinTone: 5,
    TokenKind.EnglishStress: 4,
    TokenKind.MandarinCharBoundary: 1,
    TokenKind.EnglishSyllableBoundary: 1,
    TokenKind.EnglishLiaison: 1,
    TokenKind.ProsodicBreak: 4,
}


class Language(enum.Enum):
    Mandarin = "cn"
    English = "en"


class Phonology(enum.Enum):
    NONE = "none"
    ChineseEnglish = "cnen"
    StandardEnglish = "stden"


class CorpusKind(enum.Enum):
    ChineseMandarin = "mandarin"
    ChineseMixed = "mixed"
    ChineseEnglish = "cn-english"
    AmericanEnglish = "us-english"


_CORPUS_LABELS: dict[CorpusKind, tuple[Language, Phonology]] = {
    CorpusKind.ChineseMandarin: (Language.Mandarin, Phonology.NONE),
    CorpusKind.ChineseMixed: (Language.Mandarin, Phonology.ChineseEnglish),
    CorpusKind.ChineseEnglish: (Language.English, Phonology.StandardEnglish),
    CorpusKind.AmericanEnglish: (Language.English, Phonology.StandardEnglish),
}


def assign_labels(corpus: CorpusKind) -> tuple[Language, Phonology]:
    """Corpus-level (language, phonology) labels used for training data."""
    return _CORPUS_LABELS[CorpusKind(corpus)]


@dataclass(frozen=True)
class Token:
    symbol: str
    kind: TokenKind
    id: int

    @property
    def text(self) -> str:
        return f"{KIND_PREFIX[self.kind]}:{self.symbol}"


@dataclass(frozen=True)
class TokenInventory:
    entries: tuple[Token, ...]
    _by_symbol: dict[str, Token] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = [t.id for t in self.entries]
        if ids != list(range(len(ids))):
            raise ValueError("token ids must be dense 0..N-1 in entry order")
        by_symbol = {t.symbol: t for t in self.entries}
        if len(by_symbol) != len(self.entries):
            raise ValueError("token symbols must be unique")
        object.__setattr__(self, "_by_symbol", by_symbol)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, token_id: int) -> Token:
        return self.entries[token_id]

    def __iter__(self) -> Iterator[Token]:
        return iter(self.entries)

    def lookup(self, symbol: str) -> Token:
        return self._by_symbol[symbol]

    def __contains__(self, symbol: object) -> bool:
        return symbol in self._by_symbol

    @property
    def counts(self) -> dict[TokenKind, int]:
        out = {k: 0 for k in KIND_ORDER}
        for t in self.entries:
            out[t.kind] += 1
        return out

    def kinds(self, ids: Sequence[int]) -> list[TokenKind]:
        return [self.entries[i].kind for i in ids]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["symbol", "kind", "id"])
        for t in self.entries:
            w.writerow([t.symbol, t.kind.value, t.id])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TokenInventory":
        rows = list(csv.DictReader(io.StringIO(text)))
        tokens = sorted((Token(r["symbol"], TokenKind(r["kind"]), int(r["id"])) for r in rows), key=lambda t: t.id)
        return cls(tuple(tokens))


def _read_symbol_table() -> list[tuple[str, TokenKind]]:
    text = resources.files("esm_tts").joinpath("data/symbols.csv").read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("# ")]
    return [(r["symbol"], TokenKind(r["kind"])) for r in csv.DictReader(lines)]


@functools.lru_cache(maxsize=None)
def build_inventory() -> TokenInventory:
    """The default 128-entry inventory, ids assigned kind-major then lexically."""
    table = _read_symbol_table()
    ordered = sorted(table, key=lambda sk: (KIND_ORDER.index(sk[1]), sk[0]))
    inv = TokenInventory(tuple(Token(s, k, i) for i, (s, k) in enumerate(ordered)))
    assert inv.counts == DEFAULT_COUNTS, inv.counts
    return inv


@dataclass(frozen=True)
class LabelSpan:
    start: int
    end: int
    language: Language
    phonology: Phonology = Phonology.NONE

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad span bounds [{self.start}, {self.end})")


@dataclass(frozen=True)
class Utterance:
    tokens: tuple[int, ...]
    spans: tuple[LabelSpan, ...]
    line: int | None = None
    corpus: CorpusKind | None = None

    def __post_init__(self):
        pos = 0
        for s in self.spans:
            if s.start != pos:
                raise ValueError("spans must be contiguous, ordered and non-overlapping")
            pos = s.end
        if pos != len(self.tokens) or not self.spans:
            raise ValueError("spans must jointly cover the token sequence")

    def __len__(self) -> int:
        return len(self.tokens)

    def validate(self, inv: TokenInventory) -> None:
        """Check ids against ``inv`` and the phonology-None rule for every span."""
        for t in self.tokens:
            if not 0 <= t < len(inv):
                raise ValueError(f"token id {t} outside inventory")
        phon = compute_phonology_mask(self, inv)
        for s in self.spans:
            if s.phonology is Phonology.NONE and phon[s.start : s.end].any():
                raise ValueError(f"span [{s.start}, {s.end}) has English-specific tokens but phonology none")

    def span_content(self, span: LabelSpan, inv: TokenInventory) -> Language:
        """Language of the span by token content: English if any English-side token occurs."""
        for t in self.tokens[span.start : span.end]:
            if KIND_PREFIX[inv[t].kind] == "en":
                return Language.English
        return Language.Mandarin


def compute_language_mask(u: Utterance, inv: TokenInventory) -> np.ndarray:
    return np.array([MASK_TABLE[inv[t].kind][0] for t in u.tokens], dtype=bool)


def compute_phonology_mask(u: Utterance, inv: TokenInventory) -> np.ndarray:
    return np.array([MASK_TABLE[inv[t].kind][1] for t in u.tokens], dtype=bool)


_FIELD = re.compile(r"\S+")
_LANG_VALUES = {x.value for x in Language}
_PHON_VALUES = {x.value for x in Phonology}


def parse_utterance(line: str, inv: TokenInventory | None = None, lineno: int | None = None) -> Utterance:
    inv = inv or build_inventory()
    fields = [(m.group(), m.start() + 1) for m in _FIELD.finditer(line)]
    if not fields:
        raise EmptyLine("empty utterance", lineno, 1)

    def fail(exc, msg, col):
        raise exc(msg, lineno, col)

    i = 0
    corpus = None
    default_phon = Phonology.NONE
    if fields[0][0].startswith("corpus="):
        text, col = fields[0]
        try:
            corpus = CorpusKind(text.split("=", 1)[1])
        except ValueError:
            fail(MalformedSpan, f"unknown corpus kind {text!r}", col)
        default_phon = assign_labels(corpus)[1]
        if len(fields) < 2 or fields[1][0] != ";;":
            fail(MalformedSpan, "expected ';;' after corpus header", fields[min(1, len(fields) - 1)][1])
        i = 2

    tokens: list[int] = []
    spans: list[LabelSpan] = []
    while True:
        if i >= len(fields):
            fail(MalformedSpan, "expected a segment", len(line) + 1)
        seg_col = fields[i][1]
        lang = None
        phon = None
        while i < len(fields) and fields[i][0] != ":":
            text, col = fields[i]
            key, _, value = text.partition("=")
            if key == "lang" and lang is None and value in _LANG_VALUES:
                lang = Language(value)
            elif key == "phon" and phon is None and value in _PHON_VALUES:
                phon = Phonology(value)
            else:
                fail(MalformedSpan, f"unexpected segment attribute {text!r}", col)
            i += 1
        if lang is None:
            fail(MalformedSpan, "segment lacks lang=<cn|en>", seg_col)
        if i >= len(fields):
            fail(MalformedSpan, "segment lacks ':' separator", seg_col)
        i += 1
        start = len(tokens)
        while i < len(fields) and fields[i][0] != "|":
            text, col = fields[i]
            prefix, sep, sym = text.partition(":")
            if not sep or prefix not in PREFIX_KINDS:
                fail(UnknownSymbol, f"malformed token {text!r}", col)
            if sym not in inv or inv.lookup(sym).kind not in PREFIX_KINDS[prefix]:
                fail(UnknownSymbol, f"unknown symbol {text!r}", col)
            tokens.append(inv.lookup(sym).id)
            i += 1
        if len(tokens) == start:
            fail(MalformedSpan, "segment has no tokens", seg_col)
        span = LabelSpan(start, len(tokens), lang, phon if phon is not None else default_phon)
        if span.phonology is Phonology.NONE and any(MASK_TABLE[inv[t].kind][1] for t in tokens[start:]):
            fail(MalformedSpan, "phonology none on a segment with English-specific tokens", seg_col)
        spans.append(span)
        if i >= len(fields):
            break
        i += 1  # '|'

    return Utterance(tuple(tokens), tuple(spans), lineno, corpus)


def serialize_utterance(u: Utterance, inv: TokenInventory | None = None) -> str:
    """Canonical text form; explicit lang and phon on every segment."""
    inv = inv or build_inventory()
    segs = []
    for s in u.spans:
        toks = " ".join(inv[t].text for t in u.tokens[s.start : s.end])
        segs.append(f"lang={s.language.value} phon={s.phonology.value} : {toks}")
    body = " | ".join(segs)
    return f"corpus={u.corpus.value} ;; {body}" if u.corpus is not None else body


def parse_lines(lines: Iterable[str], inv: TokenInventory | None = None) -> list[Utterance]:
    """Parse annotated lines; blank lines and lines starting with '//' are skipped."""
    inv = inv or build_inventory()
    out = []
    for n, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("//"):
            continue
        out.append(parse_utterance(line, inv, lineno=n))
    return out


def parse_file(path: str | Path, inv: TokenInventory | None = None) -> list[Utterance]:
    with open(path, encoding="utf-8") as f:
        return parse_lines(f, inv)
