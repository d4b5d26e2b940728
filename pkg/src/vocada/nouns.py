"""Rule-based noun-phrase extraction from image captions.

The pipeline is tokenize -> tag -> chunk. Tagging is a lexicon lookup
with suffix heuristics for unknown words; chunking matches the regular
grammar ADJ* NOUN+ over the tag sequence. Everything here is
deterministic for a fixed lexicon, which is what makes caption-derived
outputs reproducible and golden-testable.
"""

from __future__ import annotations

import hashlib
import re
import unicodedata
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .domain import CaptionRecord, NounPhraseSet, normalize_name
from .errors import DataError

MAX_PHRASE_TOKENS = 4


class Tag(str, Enum):
    DET = "DET"
    ADJ = "ADJ"
    NOUN = "NOUN"
    VERB = "VERB"
    PREP = "PREP"
    CONJ = "CONJ"
    PRON = "PRON"
    NUM = "NUM"
    OTHER = "OTHER"


@dataclass(frozen=True)
class TagLexicon:
    """Normalized token -> part-of-speech tag, with provenance labels."""

    entries: Mapping[str, Tag]
    name: str = "lexicon"
    version: str = ""

    def __post_init__(self) -> None:
        if not self.entries:
            raise DataError("lexicon is empty")
        for token in self.entries:
            if token != normalize_name(token):
                raise DataError(f"lexicon key {token!r} is not in normalized form")


@dataclass(frozen=True)
class TaggedToken:
    text: str
    tag: Tag
    char_span: tuple[int, int]


_TOKEN_RUN = re.compile(r"\S+")


def _is_edge_punct(ch: str) -> bool:
    return unicodedata.category(ch)[0] in ("P", "S")


def tokenize(caption: str) -> list[tuple[str, tuple[int, int]]]:
    """Split on whitespace and strip punctuation from token edges.

    Intra-word punctuation (hyphens, apostrophes) survives; stripped
    fragments are discarded. Spans index the original string, so
    ``caption[start:end]`` reproduces each token.
    """
    tokens: list[tuple[str, tuple[int, int]]] = []
    for m in _TOKEN_RUN.finditer(caption):
        start, end = m.start(), m.end()
        while start < end and _is_edge_punct(caption[start]):
            start += 1
        while end > start and _is_edge_punct(caption[end - 1]):
            end -= 1
        if end > start:
            tokens.append((caption[start:end], (start, end)))
    return tokens


def _heuristic_tag(normalized: str) -> Tag:
    # Order matters; first matching suffix wins, open-class default is NOUN.
    if normalized.endswith(("ing", "ed")):
        return Tag.VERB
    if normalized.endswith("ly"):
        return Tag.OTHER
    if normalized.endswith(("ous", "ful", "ish", "al")):
        return Tag.ADJ
    return Tag.NOUN


def tag(
    tokens: Sequence[tuple[str, tuple[int, int]]], lexicon: TagLexicon
) -> list[TaggedToken]:
    """Assign a tag per token: lexicon lookup first, suffix heuristics otherwise."""
    tagged = []
    for text, span in tokens:
        normalized = normalize_name(text)
        t = lexicon.entries.get(normalized)
        if t is None:
            t = _heuristic_tag(normalized)
        tagged.append(TaggedToken(text=text, tag=t, char_span=span))
    return tagged


def _gap_is_plain(caption: str, prev: TaggedToken, nxt: TaggedToken) -> bool:
    gap = caption[prev.char_span[1] : nxt.char_span[0]]
    return all(ch.isspace() for ch in gap)


def chunk_noun_phrases(
    tagged: Sequence[TaggedToken], caption: str | None = None
) -> list[str]:
    """Maximal ADJ* NOUN+ runs, joined and normalized, in text order.

    When the source caption is supplied, a run may not continue across a
    gap containing anything but whitespace: stripped punctuation (commas,
    sentence ends) acts as a chunk boundary, so phrases never span
    sentences or list separators.
    """
    phrases: list[str] = []
    run: list[TaggedToken] = []
    has_noun = False

    def flush() -> None:
        nonlocal run, has_noun
        if has_noun:
            # Overly long runs keep their rightmost tokens; the final NOUN
            # always survives.
            kept = run[-MAX_PHRASE_TOKENS:]
            phrases.append(normalize_name(" ".join(t.text for t in kept)))
        run = []
        has_noun = False

    for tok in tagged:
        boundary = bool(
            run
            and caption is not None
            and not _gap_is_plain(caption, run[-1], tok)
        )
        if boundary:
            flush()
        if tok.tag is Tag.NOUN:
            run.append(tok)
            has_noun = True
        elif tok.tag is Tag.ADJ:
            if has_noun:
                flush()
            run.append(tok)
        else:
            flush()
    flush()
    return phrases


def extract(caption: CaptionRecord, lexicon: TagLexicon) -> NounPhraseSet:
    """Full caption -> noun-phrase pipeline with first-occurrence dedup."""
    tokens = tokenize(caption.caption)
    tagged = tag(tokens, lexicon)
    phrases = chunk_noun_phrases(tagged, caption.caption)
    return NounPhraseSet(
        image_id=caption.image_id, phrases=tuple(dict.fromkeys(phrases))
    )


def load_lexicon(path: str | Path) -> TagLexicon:
    """Read a ``token<TAB>TAG`` file (UTF-8, one entry per line)."""
    path = Path(path)
    raw = path.read_bytes()
    entries: dict[str, Tag] = {}
    for lineno, line in enumerate(raw.decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'token<TAB>TAG'")
        token, tag_name = parts[0], parts[1].strip()
        try:
            t = Tag(tag_name)
        except ValueError:
            raise DataError(f"{path}:{lineno}: unknown tag {tag_name!r}") from None
        if token in entries:
            raise DataError(f"{path}:{lineno}: duplicate token {token!r}")
        entries[token] = t
    return TagLexicon(
        entries=entries,
        name=path.stem,
        version=hashlib.sha256(raw).hexdigest()[:12],
    )


def lexicon_from_pairs(
    pairs: Iterable[tuple[str, Tag | str]], name: str = "inline"
) -> TagLexicon:
    """Build a lexicon from in-memory pairs; convenient for tests and fixtures."""
    entries = {normalize_name(tok): Tag(t) for tok, t in pairs}
    return TagLexicon(entries=entries, name=name)


def default_lexicon() -> TagLexicon:
    """The lexicon shipped with the package."""
    ref = resources.files("vocada").joinpath("data/lexicon.tsv")
    with resources.as_file(ref) as path:
        return load_lexicon(path)
