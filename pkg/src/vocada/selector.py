"""Per-image vocabulary selection strategies.

Four interchangeable selectors produce the class subset used at
re-scoring time: ``baseline`` (the full vocabulary), ``oracle`` (the
image's ground-truth classes), ``embed-topk`` (union of nearest classes
per noun phrase in a shared text-embedding space) and ``llm`` (parse a
chat model's asterisk-prefixed proposals). Network traffic for the LLM
variant lives in :mod:`vocada.gateway`; this module only builds prompts
and parses responses.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .domain import (
    AdaptedVocabulary,
    EmbeddingMatrix,
    GroundTruthBox,
    NounPhraseSet,
    Vocabulary,
    normalize_name,
)
from .errors import DataError

SELECTOR_KINDS = ("baseline", "oracle", "embed-topk", "llm")


@dataclass(frozen=True)
class SelectorConfig:
    kind: str = "baseline"
    k: int = 1
    fallback_on_empty: bool = True
    prompt_template: str = "a {}"

    def __post_init__(self) -> None:
        if self.kind not in SELECTOR_KINDS:
            raise DataError(f"unknown selector kind {self.kind!r}")
        if self.k < 1:
            raise DataError(f"k must be >= 1, got {self.k}")
        if self.prompt_template.count("{}") != 1:
            raise DataError("prompt template must contain exactly one '{}' placeholder")

    def apply_template(self, text: str) -> str:
        return self.prompt_template.replace("{}", text)


def cosine_topk(
    query_key: str,
    queries: EmbeddingMatrix,
    candidates: EmbeddingMatrix,
    k: int,
) -> list[tuple[str, float]]:
    """The ``min(k, rows)`` most similar candidate rows to one query row.

    Similarity is the dot product of unit vectors; ties break toward the
    lower candidate row index so rankings are reproducible.
    """
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if queries.dim != candidates.dim:
        raise DataError(
            f"embedding dim mismatch: query dim {queries.dim}, candidate dim {candidates.dim}"
        )
    q = queries.row(query_key)
    sims = candidates.values @ q
    best = sorted(range(len(candidates.keys)), key=lambda i: (-sims[i], i))[:k]
    return [(candidates.keys[i], float(sims[i])) for i in best]


def _fallback(
    image_id: str, vocab: Vocabulary, selector: str, cfg: SelectorConfig
) -> AdaptedVocabulary:
    if cfg.fallback_on_empty:
        return AdaptedVocabulary(
            image_id=image_id,
            class_ids=vocab.ids(),
            selector=selector,
            fallback_used=True,
        )
    return AdaptedVocabulary(
        image_id=image_id, class_ids=frozenset(), selector=selector, fallback_used=False
    )


def select_baseline(vocab: Vocabulary, image_id: str) -> AdaptedVocabulary:
    """Identity selection: every class stays eligible."""
    return AdaptedVocabulary(
        image_id=image_id, class_ids=vocab.ids(), selector="baseline"
    )


def select_oracle(
    gts: list[GroundTruthBox], vocab: Vocabulary, image_id: str
) -> AdaptedVocabulary:
    """Ground-truth classes of the image; exact by definition, so no fallback."""
    ids = vocab.ids()
    selected = set()
    for gt in gts:
        if gt.class_id not in ids:
            raise DataError(f"ground-truth class id {gt.class_id} not in vocabulary")
        selected.add(gt.class_id)
    return AdaptedVocabulary(
        image_id=image_id, class_ids=frozenset(selected), selector="oracle"
    )


def select_embed_topk(
    phrases: NounPhraseSet,
    phrase_emb: EmbeddingMatrix,
    class_emb: EmbeddingMatrix,
    vocab: Vocabulary,
    cfg: SelectorConfig,
) -> AdaptedVocabulary:
    """Union over phrases of each phrase's top-k nearest classes.

    Class embeddings are keyed by the decimal class id; phrase embeddings
    by the normalized phrase text. A missing phrase embedding is an
    error: embedding happens before selection.
    """
    missing = [p for p in phrases.phrases if p not in phrase_emb]
    if missing:
        raise DataError(
            "no embedding for phrase(s): " + ", ".join(repr(p) for p in missing)
        )
    ids = vocab.ids()
    selected: set[int] = set()
    for phrase in phrases.phrases:
        for key, _score in cosine_topk(phrase, phrase_emb, class_emb, cfg.k):
            try:
                class_id = int(key)
            except ValueError:
                raise DataError(
                    f"class embedding key {key!r} is not a class id"
                ) from None
            if class_id not in ids:
                raise DataError(f"class embedding key {key!r} not in vocabulary")
            selected.add(class_id)
    if not selected:
        return _fallback(phrases.image_id, vocab, "embed-topk", cfg)
    return AdaptedVocabulary(
        image_id=phrases.image_id, class_ids=frozenset(selected), selector="embed-topk"
    )


PROMPT_INSTRUCTIONS = """\
You select object categories for a single image.

You will receive an image description and a list of noun phrases extracted
from it. From the category list below, select every category that appears in
the image or is clearly referred to by the description or the noun phrases.
Synonyms listed next to a category are alternative names for it: when a
synonym is mentioned, select that category. Be inclusive about categories the
description suggests, and leave out categories with no support in the input.

Output one selected category per line, prefixing each category name with an
asterisk "*". Use the category's canonical name exactly as it appears in the
list. Output nothing else.
"""


def build_llm_system_prompt(vocab: Vocabulary) -> str:
    """Instruction block plus one line per class with its synonyms."""
    lines = [PROMPT_INSTRUCTIONS, "Categories:"]
    for entry in vocab.classes:
        if entry.synonyms:
            lines.append(f"- {entry.name} (synonyms: {', '.join(entry.synonyms)})")
        else:
            lines.append(f"- {entry.name}")
    return "\n".join(lines) + "\n"


def build_llm_user_message(caption: str, phrases: NounPhraseSet) -> str:
    """Inference-time payload: the full description followed by the noun phrases."""
    phrase_block = ", ".join(phrases.phrases) if phrases.phrases else "(none)"
    return f"Image description:\n{caption}\n\nNoun phrases: {phrase_block}\n"


_SELECTION_LINE = re.compile(r"^\s*\*\s+(.*\S)\s*$")


@dataclass(frozen=True)
class LlmSelection:
    """Parsed selector output plus parse diagnostics."""

    adapted: AdaptedVocabulary
    candidates: int
    unmatched: tuple[str, ...]


def parse_llm_selection(
    raw: str, vocab: Vocabulary, cfg: SelectorConfig, image_id: str
) -> LlmSelection:
    """Map asterisk-prefixed lines to class ids; never raises on messy text.

    Candidate text is normalized and looked up through canonical names,
    then synonyms. Candidates that match nothing are dropped and counted;
    an empty result falls back per the config.
    """
    surface_map = vocab.surface_map()
    selected: set[int] = set()
    unmatched: list[str] = []
    candidates = 0
    for line in raw.splitlines():
        m = _SELECTION_LINE.match(line)
        if not m:
            continue
        candidates += 1
        text = m.group(1)
        class_id = surface_map.get(normalize_name(text))
        if class_id is None:
            unmatched.append(text)
        else:
            selected.add(class_id)
    if selected:
        adapted = AdaptedVocabulary(
            image_id=image_id, class_ids=frozenset(selected), selector="llm"
        )
    else:
        adapted = _fallback(image_id, vocab, "llm", cfg)
    return LlmSelection(
        adapted=adapted, candidates=candidates, unmatched=tuple(unmatched)
    )
