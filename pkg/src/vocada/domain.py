"""Core data types shared by every stage of the pipeline.

All types are immutable after construction and safe to share across
threads. Validation that concerns a single value happens in
``__post_init__``; cross-record validation (vocabulary-wide collisions,
dangling references) lives in the dedicated ``validate_*`` helpers and in
the file loaders.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import DataError

SELECTOR_TAGS = ("baseline", "oracle", "embed-topk", "llm")

_WHITESPACE_RUN = re.compile(r"\s+")


def normalize_name(s: str) -> str:
    """Canonical surface form: NFC, lowercase, single-spaced, trimmed.

    Idempotent, so normalized strings can be used as dictionary keys and
    re-normalized freely.
    """
    s = unicodedata.normalize("NFC", s)
    s = unicodedata.normalize("NFC", s.lower())
    return _WHITESPACE_RUN.sub(" ", s).strip()


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in pixel corner coordinates, x1 < x2 and y1 < y2."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise DataError(
                f"degenerate box (x1,y1,x2,y2)=({self.x1},{self.y1},{self.x2},{self.y2})"
            )

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "Box":
        return cls(x, y, x + w, y + h)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


@dataclass(frozen=True)
class ClassEntry:
    """One vocabulary class: stable integer id, canonical name, synonyms."""

    id: int
    name: str
    synonyms: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "synonyms", tuple(self.synonyms))

    def surfaces(self) -> tuple[str, ...]:
        """Normalized name followed by normalized synonyms."""
        return (normalize_name(self.name),) + tuple(
            normalize_name(s) for s in self.synonyms
        )


@dataclass(frozen=True)
class Vocabulary:
    """Ordered, user-defined class set that selectors adapt per image."""

    classes: tuple[ClassEntry, ...]
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "classes", tuple(self.classes))

    def ids(self) -> frozenset[int]:
        return frozenset(c.id for c in self.classes)

    def by_id(self) -> Mapping[int, ClassEntry]:
        return {c.id: c for c in self.classes}

    def surface_map(self) -> Mapping[str, int]:
        """Normalized name/synonym -> class id. Names win over synonyms.

        Only well-defined for vocabularies that pass ``validate_vocabulary``.
        """
        mapping: dict[str, int] = {}
        for entry in self.classes:
            for syn in entry.synonyms:
                mapping.setdefault(normalize_name(syn), entry.id)
        for entry in self.classes:
            mapping[normalize_name(entry.name)] = entry.id
        return mapping

    def __len__(self) -> int:
        return len(self.classes)


def validate_vocabulary(vocab: Vocabulary) -> list[str]:
    """Return every invariant violation; an empty list means the vocabulary is usable.

    Violations are data, not faults: callers decide whether to raise.
    """
    violations: list[str] = []
    if len(vocab.classes) == 0:
        violations.append("vocabulary has no classes")

    seen_ids: set[int] = set()
    for entry in vocab.classes:
        if entry.id in seen_ids:
            violations.append(f"duplicate class id {entry.id}")
        seen_ids.add(entry.id)
        if not normalize_name(entry.name):
            violations.append(f"class id {entry.id} has an empty name")
        surfaces = entry.surfaces()
        dupes = {s for s in surfaces if surfaces.count(s) > 1}
        for s in sorted(dupes):
            violations.append(
                f"class id {entry.id}: name/synonym {s!r} repeated within the entry"
            )

    owner: dict[str, int] = {}
    for entry in vocab.classes:
        for s in dict.fromkeys(entry.surfaces()):
            if s in owner and owner[s] != entry.id:
                violations.append(
                    f"surface {s!r} maps to both class {owner[s]} and class {entry.id}"
                )
            else:
                owner.setdefault(s, entry.id)
    return violations


@dataclass(frozen=True)
class ImageRecord:
    """Dataset join key plus pixel dimensions."""

    image_id: str
    width: float
    height: float

    def __post_init__(self) -> None:
        if not (self.width > 0 and self.height > 0):
            raise DataError(
                f"image {self.image_id!r}: non-positive size {self.width}x{self.height}"
            )


@dataclass(frozen=True)
class CaptionRecord:
    """Free-form description of one image. An empty caption is legal."""

    image_id: str
    caption: str
    source: str = "file"


@dataclass(frozen=True)
class NounPhraseSet:
    """Ordered, deduplicated noun phrases extracted from one caption."""

    image_id: str
    phrases: tuple[str, ...]

    def __post_init__(self) -> None:
        phrases = tuple(self.phrases)
        object.__setattr__(self, "phrases", phrases)
        if len(set(phrases)) != len(phrases):
            raise DataError(f"image {self.image_id!r}: duplicate phrases")
        for p in phrases:
            if not p or p != p.strip():
                raise DataError(
                    f"image {self.image_id!r}: empty or untrimmed phrase {p!r}"
                )


class EmbeddingMatrix:
    """Unit-normalized row vectors addressed by string keys.

    Rows are re-normalized at construction; a row whose input norm is
    (near) zero cannot be normalized and is rejected. The stored array is
    read-only float64.
    """

    __slots__ = ("dim", "keys", "values", "_index")

    def __init__(self, dim: int, keys: Iterable[str], values: np.ndarray) -> None:
        keys = tuple(keys)
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape != (len(keys), dim):
            raise DataError(
                f"embedding matrix shape {values.shape} does not match "
                f"{len(keys)} keys x dim {dim}"
            )
        if len(set(keys)) != len(keys):
            raise DataError("embedding matrix has duplicate keys")
        if not np.isfinite(values).all():
            raise DataError("embedding matrix contains non-finite values")
        norms = np.linalg.norm(values, axis=1)
        bad = np.flatnonzero(norms < 1e-8)
        if bad.size:
            raise DataError(
                "zero-norm embedding rows for keys: "
                + ", ".join(repr(keys[i]) for i in bad[:5])
            )
        values = values / norms[:, None]
        if not np.all(np.abs(np.linalg.norm(values, axis=1) - 1.0) <= 1e-4):
            raise DataError("embedding rows not unit-norm after normalization")
        values.setflags(write=False)
        self.dim = int(dim)
        self.keys = keys
        self.values = values
        self._index = {k: i for i, k in enumerate(keys)}

    def __len__(self) -> int:
        return len(self.keys)

    def __contains__(self, key: str) -> bool:
        return key in self._index

    def row(self, key: str) -> np.ndarray:
        try:
            return self.values[self._index[key]]
        except KeyError:
            raise DataError(f"unknown embedding key {key!r}") from None

    def index_of(self, key: str) -> int:
        try:
            return self._index[key]
        except KeyError:
            raise DataError(f"unknown embedding key {key!r}") from None


@dataclass(frozen=True)
class Proposal:
    """Externally produced region proposal: box, embedding reference, objectness."""

    image_id: str
    box: Box
    embedding_key: str
    objectness: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.objectness <= 1.0):
            raise DataError(
                f"image {self.image_id!r}: objectness {self.objectness} outside [0,1]"
            )


@dataclass(frozen=True)
class AdaptedVocabulary:
    """Per-image class subset with provenance of the selector that produced it."""

    image_id: str
    class_ids: frozenset[int]
    selector: str
    fallback_used: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "class_ids", frozenset(self.class_ids))
        if self.selector not in SELECTOR_TAGS:
            raise DataError(f"unknown selector tag {self.selector!r}")


@dataclass(frozen=True)
class Detection:
    """A re-scored proposal: final class label and confidence."""

    image_id: str
    box: Box
    class_id: int
    score: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.score):
            raise DataError(f"image {self.image_id!r}: non-finite detection score")


@dataclass(frozen=True)
class GroundTruthBox:
    """Evaluation reference box with its class label."""

    image_id: str
    box: Box
    class_id: int


@dataclass(frozen=True)
class LoadStats:
    """Counters emitted by lenient loaders (e.g. how many boxes were clamped)."""

    clamped_boxes: int = 0
    skipped: int = 0
    notes: tuple[str, ...] = ()
