"""Readers and writers for the on-disk interchange formats.

Text formats are UTF-8 with ``\\n`` line endings and deterministic field
order, so identical inputs always serialize to identical bytes. The
embedding matrix has a little-endian binary layout (magic ``VEMB``) with
a JSON sidecar of row keys, plus a pure-JSON alternative that is handy
in tests. Loaders validate type invariants and report the offending
line.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .domain import (
    AdaptedVocabulary,
    Box,
    CaptionRecord,
    ClassEntry,
    Detection,
    EmbeddingMatrix,
    GroundTruthBox,
    ImageRecord,
    LoadStats,
    NounPhraseSet,
    Proposal,
    Vocabulary,
    validate_vocabulary,
)
from .errors import DataError

VEMB_MAGIC = b"VEMB"
VEMB_VERSION = 1


# -- generic JSON helpers ---------------------------------------------------


def _dump_json_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False)


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    text = "".join(_dump_json_line(row) + "\n" for row in rows)
    Path(path).write_text(text, encoding="utf-8", newline="")


def read_jsonl(path: str | Path) -> list[tuple[int, dict]]:
    """Parse a JSONL file into (line number, object) pairs."""
    out: list[tuple[int, dict]] = []
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: malformed JSON: {exc}") from None
        if not isinstance(obj, dict):
            raise DataError(f"{path}:{lineno}: expected a JSON object")
        out.append((lineno, obj))
    return out


def _require(obj: Mapping, key: str, where: str) -> Any:
    if key not in obj:
        raise DataError(f"{where}: missing field {key!r}")
    return obj[key]


# -- vocabulary ---------------------------------------------------------------


def load_vocabulary(path: str | Path) -> Vocabulary:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed JSON: {exc}") from None
    classes = []
    for i, cls in enumerate(_require(raw, "classes", str(path))):
        where = f"{path}: classes[{i}]"
        classes.append(
            ClassEntry(
                id=int(_require(cls, "id", where)),
                name=str(_require(cls, "name", where)),
                synonyms=tuple(str(s) for s in cls.get("synonyms", [])),
            )
        )
    vocab = Vocabulary(classes=tuple(classes), name=str(raw.get("name", "")))
    violations = validate_vocabulary(vocab)
    if violations:
        raise DataError(f"{path}: invalid vocabulary: " + "; ".join(violations))
    return vocab


def save_vocabulary(path: str | Path, vocab: Vocabulary) -> None:
    payload = {
        "name": vocab.name,
        "classes": [
            {"id": c.id, "name": c.name, "synonyms": list(c.synonyms)}
            for c in vocab.classes
        ],
    }
    Path(path).write_text(
        json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )


# -- JSONL record types -------------------------------------------------------


def load_captions(path: str | Path) -> list[CaptionRecord]:
    records = []
    seen: set[str] = set()
    for lineno, obj in read_jsonl(path):
        where = f"{path}:{lineno}"
        image_id = str(_require(obj, "image_id", where))
        if image_id in seen:
            raise DataError(f"{where}: duplicate image_id {image_id!r}")
        seen.add(image_id)
        records.append(
            CaptionRecord(
                image_id=image_id,
                caption=str(_require(obj, "caption", where)),
                source=str(obj.get("source", "file")),
            )
        )
    return records


def save_captions(path: str | Path, records: Sequence[CaptionRecord]) -> None:
    write_jsonl(
        path,
        (
            {"image_id": r.image_id, "caption": r.caption, "source": r.source}
            for r in records
        ),
    )


def load_nouns(path: str | Path) -> list[NounPhraseSet]:
    records = []
    seen: set[str] = set()
    for lineno, obj in read_jsonl(path):
        where = f"{path}:{lineno}"
        image_id = str(_require(obj, "image_id", where))
        if image_id in seen:
            raise DataError(f"{where}: duplicate image_id {image_id!r}")
        seen.add(image_id)
        phrases = _require(obj, "phrases", where)
        try:
            records.append(
                NounPhraseSet(image_id=image_id, phrases=tuple(str(p) for p in phrases))
            )
        except DataError as exc:
            raise DataError(f"{where}: {exc}") from None
    return records


def save_nouns(path: str | Path, records: Sequence[NounPhraseSet]) -> None:
    write_jsonl(
        path,
        ({"image_id": r.image_id, "phrases": list(r.phrases)} for r in records),
    )


def load_adapted(path: str | Path) -> list[AdaptedVocabulary]:
    records = []
    seen: set[str] = set()
    for lineno, obj in read_jsonl(path):
        where = f"{path}:{lineno}"
        image_id = str(_require(obj, "image_id", where))
        if image_id in seen:
            raise DataError(f"{where}: duplicate image_id {image_id!r}")
        seen.add(image_id)
        try:
            records.append(
                AdaptedVocabulary(
                    image_id=image_id,
                    class_ids=frozenset(
                        int(c) for c in _require(obj, "class_ids", where)
                    ),
                    selector=str(_require(obj, "selector", where)),
                    fallback_used=bool(obj.get("fallback_used", False)),
                )
            )
        except DataError as exc:
            raise DataError(f"{where}: {exc}") from None
    return records


def save_adapted(path: str | Path, records: Sequence[AdaptedVocabulary]) -> None:
    write_jsonl(
        path,
        (
            {
                "image_id": r.image_id,
                "class_ids": sorted(r.class_ids),
                "selector": r.selector,
                "fallback_used": r.fallback_used,
            }
            for r in records
        ),
    )


def _parse_box(values: Sequence[float], where: str) -> Box:
    if len(values) != 4:
        raise DataError(f"{where}: box must have 4 numbers")
    try:
        return Box(*(float(v) for v in values))
    except DataError as exc:
        raise DataError(f"{where}: {exc}") from None


def load_detections(path: str | Path) -> list[Detection]:
    records = []
    for lineno, obj in read_jsonl(path):
        where = f"{path}:{lineno}"
        records.append(
            Detection(
                image_id=str(_require(obj, "image_id", where)),
                box=_parse_box(_require(obj, "box", where), where),
                class_id=int(_require(obj, "class_id", where)),
                score=float(_require(obj, "score", where)),
            )
        )
    return records


def save_detections(path: str | Path, records: Sequence[Detection]) -> None:
    write_jsonl(
        path,
        (
            {
                "image_id": r.image_id,
                "box": list(r.box.as_tuple()),
                "class_id": r.class_id,
                "score": r.score,
            }
            for r in records
        ),
    )


# -- embeddings ---------------------------------------------------------------


def write_embeddings(path: str | Path, matrix: EmbeddingMatrix) -> None:
    """Binary VEMB layout plus the ``<file>.keys.json`` sidecar."""
    path = Path(path)
    rows = len(matrix.keys)
    header = VEMB_MAGIC + struct.pack("<III", VEMB_VERSION, rows, matrix.dim)
    body = matrix.values.astype("<f4").tobytes(order="C")
    path.write_bytes(header + body)
    Path(str(path) + ".keys.json").write_text(
        json.dumps(list(matrix.keys), ensure_ascii=False) + "\n", encoding="utf-8"
    )


def _load_embeddings_binary(path: Path) -> EmbeddingMatrix:
    blob = path.read_bytes()
    if len(blob) < 16 or blob[:4] != VEMB_MAGIC:
        raise DataError(f"{path}: not a VEMB file")
    version, rows, dim = struct.unpack_from("<III", blob, 4)
    if version != VEMB_VERSION:
        raise DataError(f"{path}: unsupported VEMB version {version}")
    expected = 16 + rows * dim * 4
    if len(blob) != expected:
        raise DataError(
            f"{path}: truncated VEMB payload ({len(blob)} bytes, expected {expected})"
        )
    values = np.frombuffer(blob, dtype="<f4", offset=16).reshape(rows, dim)
    sidecar = Path(str(path) + ".keys.json")
    if not sidecar.exists():
        raise DataError(f"{path}: missing keys sidecar {sidecar.name}")
    keys = json.loads(sidecar.read_text(encoding="utf-8"))
    if not isinstance(keys, list) or len(keys) != rows:
        raise DataError(f"{sidecar}: expected a list of {rows} keys")
    return EmbeddingMatrix(dim=dim, keys=[str(k) for k in keys], values=values)


def _load_embeddings_json(path: Path) -> EmbeddingMatrix:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: neither VEMB binary nor embedding JSON: {exc}") from None
    dim = int(_require(raw, "dim", str(path)))
    entries = _require(raw, "entries", str(path))
    keys: list[str] = []
    values = np.zeros((len(entries), dim), dtype=np.float64)
    for i, entry in enumerate(entries):
        where = f"{path}: entries[{i}]"
        keys.append(str(_require(entry, "key", where)))
        vec = _require(entry, "vec", where)
        if len(vec) != dim:
            raise DataError(f"{where}: vector length {len(vec)} != dim {dim}")
        values[i] = [float(x) for x in vec]
    return EmbeddingMatrix(dim=dim, keys=keys, values=values)


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Accept either the binary VEMB layout or the JSON alternative."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with path.open("rb") as fh:
        magic = fh.read(4)
    if magic == VEMB_MAGIC:
        return _load_embeddings_binary(path)
    return _load_embeddings_json(path)


def embeddings_from_entries(
    dim: int, entries: Sequence[tuple[str, Sequence[float]]]
) -> EmbeddingMatrix:
    keys = [k for k, _ in entries]
    values = np.array([list(map(float, v)) for _, v in entries], dtype=np.float64)
    if not entries:
        values = values.reshape(0, dim)
    return EmbeddingMatrix(dim=dim, keys=keys, values=values)


# -- ground truth (COCO-style subset) ----------------------------------------


def _clamp_box(box: Box, image: ImageRecord, where: str) -> tuple[Box, bool]:
    x1 = min(max(box.x1, 0.0), image.width)
    x2 = min(max(box.x2, 0.0), image.width)
    y1 = min(max(box.y1, 0.0), image.height)
    y2 = min(max(box.y2, 0.0), image.height)
    if (x1, y1, x2, y2) == box.as_tuple():
        return box, False
    if not (x1 < x2 and y1 < y2):
        raise DataError(f"{where}: box lies outside image bounds")
    return Box(x1, y1, x2, y2), True


def load_groundtruth(
    path: str | Path,
) -> tuple[dict[str, ImageRecord], list[GroundTruthBox], LoadStats]:
    """Images and annotation boxes from a COCO-style JSON file.

    Numeric image ids become strings, ``bbox`` (x, y, w, h) becomes corner
    form, and boxes that overshoot the image are clamped and counted.
    """
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed JSON: {exc}") from None
    images: dict[str, ImageRecord] = {}
    for i, img in enumerate(_require(raw, "images", str(path))):
        where = f"{path}: images[{i}]"
        image_id = str(_require(img, "id", where))
        if image_id in images:
            raise DataError(f"{where}: duplicate image id {image_id!r}")
        images[image_id] = ImageRecord(
            image_id=image_id,
            width=float(_require(img, "width", where)),
            height=float(_require(img, "height", where)),
        )
    clamped = 0
    gts: list[GroundTruthBox] = []
    for i, ann in enumerate(_require(raw, "annotations", str(path))):
        where = f"{path}: annotations[{i}]"
        image_id = str(_require(ann, "image_id", where))
        if image_id not in images:
            raise DataError(f"{where}: unknown image id {image_id!r}")
        bbox = _require(ann, "bbox", where)
        if len(bbox) != 4:
            raise DataError(f"{where}: bbox must have 4 numbers")
        box = Box.from_xywh(*(float(v) for v in bbox))
        box, was_clamped = _clamp_box(box, images[image_id], where)
        clamped += int(was_clamped)
        gts.append(
            GroundTruthBox(
                image_id=image_id,
                box=box,
                class_id=int(_require(ann, "category_id", where)),
            )
        )
    return images, gts, LoadStats(clamped_boxes=clamped)


# -- proposals ----------------------------------------------------------------


def load_proposals(
    path: str | Path, images: Mapping[str, ImageRecord] | None = None
) -> tuple[list[Proposal], LoadStats]:
    """Proposal lines; boxes are clamped to image bounds when sizes are known."""
    proposals: list[Proposal] = []
    clamped = 0
    seen: set[str] = set()
    for lineno, obj in read_jsonl(path):
        where = f"{path}:{lineno}"
        image_id = str(_require(obj, "image_id", where))
        if image_id in seen:
            raise DataError(f"{where}: duplicate image_id {image_id!r}")
        seen.add(image_id)
        boxes = _require(obj, "boxes", where)
        objectness = _require(obj, "objectness", where)
        keys = _require(obj, "embedding_keys", where)
        if not (len(boxes) == len(objectness) == len(keys)):
            raise DataError(
                f"{where}: boxes, objectness and embedding_keys must align"
            )
        for j, (b, o, k) in enumerate(zip(boxes, objectness, keys)):
            where_j = f"{where}: proposal[{j}]"
            box = _parse_box(b, where_j)
            if images is not None:
                if image_id not in images:
                    raise DataError(f"{where_j}: unknown image id {image_id!r}")
                box, was_clamped = _clamp_box(box, images[image_id], where_j)
                clamped += int(was_clamped)
            try:
                proposals.append(
                    Proposal(
                        image_id=image_id,
                        box=box,
                        embedding_key=str(k),
                        objectness=float(o),
                    )
                )
            except DataError as exc:
                raise DataError(f"{where_j}: {exc}") from None
    return proposals, LoadStats(clamped_boxes=clamped)


def save_proposals(
    path: str | Path, by_image: Sequence[tuple[str, Sequence[Proposal]]]
) -> None:
    rows = []
    for image_id, proposals in by_image:
        rows.append(
            {
                "image_id": image_id,
                "boxes": [list(p.box.as_tuple()) for p in proposals],
                "objectness": [p.objectness for p in proposals],
                "embedding_keys": [p.embedding_key for p in proposals],
            }
        )
    write_jsonl(path, rows)


# -- groups and metrics -------------------------------------------------------


def load_groups(source: str | Path | Mapping[Any, str]) -> dict[int, str]:
    """Class-id -> "base"/"novel" map, from a JSON file or an inline mapping."""
    if isinstance(source, (str, Path)):
        try:
            raw = json.loads(Path(source).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{source}: malformed JSON: {exc}") from None
    else:
        raw = dict(source)
    if not isinstance(raw, Mapping):
        raise DataError("groups must be a JSON object of class_id -> group")
    out: dict[int, str] = {}
    for key, value in raw.items():
        try:
            class_id = int(key)
        except (TypeError, ValueError):
            raise DataError(f"groups: class id {key!r} is not an integer") from None
        if value not in ("base", "novel"):
            raise DataError(f"groups: class {key}: unknown group {value!r}")
        out[class_id] = value
    return out


def write_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(
        json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )


def resolve_proposal_embeddings_path(
    proposals_path: str | Path, explicit: str | Path | None = None
) -> Path:
    """Companion VEMB for a proposals file: explicit path or ``<stem>.vemb``."""
    if explicit is not None:
        return Path(explicit)
    return Path(proposals_path).with_suffix(".vemb")
