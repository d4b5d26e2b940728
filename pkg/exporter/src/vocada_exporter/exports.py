"""Export operations producing the pipeline's interchange files.

These scripts read the documented file formats directly (vocabulary
JSON, nouns JSONL, image lists) and write embeddings, captions, synonym
lists and proposal dumps the pipeline can load. The pipeline's own
loaders are the conformance oracle: everything written here must load
there with zero violations.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoders import build_encoder
from .manifest import write_manifest
from .vemb import write_vemb


class ExportError(Exception):
    pass


_WS = re.compile(r"\s+")


def normalize_surface(s: str) -> str:
    """Mirror of the pipeline's name normalization (NFC, lowercase, collapsed)."""
    s = unicodedata.normalize("NFC", s)
    s = unicodedata.normalize("NFC", s.lower())
    return _WS.sub(" ", s).strip()


def apply_template(template: str, text: str) -> str:
    if template.count("{}") != 1:
        raise ExportError("prompt template must contain exactly one '{}' placeholder")
    return template.replace("{}", text)


def load_vocabulary_file(path: str | Path) -> tuple[str, list[dict]]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ExportError(f"cannot read vocabulary {path}: {exc}") from exc
    classes = raw.get("classes")
    if not isinstance(classes, list) or not classes:
        raise ExportError(f"{path}: vocabulary has no classes")
    return str(raw.get("name", "")), classes


def load_nouns_file(path: str | Path) -> list[tuple[str, list[str]]]:
    rows: list[tuple[str, list[str]]] = []
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ExportError(f"{path}:{lineno}: malformed JSON: {exc}") from None
        rows.append((str(obj["image_id"]), [str(p) for p in obj.get("phrases", [])]))
    return rows


def load_image_list(path: str | Path) -> list[dict]:
    rows = []
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ExportError(f"{path}:{lineno}: malformed JSON: {exc}") from None
        if "image_id" not in obj:
            raise ExportError(f"{path}:{lineno}: missing image_id")
        rows.append(obj)
    return rows


def export_class_embeddings(
    vocabulary_path: str | Path,
    model_id: str,
    template: str,
    out_path: str | Path,
) -> int:
    """One unit row per class, keyed by the decimal class id."""
    _name, classes = load_vocabulary_file(vocabulary_path)
    encoder = build_encoder(model_id)
    keys = [str(int(c["id"])) for c in classes]
    texts = [apply_template(template, str(c["name"])) for c in classes]
    values = encoder.encode(texts)
    write_vemb(out_path, keys, values)
    write_manifest(
        out_path,
        model=model_id,
        prompt_template=template,
        inputs={"vocabulary": vocabulary_path},
        outputs=[Path(out_path).name, Path(out_path).name + ".keys.json"],
        extra={"encoder": encoder.describe(), "rows": len(keys)},
    )
    return len(keys)


def export_phrase_embeddings(
    nouns_path: str | Path,
    model_id: str,
    template: str,
    out_path: str | Path,
) -> int:
    """One unit row per distinct phrase across all images, keyed by the phrase."""
    rows = load_nouns_file(nouns_path)
    phrases = list(dict.fromkeys(p for _image, plist in rows for p in plist))
    encoder = build_encoder(model_id)
    values = (
        encoder.encode([apply_template(template, p) for p in phrases])
        if phrases
        else np.zeros((0, encoder.dim))
    )
    write_vemb(out_path, phrases, values)
    write_manifest(
        out_path,
        model=model_id,
        prompt_template=template,
        inputs={"nouns": nouns_path},
        outputs=[Path(out_path).name, Path(out_path).name + ".keys.json"],
        extra={"encoder": encoder.describe(), "rows": len(phrases)},
    )
    return len(phrases)


@dataclass(frozen=True)
class SyntheticDetector:
    """Deterministic stand-in detector for pipeline testing.

    Real detectors plug in by producing the same two files; the backend
    string in the manifest records where the region embeddings came from.
    """

    seed: int = 0
    dim: int = 512
    max_proposals: int = 4

    def propose(self, image_id: str, width: float, height: float):
        # Stable per-image stream: Python's str hash is salted per process.
        import hashlib

        image_key = int.from_bytes(
            hashlib.sha256(image_id.encode("utf-8")).digest()[:8], "little"
        )
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, image_key]))
        n = int(rng.integers(1, self.max_proposals + 1))
        boxes, objectness, embeddings = [], [], []
        for _ in range(n):
            w = float(rng.uniform(8, max(9.0, width / 2)))
            h = float(rng.uniform(8, max(9.0, height / 2)))
            x1 = float(rng.uniform(0, width - w))
            y1 = float(rng.uniform(0, height - h))
            boxes.append([x1, y1, x1 + w, y1 + h])
            objectness.append(round(float(rng.uniform(0.05, 0.99)), 4))
            vec = rng.standard_normal(self.dim)
            embeddings.append(vec / np.linalg.norm(vec))
        return boxes, objectness, embeddings


def parse_detector_id(detector_id: str) -> SyntheticDetector:
    if detector_id == "synthetic":
        return SyntheticDetector()
    m = re.fullmatch(r"synthetic:(\d+)(?::dim=(\d+))?", detector_id)
    if m:
        return SyntheticDetector(
            seed=int(m.group(1)), dim=int(m.group(2) or 512)
        )
    raise ExportError(
        f"unknown detector id {detector_id!r}; available: synthetic[:<seed>[:dim=N]]"
    )


def export_proposals(
    detector_id: str,
    images_path: str | Path,
    out_path: str | Path,
) -> tuple[int, list[str]]:
    """Proposal boxes, objectness and region embeddings per image.

    An image the detector cannot handle is skipped and logged in the
    manifest rather than failing the export.
    """
    detector = parse_detector_id(detector_id)
    images = load_image_list(images_path)
    out_path = Path(out_path)
    emb_path = out_path.with_suffix(".vemb")
    lines: list[str] = []
    keys: list[str] = []
    vectors: list[np.ndarray] = []
    skipped: list[str] = []
    for row in images:
        image_id = str(row["image_id"])
        width = float(row.get("width", 640))
        height = float(row.get("height", 480))
        try:
            if width <= 8 or height <= 8:
                raise ExportError(f"image too small: {width}x{height}")
            boxes, objectness, embeddings = detector.propose(image_id, width, height)
        except ExportError as exc:
            skipped.append(f"{image_id}: {exc}")
            continue
        row_keys = [f"{image_id}:r{i}" for i in range(len(boxes))]
        keys.extend(row_keys)
        vectors.extend(embeddings)
        lines.append(
            json.dumps(
                {
                    "image_id": image_id,
                    "boxes": boxes,
                    "objectness": objectness,
                    "embedding_keys": row_keys,
                },
                ensure_ascii=False,
            )
        )
    out_path.write_text("".join(line + "\n" for line in lines), encoding="utf-8", newline="")
    matrix = np.stack(vectors) if vectors else np.zeros((0, detector.dim))
    write_vemb(emb_path, keys, matrix)
    write_manifest(
        out_path,
        model=detector_id,
        prompt_template=None,
        inputs={"images": images_path},
        outputs=[out_path.name, emb_path.name, emb_path.name + ".keys.json"],
        extra={"images_exported": len(lines), "skipped": skipped},
    )
    return len(lines), skipped
