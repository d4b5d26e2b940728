"""Exports that call a served model over the OpenAI-compatible chat API.

A deliberately small client: one endpoint, temperature 0, simple retry
on 429/5xx. The heavyweight caching client belongs to the pipeline; the
exporter only needs to fetch once and write files.
"""

from __future__ import annotations

import base64
import json
import mimetypes
import os
import time
from dataclasses import dataclass
from pathlib import Path

import httpx

from .exports import ExportError, load_image_list, load_vocabulary_file, normalize_surface
from .manifest import write_manifest

DEFAULT_CAPTION_PROMPT = (
    "Describe every object visible in this image. List the primary (large or "
    "foreground) objects first, then the secondary (small or background) "
    "objects. Mention groups of similar objects together, and give your best "
    "guess for unclear items."
)

SYNONYM_PROMPT = (
    "List up to {n} common alternative names for the object category "
    '"{name}". Output one name per line prefixed with "*". Only output names '
    "that refer to exactly the same kind of object."
)


@dataclass(frozen=True)
class ServedModel:
    base_url: str
    model: str
    api_key_env: str = "VOCADA_API_KEY"
    timeout: float = 120.0
    max_attempts: int = 3
    backoff: float = 1.0

    def chat(self, messages: list[dict]) -> str:
        url = self.base_url.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {"model": self.model, "messages": messages, "temperature": 0.0}
        last = "no attempts made"
        with httpx.Client(timeout=self.timeout) as client:
            for attempt in range(1, self.max_attempts + 1):
                if attempt > 1:
                    time.sleep(self.backoff * 2 ** (attempt - 2))
                try:
                    response = client.post(url, json=payload, headers=headers)
                except httpx.HTTPError as exc:
                    last = f"transport error: {exc}"
                    continue
                if response.status_code == 429 or response.status_code >= 500:
                    last = f"HTTP {response.status_code}"
                    continue
                if response.status_code != 200:
                    raise ExportError(f"endpoint error HTTP {response.status_code}")
                try:
                    text = response.json()["choices"][0]["message"]["content"]
                except (KeyError, IndexError, TypeError, json.JSONDecodeError):
                    raise ExportError("malformed chat response") from None
                if not isinstance(text, str) or not text.strip():
                    raise ExportError("empty assistant content")
                return text
        raise ExportError(f"endpoint failed after {self.max_attempts} attempt(s): {last}")


def export_captions(
    images_path: str | Path,
    served: ServedModel,
    out_path: str | Path,
    prompt: str = DEFAULT_CAPTION_PROMPT,
) -> int:
    """One caption line per image, in image-list order."""
    images = load_image_list(images_path)
    base = Path(images_path).parent
    lines = []
    for row in images:
        image_id = str(row["image_id"])
        if "path" not in row:
            raise ExportError(f"image {image_id!r}: no file path for captioning")
        ref = Path(row["path"])
        if not ref.is_absolute():
            ref = base / ref
        try:
            data = ref.read_bytes()
        except OSError as exc:
            raise ExportError(f"image {image_id!r}: cannot read {ref}: {exc}") from exc
        mime = mimetypes.guess_type(ref.name)[0] or "image/png"
        data_url = f"data:{mime};base64,{base64.b64encode(data).decode('ascii')}"
        text = served.chat(
            [
                {
                    "role": "user",
                    "content": [
                        {"type": "text", "text": prompt},
                        {"type": "image_url", "image_url": {"url": data_url}},
                    ],
                }
            ]
        )
        lines.append(
            json.dumps(
                {"image_id": image_id, "caption": text, "source": served.model},
                ensure_ascii=False,
            )
        )
    Path(out_path).write_text(
        "".join(line + "\n" for line in lines), encoding="utf-8", newline=""
    )
    write_manifest(
        out_path,
        model=served.model,
        prompt_template=prompt,
        inputs={"images": images_path},
        outputs=[Path(out_path).name],
        extra={"captions": len(lines)},
    )
    return len(lines)


def export_synonyms(
    vocabulary_path: str | Path,
    served: ServedModel,
    out_path: str | Path,
    max_synonyms: int = 5,
) -> int:
    """Fill each class's synonym list by querying a language model.

    Candidates that would make the vocabulary ambiguous (collide with any
    class name or an already-assigned synonym after normalization) are
    dropped, so the output always loads cleanly.
    """
    name, classes = load_vocabulary_file(vocabulary_path)
    taken = {normalize_surface(str(c["name"])) for c in classes}
    out_classes = []
    total = 0
    for cls in classes:
        class_name = str(cls["name"])
        raw = served.chat(
            [
                {
                    "role": "user",
                    "content": SYNONYM_PROMPT.format(n=max_synonyms, name=class_name),
                }
            ]
        )
        synonyms: list[str] = []
        for line in raw.splitlines():
            stripped = line.strip()
            if not stripped.startswith("*"):
                continue
            candidate = stripped.lstrip("*").strip()
            norm = normalize_surface(candidate)
            if not norm or norm in taken:
                continue
            taken.add(norm)
            synonyms.append(candidate)
            if len(synonyms) >= max_synonyms:
                break
        total += len(synonyms)
        out_classes.append(
            {"id": int(cls["id"]), "name": class_name, "synonyms": synonyms}
        )
    Path(out_path).write_text(
        json.dumps({"name": name, "classes": out_classes}, ensure_ascii=False, indent=2)
        + "\n",
        encoding="utf-8",
    )
    write_manifest(
        out_path,
        model=served.model,
        prompt_template=SYNONYM_PROMPT,
        inputs={"vocabulary": vocabulary_path},
        outputs=[Path(out_path).name],
        extra={"synonyms_added": total},
    )
    return total
