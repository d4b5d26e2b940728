from __future__ import annotations

import json
from pathlib import Path

import pytest


@pytest.fixture
def vocab_file(tmp_path: Path) -> Path:
    path = tmp_path / "vocabulary.json"
    path.write_text(
        json.dumps(
            {
                "name": "exporter-fixture",
                "classes": [
                    {"id": 1, "name": "person", "synonyms": []},
                    {"id": 2, "name": "dog", "synonyms": []},
                    {"id": 3, "name": "red apple", "synonyms": []},
                ],
            }
        ),
        encoding="utf-8",
    )
    return path


@pytest.fixture
def captions_file(tmp_path: Path) -> Path:
    path = tmp_path / "captions.jsonl"
    rows = [
        {"image_id": "e1", "caption": "A dog sleeps on the rug.", "source": "file"},
        {"image_id": "e2", "caption": "A person holds a red apple.", "source": "file"},
        {"image_id": "e3", "caption": "A person walks a dog.", "source": "file"},
    ]
    path.write_text(
        "".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8", newline=""
    )
    return path


@pytest.fixture
def images_file(tmp_path: Path) -> Path:
    path = tmp_path / "images.jsonl"
    rows = [
        {"image_id": "e1", "width": 640, "height": 480, "path": "images/e1.png"},
        {"image_id": "e2", "width": 640, "height": 480, "path": "images/e2.png"},
        {"image_id": "e3", "width": 512, "height": 512, "path": "images/e3.png"},
    ]
    path.write_text(
        "".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8", newline=""
    )
    image_dir = tmp_path / "images"
    image_dir.mkdir()
    for r in rows:
        (tmp_path / r["path"]).write_bytes(f"IMG:{r['image_id']}".encode())
    return path


@pytest.fixture
def groundtruth_file(tmp_path: Path) -> Path:
    path = tmp_path / "groundtruth.json"
    path.write_text(
        json.dumps(
            {
                "images": [
                    {"id": "e1", "width": 640, "height": 480},
                    {"id": "e2", "width": 640, "height": 480},
                    {"id": "e3", "width": 512, "height": 512},
                ],
                "annotations": [
                    {"image_id": "e1", "category_id": 2, "bbox": [100, 100, 120, 80]},
                    {"image_id": "e2", "category_id": 1, "bbox": [50, 40, 200, 380]},
                    {"image_id": "e2", "category_id": 3, "bbox": [180, 200, 60, 60]},
                    {"image_id": "e3", "category_id": 1, "bbox": [60, 60, 150, 400]},
                    {"image_id": "e3", "category_id": 2, "bbox": [300, 300, 120, 100]},
                ],
                "categories": [
                    {"id": 1, "name": "person"},
                    {"id": 2, "name": "dog"},
                    {"id": 3, "name": "red apple"},
                ],
            }
        ),
        encoding="utf-8",
    )
    return path
