"""Text-encoder backends behind a ``model id`` string.

``hash`` is a deterministic stand-in encoder (seeded RNG per input text)
that needs no weights: identical strings map to identical unit vectors,
which is exactly the property conformance checks rely on. ``clip:<name>``
and ``sbert:<name>`` load real models lazily and raise ``EncoderError``
when unavailable, so callers can fail cleanly before writing anything.
"""

from __future__ import annotations

import hashlib

import numpy as np


class EncoderError(Exception):
    pass


class HashEncoder:
    """Deterministic pseudo-embeddings: one seeded draw per input string."""

    def __init__(self, dim: int = 512) -> None:
        if dim < 2:
            raise EncoderError("hash encoder dim must be >= 2")
        self.dim = dim

    def encode(self, texts: list[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dim), dtype=np.float64)
        for i, text in enumerate(texts):
            digest = hashlib.sha256(text.encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            vec = rng.standard_normal(self.dim)
            out[i] = vec / np.linalg.norm(vec)
        return out

    def describe(self) -> str:
        return f"hash(dim={self.dim})"


class ClipTextEncoder:
    def __init__(self, model_name: str) -> None:
        try:
            import torch  # noqa: F401
            from transformers import CLIPModel, CLIPTokenizer
        except ImportError as exc:
            raise EncoderError(f"clip backend needs transformers and torch: {exc}") from exc
        try:
            self._tokenizer = CLIPTokenizer.from_pretrained(model_name)
            self._model = CLIPModel.from_pretrained(model_name)
        except Exception as exc:
            raise EncoderError(f"cannot load CLIP model {model_name!r}: {exc}") from exc
        self._model.eval()
        self._name = model_name
        self.dim = int(self._model.config.projection_dim)

    def encode(self, texts: list[str]) -> np.ndarray:
        import torch

        with torch.no_grad():
            tokens = self._tokenizer(texts, padding=True, truncation=True, return_tensors="pt")
            features = self._model.get_text_features(**tokens)
        return features.cpu().numpy().astype(np.float64)

    def describe(self) -> str:
        return f"clip({self._name})"


class SbertEncoder:
    def __init__(self, model_name: str) -> None:
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise EncoderError(f"sbert backend needs sentence-transformers: {exc}") from exc
        try:
            self._model = SentenceTransformer(model_name)
        except Exception as exc:
            raise EncoderError(f"cannot load sentence-transformer {model_name!r}: {exc}") from exc
        self._name = model_name
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def encode(self, texts: list[str]) -> np.ndarray:
        return np.asarray(self._model.encode(texts), dtype=np.float64)

    def describe(self) -> str:
        return f"sbert({self._name})"


def build_encoder(model_id: str):
    """``hash``, ``hash:dim=N``, ``clip:<hf model>``, or ``sbert:<model>``."""
    if model_id == "hash":
        return HashEncoder()
    if model_id.startswith("hash:dim="):
        try:
            return HashEncoder(dim=int(model_id.split("=", 1)[1]))
        except ValueError:
            raise EncoderError(f"bad hash encoder spec {model_id!r}") from None
    if model_id.startswith("clip:"):
        return ClipTextEncoder(model_id.split(":", 1)[1])
    if model_id.startswith("sbert:"):
        return SbertEncoder(model_id.split(":", 1)[1])
    raise EncoderError(
        f"unknown model id {model_id!r}; expected hash[:dim=N], clip:<name> or sbert:<name>"
    )
