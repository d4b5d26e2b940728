"""Clients for external chat-completions endpoints.

Two model roles share one transport: a vision-capable endpoint that
captions images and a text endpoint that proposes vocabulary classes.
Both speak the OpenAI-compatible chat wire format. Responses are cached
on disk keyed by a content hash, so re-runs and CI never re-hit the
endpoint; retries cover transport errors and 429/5xx only; a semaphore
bounds the number of in-flight requests across threads.
"""

from __future__ import annotations

import base64
import hashlib
import json
import mimetypes
import os
import random
import threading
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import httpx

from .domain import CaptionRecord
from .errors import DataError, GatewayError

RETRYABLE_STATUS = frozenset({429} | set(range(500, 600)))


@dataclass(frozen=True)
class GatewayConfig:
    base_url: str
    model: str
    api_key_env: str = "VOCADA_API_KEY"
    timeout: float = 120.0
    max_retries: int = 3
    backoff_base: float = 1.0
    max_in_flight: int = 4
    cache_dir: Path | None = None
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self) -> None:
        if self.max_in_flight < 1:
            raise DataError("max_in_flight must be >= 1")
        if self.max_retries < 1:
            raise DataError("max_retries must be >= 1")


@dataclass(frozen=True)
class CaptionerPrompt:
    """The captioning instruction sent as the user text of each request."""

    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise DataError("captioner prompt must be non-empty")


def default_captioner_prompt() -> CaptionerPrompt:
    ref = resources.files("vocada").joinpath("data/captioner_prompt.txt")
    return CaptionerPrompt(text=ref.read_text(encoding="utf-8"))


def _cache_key(parts: list[bytes]) -> str:
    digest = hashlib.sha256()
    for part in parts:
        digest.update(len(part).to_bytes(8, "little"))
        digest.update(part)
    return digest.hexdigest()


class ChatGateway:
    """Thread-safe chat-completions client with disk cache and retry policy."""

    def __init__(self, cfg: GatewayConfig, *, rng: random.Random | None = None) -> None:
        self.cfg = cfg
        self._semaphore = threading.BoundedSemaphore(cfg.max_in_flight)
        self._client = httpx.Client(timeout=cfg.timeout)
        self._rng = rng or random.Random()
        self.requests_sent = 0
        self.cache_hits = 0
        self._stats_lock = threading.Lock()
        if cfg.cache_dir is not None:
            Path(cfg.cache_dir).mkdir(parents=True, exist_ok=True)

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "ChatGateway":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    # -- caching ----------------------------------------------------------

    def _cache_path(self, key: str) -> Path | None:
        if self.cfg.cache_dir is None:
            return None
        return Path(self.cfg.cache_dir) / f"{key}.json"

    def _cache_read(self, key: str) -> str | None:
        path = self._cache_path(key)
        if path is None or not path.exists():
            return None
        payload = json.loads(path.read_text(encoding="utf-8"))
        with self._stats_lock:
            self.cache_hits += 1
        return payload["text"]

    def _cache_write(self, key: str, response_json: dict, text: str) -> None:
        path = self._cache_path(key)
        if path is None:
            return
        # Unique temp name per writer; os.replace keeps readers consistent.
        tmp = path.with_name(f"{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
        tmp.write_text(
            json.dumps({"response": response_json, "text": text}, ensure_ascii=False),
            encoding="utf-8",
        )
        os.replace(tmp, path)

    # -- transport --------------------------------------------------------

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.cfg.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        return headers

    def _endpoint(self) -> str:
        return self.cfg.base_url.rstrip("/") + "/chat/completions"

    def _post_chat(self, messages: list[dict], cache_key: str, context: str) -> str:
        cached = self._cache_read(cache_key)
        if cached is not None:
            return cached
        payload = {
            "model": self.cfg.model,
            "messages": messages,
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
        }
        attempts: list[str] = []
        with self._semaphore:
            for attempt in range(1, self.cfg.max_retries + 1):
                if attempt > 1:
                    delay = self.cfg.backoff_base * 2 ** (attempt - 2)
                    time.sleep(delay * (1.0 + 0.1 * self._rng.random()))
                try:
                    with self._stats_lock:
                        self.requests_sent += 1
                    response = self._client.post(
                        self._endpoint(), json=payload, headers=self._headers()
                    )
                except httpx.HTTPError as exc:
                    attempts.append(f"attempt {attempt}: transport error: {exc}")
                    continue
                if response.status_code in RETRYABLE_STATUS:
                    attempts.append(f"attempt {attempt}: HTTP {response.status_code}")
                    continue
                if response.status_code != 200:
                    raise GatewayError(
                        f"{context}: HTTP {response.status_code}: {response.text[:200]}"
                    )
                body = response.json()
                try:
                    text = body["choices"][0]["message"]["content"]
                except (KeyError, IndexError, TypeError):
                    raise GatewayError(
                        f"{context}: malformed chat-completions response"
                    ) from None
                if not isinstance(text, str) or not text.strip():
                    raise GatewayError(f"{context}: empty assistant content")
                self._cache_write(cache_key, body, text)
                return text
        raise GatewayError(
            f"{context}: giving up after {self.cfg.max_retries} attempt(s): "
            + "; ".join(attempts)
        )

    # -- operations -------------------------------------------------------

    def caption_image(
        self,
        image_ref: str | Path,
        prompt: CaptionerPrompt,
        image_id: str | None = None,
    ) -> CaptionRecord:
        """Describe one image; the assistant text becomes the caption."""
        context = f"caption_image(image_id={image_id or image_ref!s})"
        ref = str(image_ref)
        if ref.startswith(("http://", "https://")):
            url = ref
            key_material = ref.encode("utf-8")
        else:
            path = Path(image_ref)
            try:
                data = path.read_bytes()
            except OSError as exc:
                raise DataError(f"{context}: cannot read image: {exc}") from exc
            mime = mimetypes.guess_type(path.name)[0] or "image/png"
            url = f"data:{mime};base64,{base64.b64encode(data).decode('ascii')}"
            key_material = data
        cache_key = _cache_key(
            [self.cfg.model.encode("utf-8"), prompt.text.encode("utf-8"), key_material]
        )
        messages = [
            {
                "role": "user",
                "content": [
                    {"type": "text", "text": prompt.text},
                    {"type": "image_url", "image_url": {"url": url}},
                ],
            }
        ]
        text = self._post_chat(messages, cache_key, context)
        return CaptionRecord(
            image_id=image_id if image_id is not None else str(image_ref),
            caption=text,
            source=self.cfg.model,
        )

    def chat_select(
        self,
        system_prompt: str,
        user_message: str,
        image_id: str | None = None,
    ) -> str:
        """One selection round trip; returns the raw assistant text for parsing."""
        context = f"chat_select(image_id={image_id})" if image_id else "chat_select"
        cache_key = _cache_key(
            [
                self.cfg.model.encode("utf-8"),
                system_prompt.encode("utf-8"),
                user_message.encode("utf-8"),
            ]
        )
        messages = [
            {"role": "system", "content": system_prompt},
            {"role": "user", "content": user_message},
        ]
        return self._post_chat(messages, cache_key, context)
