"""Embedding providers: in-memory mappings, file-backed stores, and an HTTP
client with an on-disk cache keyed by text hash."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .metrics import mean_pool


class ProviderError(RuntimeError):
    pass


def text_key(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _as_sentence_vector(value) -> np.ndarray:
    """Accept either a sentence vector or token-level vectors to mean-pool."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 2:
        return mean_pool(arr)
    if arr.ndim == 1:
        return arr
    raise ProviderError(f"embedding value has unsupported shape {arr.shape}")


class MappingProvider:
    """Embeddings from an in-memory {text: vector} mapping."""

    def __init__(self, vectors: dict[str, np.ndarray]):
        self._vectors = {text: _as_sentence_vector(vec) for text, vec in vectors.items()}

    def embed(self, texts: list[str]) -> np.ndarray:
        rows = []
        for text in texts:
            if text not in self._vectors:
                raise ProviderError(f"no embedding for text: {text[:60]!r}")
            rows.append(self._vectors[text])
        return np.vstack(rows) if rows else np.zeros((0, 0))


class FileProvider:
    """Embeddings from a JSON Lines file of {"text_sha256", "vector"} rows."""

    def __init__(self, path):
        self._path = Path(path)
        self._vectors: dict[str, np.ndarray] = {}
        if self._path.is_file():
            with open(self._path, "r", encoding="utf-8") as handle:
                for line in handle:
                    if not line.strip():
                        continue
                    record = json.loads(line)
                    self._vectors[record["text_sha256"]] = _as_sentence_vector(record["vector"])

    def __contains__(self, text: str) -> bool:
        return text_key(text) in self._vectors

    def embed(self, texts: list[str]) -> np.ndarray:
        rows = []
        for text in texts:
            key = text_key(text)
            if key not in self._vectors:
                raise ProviderError(f"embedding file {self._path} has no vector for {key[:12]}")
            rows.append(self._vectors[key])
        return np.vstack(rows) if rows else np.zeros((0, 0))


def write_embeddings_file(path, texts, vectors, append: bool = False) -> None:
    mode = "a" if append else "w"
    with open(path, mode, encoding="utf-8") as handle:
        for text, vector in zip(texts, vectors):
            record = {"text_sha256": text_key(text), "vector": np.asarray(vector).tolist()}
            handle.write(json.dumps(record, sort_keys=True) + "\n")


class HttpProvider:
    """Embeddings over HTTP with a file cache so reruns work offline.

    POSTs {"model", "input": [texts]} to base_url + "/embeddings" and reads
    data[i].embedding from the response. Every fetched vector is appended to
    the cache file, which uses the FileProvider format.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        cache_path=None,
        batch_size: int = 64,
        timeout: float = 60.0,
        api_key_env: str = "FINSTS_LLM_API_KEY",
        offline: bool = False,
        transport=None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.batch_size = batch_size
        self.timeout = timeout
        self.api_key_env = api_key_env
        self.offline = offline
        self.transport = transport
        self._cache_path = Path(cache_path) if cache_path else None
        self._cache: dict[str, np.ndarray] = {}
        if self._cache_path and self._cache_path.is_file():
            loaded = FileProvider(self._cache_path)
            self._cache.update(loaded._vectors)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _fetch(self, texts: list[str]) -> list[np.ndarray]:
        payload = {"model": self.model, "input": texts}
        url = f"{self.base_url}/embeddings"
        if self.transport is not None:
            response = self.transport(url, payload, self._headers(), self.timeout)
        else:
            import requests

            try:
                http = requests.post(url, json=payload, headers=self._headers(), timeout=self.timeout)
            except requests.RequestException as exc:
                raise ProviderError(f"embedding request failed: {exc}") from exc
            if not 200 <= http.status_code < 300:
                raise ProviderError(f"embedding request returned HTTP {http.status_code}")
            response = http.json()
        try:
            items = response["data"]
            vectors = [_as_sentence_vector(item["embedding"]) for item in items]
        except (KeyError, TypeError, IndexError) as exc:
            raise ProviderError(f"malformed embeddings response: {exc}") from exc
        if len(vectors) != len(texts):
            raise ProviderError(
                f"embeddings response has {len(vectors)} rows for {len(texts)} inputs"
            )
        return vectors

    def embed(self, texts: list[str]) -> np.ndarray:
        missing = []
        for text in texts:
            key = text_key(text)
            if key not in self._cache and text not in missing:
                missing.append(text)
        if missing and self.offline:
            raise ProviderError(f"offline mode: {len(missing)} texts missing from cache")
        for start in range(0, len(missing), self.batch_size):
            batch = missing[start : start + self.batch_size]
            vectors = self._fetch(batch)
            for text, vector in zip(batch, vectors):
                self._cache[text_key(text)] = vector
            if self._cache_path:
                self._cache_path.parent.mkdir(parents=True, exist_ok=True)
                write_embeddings_file(self._cache_path, batch, vectors, append=True)
        rows = [self._cache[text_key(text)] for text in texts]
        return np.vstack(rows) if rows else np.zeros((0, 0))


def provider_from_spec(spec: dict, offline: bool = False, base_dir=None):
    """Build a provider from a config dict: {"kind": "file"|"http", ...}."""
    kind = spec.get("kind")
    base = Path(base_dir) if base_dir else Path(".")
    if kind == "file":
        path = Path(spec["path"])
        if not path.is_absolute():
            path = base / path
        return FileProvider(path)
    if kind == "http":
        cache_path = spec.get("cache_path")
        if cache_path and not Path(cache_path).is_absolute():
            cache_path = base / cache_path
        return HttpProvider(
            base_url=spec["base_url"],
            model=spec.get("model", "text-embedding"),
            cache_path=cache_path,
            batch_size=int(spec.get("batch_size", 64)),
            timeout=float(spec.get("timeout", 60.0)),
            api_key_env=spec.get("api_key_env", "FINSTS_LLM_API_KEY"),
            offline=offline,
        )
    raise ProviderError(f"unknown provider kind: {kind!r}")
