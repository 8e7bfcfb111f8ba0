"""Instruction-to-vector providers behind one interface.

Two providers: a deterministic hashing embedder for offline work and tests,
and an HTTP client for a real sentence-embedding service. Both L2-normalize
at the boundary and stamp every vector with a provider fingerprint so
checkpoints can refuse to load under a different text space.

The builtin embedder is a test double: hashed unigrams/bigrams give it only
weak paraphrase geometry, so experiments about unseen phrasings need the
external provider.
"""

import hashlib
import json
import os
import re
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError, ProviderError, TransportError

DEFAULT_WIDTH = 768

_TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class TextVector:
    values: np.ndarray
    fingerprint: str


@dataclass(frozen=True)
class EmbedProviderConfig:
    kind: str = "builtin-hash"  # or "external-http"
    width: int = DEFAULT_WIDTH
    endpoint: str = None
    timeout: float = 10.0
    retries: int = 2
    cache_path: str = None
    model: str = ""

    def __post_init__(self):
        if self.kind not in ("builtin-hash", "external-http"):
            raise ConfigError(f"unknown provider kind {self.kind!r}")
        if self.width < 1:
            raise ConfigError("provider width must be >= 1")
        if self.kind == "external-http":
            if not self.endpoint or not re.match(r"^https?://", self.endpoint):
                raise ConfigError(f"external provider needs a valid http(s) endpoint, got {self.endpoint!r}")
            if self.timeout <= 0:
                raise ConfigError("timeout must be > 0")


def make_provider(config, transport=None):
    if config.kind == "builtin-hash":
        return BuiltinHashEmbedder(width=config.width)
    return HttpEmbedder(
        endpoint=config.endpoint,
        width=config.width,
        timeout=config.timeout,
        retries=config.retries,
        cache_path=config.cache_path,
        model=config.model,
        transport=transport,
    )


def _tokenize(text):
    return _TOKEN_RE.findall(text.lower())


def _feature_bucket(feature, width):
    digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest()
    value = int.from_bytes(digest, "little")
    sign = 1.0 if value & 1 else -1.0
    return (value >> 1) % width, sign


def unigram_vector(text, width):
    v = np.zeros(width)
    for tok in _tokenize(text):
        bucket, sign = _feature_bucket("u:" + tok, width)
        v[bucket] += sign
    return v


def bigram_vector(text, width):
    v = np.zeros(width)
    toks = _tokenize(text)
    for a, b in zip(toks, toks[1:]):
        bucket, sign = _feature_bucket(f"b:{a} {b}", width)
        v[bucket] += sign
    return v


class BuiltinHashEmbedder:
    """Signed-hashing bag of unigrams + bigrams, L2-normalized."""

    kind = "builtin-hash"

    def __init__(self, width=DEFAULT_WIDTH):
        self.width = int(width)

    @property
    def fingerprint(self):
        return f"builtin-hash:{self.width}:v1"

    def embed_text(self, text):
        if not isinstance(text, str) or not text:
            raise InputError("text must be a non-empty string")
        v = unigram_vector(text, self.width) + bigram_vector(text, self.width)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise InputError(f"text {text!r} contains no alphanumeric tokens")
        return TextVector(values=v / norm, fingerprint=self.fingerprint)

    def embed_batch(self, texts):
        return [self.embed_text(t) for t in texts]


class VectorCache:
    """On-disk vector cache keyed by SHA-256 of (fingerprint, text).

    Writes go through a temp file + atomic rename, so concurrent readers
    never observe a partial entry.
    """

    def __init__(self, path):
        self.path = path
        os.makedirs(path, exist_ok=True)

    @staticmethod
    def key(fingerprint, text):
        return hashlib.sha256((fingerprint + "\x00" + text).encode("utf-8")).hexdigest()

    def _file(self, key):
        return os.path.join(self.path, key + ".json")

    def get(self, key):
        try:
            with open(self._file(key), "r", encoding="utf-8") as f:
                return np.asarray(json.load(f), dtype=np.float64)
        except FileNotFoundError:
            return None

    def put(self, key, values):
        fd, tmp = tempfile.mkstemp(dir=self.path, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                json.dump([float(v) for v in values], f)
            os.replace(tmp, self._file(key))
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def http_transport(endpoint, timeout):
    """Default transport: POST {"texts": [...]} -> {"vectors": [[...]]}."""
    import httpx

    def send(texts):
        resp = httpx.post(endpoint, json={"texts": list(texts)}, timeout=timeout)
        resp.raise_for_status()
        body = resp.json()
        return body["vectors"]

    return send


class HttpEmbedder:
    """Client for an external sentence-embedding service."""

    kind = "external-http"

    def __init__(self, endpoint, width=DEFAULT_WIDTH, timeout=10.0, retries=2,
                 cache_path=None, model="", transport=None, retry_sleep=0.1):
        self.endpoint = endpoint
        self.width = int(width)
        self.retries = int(retries)
        self.model = model or endpoint
        self.cache = VectorCache(cache_path) if cache_path else None
        self.retry_sleep = retry_sleep
        self._transport = transport if transport is not None else http_transport(endpoint, timeout)

    @property
    def fingerprint(self):
        return f"external-http:{self.width}:{self.model}"

    def _fetch(self, texts):
        last = None
        for attempt in range(self.retries + 1):
            try:
                vectors = self._transport(texts)
                break
            except Exception as exc:  # noqa: BLE001 - transport errors are opaque
                last = exc
                if attempt < self.retries and self.retry_sleep:
                    time.sleep(self.retry_sleep)
        else:
            raise TransportError(
                f"embedding request failed after {self.retries + 1} attempts: {last}"
            ) from last
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise ProviderError(
                f"provider returned {len(vectors) if isinstance(vectors, list) else type(vectors)} "
                f"vectors for {len(texts)} texts"
            )
        out = []
        for vec in vectors:
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (self.width,):
                raise ProviderError(f"provider returned width {arr.shape}, expected ({self.width},)")
            norm = np.linalg.norm(arr)
            if norm == 0.0 or not np.isfinite(norm):
                raise ProviderError("provider returned a zero or non-finite vector")
            out.append(arr / norm)
        return out

    def embed_batch(self, texts):
        for t in texts:
            if not isinstance(t, str) or not t:
                raise InputError("text must be a non-empty string")
        results = [None] * len(texts)
        missing, missing_keys = [], []
        for i, t in enumerate(texts):
            key = VectorCache.key(self.fingerprint, t) if self.cache else None
            cached = self.cache.get(key) if self.cache else None
            if cached is not None:
                if cached.shape != (self.width,):
                    raise ProviderError(f"cached vector has width {cached.shape}, expected ({self.width},)")
                results[i] = TextVector(values=cached, fingerprint=self.fingerprint)
            else:
                missing.append(i)
                missing_keys.append(key)
        if missing:
            fetched = self._fetch([texts[i] for i in missing])
            for i, key, values in zip(missing, missing_keys, fetched):
                if self.cache:
                    self.cache.put(key, values)
                    values = self.cache.get(key)  # serve what a later hit would see
                results[i] = TextVector(values=values, fingerprint=self.fingerprint)
        return results

    def embed_text(self, text):
        return self.embed_batch([text])[0]
