"""Chat-completion clients: a real HTTP client and a deterministic mock.

The HTTP client speaks the de-facto chat-completions JSON shape so hosted
GPT-style services and local servers are interchangeable. The mock is a pure
function of (message contents, temperature bucket, seed) and produces
word-level perturbations whose intensity grows with temperature, which lets
the whole pipeline and the evaluation harness run deterministically offline.
"""

from __future__ import annotations

import hashlib
import os
import random
import time
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np
import requests

from .normalization import _STRIP_CHARS, tokenize
from .stopwords import stop_words


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ("system", "user"):
            raise ValueError(f"unsupported role: {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[Message, ...]
    temperature: float
    max_tokens: int
    seed: int | None = None

    def __post_init__(self) -> None:
        if not any(m.role == "user" for m in self.messages):
            raise ValueError("request needs at least one user message")
        if self.temperature < 0:
            raise ValueError("temperature must be nonnegative")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    @classmethod
    def single(
        cls,
        content: str,
        *,
        model: str = "mock",
        temperature: float = 0.0,
        max_tokens: int = 256,
        seed: int | None = None,
        system: str | None = None,
    ) -> "ChatRequest":
        messages: list[Message] = []
        if system:
            messages.append(Message("system", system))
        messages.append(Message("user", content))
        return cls(model, tuple(messages), temperature, max_tokens, seed)


@dataclass(frozen=True)
class ChatResponse:
    text: str
    tokens_generated: int
    latency_ms: int = 0
    attempts: int = 1


class ChatClient(Protocol):
    def complete(self, req: ChatRequest) -> ChatResponse: ...


class ClientError(RuntimeError):
    """Terminal service error (non-retryable 4xx)."""

    def __init__(self, message: str, status: int | None = None) -> None:
        super().__init__(message)
        self.status = status


class TransportError(RuntimeError):
    """Transport or retryable service failure that exhausted its retries."""

    def __init__(self, message: str, attempts: int) -> None:
        super().__init__(message)
        self.attempts = attempts


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str
    timeout_s: float = 30.0
    max_inflight: int = 4
    api_key_env: str = "PROMPTSAN_API_KEY"
    system_prompt: str | None = None

    def api_key(self) -> str | None:
        return os.environ.get(self.api_key_env) or None


_RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


class HttpChatClient:
    """POSTs chat-completions requests with bounded exponential-backoff retries."""

    def __init__(
        self,
        endpoint: EndpointConfig,
        *,
        max_attempts: int = 3,
        base_delay_s: float = 1.0,
        backoff_factor: float = 2.0,
        sleeper: Callable[[float], None] = time.sleep,
        session: requests.Session | None = None,
    ) -> None:
        self.endpoint = endpoint
        self.max_attempts = max_attempts
        self.base_delay_s = base_delay_s
        self.backoff_factor = backoff_factor
        self._sleep = sleeper
        self._session = session or requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = self.endpoint.api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, req: ChatRequest) -> ChatResponse:
        url = self.endpoint.base_url.rstrip("/") + "/chat/completions"
        body: dict = {
            "model": req.model or self.endpoint.model,
            "messages": [{"role": m.role, "content": m.content} for m in req.messages],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.seed is not None:
            body["seed"] = req.seed

        started = time.monotonic()
        last_failure = ""
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = self._session.post(
                    url, json=body, headers=self._headers(), timeout=self.endpoint.timeout_s
                )
            except requests.RequestException as exc:
                last_failure = f"transport error: {exc}"
            else:
                if resp.status_code == 200:
                    return self._parse(resp.json(), started, attempt)
                excerpt = resp.text[:200]
                if resp.status_code in _RETRYABLE_STATUSES:
                    last_failure = f"HTTP {resp.status_code}: {excerpt}"
                else:
                    raise ClientError(
                        f"HTTP {resp.status_code}: {excerpt}", status=resp.status_code
                    )
            if attempt < self.max_attempts:
                delay = self.base_delay_s * self.backoff_factor ** (attempt - 1)
                self._sleep(delay * (1.0 + 0.25 * random.random()))
        raise TransportError(
            f"request failed after {self.max_attempts} attempts: {last_failure}",
            attempts=self.max_attempts,
        )

    @staticmethod
    def _parse(data: dict, started: float, attempts: int) -> ChatResponse:
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ClientError(f"malformed completion payload: {exc}") from exc
        usage = data.get("usage") or {}
        tokens = usage.get("completion_tokens")
        if not isinstance(tokens, int) or tokens < 0:
            tokens = len(text.split())
        latency_ms = int((time.monotonic() - started) * 1000)
        return ChatResponse(
            text=text, tokens_generated=tokens, latency_ms=latency_ms, attempts=attempts
        )


def complete(req: ChatRequest, endpoint: EndpointConfig) -> ChatResponse:
    return HttpChatClient(endpoint).complete(req)


# --- deterministic mock -----------------------------------------------------

# Substitutions the mock applies at every temperature, including 0.
FORCED_SYNONYMS = {
    "movie": "film",
    "buy": "purchase",
    "big": "large",
    "quick": "fast",
    "begin": "start",
    "speak": "talk",
}

REWRITE_HEADER = "Refer to the following question to generate a new question:"
AVOID_HEADER = "Avoid using the following tokens:"
CHOICES_HEADER = "Choices:"
DOC_TOKENS_PREFIX = "Document tokens:"
QUESTION_PREFIX = "Question:"

_B36 = "0123456789abcdefghijklmnopqrstuvwxyz"


def _tag(value: int) -> str:
    return _B36[(value // 36) % 36] + _B36[value % 36]


def _split_punct(raw: str) -> tuple[str, str, str]:
    core = raw.strip(_STRIP_CHARS)
    if not core:
        return "", raw, ""
    start = raw.index(core)
    return core, raw[:start], raw[start + len(core) :]


@dataclass
class MockChatModel:
    """Seeded stand-in for a chat service.

    Output is a pure function of (hash of the concatenated message contents,
    temperature bucket, seed). Temperature only scales the number of edits;
    the random draws themselves depend on content and seed alone, so raising
    the temperature strictly extends the edit set instead of resampling it.
    """

    seed: int = 0
    sub_slope: float = 0.55
    sub_cap: float = 0.75
    fill_slope: float = 0.5
    fill_cap: float = 0.75
    shuffle_slope: float = 0.25

    def complete(self, req: ChatRequest) -> ChatResponse:
        content = "\n".join(m.content for m in req.messages)
        last = req.messages[-1].content
        lines = last.splitlines()

        if REWRITE_HEADER in lines:
            text = self._regenerate(lines)
        elif any(line.strip() == CHOICES_HEADER for line in lines):
            text = self._answer_choice(lines)
        elif any(line.startswith(DOC_TOKENS_PREFIX) for line in lines):
            text = self._answer_document(lines)
        else:
            text = self._paraphrase(last, content, req)

        words = text.split()[: req.max_tokens]
        text = " ".join(words)
        return ChatResponse(text=text, tokens_generated=len(words), latency_ms=0)

    # -- frame handlers --

    def _regenerate(self, lines: list[str]) -> str:
        """Produce a fresh question from the exemplar, dropping forbidden tokens."""
        exemplar = ""
        forbidden: set[str] = set()
        for i, line in enumerate(lines):
            if line == REWRITE_HEADER and i + 1 < len(lines):
                exemplar = lines[i + 1]
            if line == AVOID_HEADER and i + 1 < len(lines):
                forbidden = {w.strip() for w in lines[i + 1].split(",") if w.strip()}
        kept = [w for w in exemplar.split() if w.strip(_STRIP_CHARS).lower() not in forbidden]
        return " ".join(kept)

    def _answer_choice(self, lines: list[str]) -> str:
        question_tokens: set[str] = set()
        for line in lines:
            if line.startswith(QUESTION_PREFIX):
                question_tokens = set(tokenize(line[len(QUESTION_PREFIX) :]))
        best_label, best_overlap = "", -1
        for line in lines:
            stripped = line.strip()
            if len(stripped) > 2 and stripped[1] == "." and stripped[0].isalpha():
                label = stripped[0].upper()
                overlap = len(set(tokenize(stripped[2:])) & question_tokens)
                if overlap > best_overlap:
                    best_label, best_overlap = label, overlap
        return best_label or "A"

    def _answer_document(self, lines: list[str]) -> str:
        doc_tokens: list[str] = []
        for line in lines:
            if line.startswith(DOC_TOKENS_PREFIX):
                doc_tokens = line[len(DOC_TOKENS_PREFIX) :].split()
        ranked = sorted(set(doc_tokens), key=lambda t: (-len(t), t))
        return " ".join(ranked[:3])

    # -- paraphrasing --

    def _rng(self, content: str, seed: int | None) -> np.random.Generator:
        material = f"{content}\x1f{seed if seed is not None else ''}\x1f{self.seed}"
        digest = hashlib.blake2b(material.encode("utf-8"), digest_size=8).digest()
        return np.random.default_rng(int.from_bytes(digest, "big"))

    @staticmethod
    def _bucket(temperature: float) -> float:
        return round(temperature * 20.0) / 20.0

    def _paraphrase(self, last: str, content: str, req: ChatRequest) -> str:
        target = last.split("\n", 1)[1] if "\n" in last else last
        words = target.split()
        if not words:
            return ""
        stops = stop_words()
        content_positions = [
            i for i, w in enumerate(words) if w.strip(_STRIP_CHARS).lower() not in stops
            and w.strip(_STRIP_CHARS)
        ]

        rng = self._rng(content, req.seed)
        # All draws happen up front and independently of temperature, so a
        # hotter request reuses the same edits and only adds more of them.
        offset = int(rng.integers(0, max(len(content_positions), 1)))
        variant_tags = rng.integers(0, 1296, size=max(len(content_positions), 1))
        fill_tags = rng.integers(0, 1296, size=len(words) + 1)
        shuffle_draws = rng.random(64)

        bucket = self._bucket(req.temperature)
        sub_rate = min(self.sub_cap, self.sub_slope * bucket)
        fill_rate = min(self.fill_cap, self.fill_slope * bucket)
        n_sub = int(sub_rate * len(content_positions))
        n_fill = int(fill_rate * len(words))
        n_shuffle = min(int(self.shuffle_slope * bucket * len(words)), len(shuffle_draws))

        # Contiguous cyclic substitution window: growing n_sub extends it.
        window = {(offset + j) % len(content_positions) for j in range(n_sub)} if content_positions else set()
        out = list(words)
        for i, pos in enumerate(content_positions):
            core, before, after = _split_punct(out[pos])
            forced = FORCED_SYNONYMS.get(core.lower())
            if forced is not None:
                out[pos] = before + forced + after
            elif i in window:
                out[pos] = before + core + _tag(int(variant_tags[i])) + after

        if len(out) > 1:
            for k in range(n_shuffle):
                pos = int(shuffle_draws[k] * (len(out) - 1))
                out[pos], out[pos + 1] = out[pos + 1], out[pos]

        out.extend("zq" + _tag(int(fill_tags[j])) for j in range(n_fill))
        return " ".join(out)


def mock_complete(req: ChatRequest, seed: int = 0) -> ChatResponse:
    return MockChatModel(seed=seed).complete(req)
